//! Pre-baked light transport for bounded 3D assets.
//!
//! The pipeline: forward path-trace an asset in isolation to collect exit
//! tuples, learn an albedo network plus an autoregressive spline-flow density
//! over the 4D incident parameterization, then render the baked asset inside
//! new scenes with an MIS-aware path tracer. A reference volumetric path
//! tracer and a far-field regression baseline validate the result.

pub mod flow;
pub mod geometry;
pub mod integrator;
pub mod math;
pub mod nn;
pub mod model;
pub mod param;
pub mod rng;
pub mod trainer;
pub mod validate;
pub mod scene;
