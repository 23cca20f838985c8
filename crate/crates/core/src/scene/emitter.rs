//! Emitters: point lights, spherical area lights, constant environment.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::math::{sample_uniform_cone, sample_uniform_sphere, Frame, Rgb, Vec3, FOUR_PI, TWO_PI};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Emitter {
    Point { position: [f64; 3], intensity: [f64; 3] },
    SphereArea { center: [f64; 3], radius: f64, radiance: [f64; 3] },
    ConstEnv { radiance: [f64; 3] },
}

impl Emitter {
    pub fn validate(&self) -> Result<(), String> {
        let v = match self {
            Emitter::Point { intensity, .. } => intensity,
            Emitter::SphereArea { radius, radiance, .. } => {
                if !(*radius > 0.0) {
                    return Err("sphere_area radius must be > 0".into());
                }
                radiance
            }
            Emitter::ConstEnv { radiance } => radiance,
        };
        if v.iter().any(|&x| x < 0.0 || !x.is_finite()) {
            return Err("emitter radiance/intensity must be finite and >= 0".into());
        }
        Ok(())
    }
}

#[derive(Copy, Clone, Debug)]
pub struct EmitterSample {
    pub dir: Vec3,
    /// Distance to the sampled emitter point (infinite for the environment).
    pub dist: f64,
    /// Incident radiance along `dir` (for point lights: intensity / d^2,
    /// packaged so contribution = f * radiance / pdf).
    pub radiance: Rgb,
    /// Full technique density including the uniform emitter pick; solid-angle
    /// density for area/env, discrete probability for delta emitters.
    pub pdf: f64,
    pub delta: bool,
}

/// Solid-angle pdf of one emitter at (`x`, `dir`); 0 for delta emitters.
fn single_pdf(emitter: &Emitter, x: Vec3, dir: Vec3) -> f64 {
    match emitter {
        Emitter::Point { .. } => 0.0,
        Emitter::SphereArea { center, radius, .. } => {
            let c = Vec3::new(center[0], center[1], center[2]);
            let to_c = c - x;
            let d2 = to_c.length_squared();
            let r2 = radius * radius;
            if d2 <= r2 {
                // Reference point inside the emitter: treated as uniform.
                return 1.0 / FOUR_PI;
            }
            let cos_theta_max = (1.0 - r2 / d2).max(0.0).sqrt();
            let cos = dir.dot(to_c.normalized());
            if cos >= cos_theta_max {
                1.0 / (TWO_PI * (1.0 - cos_theta_max))
            } else {
                0.0
            }
        }
        Emitter::ConstEnv { .. } => 1.0 / FOUR_PI,
    }
}

/// Uniformly pick an emitter, then sample it in solid angle from `x`.
pub fn sample_emitter(emitters: &[Emitter], x: Vec3, rng: &mut impl Rng) -> Option<EmitterSample> {
    if emitters.is_empty() {
        return None;
    }
    let n = emitters.len();
    let pick = (rng.gen::<f64>() * n as f64) as usize % n;
    let select = 1.0 / n as f64;
    match &emitters[pick] {
        Emitter::Point { position, intensity } => {
            let p = Vec3::new(position[0], position[1], position[2]);
            let to_p = p - x;
            let d2 = to_p.length_squared();
            if d2 <= 0.0 {
                return None;
            }
            let dist = d2.sqrt();
            Some(EmitterSample {
                dir: to_p / dist,
                dist,
                radiance: Rgb::new(intensity[0], intensity[1], intensity[2]) / d2,
                pdf: select,
                delta: true,
            })
        }
        Emitter::SphereArea { center, radius, radiance } => {
            let c = Vec3::new(center[0], center[1], center[2]);
            let to_c = c - x;
            let d2 = to_c.length_squared();
            let r2 = radius * radius;
            let radiance = Rgb::new(radiance[0], radiance[1], radiance[2]);
            if d2 <= r2 {
                let dir = sample_uniform_sphere(rng);
                return Some(EmitterSample {
                    dir,
                    dist: 2.0 * radius,
                    radiance,
                    pdf: select / FOUR_PI,
                    delta: false,
                });
            }
            let dist_c = d2.sqrt();
            let cos_theta_max = (1.0 - r2 / d2).max(0.0).sqrt();
            let frame = Frame::from_normal(to_c / dist_c);
            let dir = frame.to_world(sample_uniform_cone(cos_theta_max, rng));
            // Distance to the near intersection with the emitter sphere.
            let b = dir.dot(to_c);
            let disc = (b * b - d2 + r2).max(0.0);
            let dist = b - disc.sqrt();
            Some(EmitterSample {
                dir,
                dist,
                radiance,
                pdf: select / (TWO_PI * (1.0 - cos_theta_max)),
                delta: false,
            })
        }
        Emitter::ConstEnv { radiance } => Some(EmitterSample {
            dir: sample_uniform_sphere(rng),
            dist: f64::INFINITY,
            radiance: Rgb::new(radiance[0], radiance[1], radiance[2]),
            pdf: select / FOUR_PI,
            delta: false,
        }),
    }
}

/// Combined solid-angle density of the emitter-sampling technique for MIS.
pub fn emitter_pdf(emitters: &[Emitter], x: Vec3, dir: Vec3) -> f64 {
    if emitters.is_empty() {
        return 0.0;
    }
    let select = 1.0 / emitters.len() as f64;
    emitters.iter().map(|e| select * single_pdf(e, x, dir)).sum()
}
