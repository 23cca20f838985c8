//! Rendering: the reference volumetric path tracer and the neural-asset path
//! tracer (emitter/path MIS at the sampled incident location, stochastic
//! direct/indirect lobe selection), plus the far-field baseline mode.

pub mod image;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use image::{mse, variance_protocol, Image};

use crate::math::{Ray, Rgb, Vec3, RAY_EPSILON};
use crate::model::{ModelScratch, TransportModel};
use crate::param::{dir_from_s_pair, from_s, project_back, s_pair_from_dir, SParam};
use crate::rng::stream;
use crate::scene::{
    bsdf_eval_pdf, bsdf_sample, emitter_pdf, medium_sample_distance, phase_hg, phase_sample_hg,
    sample_emitter, Emitter, MediumEvent, Scene, SceneHit,
};
use crate::trainer::farfield::FarfieldModel;

/// Power heuristic with exponent 2; defined as 0 when both densities vanish.
#[inline]
pub fn power_heuristic(p: f64, q: f64) -> f64 {
    if p <= 0.0 && q <= 0.0 {
        return 0.0;
    }
    let p2 = p * p;
    p2 / (p2 + q * q)
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderMode {
    Reference,
    Neural,
    Farfield,
}

#[derive(Copy, Clone, Debug, Serialize, Deserialize)]
pub struct RenderConfig {
    pub spp: u32,
    pub max_depth: u32,
    pub seed: u64,
    pub mode: RenderMode,
    #[serde(default = "default_threads")]
    pub threads: usize,
}

fn default_threads() -> usize {
    1
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig { spp: 64, max_depth: 64, seed: 0, mode: RenderMode::Reference, threads: 1 }
    }
}

const RR_START_DEPTH: u32 = 8;

/// How the previous bounce scores emitter hits: delta techniques (camera,
/// specular lobes) take full weight, area techniques MIS against the
/// emitter-sampling density evaluated from `origin`.
#[derive(Copy, Clone, Debug)]
enum Prev {
    Delta,
    Area { pdf: f64, origin: Vec3 },
}

impl Prev {
    fn weight(&self, scene: &Scene, dir: Vec3) -> f64 {
        match *self {
            Prev::Delta => 1.0,
            Prev::Area { pdf, origin } => power_heuristic(pdf, emitter_pdf(&scene.emitters, origin, dir)),
        }
    }
}

enum TraceKind<'a> {
    Reference,
    Neural { asset: usize, model: &'a TransportModel },
    Farfield { asset: usize, model: &'a FarfieldModel },
}

/// Per-bounce output of the neural asset integrator.
pub struct NeuralBounce {
    /// Radiance to add (already scaled by the incoming throughput).
    pub radiance: Rgb,
    /// Continuation ray with its updated throughput and MIS bookkeeping.
    pub continuation: Option<Continuation>,
}

pub struct Continuation {
    pub ray: Ray,
    pub beta: Rgb,
    /// Solid-angle density of the continuation direction (0 for delta lobes).
    pub pdf: f64,
    /// Reference point for the deferred emitter-pdf evaluation.
    pub mis_origin: Vec3,
    pub delta: bool,
}

/// Emitter-sample the direct surface lobe at a point (standard NEE with MIS
/// against the BSDF density).
fn direct_lobe_nee(
    scene: &Scene,
    bsdf: &crate::scene::Bsdf,
    point: Vec3,
    normal: Vec3,
    w_o: Vec3,
    rng: &mut impl Rng,
) -> Rgb {
    let Some(es) = sample_emitter(&scene.emitters, point, rng) else {
        return Rgb::BLACK;
    };
    let (f_cos, f_pdf) = bsdf_eval_pdf(bsdf, normal, w_o, es.dir);
    if f_cos.is_black() || es.pdf <= 0.0 {
        return Rgb::BLACK;
    }
    if scene.occluded(point + es.dir * RAY_EPSILON, es.dir, es.dist) {
        return Rgb::BLACK;
    }
    let w = if es.delta { 1.0 } else { power_heuristic(es.pdf, f_pdf) };
    f_cos * es.radiance * (w / es.pdf)
}

/// One interaction with the neural asset per the baked-transport scheme:
/// sample the incident proxy location from the flow marginal, MIS the
/// emitter against the flow conditional there, then either continue from the
/// back-projected incident point or (with direct separation) stochastically
/// pick the analytic direct lobe instead.
#[allow(clippy::too_many_arguments)]
pub fn neural_bounce(
    scene: &Scene,
    asset_index: usize,
    model: &TransportModel,
    x_o_world: Vec3,
    normal: Vec3,
    w_o: Vec3,
    channel: usize,
    beta: Rgb,
    rng: &mut impl Rng,
    scratch: &mut ModelScratch,
) -> NeuralBounce {
    let asset = &scene.assets[asset_index];
    let x_local = asset.to_local(x_o_world);
    model.encode_prefix(x_local, w_o, &mut scratch.prefix);
    let albedo = model.albedo_eval(&scratch.prefix, &mut scratch.mlp);
    let mut radiance = Rgb::BLACK;

    // Incident proxy location from the flow marginal over (s1, s2).
    let (s12, pdf_u) =
        model.flow.sample_u(&model.store, &scratch.prefix, channel, rng, &mut scratch.flow);
    let aabb = crate::geometry::Aabb { half_extents: model.half_extents };
    let (proxy, _) = from_s(SParam([s12[0], s12[1], 0.5, 0.5]), &aabb);
    let u_world = asset.to_world(proxy.u);
    let pdf_u_c = pdf_u[channel];

    // Path sampling of the incident direction from the flow conditional.
    let mut neural_cont: Option<Continuation> = None;
    let mut neural_factor = Rgb::BLACK;
    if pdf_u_c > 0.0 {
        // One shared dim-3 conditioner evaluation serves both the emitter
        // branch and the conditional sampling below.
        model.flow.condition_omega(&model.store, &scratch.prefix, s12, &mut scratch.flow);

        // Emitter sampling at the proxy point, MIS against the flow
        // conditional in solid angle; geometry and visibility are checked
        // before paying for the network evaluation.
        if let Some(es) = sample_emitter(&scene.emitters, u_world, rng) {
            if es.pdf > 0.0 && !es.radiance.is_black() {
                if let Some(back) = project_back(&proxy, es.dir, asset) {
                    let x_i_world = asset.to_world(back.x_i);
                    let t_back = (proxy.u - back.x_i).length();
                    let dist = if es.dist.is_finite() { es.dist + t_back } else { es.dist };
                    if !scene.occluded(x_i_world + es.dir * RAY_EPSILON, es.dir, dist) {
                        let s34 = s_pair_from_dir(es.dir);
                        let pdf_w = model.flow.pdf_omega_given(
                            &model.store,
                            &scratch.prefix,
                            s12,
                            s34,
                            &mut scratch.flow,
                        );
                        let w_emit =
                            if es.delta { 1.0 } else { power_heuristic(es.pdf, pdf_w[channel]) };
                        // F / (p_u^c p_e): the box-measure factors cancel.
                        let f_over_p = albedo * pdf_u * pdf_w / (pdf_u_c * es.pdf);
                        radiance += beta * es.radiance * f_over_p * w_emit;
                    }
                }
            }
        }

        let (s34, pdf_w) = model.flow.sample_omega_given(
            &model.store,
            &scratch.prefix,
            s12,
            channel,
            rng,
            &mut scratch.flow,
        );
        let w_i = dir_from_s_pair(s34);
        if pdf_w[channel] > 0.0 {
            if let Some(back) = project_back(&proxy, w_i, asset) {
                neural_factor = albedo * pdf_u * pdf_w / (pdf_u_c * pdf_w[channel]);
                let x_i_world = asset.to_world(back.x_i);
                neural_cont = Some(Continuation {
                    ray: Ray::new(x_i_world + w_i * RAY_EPSILON, w_i),
                    beta: beta * neural_factor,
                    pdf: pdf_w[channel],
                    mis_origin: u_world,
                    delta: false,
                });
            }
        }
    }

    if !model.separate_direct {
        return NeuralBounce { radiance, continuation: neural_cont };
    }

    // Direct separation: the analytic one-bounce lobe at x_o handles what the
    // baked transport deliberately excludes.
    radiance += beta * direct_lobe_nee(scene, &asset.bsdf, x_o_world, normal, w_o, rng);
    let direct = bsdf_sample(&asset.bsdf, normal, w_o, channel, rng);
    let mut direct_factor = Rgb::BLACK;
    if direct.valid && !direct.weight.is_black() {
        // Self-visibility: samples that re-hit the asset belong to the baked
        // indirect transport and must never be selected here.
        let x_local_exit = asset.to_local(x_o_world);
        let ray = Ray::new(x_local_exit + direct.w_i * RAY_EPSILON, direct.w_i);
        if asset.intersect_local(&ray).is_none() {
            direct_factor = direct.weight;
        }
    }
    let m_num = direct_factor[channel];
    let m_den = m_num + neural_factor[channel];
    if m_den <= 0.0 {
        return NeuralBounce { radiance, continuation: None };
    }
    let m = m_num / m_den;
    if rng.gen::<f64>() < m {
        let cont = Continuation {
            ray: Ray::new(x_o_world + direct.w_i * RAY_EPSILON, direct.w_i),
            beta: beta * direct_factor / m,
            pdf: direct.pdf,
            mis_origin: x_o_world,
            delta: direct.delta,
        };
        NeuralBounce { radiance, continuation: Some(cont) }
    } else {
        let cont = neural_cont.map(|c| Continuation { beta: c.beta / (1.0 - m), ..c });
        NeuralBounce { radiance, continuation: cont }
    }
}

/// Trace one camera path to completion.
fn trace(
    scene: &Scene,
    kind: &TraceKind,
    mut ray: Ray,
    max_depth: u32,
    rng: &mut impl Rng,
    scratch: &mut ModelScratch,
) -> Rgb {
    let mut radiance = Rgb::BLACK;
    let mut beta = Rgb::WHITE;
    let hero = (rng.gen::<f64>() * 3.0) as usize % 3;
    let mut prev = Prev::Delta;
    let mut depth = 0u32;
    // Index of the asset whose interior medium the ray currently travels.
    let mut medium_of: Option<usize> = None;

    loop {
        if depth >= max_depth {
            break;
        }
        // Interior segment: exponential flight against the hero channel.
        if let Some(ai) = medium_of {
            let asset = &scene.assets[ai];
            let Some(boundary) = asset.intersect(&ray, ai) else {
                break; // numerical corner; drop the path
            };
            let medium = asset.medium.as_ref().unwrap();
            match medium_sample_distance(medium, hero, boundary.t, rng) {
                MediumEvent::Scatter { t, weight } => {
                    depth += 1;
                    beta *= weight;
                    if beta.is_black() {
                        break;
                    }
                    let pos = ray.at(t);
                    // No next-event estimation inside dielectric-enclosed
                    // media; the boundary blocks straight connections.
                    let new_dir = phase_sample_hg(medium.hg_g, ray.dir, rng);
                    prev = Prev::Area {
                        pdf: phase_hg(ray.dir.dot(new_dir), medium.hg_g),
                        origin: pos,
                    };
                    ray = Ray::new(pos, new_dir);
                    if depth >= RR_START_DEPTH {
                        let q = beta.max_component().min(1.0);
                        if rng.gen::<f64>() >= q {
                            break;
                        }
                        beta = beta / q;
                    }
                    continue;
                }
                MediumEvent::PassThrough { weight } => {
                    beta *= weight;
                    // Surface interaction at the boundary, still inside.
                    let hit = boundary;
                    depth += 1;
                    let w_o = -ray.dir;
                    let sample = bsdf_sample(&scene.assets[ai].bsdf, hit.normal, w_o, hero, rng);
                    if !sample.valid || sample.weight.is_black() {
                        break;
                    }
                    beta *= sample.weight;
                    prev = if sample.delta {
                        Prev::Delta
                    } else {
                        Prev::Area { pdf: sample.pdf, origin: hit.point }
                    };
                    if sample.w_i.dot(hit.normal) > 0.0 {
                        medium_of = None;
                    }
                    ray = Ray::new(hit.point + sample.w_i * RAY_EPSILON, sample.w_i);
                    if depth >= RR_START_DEPTH {
                        let q = beta.max_component().min(1.0);
                        if rng.gen::<f64>() >= q {
                            break;
                        }
                        beta = beta / q;
                    }
                    continue;
                }
            }
        }

        match scene.intersect(&ray) {
            None => {
                // Environment emitters score on escape.
                let mut env = Rgb::BLACK;
                for e in &scene.emitters {
                    if let Emitter::ConstEnv { radiance } = e {
                        env += Rgb::new(radiance[0], radiance[1], radiance[2]);
                    }
                }
                if !env.is_black() {
                    radiance += beta * env * prev.weight(scene, ray.dir);
                }
                break;
            }
            Some(SceneHit::EmitterSurface { emitter, t: _ }) => {
                if let Emitter::SphereArea { radiance: lr, .. } = &scene.emitters[emitter] {
                    let le = Rgb::new(lr[0], lr[1], lr[2]);
                    radiance += beta * le * prev.weight(scene, ray.dir);
                }
                break;
            }
            Some(SceneHit::Surface(hit)) => {
                let asset_index = hit.asset_id;
                match kind {
                    TraceKind::Neural { asset, model } if *asset == asset_index => {
                        if !hit.entering {
                            // grazing re-entry; step past
                            ray = Ray::new(hit.point + ray.dir * RAY_EPSILON, ray.dir);
                            continue;
                        }
                        depth += 1;
                        let bounce = neural_bounce(
                            scene,
                            asset_index,
                            model,
                            hit.point,
                            hit.normal,
                            -ray.dir,
                            hero,
                            beta,
                            rng,
                            scratch,
                        );
                        radiance += bounce.radiance;
                        match bounce.continuation {
                            Some(c) if !c.beta.is_black() => {
                                beta = c.beta;
                                prev = if c.delta {
                                    Prev::Delta
                                } else {
                                    Prev::Area { pdf: c.pdf, origin: c.mis_origin }
                                };
                                ray = c.ray;
                            }
                            _ => break,
                        }
                        if depth >= RR_START_DEPTH {
                            let q = beta.max_component().min(1.0);
                            if rng.gen::<f64>() >= q {
                                break;
                            }
                            beta = beta / q;
                        }
                        continue;
                    }
                    TraceKind::Farfield { asset, model } if *asset == asset_index => {
                        if !hit.entering {
                            ray = Ray::new(hit.point + ray.dir * RAY_EPSILON, ray.dir);
                            continue;
                        }
                        // Pre-integrated transport: one emitter sample, no
                        // continuation through the asset.
                        if let Some(es) = sample_emitter(&scene.emitters, hit.point, rng) {
                            if es.pdf > 0.0
                                && !scene.occluded(hit.point + es.dir * RAY_EPSILON, es.dir, es.dist)
                            {
                                let a = &scene.assets[asset_index];
                                let f = model.eval(
                                    a.to_local(hit.point),
                                    -ray.dir,
                                    es.dir,
                                    &mut scratch.prefix,
                                    &mut scratch.mlp,
                                );
                                radiance += beta * f * es.radiance / es.pdf;
                            }
                        }
                        break;
                    }
                    _ => {}
                }

                // Standard surface interaction.
                depth += 1;
                let asset = &scene.assets[asset_index];
                let w_o = -ray.dir;
                if medium_of.is_none() {
                    radiance +=
                        beta * direct_lobe_nee(scene, &asset.bsdf, hit.point, hit.normal, w_o, rng);
                }
                let sample = bsdf_sample(&asset.bsdf, hit.normal, w_o, hero, rng);
                if !sample.valid || sample.weight.is_black() {
                    break;
                }
                beta *= sample.weight;
                prev = if sample.delta {
                    Prev::Delta
                } else {
                    Prev::Area { pdf: sample.pdf, origin: hit.point }
                };
                if sample.w_i.dot(hit.normal) < 0.0 && asset.medium.is_some() {
                    medium_of = Some(asset_index);
                }
                ray = Ray::new(hit.point + sample.w_i * RAY_EPSILON, sample.w_i);
                if depth >= RR_START_DEPTH {
                    let q = beta.max_component().min(1.0);
                    if rng.gen::<f64>() >= q {
                        break;
                    }
                    beta = beta / q;
                }
            }
        }
    }
    radiance
}

pub struct RenderOutput {
    pub image: Image,
    /// Per-pixel variance of the pixel mean (per channel).
    pub variance: Image,
}

fn render_kind(scene: &Scene, config: &RenderConfig, kind: &TraceKind) -> RenderOutput {
    let width = scene.camera.resolution[0];
    let height = scene.camera.resolution[1];
    let n_pixels = (width * height) as usize;
    let spp = config.spp.max(1);
    let render_chunk = |range: std::ops::Range<usize>| -> (Vec<Rgb>, Vec<Rgb>) {
        let mut mean = vec![Rgb::BLACK; range.len()];
        let mut var = vec![Rgb::BLACK; range.len()];
        let mut scratch = ModelScratch::default();
        for (slot, pixel_index) in range.clone().enumerate() {
            let x = (pixel_index as u32) % width;
            let y = (pixel_index as u32) / width;
            let mut sum = Rgb::BLACK;
            let mut sum2 = Rgb::BLACK;
            for s in 0..spp {
                let mut rng = stream(config.seed, pixel_index as u64, s as u64);
                let px = (x as f64 + rng.gen::<f64>()) / width as f64;
                let py = (y as f64 + rng.gen::<f64>()) / height as f64;
                let ray = scene.camera.primary_ray(px, py);
                let v = trace(scene, kind, ray, config.max_depth, &mut rng, &mut scratch);
                sum += v;
                for c in 0..3 {
                    sum2[c] += v[c] * v[c];
                }
            }
            let n = spp as f64;
            let m = sum / n;
            mean[slot] = m;
            if spp > 1 {
                for c in 0..3 {
                    let s2 = (sum2[c] - n * m[c] * m[c]).max(0.0) / (n - 1.0);
                    var[slot][c] = s2 / n;
                }
            }
        }
        (mean, var)
    };

    let mut image = Image::new(width, height);
    let mut variance = Image::new(width, height);
    let threads = config.threads.max(1).min(n_pixels.max(1));
    if threads <= 1 {
        let (mean, var) = render_chunk(0..n_pixels);
        image.pixels = mean;
        variance.pixels = var;
    } else {
        let chunk = n_pixels.div_ceil(threads);
        let results: Vec<(Vec<Rgb>, Vec<Rgb>)> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..threads)
                .map(|t| {
                    let range = t * chunk..((t + 1) * chunk).min(n_pixels);
                    let f = &render_chunk;
                    scope.spawn(move || f(range))
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        let mut offset = 0;
        for (mean, var) in results {
            let n = mean.len();
            image.pixels[offset..offset + n].copy_from_slice(&mean);
            variance.pixels[offset..offset + n].copy_from_slice(&var);
            offset += n;
        }
    }
    RenderOutput { image, variance }
}

/// Ground-truth volumetric path tracer (no baked assets involved).
pub fn render_reference(scene: &Scene, config: &RenderConfig) -> RenderOutput {
    render_kind(scene, config, &TraceKind::Reference)
}

/// Path tracer delegating hits on the neural-flagged asset to the baked
/// transport model.
pub fn render_neural(scene: &Scene, config: &RenderConfig, model: &TransportModel) -> RenderOutput {
    let asset = scene.neural_asset_index().expect("scene has no neural-flagged asset");
    render_kind(scene, config, &TraceKind::Neural { asset, model })
}

/// Far-field baseline: the neural-flagged asset renders through the 6D
/// regression model under emitter sampling only.
pub fn render_farfield(scene: &Scene, config: &RenderConfig, model: &FarfieldModel) -> RenderOutput {
    let asset = scene.neural_asset_index().expect("scene has no neural-flagged asset");
    render_kind(scene, config, &TraceKind::Farfield { asset, model })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::PI;

    #[test]
    fn power_heuristic_cases() {
        assert_eq!(power_heuristic(1.0, 1.0), 0.5);
        assert_eq!(power_heuristic(3.0, 0.0), 1.0);
        assert!((power_heuristic(1.0, 2.0) - 0.2).abs() < 1e-15);
        assert_eq!(power_heuristic(0.0, 0.0), 0.0);
    }

    #[test]
    fn empty_scene_env_is_exact() {
        let scene = Scene::from_toml_str(
            r#"
            [camera]
            position = [0.0, 0.0, 5.0]
            look_at = [0.0, 0.0, 0.0]
            vfov = 40.0
            resolution = [8, 8]

            [[emitters]]
            type = "const_env"
            radiance = [0.25, 0.5, 0.75]
            "#,
        )
        .unwrap();
        let out = render_reference(&scene, &RenderConfig { spp: 4, ..Default::default() });
        for p in &out.image.pixels {
            assert_eq!(*p, Rgb::new(0.25, 0.5, 0.75));
        }
    }

    #[test]
    fn white_furnace_renders_unit_radiance() {
        // Gray purely scattering medium behind an index-matched boundary
        // under a unit environment: every path carries weight exactly 1.
        let scene = Scene::from_toml_str(
            r#"
            [camera]
            position = [0.0, 0.0, 4.0]
            look_at = [0.0, 0.0, 0.0]
            vfov = 35.0
            resolution = [16, 16]

            [[assets]]
            name = "cloudball"
            shape = { type = "sphere", radius = 1.0 }
            bsdf = { type = "smooth_dielectric", eta = 1.0 }
            medium = { sigma_a = [0.0, 0.0, 0.0], sigma_s = [1.0, 1.0, 1.0], hg_g = 0.0 }

            [[emitters]]
            type = "const_env"
            radiance = [1.0, 1.0, 1.0]
            "#,
        )
        .unwrap();
        let out = render_reference(
            &scene,
            &RenderConfig { spp: 256, max_depth: 256, ..Default::default() },
        );
        for p in &out.image.pixels {
            for c in 0..3 {
                assert!((p[c] - 1.0).abs() <= 0.02, "furnace pixel {p:?}");
            }
        }
    }

    #[test]
    fn lambertian_sphere_under_point_light_matches_analytic() {
        // Direct lighting of an opaque diffuse sphere by a point light:
        // rho/pi * cos(theta) * I / d^2 at visible, lit points.
        let scene = Scene::from_toml_str(
            r#"
            [camera]
            position = [0.0, 0.0, 6.0]
            look_at = [0.0, 0.0, 0.0]
            vfov = 25.0
            resolution = [33, 33]

            [[assets]]
            name = "ball"
            shape = { type = "sphere", radius = 1.0 }
            bsdf = { type = "lambertian", albedo = [0.6, 0.4, 0.2] }

            [[emitters]]
            type = "point"
            position = [0.0, 0.0, 10.0]
            intensity = [50.0, 50.0, 50.0]
            "#,
        )
        .unwrap();
        let out = render_reference(
            &scene,
            &RenderConfig { spp: 1024, max_depth: 8, ..Default::default() },
        );
        // center pixel: hit at (0,0,1), normal +z, light straight above
        let center = out.image.pixel(16, 16);
        let d2 = 81.0; // (10 - 1)^2
        for (c, rho) in [0.6, 0.4, 0.2].iter().enumerate() {
            let expected = rho / PI * 1.0 * 50.0 / d2;
            assert!(
                (center[c] - expected).abs() < 0.02 * expected + 1e-4,
                "channel {c}: {} vs {expected}",
                center[c]
            );
        }
        // off-sphere pixel sees nothing (point lights are invisible)
        let corner = out.image.pixel(0, 0);
        assert_eq!(corner, Rgb::BLACK);
    }

    #[test]
    fn variance_halves_with_doubled_spp() {
        let scene = Scene::from_toml_str(
            r#"
            [camera]
            position = [0.0, 0.0, 4.0]
            look_at = [0.0, 0.0, 0.0]
            vfov = 35.0
            resolution = [24, 24]

            [[assets]]
            name = "ball"
            shape = { type = "sphere", radius = 1.0 }
            bsdf = { type = "lambertian", albedo = [0.7, 0.7, 0.7] }

            [[emitters]]
            type = "sphere_area"
            center = [3.0, 3.0, 3.0]
            radius = 0.5
            radiance = [8.0, 8.0, 8.0]

            [[emitters]]
            type = "const_env"
            radiance = [0.2, 0.2, 0.2]
            "#,
        )
        .unwrap();
        let v = |spp: u32, seed: u64| {
            let out = render_reference(
                &scene,
                &RenderConfig { spp, seed, max_depth: 16, ..Default::default() },
            );
            let mut total = 0.0;
            for p in &out.variance.pixels {
                total += p.mean();
            }
            total / out.variance.pixels.len() as f64
        };
        // average over seeds to stabilize the estimate
        let v1: f64 = (0..4).map(|s| v(128, s)).sum::<f64>() / 4.0;
        let v2: f64 = (0..4).map(|s| v(256, s + 10)).sum::<f64>() / 4.0;
        let ratio = v1 / v2;
        assert!((ratio - 2.0).abs() < 0.2, "variance ratio {ratio}");
    }

    #[test]
    fn render_is_deterministic_across_thread_counts() {
        let scene = Scene::from_toml_str(
            r#"
            [camera]
            position = [0.0, 0.0, 4.0]
            look_at = [0.0, 0.0, 0.0]
            vfov = 35.0
            resolution = [16, 16]

            [[assets]]
            name = "ball"
            shape = { type = "sphere", radius = 1.0 }
            bsdf = { type = "lambertian", albedo = [0.7, 0.3, 0.5] }

            [[emitters]]
            type = "const_env"
            radiance = [1.0, 1.0, 1.0]
            "#,
        )
        .unwrap();
        let a = render_reference(&scene, &RenderConfig { spp: 16, ..Default::default() });
        let b = render_reference(
            &scene,
            &RenderConfig { spp: 16, threads: 3, ..Default::default() },
        );
        assert_eq!(a.image, b.image);
    }
}
