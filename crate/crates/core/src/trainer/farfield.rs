//! Far-field (6D) regression baseline: ground-truth estimates of the
//! direction-only transport under a delta directional light, and an MLP
//! regressed against them.

use std::path::Path;

use rand::Rng;

use crate::math::{sample_cosine_hemisphere, sample_uniform_sphere, Frame, Ray, Rgb, Vec3};
use crate::nn::checkpoint::{self, CheckpointError, CheckpointHeader, KIND_FARFIELD};
use crate::nn::{freq_encode, freq_encode_len, sigmoid, softplus, AdamState, Mlp, MlpScratch, MlpSpec, ParamStore};
use crate::scene::{bsdf_eval_pdf, bsdf_sample, medium_sample_distance, phase_hg, phase_sample_hg, Asset, Bsdf, MediumEvent};
use crate::trainer::TrainConfig;

/// True when a shadow connection can pass through this boundary unchanged
/// (only index-matched smooth boundaries are treated as transparent).
fn boundary_transparent(bsdf: &Bsdf) -> bool {
    matches!(bsdf, Bsdf::SmoothDielectric { eta } if (*eta - 1.0).abs() < 1e-12)
}

/// Attenuation of a straight connection from `pos` (asset-local) toward the
/// light direction, or black when a non-transparent boundary blocks it.
fn connection_transmittance(asset: &Asset, pos: Vec3, dir_light: Vec3, inside: bool) -> Rgb {
    let mut weight = Rgb::WHITE;
    let mut pos = pos;
    let mut inside = inside;
    for _ in 0..8 {
        let ray = Ray::new(pos, dir_light);
        match asset.intersect_local(&ray) {
            None => return weight,
            Some(hit) => {
                if !boundary_transparent(&asset.bsdf) {
                    return Rgb::BLACK;
                }
                if inside {
                    if let Some(m) = &asset.medium {
                        weight *= m.transmittance(hit.t);
                    }
                }
                inside = !hit.entering;
                pos = hit.point;
            }
        }
    }
    Rgb::BLACK
}

/// Unbiased estimate of the far-field transport F'(x_o, w_o, dir_light):
/// adjoint path tracing from the outgoing configuration with a connection to
/// the delta directional light at every scattering vertex. Both `x_o` and
/// directions are asset-local; `dir_light` points toward the light.
pub fn farfield_estimate(
    asset: &Asset,
    x_o: Vec3,
    w_o: Vec3,
    dir_light: Vec3,
    spp: usize,
    rng: &mut impl Rng,
) -> Rgb {
    let mut total = Rgb::BLACK;
    for _ in 0..spp {
        let hero = (rng.gen::<f64>() * 3.0) as usize % 3;
        let mut beta = Rgb::WHITE;
        let mut pos = x_o;
        let mut dir = -w_o;
        let mut normal = pos.normalized();
        let mut bounces = 0u32;
        loop {
            // Connection at the surface vertex.
            let (f_cos, _) = bsdf_eval_pdf(&asset.bsdf, normal, -dir, dir_light);
            if !f_cos.is_black() {
                let t = connection_transmittance(asset, pos, dir_light, false);
                total += beta * f_cos * t;
            }
            let sample = bsdf_sample(&asset.bsdf, normal, -dir, hero, rng);
            bounces += 1;
            if !sample.valid {
                break;
            }
            beta *= sample.weight;
            dir = sample.w_i;
            if beta.is_black() || bounces >= 256 {
                break;
            }
            if bounces >= 4 {
                let q = beta.max_component().min(1.0);
                if rng.gen::<f64>() >= q {
                    break;
                }
                beta = beta / q;
            }
            let inside = dir.dot(normal) < 0.0;
            if inside && asset.medium.is_some() {
                let medium = asset.medium.as_ref().unwrap();
                let mut exited = None;
                loop {
                    let seg = Ray::new(pos, dir);
                    let Some(boundary) = asset.intersect_local(&seg) else {
                        break;
                    };
                    match medium_sample_distance(medium, hero, boundary.t, rng) {
                        MediumEvent::Scatter { t, weight } => {
                            pos = seg.at(t);
                            beta *= weight;
                            bounces += 1;
                            if beta.is_black() || bounces >= 256 {
                                break;
                            }
                            // Connection at the medium vertex.
                            let ph = phase_hg(dir.dot(dir_light), medium.hg_g);
                            let t_conn = connection_transmittance(asset, pos, dir_light, true);
                            total += beta * t_conn * ph;
                            dir = phase_sample_hg(medium.hg_g, dir, rng);
                            if bounces >= 4 {
                                let q = beta.max_component().min(1.0);
                                if rng.gen::<f64>() >= q {
                                    beta = Rgb::BLACK;
                                    break;
                                }
                                beta = beta / q;
                            }
                        }
                        MediumEvent::PassThrough { weight } => {
                            beta *= weight;
                            exited = Some(boundary);
                            break;
                        }
                    }
                }
                match exited {
                    Some(boundary) => {
                        pos = boundary.point;
                        normal = boundary.normal;
                    }
                    None => break,
                }
            } else {
                let seg = Ray::new(pos, dir);
                match asset.intersect_local(&seg) {
                    Some(hit) => {
                        pos = hit.point;
                        normal = hit.normal;
                    }
                    None => break,
                }
            }
        }
    }
    total / spp as f64
}

/// 6D regression network mapping encoded (x_o, w_o, w_i) to RGB transport.
pub struct FarfieldModel {
    pub store: ParamStore,
    pub mlp: Mlp,
    pub half_extents: Vec3,
    pub x_bands: usize,
    pub d_bands: usize,
}

impl FarfieldModel {
    pub fn new(
        hidden_dim: usize,
        hidden_layers: usize,
        x_bands: usize,
        d_bands: usize,
        half_extents: Vec3,
    ) -> Self {
        let mut store = ParamStore::new();
        let input_dim = freq_encode_len(3, x_bands) + 2 * freq_encode_len(3, d_bands);
        let mlp = Mlp::new(
            &mut store,
            "regression",
            MlpSpec { input_dim, hidden_dim, hidden_layers, output_dim: 3 },
        );
        FarfieldModel { store, mlp, half_extents, x_bands, d_bands }
    }

    pub fn init(&mut self, rng: &mut impl Rng) {
        self.mlp.init_he(&mut self.store, rng);
    }

    pub fn encode(&self, x_o: Vec3, w_o: Vec3, w_i: Vec3, out: &mut Vec<f64>) {
        out.clear();
        let xu = [
            x_o.x / self.half_extents.x,
            x_o.y / self.half_extents.y,
            x_o.z / self.half_extents.z,
        ];
        freq_encode(&xu, self.x_bands, out);
        freq_encode(&[w_o.x, w_o.y, w_o.z], self.d_bands, out);
        freq_encode(&[w_i.x, w_i.y, w_i.z], self.d_bands, out);
    }

    pub fn eval(&self, x_o: Vec3, w_o: Vec3, w_i: Vec3, input: &mut Vec<f64>, tape: &mut MlpScratch) -> Rgb {
        self.encode(x_o, w_o, w_i, input);
        let out = self.mlp.forward(&self.store, input, tape);
        Rgb::new(softplus(out[0]), softplus(out[1]), softplus(out[2]))
    }

    pub fn save(&self, path: &Path, config_echo: &str) -> Result<(), CheckpointError> {
        let header = CheckpointHeader {
            kind: KIND_FARFIELD,
            k_knots: 0,
            cond_hidden: 0,
            cond_layers: 0,
            secondary_hidden: self.mlp.spec.hidden_dim as u32,
            secondary_layers: self.mlp.spec.hidden_layers as u32,
            x_bands: self.x_bands as u32,
            d_bands: self.d_bands as u32,
            flags: 0,
            half_extents: self.half_extents,
            config_echo: config_echo.to_string(),
        };
        checkpoint::save(path, &header, &self.store)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let (header, store) = checkpoint::load(path)?;
        if header.kind != KIND_FARFIELD {
            return Err(CheckpointError::Malformed(format!(
                "expected a far-field checkpoint, found kind {}",
                header.kind
            )));
        }
        let x_bands = header.x_bands as usize;
        let d_bands = header.d_bands as usize;
        let spec = MlpSpec {
            input_dim: freq_encode_len(3, x_bands) + 2 * freq_encode_len(3, d_bands),
            hidden_dim: header.secondary_hidden as usize,
            hidden_layers: header.secondary_layers as usize,
            output_dim: 3,
        };
        let (offset, len) = store
            .slices()
            .find(|(n, _, _)| *n == "regression")
            .map(|(_, o, l)| (o, l))
            .ok_or_else(|| CheckpointError::Malformed("missing regression slice".into()))?;
        if len != spec.param_count() {
            return Err(CheckpointError::Malformed("regression slice does not match header".into()));
        }
        Ok(FarfieldModel {
            store,
            mlp: Mlp { spec, offset },
            half_extents: header.half_extents,
            x_bands,
            d_bands,
        })
    }
}

/// One far-field training query: an outgoing configuration plus a light
/// direction, drawn the same way tuple generation draws outgoing rays.
#[derive(Copy, Clone, Debug)]
pub struct FarfieldQuery {
    pub x_o: Vec3,
    pub w_o: Vec3,
    pub w_i: Vec3,
}

pub fn sample_query(asset: &Asset, rng: &mut impl Rng) -> Option<FarfieldQuery> {
    let radius = asset.bounding_sphere_radius();
    let p = sample_uniform_sphere(rng) * radius;
    let inward = Frame::from_normal(-p / radius);
    let dir = inward.to_world(sample_cosine_hemisphere(rng));
    let hit = asset.intersect_local(&Ray::new(p, dir))?;
    Some(FarfieldQuery { x_o: hit.point, w_o: -dir, w_i: sample_uniform_sphere(rng) })
}

/// One L2 regression step of the 6D model against `gt_spp`-sample transport
/// estimates at each query. Returns the mean squared residual.
pub fn farfield_train_step(
    asset: &Asset,
    queries: &[FarfieldQuery],
    gt_spp: usize,
    model: &mut FarfieldModel,
    adam: &mut AdamState,
    grads: &mut Vec<f64>,
    input: &mut Vec<f64>,
    tape: &mut MlpScratch,
    rng: &mut impl Rng,
) -> f64 {
    grads.clear();
    grads.resize(model.store.len(), 0.0);
    let inv_n = 1.0 / queries.len() as f64;
    let mut loss = 0.0;
    for q in queries {
        let target = farfield_estimate(asset, q.x_o, q.w_o, q.w_i, gt_spp, rng);
        model.encode(q.x_o, q.w_o, q.w_i, input);
        let raw = model.mlp.forward(&model.store, input, tape);
        let mut d_out = [0.0; 3];
        for c in 0..3 {
            let pred = softplus(raw[c]);
            let resid = pred - target[c];
            loss += resid * resid * inv_n;
            d_out[c] = 2.0 * resid * sigmoid(raw[c]) * inv_n;
        }
        model.mlp.backward(&model.store, tape, &d_out, grads);
    }
    adam.step(&mut model.store, grads);
    loss
}

/// Train a far-field model on `n_queries` queries at `gt_spp` ground-truth
/// samples per query, batching via repeated passes.
pub fn train_farfield(
    asset: &Asset,
    config: &TrainConfig,
    n_queries: usize,
    gt_spp: usize,
    steps: usize,
    batch: usize,
) -> FarfieldModel {
    let mut model = FarfieldModel::new(
        config.cond_hidden,
        config.cond_layers,
        config.x_bands,
        config.d_bands,
        asset.aabb.half_extents,
    );
    let mut rng = crate::rng::stream(config.seed, 0xfa24, 0);
    model.init(&mut rng);
    let mut adam = AdamState::new(model.store.len(), config.lr);
    // Precompute targets once (the paper's baseline uses a static dataset).
    let mut dataset = Vec::with_capacity(n_queries);
    let mut i = 0u64;
    while dataset.len() < n_queries {
        let mut qrng = crate::rng::stream(config.seed, 0xfa25, i);
        i += 1;
        let Some(q) = sample_query(asset, &mut qrng) else { continue };
        let target = farfield_estimate(asset, q.x_o, q.w_o, q.w_i, gt_spp, &mut qrng);
        dataset.push((q, target));
    }
    let mut grads = Vec::new();
    let mut input = Vec::new();
    let mut tape = MlpScratch::default();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for step in 0..steps {
        if step * batch % dataset.len().max(1) < batch {
            // reshuffle each epoch
            for j in (1..order.len()).rev() {
                let k = (rng.gen::<f64>() * (j + 1) as f64) as usize;
                order.swap(j, k);
            }
        }
        grads.clear();
        grads.resize(model.store.len(), 0.0);
        let inv_n = 1.0 / batch as f64;
        for b in 0..batch {
            let (q, target) = &dataset[order[(step * batch + b) % dataset.len()]];
            model.encode(q.x_o, q.w_o, q.w_i, &mut input);
            let raw = model.mlp.forward(&model.store, &input, &mut tape);
            let mut d_out = [0.0; 3];
            for c in 0..3 {
                let pred = softplus(raw[c]);
                let resid = pred - target[c];
                d_out[c] = 2.0 * resid * sigmoid(raw[c]) * inv_n;
            }
            model.mlp.backward(&model.store, &mut tape, &d_out, &mut grads);
        }
        adam.step(&mut model.store, &mut grads);
    }
    model
}
