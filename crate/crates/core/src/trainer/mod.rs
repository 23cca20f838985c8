//! Training: forward path sampling of exit tuples, the replay buffer with
//! online refresh, the joint NLL + albedo loss, and the bake loop.

pub mod farfield;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::FlowSpec;
use crate::geometry::aabb_exit_intersect;
use crate::math::{sample_cosine_hemisphere, sample_uniform_sphere, Frame, Ray, Rgb, Vec3};
use crate::model::{AlbedoSpec, ModelScratch, TransportModel};
use crate::nn::{sigmoid, softplus, AdamState};
use crate::param::{to_s, ProxyPoint, SParam};
use crate::rng::stream;
use crate::scene::{bsdf_sample, medium_sample_distance, phase_sample_hg, Asset, MediumEvent};

/// One exit tuple produced by forward path sampling: outgoing configuration,
/// normalized 4D incident parameter, RGB throughput.
#[derive(Copy, Clone, Debug)]
pub struct PathSample {
    /// Asset-local boundary point where the camera-side ray first hit.
    pub x_o: Vec3,
    pub w_o: Vec3,
    pub s: SParam,
    pub beta: Rgb,
    pub bounce_count: u32,
    /// False only when the initial ray missed the asset entirely.
    pub valid: bool,
}

impl PathSample {
    fn invalid() -> Self {
        PathSample {
            x_o: Vec3::ZERO,
            w_o: Vec3::new(0.0, 0.0, 1.0),
            s: SParam([0.0; 4]),
            beta: Rgb::BLACK,
            bounce_count: 0,
            valid: false,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub buffer_capacity: usize,
    pub rr_start_bounce: u32,
    pub max_bounces: u32,
    pub separate_direct: bool,
    pub seed: u64,
    pub k_knots: usize,
    pub cond_hidden: usize,
    pub cond_layers: usize,
    pub albedo_hidden: usize,
    pub albedo_layers: usize,
    pub x_bands: usize,
    pub d_bands: usize,
    /// Linear learning-rate decay over the second half of training down to
    /// lr * floor (1.0 keeps the rate constant).
    pub lr_decay_floor: f64,
    /// Curve rows are emitted every this many steps.
    pub log_every: usize,
    /// Held-out tuples for the per-refresh NLL curve.
    pub heldout_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 60_000,
            batch_size: 4096,
            lr: 1e-3,
            buffer_capacity: 1 << 20,
            rr_start_bounce: 4,
            max_bounces: 1024,
            separate_direct: true,
            seed: 0,
            lr_decay_floor: 1.0,
            k_knots: 16,
            cond_hidden: 64,
            cond_layers: 3,
            albedo_hidden: 64,
            albedo_layers: 2,
            x_bands: 6,
            d_bands: 4,
            log_every: 100,
            heldout_size: 10_000,
        }
    }
}

impl TrainConfig {
    pub fn flow_spec(&self) -> FlowSpec {
        FlowSpec {
            k: self.k_knots,
            hidden_dim: self.cond_hidden,
            hidden_layers: self.cond_layers,
            x_bands: self.x_bands,
            d_bands: self.d_bands,
        }
    }

    pub fn albedo_spec(&self) -> AlbedoSpec {
        AlbedoSpec { hidden_dim: self.albedo_hidden, hidden_layers: self.albedo_layers }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training aborted: non-finite loss for {0} consecutive steps")]
    NonFiniteLoss(usize),
    #[error("asset '{0}' cannot be baked: initial rays never hit it")]
    NeverHits(String),
}

/// Forward path-trace one training tuple through the asset in isolation
/// (asset-local coordinates, no emitters, no next-event estimation).
pub fn generate_tuple(asset: &Asset, config: &TrainConfig, rng: &mut impl Rng) -> PathSample {
    let hero = (rng.gen::<f64>() * 3.0) as usize % 3;
    let sphere_radius = asset.bounding_sphere_radius();
    // Outgoing ray: uniform point on the bounding sphere, cosine-weighted
    // inward direction.
    let p = sample_uniform_sphere(rng) * sphere_radius;
    let inward = Frame::from_normal(-p / sphere_radius);
    let dir = inward.to_world(sample_cosine_hemisphere(rng));
    let ray = Ray::new(p, dir);
    let Some(first) = asset.intersect_local(&ray) else {
        return PathSample::invalid();
    };
    let x_o = first.point;
    let w_o = -dir;

    let mut beta = Rgb::WHITE;
    let mut count: u32 = 0;
    let mut pos = x_o;
    let mut normal = first.normal;
    let mut dir = dir;

    let finish = |x_i: Vec3, w_i: Vec3, beta: Rgb, count: u32| {
        let mut beta = beta;
        if config.separate_direct && count == 1 {
            beta = Rgb::BLACK;
        }
        let s = match aabb_exit_intersect(x_i, w_i, &asset.aabb) {
            Ok((u, face_normal)) => to_s(&ProxyPoint { u, face_normal }, w_i).0,
            Err(_) => return PathSample::invalid(),
        };
        PathSample { x_o, w_o, s, beta, bounce_count: count, valid: true }
    };

    // Last scattering configuration; the exit reparameterization uses it.
    let mut x_i;
    let mut w_i;
    loop {
        // Scattering event at a surface point `pos` with outward `normal`.
        let sample = bsdf_sample(&asset.bsdf, normal, -dir, hero, rng);
        count += 1;
        x_i = pos;
        if !sample.valid {
            return finish(x_i, dir, Rgb::BLACK, count);
        }
        beta *= sample.weight;
        dir = sample.w_i;
        w_i = dir;
        if beta.is_black() {
            return finish(x_i, w_i, Rgb::BLACK, count);
        }
        if count >= config.max_bounces {
            return finish(x_i, w_i, Rgb::BLACK, count);
        }
        if count >= config.rr_start_bounce {
            let q = beta.max_component().min(1.0);
            if rng.gen::<f64>() >= q {
                return finish(x_i, w_i, Rgb::BLACK, count);
            }
            beta = beta / q;
        }

        let inside = dir.dot(normal) < 0.0;
        if inside && asset.medium.is_some() {
            let medium = asset.medium.as_ref().unwrap();
            // Walk the interior: exponential flights against the hero
            // channel until the path passes through to the boundary.
            loop {
                let seg = Ray::new(pos, dir);
                let Some(boundary) = asset.intersect_local(&seg) else {
                    // Numerical corner: treat as an absorbed path.
                    return finish(x_i, w_i, Rgb::BLACK, count);
                };
                match medium_sample_distance(medium, hero, boundary.t, rng) {
                    MediumEvent::Scatter { t, weight } => {
                        pos = seg.at(t);
                        beta *= weight;
                        count += 1;
                        x_i = pos;
                        if beta.is_black() {
                            return finish(x_i, dir, Rgb::BLACK, count);
                        }
                        dir = phase_sample_hg(medium.hg_g, dir, rng);
                        w_i = dir;
                        if count >= config.max_bounces {
                            return finish(x_i, w_i, Rgb::BLACK, count);
                        }
                        if count >= config.rr_start_bounce {
                            let q = beta.max_component().min(1.0);
                            if rng.gen::<f64>() >= q {
                                return finish(x_i, w_i, Rgb::BLACK, count);
                            }
                            beta = beta / q;
                        }
                    }
                    MediumEvent::PassThrough { weight } => {
                        beta *= weight;
                        pos = boundary.point;
                        normal = boundary.normal;
                        break; // surface event at the boundary
                    }
                }
            }
        } else {
            // Vacuum propagation (outside, or interior without a medium).
            let seg = Ray::new(pos, dir);
            match asset.intersect_local(&seg) {
                Some(hit) => {
                    pos = hit.point;
                    normal = hit.normal;
                }
                None => return finish(x_i, w_i, beta, count),
            }
        }
    }
}

/// Fixed-capacity tuple buffer regenerated once fully consumed.
pub struct SampleBuffer {
    samples: Vec<PathSample>,
    capacity: usize,
    cursor: usize,
    pub refreshes: u64,
}

pub fn batches_per_epoch(capacity: usize, batch_size: usize) -> usize {
    capacity / batch_size
}

impl SampleBuffer {
    pub fn new(capacity: usize) -> Self {
        SampleBuffer { samples: Vec::with_capacity(capacity), capacity, cursor: 0, refreshes: 0 }
    }

    pub fn fill(&mut self, asset: &Asset, config: &TrainConfig, epoch_seed: u64) {
        self.samples.clear();
        for i in 0..self.capacity {
            let mut rng = stream(config.seed, epoch_seed, i as u64);
            self.samples.push(generate_tuple(asset, config, &mut rng));
        }
        self.cursor = 0;
    }

    /// Next contiguous batch, regenerating the buffer when exhausted.
    /// Invalid tuples remain in the slice; the loss masks them out.
    pub fn next_batch<'a>(
        &'a mut self,
        asset: &Asset,
        config: &TrainConfig,
    ) -> &'a [PathSample] {
        let n = config.batch_size;
        if self.samples.is_empty() || self.cursor + n > self.samples.len() {
            self.refreshes += 1;
            self.fill(asset, config, self.refreshes);
        }
        let batch = &self.samples[self.cursor..self.cursor + n];
        self.cursor += n;
        batch
    }
}

#[derive(Copy, Clone, Debug, Default)]
pub struct LossStats {
    pub nll: f64,
    pub albedo_loss: f64,
    pub valid: usize,
    pub invalid: usize,
}

/// Accumulate gradients of the batch loss (mean flow NLL + mean albedo L2)
/// into `grads` without touching the optimizer. Returns `None` for batches
/// with no valid tuples.
pub fn accumulate_loss_grads(
    batch: &[PathSample],
    model: &TransportModel,
    grads: &mut Vec<f64>,
    scratch: &mut ModelScratch,
) -> Option<LossStats> {
    let n_valid = batch.iter().filter(|s| s.valid).count();
    if n_valid == 0 {
        return None;
    }
    grads.clear();
    grads.resize(model.store.len(), 0.0);
    let inv_n = 1.0 / n_valid as f64;
    let mut stats = LossStats { invalid: batch.len() - n_valid, valid: n_valid, ..Default::default() };
    for sample in batch.iter().filter(|s| s.valid) {
        model.encode_prefix(sample.x_o, sample.w_o, &mut scratch.prefix);
        let logp = model.flow.nll_backward(
            &model.store,
            &scratch.prefix,
            sample.s,
            sample.beta * inv_n,
            grads,
            &mut scratch.flow,
        );
        for c in 0..3 {
            stats.nll -= sample.beta[c] * logp[c] * inv_n;
        }
        // Albedo L2 against the per-sample throughput.
        let raw = model.albedo.forward(&model.store, &scratch.prefix, &mut scratch.mlp);
        let mut d_out = [0.0; 3];
        for c in 0..3 {
            let alpha = softplus(raw[c]);
            let resid = alpha - sample.beta[c];
            stats.albedo_loss += resid * resid * inv_n;
            d_out[c] = 2.0 * resid * sigmoid(raw[c]) * inv_n;
        }
        model.albedo.backward(&model.store, &mut scratch.mlp, &d_out, grads);
    }
    Some(stats)
}

/// Batch loss value under the same clamped objective the gradients use.
pub fn loss_value(batch: &[PathSample], model: &TransportModel, scratch: &mut ModelScratch) -> f64 {
    let n_valid = batch.iter().filter(|s| s.valid).count();
    if n_valid == 0 {
        return 0.0;
    }
    let inv_n = 1.0 / n_valid as f64;
    let mut total = 0.0;
    for sample in batch.iter().filter(|s| s.valid) {
        model.encode_prefix(sample.x_o, sample.w_o, &mut scratch.prefix);
        let pdf = model.flow.pdf(&model.store, &scratch.prefix, sample.s, &mut scratch.flow);
        let raw = model.albedo.forward(&model.store, &scratch.prefix, &mut scratch.mlp);
        for c in 0..3 {
            let logp = (pdf[c] * crate::param::RAW_S_VOLUME)
                .max(1e-300)
                .ln()
                .max(crate::flow::LOGPDF_CLAMP);
            total -= sample.beta[c] * logp * inv_n;
            let resid = softplus(raw[c]) - sample.beta[c];
            total += resid * resid * inv_n;
        }
    }
    total
}

/// One optimization step over a batch: one joint Adam update of both
/// networks. Returns `None` (and skips the step) for all-invalid batches.
pub fn loss_step(
    batch: &[PathSample],
    model: &mut TransportModel,
    adam: &mut AdamState,
    grads: &mut Vec<f64>,
    scratch: &mut ModelScratch,
) -> Option<LossStats> {
    let stats = accumulate_loss_grads(batch, model, grads, scratch)?;
    adam.step(&mut model.store, grads);
    Some(stats)
}

#[derive(Clone, Debug, Default)]
pub struct TrainingCurves {
    /// (step, nll, albedo_loss, invalid_fraction) every `log_every` steps.
    pub rows: Vec<(usize, f64, f64, f64)>,
    /// (refresh index, held-out NLL) at each buffer refresh.
    pub heldout: Vec<(u64, f64)>,
    pub skipped_steps: u64,
}

impl TrainingCurves {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,nll,albedo_loss,invalid_fraction\n");
        for (step, nll, al, inv) in &self.rows {
            out.push_str(&format!("{step},{nll},{al},{inv}\n"));
        }
        out
    }

    pub fn heldout_csv(&self) -> String {
        let mut out = String::from("refresh,heldout_nll\n");
        for (r, nll) in &self.heldout {
            out.push_str(&format!("{r},{nll}\n"));
        }
        out
    }
}

/// Mean NLL (beta-weighted, unit-cube measure) of the flow on a tuple set,
/// without touching gradients.
pub fn heldout_nll(model: &TransportModel, tuples: &[PathSample], scratch: &mut ModelScratch) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for t in tuples.iter().filter(|t| t.valid) {
        model.encode_prefix(t.x_o, t.w_o, &mut scratch.prefix);
        let pdf = model.flow.pdf(&model.store, &scratch.prefix, t.s, &mut scratch.flow);
        for c in 0..3 {
            let logp = (pdf[c] * crate::param::RAW_S_VOLUME).max(1e-300).ln().max(crate::flow::LOGPDF_CLAMP);
            total -= t.beta[c] * logp;
        }
        n += 1;
    }
    if n == 0 { 0.0 } else { total / n as f64 }
}

/// Held-out tuples drawn from a seed stream disjoint from every buffer epoch.
pub fn heldout_tuples(asset: &Asset, config: &TrainConfig) -> Vec<PathSample> {
    (0..config.heldout_size)
        .map(|i| {
            let mut rng = stream(config.seed ^ 0x9e3779b97f4a7c15, u64::MAX, i as u64);
            generate_tuple(asset, config, &mut rng)
        })
        .collect()
}

/// Full bake: fill/consume/step until `config.steps`, recording curves and
/// held-out NLL per buffer refresh.
pub fn bake(asset: &Asset, config: &TrainConfig) -> Result<(TransportModel, TrainingCurves), TrainError> {
    let mut model = TransportModel::new(
        config.flow_spec(),
        config.albedo_spec(),
        asset.aabb.half_extents,
        config.separate_direct,
    );
    let mut rng = stream(config.seed, 0xba4e, 0);
    model.init(&mut rng);
    let mut adam = AdamState::new(model.store.len(), config.lr);
    let mut buffer = SampleBuffer::new(config.buffer_capacity);
    let mut grads = Vec::new();
    let mut scratch = ModelScratch::default();
    let mut curves = TrainingCurves::default();
    let heldout = heldout_tuples(asset, config);
    if heldout.iter().all(|t| !t.valid) {
        return Err(TrainError::NeverHits(asset.name.clone()));
    }
    let mut window_acc = LossStats::default();
    let mut window_n = 0usize;
    let mut nonfinite_run = 0usize;
    let mut last_refresh = 0u64;
    curves.heldout.push((0, heldout_nll(&model, &heldout, &mut scratch)));
    for step in 1..=config.steps {
        let progress = step as f64 / config.steps as f64;
        if config.lr_decay_floor < 1.0 && progress > 0.5 {
            let t = (progress - 0.5) * 2.0;
            adam.lr = config.lr * (1.0 - (1.0 - config.lr_decay_floor) * t);
        }
        let batch = buffer.next_batch(asset, config);
        let stats = loss_step(batch, &mut model, &mut adam, &mut grads, &mut scratch);
        if buffer.refreshes != last_refresh {
            last_refresh = buffer.refreshes;
            curves.heldout.push((last_refresh, heldout_nll(&model, &heldout, &mut scratch)));
        }
        match stats {
            Some(s) if s.nll.is_finite() && s.albedo_loss.is_finite() => {
                nonfinite_run = 0;
                window_acc.nll += s.nll;
                window_acc.albedo_loss += s.albedo_loss;
                window_acc.valid += s.valid;
                window_acc.invalid += s.invalid;
                window_n += 1;
            }
            _ => {
                nonfinite_run += 1;
                curves.skipped_steps += 1;
                if nonfinite_run >= 100 {
                    return Err(TrainError::NonFiniteLoss(nonfinite_run));
                }
            }
        }
        if step % config.log_every == 0 && window_n > 0 {
            let inv = 1.0 / window_n as f64;
            let total = (window_acc.valid + window_acc.invalid).max(1);
            curves.rows.push((
                step,
                window_acc.nll * inv,
                window_acc.albedo_loss * inv,
                window_acc.invalid as f64 / total as f64,
            ));
            window_acc = LossStats::default();
            window_n = 0;
        }
    }
    curves.heldout.push((last_refresh + 1, heldout_nll(&model, &heldout, &mut scratch)));
    Ok((model, curves))
}


#[cfg(test)]
mod mixture_tests {
    use super::*;
    use crate::math::Rgb;
    use crate::model::{ModelScratch, TransportModel};
    use crate::nn::AdamState;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ContinuousCDF, Normal};

    const MU1: [f64; 4] = [0.3, 0.4, 0.6, 0.5];
    const MU2: [f64; 4] = [0.7, 0.6, 0.35, 0.55];
    const SIG1: f64 = 0.12;
    const SIG2: f64 = 0.10;

    fn sample_mixture(rng: &mut ChaCha8Rng) -> SParam {
        loop {
            let (mu, sig) = if rng.gen::<f64>() < 0.5 { (MU1, SIG1) } else { (MU2, SIG2) };
            let mut s = [0.0; 4];
            let mut ok = true;
            for d in 0..4 {
                s[d] = mu[d] + sig * crate::nn::normal_sample(rng);
                if !(0.0..=1.0).contains(&s[d]) {
                    ok = false;
                    break;
                }
            }
            if ok {
                return SParam(s);
            }
        }
    }

    /// Exact mass of one component inside an axis-aligned 4D bin, before
    /// truncation renormalization.
    fn component_bin_mass(mu: &[f64; 4], sig: f64, lo: &[f64; 4], hi: &[f64; 4]) -> f64 {
        let mut m = 1.0;
        for d in 0..4 {
            let n = Normal::new(mu[d], sig).unwrap();
            m *= n.cdf(hi[d]) - n.cdf(lo[d]);
        }
        m
    }

    /// Weighted-NLL training on a known 4D mixture drives the binned KL
    /// below 0.05 nats within 20k steps at desk-scale sizes.
    #[test]
    fn flow_learns_truncated_gaussian_mixture() {
        let config = TrainConfig {
            k_knots: 16,
            cond_hidden: 32,
            cond_layers: 2,
            albedo_hidden: 8,
            albedo_layers: 1,
            x_bands: 1,
            d_bands: 1,
            lr: 1e-3,
            ..Default::default()
        };
        let mut model = TransportModel::new(
            config.flow_spec(),
            config.albedo_spec(),
            Vec3::new(1.0, 1.0, 1.0),
            false,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        model.init(&mut rng);
        let mut adam = AdamState::new(model.store.len(), config.lr);
        let mut grads = Vec::new();
        let mut scratch = ModelScratch::default();
        let x_o = Vec3::new(0.2, -0.4, 0.89).normalized();
        let w_o = Vec3::new(0.5, 0.5, 0.7).normalized();
        let batch_size = 64;
        for _ in 0..20_000 {
            let batch: Vec<PathSample> = (0..batch_size)
                .map(|_| PathSample {
                    x_o,
                    w_o,
                    s: sample_mixture(&mut rng),
                    beta: Rgb::WHITE,
                    bounce_count: 2,
                    valid: true,
                })
                .collect();
            loss_step(&batch, &mut model, &mut adam, &mut grads, &mut scratch);
        }

        // Binned KL(flow-sample histogram || true mixture bin masses).
        let nb = 8usize;
        let n_bins = nb.pow(4);
        let mut truth = vec![0.0f64; n_bins];
        let lo_hi = |i: usize| (i as f64 / nb as f64, (i + 1) as f64 / nb as f64);
        for i0 in 0..nb {
            for i1 in 0..nb {
                for i2 in 0..nb {
                    for i3 in 0..nb {
                        let (l0, h0) = lo_hi(i0);
                        let (l1, h1) = lo_hi(i1);
                        let (l2, h2) = lo_hi(i2);
                        let (l3, h3) = lo_hi(i3);
                        let lo = [l0, l1, l2, l3];
                        let hi = [h0, h1, h2, h3];
                        let m = 0.5 * component_bin_mass(&MU1, SIG1, &lo, &hi)
                            + 0.5 * component_bin_mass(&MU2, SIG2, &lo, &hi);
                        truth[((i0 * nb + i1) * nb + i2) * nb + i3] = m;
                    }
                }
            }
        }
        let total: f64 = truth.iter().sum();
        for t in truth.iter_mut() {
            *t /= total;
        }
        let n_draw = 200_000usize;
        let mut counts = vec![0u32; n_bins];
        model.encode_prefix(x_o, w_o, &mut scratch.prefix);
        for i in 0..n_draw {
            let (s, _) =
                model.flow.sample(&model.store, &scratch.prefix, i % 3, &mut rng, &mut scratch.flow);
            let mut idx = 0;
            for d in 0..4 {
                idx = idx * nb + ((s.0[d] * nb as f64) as usize).min(nb - 1);
            }
            counts[idx] += 1;
        }
        let mut kl = 0.0;
        for b in 0..n_bins {
            let p = counts[b] as f64 / n_draw as f64;
            if p > 0.0 {
                kl += p * (p / truth[b].max(1e-12)).ln();
            }
        }
        assert!(kl < 0.05, "binned KL {kl} nats");
    }
}
