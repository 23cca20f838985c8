//! Vector-valued autoregressive normalizing flow over the 4D incident
//! parameter: four conditioner networks, each predicting per-RGB-channel
//! spline knots for one dimension given the outgoing configuration and all
//! previous dimensions.
//!
//! Densities are reported with respect to the raw cylindrical measure
//! (the [0,1]^4 density divided by [`RAW_S_VOLUME`]); the (s3, s4) factor is
//! then directly a solid-angle density, which the integrator exploits.
//! The marginal over (s1, s2) and the conditional over (s3, s4) fall out of
//! the autoregressive structure and multiply exactly to the full density.

pub mod rqs;

use rand::Rng;

use crate::math::{Rgb, Vec3};
use crate::nn::{freq_encode, freq_encode_len, Mlp, MlpScratch, MlpSpec, ParamStore};
use crate::param::{SParam, RAW_S_VOLUME};
use rqs::{
    accumulate_raw_grad, build_knots, identity_derivative_raw, raw_len, rqs_forward, rqs_inverse,
    rqs_inverse_logpdf_grad, LogPdfGrad, RqsKnots,
};

/// Half of the raw-measure volume factor: each of (s1,s2) and (s3,s4) pairs
/// spans [-1,1] x [-pi,pi] of raw volume 4 pi.
pub const RAW_PAIR_VOLUME: f64 = RAW_S_VOLUME / 4.0 / std::f64::consts::PI / 1.0;

/// Per-channel log-density clamp inside the training loss.
pub const LOGPDF_CLAMP: f64 = -30.0;

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct FlowSpec {
    /// Spline knots (bins) per RGB channel.
    pub k: usize,
    pub hidden_dim: usize,
    pub hidden_layers: usize,
    /// Frequency bands for the outgoing position.
    pub x_bands: usize,
    /// Frequency bands for directions and previous s-components.
    pub d_bands: usize,
}

impl Default for FlowSpec {
    fn default() -> Self {
        FlowSpec { k: 16, hidden_dim: 64, hidden_layers: 3, x_bands: 6, d_bands: 4 }
    }
}

impl FlowSpec {
    pub fn prefix_len(&self) -> usize {
        freq_encode_len(3, self.x_bands) + freq_encode_len(3, self.d_bands)
    }

    fn cond_input_dim(&self, j: usize) -> usize {
        self.prefix_len() + j * freq_encode_len(1, self.d_bands)
    }

    fn cond_spec(&self, j: usize) -> MlpSpec {
        MlpSpec {
            input_dim: self.cond_input_dim(j),
            hidden_dim: self.hidden_dim,
            hidden_layers: self.hidden_layers,
            output_dim: raw_len(self.k),
        }
    }
}

pub struct FlowModel {
    pub spec: FlowSpec,
    pub conds: [Mlp; 4],
}

/// Reusable buffers for flow evaluation and training.
#[derive(Default)]
pub struct FlowScratch {
    tapes: [MlpScratch; 4],
    raw_out: [Vec<f64>; 4],
    knots: [RqsKnots; 4],
    input: Vec<f64>,
    cotangent: Vec<f64>,
    grads: [[Option<LogPdfGrad>; 3]; 4],
}

impl FlowModel {
    pub fn new(store: &mut ParamStore, spec: FlowSpec) -> Self {
        let conds = [
            Mlp::new(store, "cond0", spec.cond_spec(0)),
            Mlp::new(store, "cond1", spec.cond_spec(1)),
            Mlp::new(store, "cond2", spec.cond_spec(2)),
            Mlp::new(store, "cond3", spec.cond_spec(3)),
        ];
        FlowModel { spec, conds }
    }

    /// Rebind to slices of a loaded store (offsets looked up by name).
    pub fn from_store(spec: FlowSpec, store: &ParamStore) -> Option<Self> {
        let mut conds = Vec::new();
        for j in 0..4 {
            let name = format!("cond{j}");
            let (offset, len) = store
                .slices()
                .find(|(n, _, _)| *n == name)
                .map(|(_, o, l)| (o, l))?;
            let mlp_spec = spec.cond_spec(j);
            if len != mlp_spec.param_count() {
                return None;
            }
            conds.push(Mlp { spec: mlp_spec, offset });
        }
        Some(FlowModel { spec, conds: [conds[0], conds[1], conds[2], conds[3]] })
    }

    /// He init for hidden layers; the final layer of each conditioner starts
    /// at zero weights with derivative biases chosen so every spline is the
    /// identity, making the initial flow exactly uniform.
    pub fn init_identity(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        let k = self.spec.k;
        let d_bias = identity_derivative_raw();
        for mlp in &self.conds {
            mlp.init_he(store, rng);
            let (off, in_dim, out_dim) = mlp.final_layer_offset();
            let values = store.values_mut();
            for w in &mut values[off..off + in_dim * out_dim] {
                *w = 0.0;
            }
            let bias = &mut values[off + in_dim * out_dim..off + in_dim * out_dim + out_dim];
            for c in 0..3 {
                for i in 0..k {
                    bias[c * 3 * k + i] = 0.0;
                    bias[c * 3 * k + k + i] = 0.0;
                    bias[c * 3 * k + 2 * k + i] = d_bias;
                }
            }
        }
    }

    /// Encoded (x_o, w_o) conditioning shared by every conditioner and by the
    /// albedo head. `x_unit` is the outgoing position pre-normalized to
    /// [-1,1]^3 (asset-local position over the box half extents).
    pub fn encode_prefix(&self, x_unit: Vec3, w_o: Vec3, out: &mut Vec<f64>) {
        out.clear();
        freq_encode(&[x_unit.x, x_unit.y, x_unit.z], self.spec.x_bands, out);
        freq_encode(&[w_o.x, w_o.y, w_o.z], self.spec.d_bands, out);
    }

    fn build_input(&self, j: usize, prefix: &[f64], s_prev: &[f64; 4], input: &mut Vec<f64>) {
        input.clear();
        input.extend_from_slice(prefix);
        for &s in s_prev.iter().take(j) {
            freq_encode(&[2.0 * s - 1.0], self.spec.d_bands, input);
        }
    }

    /// Evaluate conditioner `j` (given the first `j` components of `s`) and
    /// build its per-channel knots into `out`.
    pub fn eval_knots(
        &self,
        store: &ParamStore,
        prefix: &[f64],
        j: usize,
        s_prev: &[f64; 4],
        tape: &mut MlpScratch,
        input: &mut Vec<f64>,
        out: &mut RqsKnots,
    ) {
        self.build_input(j, prefix, s_prev, input);
        let raw = self.conds[j].forward(store, input, tape);
        build_knots(raw, self.spec.k, out);
    }

    fn eval_dim(&self, store: &ParamStore, prefix: &[f64], j: usize, s: &[f64; 4], scratch: &mut FlowScratch) {
        let (tapes, knots, input) = (&mut scratch.tapes, &mut scratch.knots, &mut scratch.input);
        self.build_input(j, prefix, s, input);
        let raw = self.conds[j].forward(store, input, &mut tapes[j]);
        build_knots(raw, self.spec.k, &mut knots[j]);
    }

    /// Density of the (s1, s2) marginal in its raw measure (volume 4 pi).
    pub fn pdf_u(&self, store: &ParamStore, prefix: &[f64], s12: [f64; 2], scratch: &mut FlowScratch) -> Rgb {
        let s = [s12[0], s12[1], 0.0, 0.0];
        let mut pdf = Rgb::WHITE;
        for j in 0..2 {
            self.eval_dim(store, prefix, j, &s, scratch);
            for c in 0..3 {
                pdf[c] *= rqs_inverse(s[j], &scratch.knots[j].channels[c]).1;
            }
        }
        pdf / RAW_PAIR_VOLUME
    }

    /// Ancestral sampling of (s1, s2) using `channel`'s splines; returns the
    /// sampled pair and its raw-measure density for all channels.
    pub fn sample_u(
        &self,
        store: &ParamStore,
        prefix: &[f64],
        channel: usize,
        rng: &mut impl Rng,
        scratch: &mut FlowScratch,
    ) -> ([f64; 2], Rgb) {
        let mut s = [0.0; 4];
        let mut pdf = Rgb::WHITE;
        for j in 0..2 {
            self.eval_dim(store, prefix, j, &s, scratch);
            let u: f64 = rng.gen();
            let (sj, _) = rqs_forward(u, &scratch.knots[j].channels[channel]);
            s[j] = sj;
            for c in 0..3 {
                pdf[c] *= rqs_inverse(sj, &scratch.knots[j].channels[c]).1;
            }
        }
        ([s[0], s[1]], pdf / RAW_PAIR_VOLUME)
    }

    /// Density of the (s3, s4) conditional given (s1, s2), in its raw measure
    /// (volume 4 pi) -- which is directly a solid-angle density.
    pub fn pdf_omega(
        &self,
        store: &ParamStore,
        prefix: &[f64],
        s12: [f64; 2],
        s34: [f64; 2],
        scratch: &mut FlowScratch,
    ) -> Rgb {
        let s = [s12[0], s12[1], s34[0], s34[1]];
        let mut pdf = Rgb::WHITE;
        for j in 2..4 {
            self.eval_dim(store, prefix, j, &s, scratch);
            for c in 0..3 {
                pdf[c] *= rqs_inverse(s[j], &scratch.knots[j].channels[c]).1;
            }
        }
        pdf / RAW_PAIR_VOLUME
    }

    /// Ancestral sampling of (s3, s4) given (s1, s2).
    pub fn sample_omega(
        &self,
        store: &ParamStore,
        prefix: &[f64],
        s12: [f64; 2],
        channel: usize,
        rng: &mut impl Rng,
        scratch: &mut FlowScratch,
    ) -> ([f64; 2], Rgb) {
        let mut s = [s12[0], s12[1], 0.0, 0.0];
        let mut pdf = Rgb::WHITE;
        for j in 2..4 {
            self.eval_dim(store, prefix, j, &s, scratch);
            let u: f64 = rng.gen();
            let (sj, _) = rqs_forward(u, &scratch.knots[j].channels[channel]);
            s[j] = sj;
            for c in 0..3 {
                pdf[c] *= rqs_inverse(sj, &scratch.knots[j].channels[c]).1;
            }
        }
        ([s[2], s[3]], pdf / RAW_PAIR_VOLUME)
    }

    /// Evaluate conditioner 3 once for a fixed (s1, s2); the `..._given`
    /// variants below reuse it, saving a forward pass when the conditional
    /// is needed for several directions at one proxy point.
    pub fn condition_omega(&self, store: &ParamStore, prefix: &[f64], s12: [f64; 2], scratch: &mut FlowScratch) {
        let s = [s12[0], s12[1], 0.0, 0.0];
        self.eval_dim(store, prefix, 2, &s, scratch);
    }

    /// Conditional density using the knots prepared by [`condition_omega`].
    pub fn pdf_omega_given(
        &self,
        store: &ParamStore,
        prefix: &[f64],
        s12: [f64; 2],
        s34: [f64; 2],
        scratch: &mut FlowScratch,
    ) -> Rgb {
        let mut pdf = Rgb::WHITE;
        for c in 0..3 {
            pdf[c] *= rqs_inverse(s34[0], &scratch.knots[2].channels[c]).1;
        }
        let s = [s12[0], s12[1], s34[0], s34[1]];
        self.eval_dim(store, prefix, 3, &s, scratch);
        for c in 0..3 {
            pdf[c] *= rqs_inverse(s34[1], &scratch.knots[3].channels[c]).1;
        }
        pdf / RAW_PAIR_VOLUME
    }

    /// Conditional sampling using the knots prepared by [`condition_omega`].
    pub fn sample_omega_given(
        &self,
        store: &ParamStore,
        prefix: &[f64],
        s12: [f64; 2],
        channel: usize,
        rng: &mut impl Rng,
        scratch: &mut FlowScratch,
    ) -> ([f64; 2], Rgb) {
        let u: f64 = rng.gen();
        let (s3, _) = rqs_forward(u, &scratch.knots[2].channels[channel]);
        let mut pdf = Rgb::WHITE;
        for c in 0..3 {
            pdf[c] *= rqs_inverse(s3, &scratch.knots[2].channels[c]).1;
        }
        let s = [s12[0], s12[1], s3, 0.0];
        self.eval_dim(store, prefix, 3, &s, scratch);
        let u: f64 = rng.gen();
        let (s4, _) = rqs_forward(u, &scratch.knots[3].channels[channel]);
        for c in 0..3 {
            pdf[c] *= rqs_inverse(s4, &scratch.knots[3].channels[c]).1;
        }
        ([s3, s4], pdf / RAW_PAIR_VOLUME)
    }

    /// Full density in the raw cylindrical measure: exactly the product of
    /// the marginal and conditional factors.
    pub fn pdf(&self, store: &ParamStore, prefix: &[f64], s: SParam, scratch: &mut FlowScratch) -> Rgb {
        let pu = self.pdf_u(store, prefix, [s.0[0], s.0[1]], scratch);
        let pw = self.pdf_omega(store, prefix, [s.0[0], s.0[1]], [s.0[2], s.0[3]], scratch);
        pu * pw
    }

    /// Ancestral sampling of the full parameter; returns the raw-measure
    /// density of the sample for all channels.
    pub fn sample(
        &self,
        store: &ParamStore,
        prefix: &[f64],
        channel: usize,
        rng: &mut impl Rng,
        scratch: &mut FlowScratch,
    ) -> (SParam, Rgb) {
        let (s12, pu) = self.sample_u(store, prefix, channel, rng, scratch);
        let (s34, pw) = self.sample_omega(store, prefix, s12, channel, rng, scratch);
        (SParam([s12[0], s12[1], s34[0], s34[1]]), pu * pw)
    }

    /// Accumulate the gradient of `sum_c weight_c * (-log p_c(s))` into
    /// `grads`, with each channel's unit-cube log-density clamped at
    /// [`LOGPDF_CLAMP`] (clamped channels contribute zero gradient). Returns
    /// the clamped per-channel log-density.
    pub fn nll_backward(
        &self,
        store: &ParamStore,
        prefix: &[f64],
        s: SParam,
        weight: Rgb,
        grads: &mut [f64],
        scratch: &mut FlowScratch,
    ) -> Rgb {
        let k = self.spec.k;
        let mut logp = Rgb::BLACK;
        for j in 0..4 {
            self.build_input(j, prefix, &s.0, &mut scratch.input);
            let raw = self.conds[j].forward(store, &scratch.input, &mut scratch.tapes[j]);
            scratch.raw_out[j].clear();
            scratch.raw_out[j].extend_from_slice(raw);
            build_knots(&scratch.raw_out[j], k, &mut scratch.knots[j]);
            for c in 0..3 {
                let g = rqs_inverse_logpdf_grad(s.0[j], &scratch.knots[j].channels[c]);
                logp[c] += g.du_ds.max(1e-300).ln();
                scratch.grads[j][c] = Some(g);
            }
        }
        let mut active = [false; 3];
        for c in 0..3 {
            if logp[c] < LOGPDF_CLAMP {
                logp[c] = LOGPDF_CLAMP;
            } else if weight[c] != 0.0 {
                active[c] = true;
            }
        }
        for j in 0..4 {
            scratch.cotangent.clear();
            scratch.cotangent.resize(raw_len(k), 0.0);
            let mut any = false;
            for c in 0..3 {
                if !active[c] {
                    continue;
                }
                any = true;
                let g = scratch.grads[j][c].as_ref().unwrap();
                accumulate_raw_grad(
                    &scratch.knots[j].channels[c],
                    k,
                    g,
                    -weight[c],
                    &scratch.raw_out[j][c * 3 * k..(c + 1) * 3 * k],
                    &mut scratch.cotangent[c * 3 * k..(c + 1) * 3 * k],
                );
            }
            if any {
                self.conds[j].backward(store, &mut scratch.tapes[j], &scratch.cotangent, grads);
            }
        }
        logp
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::AdamState;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_spec() -> FlowSpec {
        FlowSpec { k: 6, hidden_dim: 12, hidden_layers: 1, x_bands: 1, d_bands: 1 }
    }

    fn make_model(spec: FlowSpec, seed: u64, identity: bool) -> (ParamStore, FlowModel) {
        let mut store = ParamStore::new();
        let model = FlowModel::new(&mut store, spec);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        model.init_identity(&mut store, &mut rng);
        if !identity {
            // perturb the parameters so the flow is a random smooth density
            let values = store.values_mut();
            for v in values.iter_mut() {
                *v += 0.1 * crate::nn::normal_sample(&mut rng);
            }
        }
        (store, model)
    }

    fn test_prefix(model: &FlowModel) -> Vec<f64> {
        let mut prefix = Vec::new();
        model.encode_prefix(
            Vec3::new(0.3, -0.2, 0.8),
            Vec3::new(0.0, 0.6, 0.8),
            &mut prefix,
        );
        prefix
    }

    #[test]
    fn identity_flow_density_is_inverse_raw_volume() {
        let (store, model) = make_model(tiny_spec(), 1, true);
        let prefix = test_prefix(&model);
        let mut scratch = FlowScratch::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let s = SParam([rng.gen(), rng.gen(), rng.gen(), rng.gen()]);
            let pdf = model.pdf(&store, &prefix, s, &mut scratch);
            for c in 0..3 {
                assert!(
                    (pdf[c] - 1.0 / RAW_S_VOLUME).abs() < 1e-12,
                    "density {} vs {}",
                    pdf[c],
                    1.0 / RAW_S_VOLUME
                );
            }
        }
    }

    #[test]
    fn marginal_times_conditional_equals_joint() {
        let (store, model) = make_model(tiny_spec(), 3, false);
        let prefix = test_prefix(&model);
        let mut scratch = FlowScratch::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let s = SParam([rng.gen(), rng.gen(), rng.gen(), rng.gen()]);
            let pu = model.pdf_u(&store, &prefix, [s.0[0], s.0[1]], &mut scratch);
            let pw = model.pdf_omega(&store, &prefix, [s.0[0], s.0[1]], [s.0[2], s.0[3]], &mut scratch);
            let joint = model.pdf(&store, &prefix, s, &mut scratch);
            for c in 0..3 {
                assert!((pu[c] * pw[c] - joint[c]).abs() <= 1e-12 * joint[c].max(1e-12));
            }
        }
    }

    #[test]
    fn sample_pdf_matches_pdf_evaluation() {
        let (store, model) = make_model(tiny_spec(), 5, false);
        let prefix = test_prefix(&model);
        let mut scratch = FlowScratch::default();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for i in 0..300 {
            let (s, pdf_sampled) = model.sample(&store, &prefix, i % 3, &mut rng, &mut scratch);
            let pdf_eval = model.pdf(&store, &prefix, s, &mut scratch);
            for c in 0..3 {
                let denom = pdf_eval[c].abs().max(1e-12);
                assert!(
                    ((pdf_sampled[c] - pdf_eval[c]) / denom).abs() < 1e-9,
                    "sampled {} vs eval {}",
                    pdf_sampled[c],
                    pdf_eval[c]
                );
            }
        }
    }

    #[test]
    fn identical_rng_states_give_identical_samples() {
        let (store, model) = make_model(tiny_spec(), 7, false);
        let prefix = test_prefix(&model);
        let mut scratch = FlowScratch::default();
        let mut rng1 = ChaCha8Rng::seed_from_u64(8);
        let mut rng2 = ChaCha8Rng::seed_from_u64(8);
        let (s1, p1) = model.sample(&store, &prefix, 1, &mut rng1, &mut scratch);
        let (s2, p2) = model.sample(&store, &prefix, 1, &mut rng2, &mut scratch);
        assert_eq!(s1, s2);
        assert_eq!(p1, p2);
    }

    #[test]
    fn identity_flow_samples_uniformly() {
        let (store, model) = make_model(tiny_spec(), 9, true);
        let prefix = test_prefix(&model);
        let mut scratch = FlowScratch::default();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let n = 100_000usize;
        let bins = 4usize; // 4^4 = 256 equal-mass bins
        let mut counts = vec![0u64; bins.pow(4)];
        for _ in 0..n {
            let (s, _) = model.sample(&store, &prefix, 0, &mut rng, &mut scratch);
            let mut idx = 0;
            for d in 0..4 {
                idx = idx * bins + ((s.0[d] * bins as f64) as usize).min(bins - 1);
            }
            counts[idx] += 1;
        }
        let expected = n as f64 / counts.len() as f64;
        let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        let dof = (counts.len() - 1) as f64;
        let dist = statrs::distribution::ChiSquared::new(dof).unwrap();
        let p = 1.0 - statrs::distribution::ContinuousCDF::cdf(&dist, stat);
        assert!(p > 0.001, "chi-squared {stat}, p {p}");
    }

    #[test]
    fn conditional_normalization_quadrature() {
        // every 1D conditional integrates to 1 (trapezoid, random models)
        let (store, model) = make_model(tiny_spec(), 11, false);
        let prefix = test_prefix(&model);
        let mut tape = MlpScratch::default();
        let mut input = Vec::new();
        let mut knots = RqsKnots::default();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for j in 0..4 {
            for _ in 0..5 {
                let s_prev = [rng.gen(), rng.gen(), rng.gen(), rng.gen()];
                model.eval_knots(&store, &prefix, j, &s_prev, &mut tape, &mut input, &mut knots);
                for c in 0..3 {
                    let n = 4096;
                    let mut total = 0.0;
                    for i in 0..=n {
                        let s = i as f64 / n as f64;
                        let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                        total += w * rqs_inverse(s, &knots.channels[c]).1;
                    }
                    total /= n as f64;
                    assert!((total - 1.0).abs() < 1e-4, "j {j} c {c}: {total}");
                }
            }
        }
    }

    #[test]
    fn full_pdf_normalizes_over_unit_cube() {
        // nested midpoint quadrature sharing conditioner evaluations
        let (store, model) = make_model(tiny_spec(), 13, false);
        let prefix = test_prefix(&model);
        let mut tape = MlpScratch::default();
        let mut input = Vec::new();
        let n = 40usize;
        let mut knots = vec![RqsKnots::default(); 4];
        let mut total = Rgb::BLACK;
        let mut s = [0.0; 4];
        model.eval_knots(&store, &prefix, 0, &s, &mut tape, &mut input, &mut knots[0]);
        for i0 in 0..n {
            s[0] = (i0 as f64 + 0.5) / n as f64;
            let p0 = Rgb::new(
                rqs_inverse(s[0], &knots[0].channels[0]).1,
                rqs_inverse(s[0], &knots[0].channels[1]).1,
                rqs_inverse(s[0], &knots[0].channels[2]).1,
            );
            let mut k1 = RqsKnots::default();
            model.eval_knots(&store, &prefix, 1, &s, &mut tape, &mut input, &mut k1);
            for i1 in 0..n {
                s[1] = (i1 as f64 + 0.5) / n as f64;
                let p1 = Rgb::new(
                    rqs_inverse(s[1], &k1.channels[0]).1,
                    rqs_inverse(s[1], &k1.channels[1]).1,
                    rqs_inverse(s[1], &k1.channels[2]).1,
                );
                let mut k2 = RqsKnots::default();
                model.eval_knots(&store, &prefix, 2, &s, &mut tape, &mut input, &mut k2);
                for i2 in 0..n {
                    s[2] = (i2 as f64 + 0.5) / n as f64;
                    let p2 = Rgb::new(
                        rqs_inverse(s[2], &k2.channels[0]).1,
                        rqs_inverse(s[2], &k2.channels[1]).1,
                        rqs_inverse(s[2], &k2.channels[2]).1,
                    );
                    let mut k3 = RqsKnots::default();
                    model.eval_knots(&store, &prefix, 3, &s, &mut tape, &mut input, &mut k3);
                    let mut inner = Rgb::BLACK;
                    for i3 in 0..n {
                        s[3] = (i3 as f64 + 0.5) / n as f64;
                        for c in 0..3 {
                            inner[c] += rqs_inverse(s[3], &k3.channels[c]).1;
                        }
                    }
                    total += p0 * p1 * p2 * inner;
                }
            }
        }
        let cell = 1.0 / (n as f64).powi(4);
        for c in 0..3 {
            let integral = total[c] * cell;
            assert!((integral - 1.0).abs() < 1e-2, "channel {c}: {integral}");
        }
    }

    #[test]
    fn nll_backward_zero_weight_gives_zero_gradient() {
        let (store, model) = make_model(tiny_spec(), 15, false);
        let prefix = test_prefix(&model);
        let mut scratch = FlowScratch::default();
        let mut grads = vec![0.0; store.len()];
        model.nll_backward(&store, &prefix, SParam([0.3, 0.5, 0.2, 0.8]), Rgb::BLACK, &mut grads, &mut scratch);
        assert!(grads.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn nll_backward_is_linear_in_weight() {
        let (store, model) = make_model(tiny_spec(), 17, false);
        let prefix = test_prefix(&model);
        let mut scratch = FlowScratch::default();
        let s = SParam([0.3, 0.5, 0.2, 0.8]);
        let w = Rgb::new(0.7, 0.2, 1.3);
        let mut g1 = vec![0.0; store.len()];
        model.nll_backward(&store, &prefix, s, w, &mut g1, &mut scratch);
        let mut g2 = vec![0.0; store.len()];
        model.nll_backward(&store, &prefix, s, w * 2.0, &mut g2, &mut scratch);
        for (a, b) in g1.iter().zip(&g2) {
            assert!((2.0 * a - b).abs() < 1e-12 * b.abs().max(1e-9));
        }
    }

    #[test]
    fn nll_backward_matches_finite_differences() {
        let (mut store, model) = make_model(tiny_spec(), 19, false);
        let prefix = test_prefix(&model);
        let mut scratch = FlowScratch::default();
        let s = SParam([0.31, 0.52, 0.23, 0.84]);
        let w = Rgb::new(0.9, 0.4, 1.1);
        let mut grads = vec![0.0; store.len()];
        model.nll_backward(&store, &prefix, s, w, &mut grads, &mut scratch);
        let loss = |store: &ParamStore, scratch: &mut FlowScratch| -> f64 {
            let pdf = model.pdf(store, &prefix, s, scratch);
            // unit-cube log densities
            let mut l = 0.0;
            for c in 0..3 {
                l -= w[c] * (pdf[c] * RAW_S_VOLUME).ln().max(LOGPDF_CLAMP);
            }
            l
        };
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let h = 1e-5;
        let mut checked = 0;
        while checked < 250 {
            let p = (rng.gen::<u64>() as usize) % store.len();
            let orig = store.values()[p];
            store.values_mut()[p] = orig + h;
            let lp = loss(&store, &mut scratch);
            store.values_mut()[p] = orig - h;
            let lm = loss(&store, &mut scratch);
            store.values_mut()[p] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let g = grads[p];
            if fd.abs() < 1e-7 && g.abs() < 1e-7 {
                checked += 1;
                continue;
            }
            let denom = fd.abs().max(g.abs());
            assert!(((fd - g) / denom).abs() < 1e-3, "param {p}: fd {fd} vs grad {g}");
            checked += 1;
        }
    }

    #[test]
    fn sample_histogram_matches_pdf() {
        // 10^6 samples against sub-quadrature bin masses over a 16^4 binning;
        // nearly all bins must sit within 3-sigma Poisson bounds.
        let spec = FlowSpec { k: 8, hidden_dim: 16, hidden_layers: 1, x_bands: 1, d_bands: 1 };
        let (store, model) = make_model(spec, 21, false);
        let prefix = test_prefix(&model);
        let mut scratch = FlowScratch::default();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let nb = 16usize;
        let n = 1_000_000usize;
        let mut counts = vec![0u32; nb.pow(4)];
        for _ in 0..n {
            let (s, _) = model.sample(&store, &prefix, 0, &mut rng, &mut scratch);
            let mut idx = 0;
            for d in 0..4 {
                idx = idx * nb + ((s.0[d] * nb as f64) as usize).min(nb - 1);
            }
            counts[idx] += 1;
        }
        // channel-0 bin masses via nested sub-quadrature (2 points per dim)
        let sub = 2usize;
        let nq = nb * sub;
        let mut tape = MlpScratch::default();
        let mut input = Vec::new();
        let mut mass = vec![0.0f64; counts.len()];
        let mut s = [0.0; 4];
        let mut k0 = RqsKnots::default();
        model.eval_knots(&store, &prefix, 0, &s, &mut tape, &mut input, &mut k0);
        for i0 in 0..nq {
            s[0] = (i0 as f64 + 0.5) / nq as f64;
            let p0 = rqs_inverse(s[0], &k0.channels[0]).1;
            let mut k1 = RqsKnots::default();
            model.eval_knots(&store, &prefix, 1, &s, &mut tape, &mut input, &mut k1);
            for i1 in 0..nq {
                s[1] = (i1 as f64 + 0.5) / nq as f64;
                let p1 = rqs_inverse(s[1], &k1.channels[0]).1;
                let mut k2 = RqsKnots::default();
                model.eval_knots(&store, &prefix, 2, &s, &mut tape, &mut input, &mut k2);
                for i2 in 0..nq {
                    s[2] = (i2 as f64 + 0.5) / nq as f64;
                    let p2 = rqs_inverse(s[2], &k2.channels[0]).1;
                    let mut k3 = RqsKnots::default();
                    model.eval_knots(&store, &prefix, 3, &s, &mut tape, &mut input, &mut k3);
                    for i3 in 0..nq {
                        s[3] = (i3 as f64 + 0.5) / nq as f64;
                        let p3 = rqs_inverse(s[3], &k3.channels[0]).1;
                        let mut idx = 0;
                        for d in 0..4 {
                            idx = idx * nb + ((s[d] * nb as f64) as usize).min(nb - 1);
                        }
                        mass[idx] += p0 * p1 * p2 * p3;
                    }
                }
            }
        }
        let cell = 1.0 / (nq as f64).powi(4);
        let mut outside = 0usize;
        for (i, m) in mass.iter().enumerate() {
            let expected = m * cell * n as f64;
            let sigma = expected.sqrt().max(1.0);
            if (counts[i] as f64 - expected).abs() > 3.0 * sigma + 1.0 {
                outside += 1;
            }
        }
        let frac = outside as f64 / counts.len() as f64;
        assert!(frac < 0.015, "{outside} of {} bins outside 3 sigma", counts.len());
    }
}
