//! Minimal reverse-mode numerics: a flat parameter store with named slices,
//! fully connected ReLU networks with taped forward passes, frequency input
//! encoding, and Adam.
//!
//! Gradients flow only into parameters (network inputs are data everywhere in
//! this project), which keeps the backward passes simple hand-written loops.

pub mod checkpoint;

use rand::Rng;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Flat parameter vector with named, disjoint slices.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    values: Vec<f64>,
    slices: Vec<(String, usize, usize)>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Reserve `len` parameters under `name`; returns the slice offset.
    pub fn alloc(&mut self, name: &str, len: usize) -> usize {
        assert!(
            self.slices.iter().all(|(n, _, _)| n != name),
            "duplicate parameter slice '{name}'"
        );
        let offset = self.values.len();
        self.values.resize(offset + len, 0.0);
        self.slices.push((name.to_string(), offset, len));
        offset
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn slices(&self) -> impl Iterator<Item = (&str, usize, usize)> {
        self.slices.iter().map(|(n, o, l)| (n.as_str(), *o, *l))
    }

    pub fn slice(&self, name: &str) -> Option<&[f64]> {
        self.slices
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|&(_, o, l)| &self.values[o..o + l])
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Architecture of one fully connected network: ReLU hidden layers, linear
/// output.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub hidden_layers: usize,
    pub output_dim: usize,
}

impl MlpSpec {
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::new();
        if self.hidden_layers == 0 {
            dims.push((self.input_dim, self.output_dim));
            return dims;
        }
        dims.push((self.input_dim, self.hidden_dim));
        for _ in 1..self.hidden_layers {
            dims.push((self.hidden_dim, self.hidden_dim));
        }
        dims.push((self.hidden_dim, self.output_dim));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }

    fn max_width(&self) -> usize {
        self.input_dim.max(self.hidden_dim).max(self.output_dim)
    }
}

/// Handle to an MLP whose parameters live in a [`ParamStore`] slice.
#[derive(Copy, Clone, Debug)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub offset: usize,
}

/// Reusable activation tape; `acts[l]` is the post-ReLU activation entering
/// layer `l` (acts[0] = the input), `acts[L]` the linear output.
#[derive(Clone, Debug, Default)]
pub struct MlpScratch {
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_next: Vec<f64>,
}

#[inline]
fn matvec_bias(weights: &[f64], bias: &[f64], input: &[f64], out: &mut [f64]) {
    let in_dim = input.len();
    for (o, out_v) in out.iter_mut().enumerate() {
        let row = &weights[o * in_dim..(o + 1) * in_dim];
        let mut acc = 0.0;
        for i in 0..in_dim {
            acc += row[i] * input[i];
        }
        *out_v = acc + bias[o];
    }
}

impl Mlp {
    pub fn new(store: &mut ParamStore, name: &str, spec: MlpSpec) -> Self {
        let offset = store.alloc(name, spec.param_count());
        Mlp { spec, offset }
    }

    /// He-normal init for all layers. Callers that want an identity-like
    /// start zero the final layer afterwards.
    pub fn init_he(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        let mut off = self.offset;
        for (in_dim, out_dim) in self.spec.layer_dims() {
            let std = (2.0 / in_dim as f64).sqrt();
            let values = store.values_mut();
            for w in &mut values[off..off + in_dim * out_dim] {
                *w = normal_sample(rng) * std;
            }
            for b in &mut values[off + in_dim * out_dim..off + in_dim * out_dim + out_dim] {
                *b = 0.0;
            }
            off += in_dim * out_dim + out_dim;
        }
    }

    /// Offset of the final layer's weights within the store; the bias starts
    /// `in_dim * out_dim` later.
    pub fn final_layer_offset(&self) -> (usize, usize, usize) {
        let dims = self.spec.layer_dims();
        let mut off = self.offset;
        for &(i, o) in &dims[..dims.len() - 1] {
            off += i * o + o;
        }
        let (i, o) = *dims.last().unwrap();
        (off, i, o)
    }

    /// Forward pass recording activations in `scratch` for a later backward.
    pub fn forward<'s>(
        &self,
        store: &ParamStore,
        input: &[f64],
        scratch: &'s mut MlpScratch,
    ) -> &'s [f64] {
        assert_eq!(input.len(), self.spec.input_dim, "mlp input dimension mismatch");
        let dims = self.spec.layer_dims();
        let n_layers = dims.len();
        if scratch.acts.len() != n_layers + 1 {
            scratch.acts = vec![Vec::new(); n_layers + 1];
            scratch.delta = vec![0.0; self.spec.max_width()];
            scratch.delta_next = vec![0.0; self.spec.max_width()];
        }
        scratch.acts[0].clear();
        scratch.acts[0].extend_from_slice(input);
        let mut off = self.offset;
        for (l, &(in_dim, out_dim)) in dims.iter().enumerate() {
            let (head, tail) = scratch.acts.split_at_mut(l + 1);
            let src = &head[l];
            let dst = &mut tail[0];
            dst.resize(out_dim, 0.0);
            let weights = &store.values()[off..off + in_dim * out_dim];
            let bias = &store.values()[off + in_dim * out_dim..off + in_dim * out_dim + out_dim];
            matvec_bias(weights, bias, src, dst);
            if l + 1 < n_layers {
                for v in dst.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            off += in_dim * out_dim + out_dim;
        }
        scratch.acts.last().unwrap()
    }

    /// Accumulate parameter gradients for the forward pass recorded in
    /// `scratch`, seeded with `d_out` = dL/d(output).
    pub fn backward(
        &self,
        store: &ParamStore,
        scratch: &mut MlpScratch,
        d_out: &[f64],
        grads: &mut [f64],
    ) {
        let dims = self.spec.layer_dims();
        let n_layers = dims.len();
        assert_eq!(d_out.len(), self.spec.output_dim);
        let mut layer_offsets = Vec::with_capacity(n_layers);
        let mut off = self.offset;
        for &(i, o) in &dims {
            layer_offsets.push(off);
            off += i * o + o;
        }
        scratch.delta[..d_out.len()].copy_from_slice(d_out);
        for l in (0..n_layers).rev() {
            let (in_dim, out_dim) = dims[l];
            let off = layer_offsets[l];
            let act_in = &scratch.acts[l];
            let weights = &store.values()[off..off + in_dim * out_dim];
            {
                let (gw, gb) = grads[off..off + in_dim * out_dim + out_dim]
                    .split_at_mut(in_dim * out_dim);
                for o_i in 0..out_dim {
                    let d = scratch.delta[o_i];
                    if d == 0.0 {
                        continue;
                    }
                    let row = &mut gw[o_i * in_dim..(o_i + 1) * in_dim];
                    for i in 0..in_dim {
                        row[i] += d * act_in[i];
                    }
                    gb[o_i] += d;
                }
            }
            if l == 0 {
                break;
            }
            // delta for the previous layer: W^T delta, gated by ReLU mask.
            let prev = &mut scratch.delta_next;
            prev[..in_dim].iter_mut().for_each(|v| *v = 0.0);
            for o_i in 0..out_dim {
                let d = scratch.delta[o_i];
                if d == 0.0 {
                    continue;
                }
                let row = &weights[o_i * in_dim..(o_i + 1) * in_dim];
                for i in 0..in_dim {
                    prev[i] += row[i] * d;
                }
            }
            for i in 0..in_dim {
                if act_in[i] <= 0.0 {
                    prev[i] = 0.0;
                }
            }
            std::mem::swap(&mut scratch.delta, &mut scratch.delta_next);
        }
    }
}

/// Box-Muller standard normal.
pub fn normal_sample(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (crate::math::TWO_PI * u2).cos()
}

/// Frequency encoding: passthrough of `v` followed by
/// (sin(2^k pi v_i), cos(2^k pi v_i)) for k = 0..bands. Inputs are expected
/// pre-normalized to [-1, 1]. Output size: v.len() * (2 * bands + 1).
pub fn freq_encode(v: &[f64], bands: usize, out: &mut Vec<f64>) {
    out.extend_from_slice(v);
    let mut freq = crate::math::PI;
    for _ in 0..bands {
        for &x in v {
            let (s, c) = (freq * x).sin_cos();
            out.push(s);
            out.push(c);
        }
        freq *= 2.0;
    }
}

pub fn freq_encode_len(dim: usize, bands: usize) -> usize {
    dim * (2 * bands + 1)
}

/// Adam optimizer state over a full [`ParamStore`].
#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    pub step: u64,
    pub lr: f64,
    /// Steps skipped because the gradient contained non-finite entries.
    pub skipped: u64,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self { m: vec![0.0; n_params], v: vec![0.0; n_params], step: 0, lr, skipped: 0 }
    }

    /// Bias-corrected Adam update; skips (and counts) steps with non-finite
    /// gradients so a single bad batch cannot poison the parameters.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[f64]) -> bool {
        assert_eq!(grads.len(), params.len());
        if grads.iter().any(|g| !g.is_finite()) {
            self.skipped += 1;
            return false;
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        let values = params.values_mut();
        for i in 0..values.len() {
            let g = grads[i];
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            values[i] -= self.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
        true
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn softplus_inv(y: f64) -> f64 {
    // ln(e^y - 1), stable for small y
    y + (-((-y).exp_m1())).ln()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
