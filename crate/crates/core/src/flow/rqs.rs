//! Monotone rational quadratic spline transforms on [0,1] (Durkan et al.
//! form): construction from raw network outputs, forward/inverse evaluation
//! with closed-form derivatives, and the gradient of the log-density with
//! respect to the knot parameters.

use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::nn::{sigmoid, softplus, softplus_inv};

/// Floor for bin widths/heights and knot derivatives.
pub const KNOT_EPS: f64 = 1e-3;

/// Raw derivative value that yields an exactly-unit knot derivative, used to
/// bias-initialize conditioners so the initial flow is the identity.
pub fn identity_derivative_raw() -> f64 {
    softplus_inv(1.0 - KNOT_EPS)
}

/// Knots of one channel's spline: K bins, K+1 positions with endpoints
/// pinned at (0,0) and (1,1), K+1 positive derivatives. The softmax
/// probabilities are kept for the backward pass.
#[derive(Clone, Debug, Default)]
pub struct ChannelKnots {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub d: Vec<f64>,
    pub px: Vec<f64>,
    pub py: Vec<f64>,
}

/// Per-channel knots predicted by one conditioner.
#[derive(Clone, Debug, Default)]
pub struct RqsKnots {
    pub channels: [ChannelKnots; 3],
    pub k: usize,
}

/// Raw layout per channel: [K width logits][K height logits][K derivative
/// raws]; channels are consecutive blocks of 3K.
pub fn raw_len(k: usize) -> usize {
    9 * k
}

fn softmax_into(raw: &[f64], out: &mut Vec<f64>) {
    out.clear();
    let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for &r in raw {
        let e = (r - max).exp();
        out.push(e);
        sum += e;
    }
    for v in out.iter_mut() {
        *v /= sum;
    }
}

fn build_positions(probs: &[f64], out: &mut Vec<f64>) {
    let k = probs.len();
    let scale = 1.0 - k as f64 * KNOT_EPS;
    out.clear();
    out.push(0.0);
    let mut acc = 0.0;
    for &p in &probs[..k - 1] {
        acc += KNOT_EPS + scale * p;
        out.push(acc);
    }
    out.push(1.0);
}

/// Build one channel's knots from its 3K raw values.
pub fn build_channel(raw: &[f64], k: usize, out: &mut ChannelKnots) {
    debug_assert_eq!(raw.len(), 3 * k);
    softmax_into(&raw[..k], &mut out.px);
    build_positions(&out.px, &mut out.x);
    softmax_into(&raw[k..2 * k], &mut out.py);
    build_positions(&out.py, &mut out.y);
    out.d.clear();
    for i in 0..k {
        out.d.push(softplus(raw[2 * k + i]) + KNOT_EPS);
    }
    // K+1 knot derivatives from K raws: the last raw covers both end knots.
    let last = *out.d.last().unwrap();
    out.d.push(last);
}

/// Build all three channels from a conditioner output of length 9K.
pub fn build_knots(raw: &[f64], k: usize, out: &mut RqsKnots) {
    debug_assert_eq!(raw.len(), raw_len(k));
    out.k = k;
    for c in 0..3 {
        build_channel(&raw[c * 3 * k..(c + 1) * 3 * k], k, &mut out.channels[c]);
    }
}

#[inline]
fn find_bin(positions: &[f64], v: f64) -> usize {
    // positions has K+1 entries; return bin index in 0..K
    let k = positions.len() - 1;
    let mut bin = 0;
    while bin + 1 < k && positions[bin + 1] <= v {
        bin += 1;
    }
    bin
}

/// Forward spline transform: u in [0,1] -> (s, ds/du > 0).
pub fn rqs_forward(u: f64, ch: &ChannelKnots) -> (f64, f64) {
    let u = u.clamp(0.0, 1.0);
    let bin = find_bin(&ch.x, u);
    let (x0, x1) = (ch.x[bin], ch.x[bin + 1]);
    let (y0, y1) = (ch.y[bin], ch.y[bin + 1]);
    let (d0, d1) = (ch.d[bin], ch.d[bin + 1]);
    let w = x1 - x0;
    let h = y1 - y0;
    let sl = h / w;
    let xi = ((u - x0) / w).clamp(0.0, 1.0);
    let xi1m = 1.0 - xi;
    let t = xi * xi1m;
    let denom = sl + (d0 + d1 - 2.0 * sl) * t;
    let s = y0 + h * (sl * xi * xi + d0 * t) / denom;
    let deriv = sl * sl * (d1 * xi * xi + 2.0 * sl * t + d0 * xi1m * xi1m) / (denom * denom);
    (s.clamp(0.0, 1.0), deriv)
}

/// Inverse spline transform: s in [0,1] -> (u, du/ds > 0), via the stable
/// quadratic root 2c / (-b - sqrt(b^2 - 4ac)).
pub fn rqs_inverse(s: f64, ch: &ChannelKnots) -> (f64, f64) {
    let s = s.clamp(0.0, 1.0);
    let bin = find_bin(&ch.y, s);
    let (x0, x1) = (ch.x[bin], ch.x[bin + 1]);
    let (y0, y1) = (ch.y[bin], ch.y[bin + 1]);
    let (d0, d1) = (ch.d[bin], ch.d[bin + 1]);
    let w = x1 - x0;
    let h = y1 - y0;
    let sl = h / w;
    let dy = s - y0;
    let k2 = d0 + d1 - 2.0 * sl;
    let a = h * (sl - d0) + dy * k2;
    let b = h * d0 - dy * k2;
    let c = -sl * dy;
    let disc = (b * b - 4.0 * a * c).max(0.0);
    let xi = (2.0 * c / (-b - disc.sqrt())).clamp(0.0, 1.0);
    let u = x0 + xi * w;
    let t = xi * (1.0 - xi);
    let denom = sl + k2 * t;
    let deriv = sl * sl * (d1 * xi * xi + 2.0 * sl * t + d0 * (1.0 - xi) * (1.0 - xi))
        / (denom * denom);
    (u.clamp(0.0, 1.0), 1.0 / deriv)
}

// ---------------------------------------------------------------------------
// Gradient of log(du/ds) with respect to the six bin parameters, computed by
// running the inverse with 6-lane dual numbers (exact derivatives without a
// hand-derived closed form).

#[derive(Copy, Clone, Debug)]
struct Dual6 {
    v: f64,
    d: [f64; 6],
}

impl Dual6 {
    fn c(v: f64) -> Self {
        Dual6 { v, d: [0.0; 6] }
    }

    fn seed(v: f64, lane: usize) -> Self {
        let mut d = [0.0; 6];
        d[lane] = 1.0;
        Dual6 { v, d }
    }

    fn sqrt(self) -> Self {
        let r = self.v.max(0.0).sqrt();
        let scale = if r > 0.0 { 0.5 / r } else { 0.0 };
        Dual6 { v: r, d: self.d.map(|g| g * scale) }
    }

    fn ln(self) -> Self {
        let inv = 1.0 / self.v;
        Dual6 { v: self.v.ln(), d: self.d.map(|g| g * inv) }
    }
}

impl Add for Dual6 {
    type Output = Self;
    fn add(self, r: Self) -> Self {
        let mut d = self.d;
        for i in 0..6 {
            d[i] += r.d[i];
        }
        Dual6 { v: self.v + r.v, d }
    }
}

impl Sub for Dual6 {
    type Output = Self;
    fn sub(self, r: Self) -> Self {
        let mut d = self.d;
        for i in 0..6 {
            d[i] -= r.d[i];
        }
        Dual6 { v: self.v - r.v, d }
    }
}

impl Mul for Dual6 {
    type Output = Self;
    fn mul(self, r: Self) -> Self {
        let mut d = [0.0; 6];
        for i in 0..6 {
            d[i] = self.d[i] * r.v + self.v * r.d[i];
        }
        Dual6 { v: self.v * r.v, d }
    }
}

impl Div for Dual6 {
    type Output = Self;
    fn div(self, r: Self) -> Self {
        let inv = 1.0 / r.v;
        let mut d = [0.0; 6];
        for i in 0..6 {
            d[i] = (self.d[i] - self.v * inv * r.d[i]) * inv;
        }
        Dual6 { v: self.v * inv, d }
    }
}

impl Neg for Dual6 {
    type Output = Self;
    fn neg(self) -> Self {
        Dual6 { v: -self.v, d: self.d.map(|g| -g) }
    }
}

/// Result of one inverse evaluation with parameter gradients attached.
#[derive(Copy, Clone, Debug)]
pub struct LogPdfGrad {
    pub bin: usize,
    pub u: f64,
    pub du_ds: f64,
    /// d log(du/ds) / d {x0, x1, y0, y1, d0, d1} of the containing bin.
    pub d_params: [f64; 6],
}

/// Inverse transform at `s` plus the gradient of log(du/ds) with respect to
/// the containing bin's knot parameters (bin selection held fixed).
pub fn rqs_inverse_logpdf_grad(s: f64, ch: &ChannelKnots) -> LogPdfGrad {
    let s = s.clamp(0.0, 1.0);
    let bin = find_bin(&ch.y, s);
    let x0 = Dual6::seed(ch.x[bin], 0);
    let x1 = Dual6::seed(ch.x[bin + 1], 1);
    let y0 = Dual6::seed(ch.y[bin], 2);
    let y1 = Dual6::seed(ch.y[bin + 1], 3);
    let d0 = Dual6::seed(ch.d[bin], 4);
    let d1 = Dual6::seed(ch.d[bin + 1], 5);
    let sv = Dual6::c(s);
    let one = Dual6::c(1.0);
    let two = Dual6::c(2.0);
    let four = Dual6::c(4.0);

    let w = x1 - x0;
    let h = y1 - y0;
    let sl = h / w;
    let dy = sv - y0;
    let k2 = d0 + d1 - two * sl;
    let a = h * (sl - d0) + dy * k2;
    let b = h * d0 - dy * k2;
    let c = -(sl * dy);
    let disc = (b * b - four * a * c).sqrt();
    let xi = (two * c) / (-b - disc);
    let u = x0 + xi * w;
    let t = xi * (one - xi);
    let denom = sl + k2 * t;
    let om = one - xi;
    let num = sl * sl * (d1 * xi * xi + two * sl * t + d0 * om * om);
    let log_dydx = num.ln() - (denom.ln() + denom.ln());
    // log(du/ds) = -log(dy/dx)
    LogPdfGrad {
        bin,
        u: u.v.clamp(0.0, 1.0),
        du_ds: (denom.v * denom.v) / num.v,
        d_params: log_dydx.d.map(|g| -g),
    }
}

/// Scatter `scale * d log pdf / d params` into the gradient of the raw
/// conditioner output for one channel (length 3K), undoing the softmax /
/// cumulative-sum / softplus construction.
pub fn accumulate_raw_grad(
    ch: &ChannelKnots,
    k: usize,
    g: &LogPdfGrad,
    scale: f64,
    raw: &[f64],
    out: &mut [f64],
) {
    debug_assert_eq!(out.len(), 3 * k);
    let bin = g.bin;
    // Positions are prefix sums of widths; x[K] = 1 is constant.
    let scatter_positions = |probs: &[f64], g_lo: f64, g_hi: f64, out: &mut [f64]| {
        // gw_i = g_lo * [i < bin] + g_hi * [i < bin + 1], zero when the
        // corresponding knot is a pinned endpoint.
        let g_lo = if bin == 0 { 0.0 } else { g_lo };
        let g_hi = if bin + 1 == k { 0.0 } else { g_hi };
        if g_lo == 0.0 && g_hi == 0.0 {
            return;
        }
        let scale_w = 1.0 - k as f64 * KNOT_EPS;
        // S = sum_i gw_i p_i
        let mut s = 0.0;
        for i in 0..k {
            let gw = if i < bin { g_lo + g_hi } else if i == bin { g_hi } else { 0.0 };
            s += gw * probs[i];
        }
        for (i, o) in out.iter_mut().enumerate() {
            let gw = if i < bin { g_lo + g_hi } else if i == bin { g_hi } else { 0.0 };
            *o += scale * scale_w * probs[i] * (gw - s);
        }
    };
    scatter_positions(&ch.px, g.d_params[0], g.d_params[1], &mut out[..k]);
    scatter_positions(&ch.py, g.d_params[2], g.d_params[3], &mut out[k..2 * k]);
    // Derivatives: d_i = softplus(raw_i) + eps, with d[K] sharing raw K-1.
    let d_raw = &raw[2 * k..3 * k];
    let gd = &mut out[2 * k..3 * k];
    let i0 = bin;
    let i1 = (bin + 1).min(k - 1);
    gd[i0] += scale * g.d_params[4] * sigmoid(d_raw[i0]);
    gd[i1] += scale * g.d_params[5] * sigmoid(d_raw[i1]);
}

/// Random raw conditioner outputs in the derivative-consistent regime:
/// correlated width/height logits and knot derivatives near the geometric
/// mean of the adjacent bin slopes. Trained monotone splines live in this
/// regime, and it is the regime where a fixed-budget trapezoid is a valid
/// normalization oracle (mid-bin density spikes from derivative/slope
/// mismatch can be arbitrarily narrow and defeat any fixed grid).
pub fn random_consistent_raw(k: usize, rng: &mut impl rand::Rng) -> Vec<f64> {
    let mut raw = vec![0.0; 3 * k];
    for i in 0..k {
        raw[i] = crate::nn::normal_sample(rng);
        raw[k + i] = raw[i] + 0.35 * crate::nn::normal_sample(rng);
    }
    let mut ch = ChannelKnots::default();
    build_channel(&raw, k, &mut ch);
    for i in 0..k {
        let sl = |b: usize| (ch.y[b + 1] - ch.y[b]) / (ch.x[b + 1] - ch.x[b]);
        let anchor = if i == 0 { sl(0) } else { (sl(i - 1) * sl(i)).sqrt() };
        let target = (anchor * (0.2 * crate::nn::normal_sample(rng)).exp() - KNOT_EPS).max(1e-4);
        raw[2 * k + i] = softplus_inv(target);
    }
    raw
}

/// Trapezoid quadrature of the spline density over [0,1] with the point
/// budget allocated per bin (proportional to the bin's extent in both
/// coordinates) so narrow bins stay resolved. Exact answer is 1.
pub fn trapezoid_normalization(ch: &ChannelKnots, total_pts: usize) -> f64 {
    let k = ch.x.len() - 1;
    let mut total = 0.0;
    for bin in 0..k {
        let w = ch.x[bin + 1] - ch.x[bin];
        let h = ch.y[bin + 1] - ch.y[bin];
        let n = ((total_pts as f64 * 0.5 * (w + h)) as usize).max(32);
        let (y0, y1) = (ch.y[bin], ch.y[bin + 1]);
        let step = (y1 - y0) / n as f64;
        let mut acc = 0.5 * (rqs_inverse(y0, ch).1 + rqs_inverse(y1 - 1e-15, ch).1);
        for i in 1..n {
            acc += rqs_inverse(y0 + i as f64 * step, ch).1;
        }
        total += acc * step;
    }
    total
}
