//! Homogeneous participating media: hero-channel distance sampling with RGB
//! ratio weights, Henyey-Greenstein phase sampling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::math::{Frame, Rgb, Vec3, INV_FOUR_PI, TWO_PI};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Medium {
    pub sigma_a: [f64; 3],
    pub sigma_s: [f64; 3],
    #[serde(default)]
    pub hg_g: f64,
}

impl Medium {
    pub fn validate(&self) -> Result<(), String> {
        if self.sigma_a.iter().chain(self.sigma_s.iter()).any(|&s| !(s >= 0.0) || !s.is_finite()) {
            return Err("medium coefficients must be finite and >= 0".into());
        }
        if !(-1.0 < self.hg_g && self.hg_g < 1.0) {
            return Err("hg_g must lie in (-1,1)".into());
        }
        Ok(())
    }

    #[inline]
    pub fn sigma_t(&self) -> Rgb {
        Rgb::new(
            self.sigma_a[0] + self.sigma_s[0],
            self.sigma_a[1] + self.sigma_s[1],
            self.sigma_a[2] + self.sigma_s[2],
        )
    }

    #[inline]
    pub fn sigma_s_rgb(&self) -> Rgb {
        Rgb::new(self.sigma_s[0], self.sigma_s[1], self.sigma_s[2])
    }

    /// Closed-form transmittance over a segment of length `len`.
    #[inline]
    pub fn transmittance(&self, len: f64) -> Rgb {
        self.sigma_t().map(|s| (-s * len).exp())
    }
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub enum MediumEvent {
    /// In-segment scattering at distance `t`; `weight` is the per-channel
    /// ratio (analog throughput of the event) / (hero-channel pdf).
    Scatter { t: f64, weight: Rgb },
    /// Free flight across the whole segment.
    PassThrough { weight: Rgb },
}

/// Sample a collision distance against the hero channel's extinction over a
/// segment of length `seg_len`. Distances beyond the segment become
/// pass-through events carrying the transmittance ratio weight.
pub fn medium_sample_distance(
    medium: &Medium,
    channel: usize,
    seg_len: f64,
    rng: &mut impl Rng,
) -> MediumEvent {
    let sigma_t = medium.sigma_t();
    let st_c = sigma_t[channel];
    debug_assert!(st_c >= 0.0);
    if st_c == 0.0 {
        // Deterministic pass-through; other channels still attenuate.
        let weight = sigma_t.map(|s| (-s * seg_len).exp());
        return MediumEvent::PassThrough { weight };
    }
    let t = -(1.0 - rng.gen::<f64>()).ln() / st_c;
    if t < seg_len {
        let sigma_s = medium.sigma_s_rgb();
        let mut weight = Rgb::BLACK;
        for k in 0..3 {
            // sigma_s_k exp(-sigma_t_k t) / (sigma_t_c exp(-sigma_t_c t))
            weight[k] = sigma_s[k] * ((st_c - sigma_t[k]) * t).exp() / st_c;
        }
        MediumEvent::Scatter { t, weight }
    } else {
        let mut weight = Rgb::BLACK;
        for k in 0..3 {
            // exp(-sigma_t_k L) / exp(-sigma_t_c L)
            weight[k] = ((st_c - sigma_t[k]) * seg_len).exp();
        }
        MediumEvent::PassThrough { weight }
    }
}

/// Henyey-Greenstein phase function value; `cos_theta` between the incoming
/// travel direction and the scattered direction.
#[inline]
pub fn phase_hg(cos_theta: f64, g: f64) -> f64 {
    let denom = 1.0 + g * g - 2.0 * g * cos_theta;
    INV_FOUR_PI * (1.0 - g * g) / (denom * denom.sqrt())
}

/// Sample a scattered direction from the HG inverse CDF around the travel
/// direction `w`. Perfect importance sampling: the implied weight is 1.
pub fn phase_sample_hg(g: f64, w: Vec3, rng: &mut impl Rng) -> Vec3 {
    let u: f64 = rng.gen();
    let cos_theta = if g.abs() < 1e-3 {
        1.0 - 2.0 * u
    } else {
        let sq = (1.0 - g * g) / (1.0 - g + 2.0 * g * u);
        (1.0 + g * g - sq * sq) / (2.0 * g)
    };
    let sin_theta = (1.0 - cos_theta * cos_theta).max(0.0).sqrt();
    let phi = TWO_PI * rng.gen::<f64>();
    let frame = Frame::from_normal(w);
    frame.to_world(Vec3::new(sin_theta * phi.cos(), sin_theta * phi.sin(), cos_theta))
}
