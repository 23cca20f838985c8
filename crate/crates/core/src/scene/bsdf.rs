//! Surface scattering models: Lambertian, smooth dielectric, rough (GGX)
//! dielectric with visible-normal sampling.
//!
//! Conventions: `w_o` and `w_i` both point away from the surface; `normal` is
//! the geometric outward normal of the shape. Sampling weights are
//! `f * |cos| / pdf` per channel, so Lambertian and delta lobes cancel to
//! their reflectance. Transmission uses the symmetric convention (no
//! radiance-compression factor); every contributing path in supported scenes
//! both enters and exits a boundary, so the factors cancel identically.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::math::{Frame, Rgb, Vec3, PI};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Bsdf {
    Lambertian { albedo: [f64; 3] },
    SmoothDielectric { eta: f64 },
    RoughDielectric { eta: f64, roughness: f64 },
}

impl Bsdf {
    pub fn validate(&self) -> Result<(), String> {
        match *self {
            Bsdf::Lambertian { albedo } => {
                if albedo.iter().any(|&a| !(0.0..=1.0).contains(&a)) {
                    return Err("lambertian albedo must be in [0,1]".into());
                }
            }
            Bsdf::SmoothDielectric { eta } => {
                if !(eta > 0.0) {
                    return Err("dielectric eta must be > 0".into());
                }
            }
            Bsdf::RoughDielectric { eta, roughness } => {
                if !(eta > 0.0) {
                    return Err("dielectric eta must be > 0".into());
                }
                if !(roughness > 0.0 && roughness <= 1.0) {
                    return Err("roughness must be in (0,1]".into());
                }
            }
        }
        Ok(())
    }

    /// True when the material can transmit into the interior.
    pub fn transmissive(&self) -> bool {
        !matches!(self, Bsdf::Lambertian { .. })
    }
}

#[derive(Copy, Clone, Debug)]
pub struct BsdfSample {
    pub w_i: Vec3,
    /// f * |cos| / pdf per channel, hero-channel corrected.
    pub weight: Rgb,
    /// Solid-angle density of `w_i` under the sampling of `channel`; for
    /// delta lobes this is the discrete lobe probability.
    pub pdf: f64,
    pub delta: bool,
    pub valid: bool,
}

impl BsdfSample {
    fn invalid() -> Self {
        BsdfSample { w_i: Vec3::new(0.0, 0.0, 1.0), weight: Rgb::BLACK, pdf: 0.0, delta: false, valid: false }
    }
}

/// Exact unpolarized Fresnel reflectance for a dielectric boundary.
/// `cos_i >= 0` on the incident side, `eta_rel` = transmitted-over-incident
/// index ratio. Returns 1 beyond the critical angle.
pub fn fresnel_dielectric(cos_i: f64, eta_rel: f64) -> f64 {
    let cos_i = cos_i.clamp(0.0, 1.0);
    let sin2_t = (1.0 - cos_i * cos_i) / (eta_rel * eta_rel);
    if sin2_t >= 1.0 {
        return 1.0;
    }
    let cos_t = (1.0 - sin2_t).sqrt();
    let r_par = (eta_rel * cos_i - cos_t) / (eta_rel * cos_i + cos_t);
    let r_perp = (cos_i - eta_rel * cos_t) / (cos_i + eta_rel * cos_t);
    0.5 * (r_par * r_par + r_perp * r_perp)
}

#[inline]
fn reflect(w: Vec3, n: Vec3) -> Vec3 {
    2.0 * w.dot(n) * n - w
}

/// Refract `w_o` (pointing away) through the normal `n` (same side as `w_o`);
/// `eta_rel` = transmitted-over-incident index ratio. None on TIR.
fn refract(w_o: Vec3, n: Vec3, eta_rel: f64) -> Option<Vec3> {
    let cos_i = w_o.dot(n);
    let inv = 1.0 / eta_rel;
    let sin2_t = inv * inv * (1.0 - cos_i * cos_i);
    if sin2_t >= 1.0 {
        return None;
    }
    let cos_t = (1.0 - sin2_t).sqrt();
    Some(-w_o * inv + (inv * cos_i - cos_t) * n)
}

// GGX helpers, all in a local frame where the (possibly flipped) normal is +z.

#[inline]
fn ggx_d(m: Vec3, alpha: f64) -> f64 {
    if m.z <= 0.0 {
        return 0.0;
    }
    let a2 = alpha * alpha;
    let t = m.z * m.z * (a2 - 1.0) + 1.0;
    a2 / (PI * t * t)
}

#[inline]
fn ggx_lambda(v: Vec3, alpha: f64) -> f64 {
    let cos2 = v.z * v.z;
    let tan2 = (1.0 - cos2).max(0.0) / cos2;
    (-1.0 + (1.0 + alpha * alpha * tan2).sqrt()) * 0.5
}

#[inline]
fn ggx_g1(v: Vec3, alpha: f64) -> f64 {
    1.0 / (1.0 + ggx_lambda(v, alpha))
}

/// Heitz's visible-normal sampling for the GGX distribution.
fn sample_ggx_vndf(w_o: Vec3, alpha: f64, u1: f64, u2: f64) -> Vec3 {
    let vh = Vec3::new(alpha * w_o.x, alpha * w_o.y, w_o.z).normalized();
    let lensq = vh.x * vh.x + vh.y * vh.y;
    let t1 = if lensq > 1e-16 {
        Vec3::new(-vh.y, vh.x, 0.0) / lensq.sqrt()
    } else {
        Vec3::new(1.0, 0.0, 0.0)
    };
    let t2 = vh.cross(t1);
    let r = u1.sqrt();
    let phi = 2.0 * PI * u2;
    let p1 = r * phi.cos();
    let mut p2 = r * phi.sin();
    let s = 0.5 * (1.0 + vh.z);
    p2 = (1.0 - s) * (1.0 - p1 * p1).max(0.0).sqrt() + s * p2;
    let p3 = (1.0 - p1 * p1 - p2 * p2).max(0.0).sqrt();
    let nh = t1 * p1 + t2 * p2 + vh * p3;
    Vec3::new(alpha * nh.x, alpha * nh.y, nh.z.max(1e-9)).normalized()
}

#[inline]
fn vndf_pdf(w_o: Vec3, m: Vec3, alpha: f64) -> f64 {
    // D_visible(m) = G1(w_o) D(m) |w_o.m| / |cos_o|
    ggx_g1(w_o, alpha) * ggx_d(m, alpha) * w_o.dot(m).max(0.0) / w_o.z.abs().max(1e-12)
}

const COS_DEGENERATE: f64 = 1e-9;

/// Sample a scattering direction. `normal` is the outward geometric normal,
/// `w_o` points away from the surface toward the arrival side, `channel`
/// drives stochastic lobe decisions (with scalar IOR all channels agree, so
/// no ratio correction remains).
pub fn bsdf_sample(
    bsdf: &Bsdf,
    normal: Vec3,
    w_o: Vec3,
    _channel: usize,
    rng: &mut impl Rng,
) -> BsdfSample {
    let cos_o = w_o.dot(normal);
    if cos_o.abs() < COS_DEGENERATE {
        return BsdfSample::invalid();
    }
    // Shading frame on the arrival side.
    let n_f = if cos_o >= 0.0 { normal } else { -normal };
    match *bsdf {
        Bsdf::Lambertian { albedo } => {
            let frame = Frame::from_normal(n_f);
            let local = crate::math::sample_cosine_hemisphere(rng);
            let w_i = frame.to_world(local);
            let pdf = local.z / PI;
            if pdf <= 0.0 {
                return BsdfSample::invalid();
            }
            BsdfSample {
                w_i,
                weight: Rgb::new(albedo[0], albedo[1], albedo[2]),
                pdf,
                delta: false,
                valid: true,
            }
        }
        Bsdf::SmoothDielectric { eta } => {
            let entering = cos_o >= 0.0;
            let eta_rel = if entering { eta } else { 1.0 / eta };
            let r = fresnel_dielectric(w_o.dot(n_f), eta_rel);
            if rng.gen::<f64>() < r {
                let w_i = reflect(w_o, n_f);
                BsdfSample { w_i, weight: Rgb::WHITE, pdf: r, delta: true, valid: true }
            } else {
                match refract(w_o, n_f, eta_rel) {
                    Some(w_i) => BsdfSample {
                        w_i: w_i.normalized(),
                        weight: Rgb::WHITE,
                        pdf: 1.0 - r,
                        delta: true,
                        valid: true,
                    },
                    // r = 1 at TIR, so this branch is unreachable in exact
                    // arithmetic; guard anyway.
                    None => BsdfSample::invalid(),
                }
            }
        }
        Bsdf::RoughDielectric { eta, roughness } => {
            let entering = cos_o >= 0.0;
            let eta_rel = if entering { eta } else { 1.0 / eta };
            let frame = Frame::from_normal(n_f);
            let wo_l = frame.to_local(w_o);
            if wo_l.z < COS_DEGENERATE {
                return BsdfSample::invalid();
            }
            let m = sample_ggx_vndf(wo_l, roughness, rng.gen(), rng.gen());
            let cos_om = wo_l.dot(m);
            if cos_om <= COS_DEGENERATE {
                return BsdfSample::invalid();
            }
            let r = fresnel_dielectric(cos_om, eta_rel);
            if rng.gen::<f64>() < r {
                let wi_l = reflect(wo_l, m);
                if wi_l.z <= COS_DEGENERATE {
                    return BsdfSample::invalid();
                }
                let weight = ggx_g1(wi_l, roughness); // G2_sep / G1(w_o)
                let pdf = r * vndf_pdf(wo_l, m, roughness) / (4.0 * cos_om);
                BsdfSample {
                    w_i: frame.to_world(wi_l),
                    weight: Rgb::splat(weight),
                    pdf,
                    delta: false,
                    valid: true,
                }
            } else {
                match refract(wo_l, m, eta_rel) {
                    Some(wi_l) => {
                        let wi_l = wi_l.normalized();
                        if wi_l.z >= -COS_DEGENERATE {
                            return BsdfSample::invalid();
                        }
                        let weight = ggx_g1(Vec3::new(wi_l.x, wi_l.y, -wi_l.z), roughness);
                        let cos_im = wi_l.dot(m); // negative side
                        let denom = cos_om + eta_rel * cos_im;
                        let jac = eta_rel * eta_rel * cos_im.abs() / (denom * denom);
                        let pdf = (1.0 - r) * vndf_pdf(wo_l, m, roughness) * jac;
                        if pdf <= 0.0 || !pdf.is_finite() {
                            return BsdfSample::invalid();
                        }
                        BsdfSample {
                            w_i: frame.to_world(wi_l),
                            weight: Rgb::splat(weight),
                            pdf,
                            delta: false,
                            valid: true,
                        }
                    }
                    None => BsdfSample::invalid(),
                }
            }
        }
    }
}

/// Evaluate `f * |cos_i|` and the sampling pdf for an arbitrary direction
/// pair. Delta lobes are not evaluable and return zeros.
pub fn bsdf_eval_pdf(bsdf: &Bsdf, normal: Vec3, w_o: Vec3, w_i: Vec3) -> (Rgb, f64) {
    let cos_o = w_o.dot(normal);
    if cos_o.abs() < COS_DEGENERATE {
        return (Rgb::BLACK, 0.0);
    }
    let n_f = if cos_o >= 0.0 { normal } else { -normal };
    match *bsdf {
        Bsdf::Lambertian { albedo } => {
            let cos_i = w_i.dot(n_f);
            if cos_i <= 0.0 {
                return (Rgb::BLACK, 0.0);
            }
            let pdf = cos_i / PI;
            (Rgb::new(albedo[0], albedo[1], albedo[2]) * pdf, pdf)
        }
        Bsdf::SmoothDielectric { .. } => (Rgb::BLACK, 0.0),
        Bsdf::RoughDielectric { eta, roughness } => {
            let entering = cos_o >= 0.0;
            let eta_rel = if entering { eta } else { 1.0 / eta };
            let frame = Frame::from_normal(n_f);
            let wo_l = frame.to_local(w_o);
            let wi_l = frame.to_local(w_i);
            if wo_l.z < COS_DEGENERATE {
                return (Rgb::BLACK, 0.0);
            }
            if wi_l.z > COS_DEGENERATE {
                // Reflection side.
                let m = (wo_l + wi_l).normalized();
                let cos_om = wo_l.dot(m);
                if cos_om <= 0.0 {
                    return (Rgb::BLACK, 0.0);
                }
                let r = fresnel_dielectric(cos_om, eta_rel);
                let d = ggx_d(m, roughness);
                let g = ggx_g1(wo_l, roughness) * ggx_g1(wi_l, roughness);
                let f = r * d * g / (4.0 * wo_l.z * wi_l.z);
                let pdf = r * vndf_pdf(wo_l, m, roughness) / (4.0 * cos_om);
                (Rgb::splat(f * wi_l.z), pdf)
            } else if wi_l.z < -COS_DEGENERATE {
                // Transmission side; half vector per Walter et al.
                let mut m = -(wo_l + wi_l * eta_rel);
                if m.length_squared() < 1e-16 {
                    return (Rgb::BLACK, 0.0);
                }
                m = m.normalized();
                if m.z < 0.0 {
                    m = -m;
                }
                let cos_om = wo_l.dot(m);
                let cos_im = wi_l.dot(m);
                if cos_om <= 0.0 || cos_im >= 0.0 {
                    return (Rgb::BLACK, 0.0);
                }
                let r = fresnel_dielectric(cos_om, eta_rel);
                let d = ggx_d(m, roughness);
                let g = ggx_g1(wo_l, roughness) * ggx_g1(Vec3::new(wi_l.x, wi_l.y, -wi_l.z), roughness);
                let denom = cos_om + eta_rel * cos_im;
                let f = (1.0 - r) * d * g * eta_rel * eta_rel * cos_om.abs() * cos_im.abs()
                    / (wo_l.z.abs() * wi_l.z.abs() * denom * denom);
                let jac = eta_rel * eta_rel * cos_im.abs() / (denom * denom);
                let pdf = (1.0 - r) * vndf_pdf(wo_l, m, roughness) * jac;
                (Rgb::splat(f * wi_l.z.abs()), pdf)
            } else {
                (Rgb::BLACK, 0.0)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{sample_uniform_sphere, TWO_PI};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const N: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 1.0 };

    #[test]
    fn lambertian_weight_is_albedo() {
        let bsdf = Bsdf::Lambertian { albedo: [1.0, 1.0, 1.0] };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w_o = Vec3::new(0.3, -0.1, 0.9).normalized();
        for _ in 0..1000 {
            let s = bsdf_sample(&bsdf, N, w_o, 0, &mut rng);
            assert!(s.valid);
            assert!((s.weight.r - 1.0).abs() < 1e-12);
            assert!((s.weight.g - 1.0).abs() < 1e-12);
            assert!((s.weight.b - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn index_matched_dielectric_passes_straight_through() {
        let bsdf = Bsdf::SmoothDielectric { eta: 1.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w_o = Vec3::new(0.2, 0.4, 0.7).normalized();
        for _ in 0..100 {
            let s = bsdf_sample(&bsdf, N, w_o, 0, &mut rng);
            assert!(s.valid && s.delta);
            assert!((s.w_i + w_o).length() < 1e-12, "w_i must be -w_o");
            assert_eq!(s.weight, Rgb::WHITE);
        }
    }

    #[test]
    fn fresnel_normal_incidence() {
        let r = fresnel_dielectric(1.0, 1.5);
        assert!((r - 0.04).abs() < 1e-12);
    }

    #[test]
    fn smooth_dielectric_reflection_rate_matches_fresnel() {
        let bsdf = Bsdf::SmoothDielectric { eta: 1.5 };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 200_000;
        let mut reflections = 0u64;
        for _ in 0..n {
            let s = bsdf_sample(&bsdf, N, N, 0, &mut rng);
            if s.w_i.z > 0.0 {
                reflections += 1;
            }
        }
        let rate = reflections as f64 / n as f64;
        // binomial 3 sigma around 0.04
        let sigma = (0.04 * 0.96 / n as f64).sqrt();
        assert!((rate - 0.04).abs() < 3.0 * sigma, "rate {rate}");
    }

    #[test]
    fn lambertian_eval_pdf() {
        let bsdf = Bsdf::Lambertian { albedo: [0.5, 0.25, 1.0] };
        let w_o = Vec3::new(0.0, 0.3, 0.95).normalized();
        let w_i = Vec3::new(0.5, 0.0, 0.86).normalized();
        let (f_cos, pdf) = bsdf_eval_pdf(&bsdf, N, w_o, w_i);
        let cos_i = w_i.z;
        assert!((pdf - cos_i / PI).abs() < 1e-12);
        assert!((f_cos.r - 0.5 * cos_i / PI).abs() < 1e-12);
        assert!((f_cos.b - 1.0 * cos_i / PI).abs() < 1e-12);
    }

    #[test]
    fn smooth_dielectric_is_not_evaluable() {
        let bsdf = Bsdf::SmoothDielectric { eta: 1.5 };
        let (f, pdf) = bsdf_eval_pdf(&bsdf, N, N, Vec3::new(0.1, 0.0, -0.99).normalized());
        assert_eq!(f, Rgb::BLACK);
        assert_eq!(pdf, 0.0);
    }

    /// Spherical-grid quadrature of f*cos over both hemispheres.
    fn quadrature_integral(bsdf: &Bsdf, w_o: Vec3) -> f64 {
        let nt = 512;
        let np = 256;
        let mut total = 0.0;
        for it in 0..nt {
            let theta = PI * (it as f64 + 0.5) / nt as f64;
            for ip in 0..np {
                let phi = TWO_PI * (ip as f64 + 0.5) / np as f64;
                let w_i = Vec3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos());
                let (f_cos, _) = bsdf_eval_pdf(bsdf, N, w_o, w_i);
                total += f_cos.r * theta.sin();
            }
        }
        total * (PI / nt as f64) * (TWO_PI / np as f64)
    }

    #[test]
    fn rough_dielectric_sample_matches_quadrature() {
        // E[f cos / pdf] over bsdf_sample equals the quadrature of f cos.
        let bsdf = Bsdf::RoughDielectric { eta: 1.5, roughness: 0.35 };
        let w_o = Vec3::new(0.4, 0.1, 0.91).normalized();
        let quad = quadrature_integral(&bsdf, w_o);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let s = bsdf_sample(&bsdf, N, w_o, 0, &mut rng);
            if s.valid && s.pdf > 0.0 {
                let (f_cos, pdf) = bsdf_eval_pdf(&bsdf, N, w_o, s.w_i);
                if pdf > 0.0 {
                    acc += f_cos.r / pdf;
                }
            }
        }
        let mc = acc / n as f64;
        assert!(
            (mc - quad).abs() < 0.01 * quad.max(0.1),
            "mc {mc} vs quadrature {quad}"
        );
    }

    #[test]
    fn rough_dielectric_pdf_matches_sample_histogram() {
        // 16 x 32 directional bins over the full sphere; counts within
        // 3-sigma Poisson of the pdf prediction (loose coverage check).
        let bsdf = Bsdf::RoughDielectric { eta: 1.33, roughness: 0.4 };
        let w_o = Vec3::new(0.2, -0.3, 0.93).normalized();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 400_000usize;
        let nt = 16;
        let np = 32;
        let mut counts = vec![0u64; nt * np];
        for _ in 0..n {
            let s = bsdf_sample(&bsdf, N, w_o, 0, &mut rng);
            if !s.valid {
                continue;
            }
            let cos = s.w_i.z.clamp(-1.0, 1.0);
            let it = (((cos + 1.0) / 2.0 * nt as f64) as usize).min(nt - 1);
            let phi = s.w_i.y.atan2(s.w_i.x) + PI;
            let ip = ((phi / TWO_PI * np as f64) as usize).min(np - 1);
            counts[it * np + ip] += 1;
        }
        // Predicted mass per bin by sub-quadrature of the pdf.
        let sub = 6;
        let mut bad = 0;
        for it in 0..nt {
            for ip in 0..np {
                let mut mass = 0.0;
                for st in 0..sub {
                    let cos = -1.0 + (it as f64 + (st as f64 + 0.5) / sub as f64) * 2.0 / nt as f64;
                    for sp in 0..sub {
                        let phi =
                            -PI + (ip as f64 + (sp as f64 + 0.5) / sub as f64) * TWO_PI / np as f64;
                        let sin = (1.0 - cos * cos).max(0.0).sqrt();
                        let w_i = Vec3::new(sin * phi.cos(), sin * phi.sin(), cos);
                        let (_, pdf) = bsdf_eval_pdf(&bsdf, N, w_o, w_i);
                        mass += pdf;
                    }
                }
                mass *= (2.0 / nt as f64) * (TWO_PI / np as f64) / (sub * sub) as f64;
                let expected = mass * n as f64;
                let sigma = expected.sqrt().max(1.0);
                if (counts[it * np + ip] as f64 - expected).abs() > 3.0 * sigma + 3.0 {
                    bad += 1;
                }
            }
        }
        // ~0.3% of bins may exceed 3 sigma by chance.
        assert!(bad <= 16, "{bad} of {} bins outside 3 sigma", nt * np);
    }

    #[test]
    fn energy_conservation_lambertian_and_smooth() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for bsdf in [
            Bsdf::Lambertian { albedo: [1.0, 0.8, 0.3] },
            Bsdf::SmoothDielectric { eta: 1.5 },
        ] {
            for _ in 0..16 {
                let mut w_o = sample_uniform_sphere(&mut rng);
                if w_o.z.abs() < 0.05 {
                    w_o.z += 0.1;
                    w_o = w_o.normalized();
                }
                let n = 20_000;
                let mut acc = Rgb::BLACK;
                for _ in 0..n {
                    let s = bsdf_sample(&bsdf, N, w_o, 0, &mut rng);
                    if s.valid {
                        acc += s.weight;
                    }
                }
                let mean = acc / n as f64;
                // E[f cos / pdf] <= 1 per channel (within MC slack)
                for c in 0..3 {
                    assert!(mean[c] <= 1.0 + 0.01, "channel {c}: {}", mean[c]);
                }
            }
        }
    }
}
