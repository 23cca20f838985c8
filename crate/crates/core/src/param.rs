//! Reparameterization of incident configurations.
//!
//! The incident boundary point `x_i` maps along the incident direction to its
//! bounding-box intersection `u_i` (density factor |n_x.w| / |n_u.w|), and
//! (u_i, w_i) maps to the 4D cylindrical parameter
//! `s_raw = (u.z/|u|, atan2(u.x, u.y), w.z, atan2(w.x, w.y))`
//! with density factor |n_u.u| / |u|^3; the direction part contributes a
//! factor of 1. `s` is stored affinely normalized to [0,1]^4; the constant
//! volume of the raw range is [`RAW_S_VOLUME`] and is folded into the flow's
//! returned densities, not into [`to_s`].
//!
//! Axis convention: the cylindrical z-component is asset-local +z; the
//! azimuth is measured by `atan2(first, second)` component, i.e. zero on the
//! +y axis, pi/2 on +x.

use crate::geometry::{aabb_exit_intersect, Aabb};
use crate::math::{Ray, Vec3, PI};
use crate::scene::{Asset, Shape};

/// Volume of the raw cylindrical range [-1,1] x [-pi,pi] x [-1,1] x [-pi,pi].
pub const RAW_S_VOLUME: f64 = 16.0 * PI * PI;

/// Grazing guard for |n_u . w_i|.
pub const GRAZING_EPS: f64 = 1e-9;

/// Pole guard for azimuth reconstruction.
const POLE_EPS: f64 = 1e-12;

/// Point on the bounding-box boundary with the outward normal of its face.
#[derive(Copy, Clone, Debug)]
pub struct ProxyPoint {
    pub u: Vec3,
    pub face_normal: Vec3,
}

/// 4D incident parameter, stored normalized to [0,1]^4.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct SParam(pub [f64; 4]);

impl SParam {
    pub fn from_raw(raw: [f64; 4]) -> Self {
        SParam([
            (raw[0] + 1.0) * 0.5,
            (raw[1] + PI) / (2.0 * PI),
            (raw[2] + 1.0) * 0.5,
            (raw[3] + PI) / (2.0 * PI),
        ])
    }

    pub fn to_raw(self) -> [f64; 4] {
        [
            self.0[0] * 2.0 - 1.0,
            self.0[1] * 2.0 * PI - PI,
            self.0[2] * 2.0 - 1.0,
            self.0[3] * 2.0 * PI - PI,
        ]
    }

    pub fn in_unit_cube(self) -> bool {
        self.0.iter().all(|&v| (0.0..=1.0).contains(&v))
    }
}

/// Map a boundary point and incident direction to the box proxy point.
/// Returns the proxy and the factor converting density at `u` to density at
/// `x_i` (|n_x.w| / |n_u.w|). `None` when the exit is grazing-degenerate.
pub fn to_proxy(
    x_i: Vec3,
    n_x: Vec3,
    w_i: Vec3,
    aabb: &Aabb,
) -> Option<(ProxyPoint, f64)> {
    let (u, face_normal) = aabb_exit_intersect(x_i, w_i, aabb).ok()?;
    let denom = face_normal.dot(w_i).abs();
    if denom < GRAZING_EPS {
        return None;
    }
    let jac = n_x.dot(w_i).abs() / denom;
    Some((ProxyPoint { u, face_normal }, jac))
}

fn azimuth(x: f64, y: f64) -> f64 {
    if x.abs() < POLE_EPS && y.abs() < POLE_EPS {
        0.0
    } else {
        x.atan2(y)
    }
}

/// Map (proxy point, incident direction) to the normalized 4D parameter.
/// The returned Jacobian |n_u.u| / |u|^3 converts density per d(u, w) to
/// density per raw cylindrical measure.
pub fn to_s(u: &ProxyPoint, w_i: Vec3) -> (SParam, f64) {
    let len = u.u.length();
    debug_assert!(len > 0.0);
    let raw = [
        (u.u.z / len).clamp(-1.0, 1.0),
        azimuth(u.u.x, u.u.y),
        w_i.z.clamp(-1.0, 1.0),
        azimuth(w_i.x, w_i.y),
    ];
    let jac = u.face_normal.dot(u.u).abs() / (len * len * len);
    (SParam::from_raw(raw), jac)
}

fn dir_from_cylindrical(z: f64, az: f64) -> Vec3 {
    let z = z.clamp(-1.0, 1.0);
    let sin_theta = (1.0 - z * z).max(0.0).sqrt();
    Vec3::new(sin_theta * az.sin(), sin_theta * az.cos(), z)
}

/// Normalized (s3, s4) pair of a unit direction (the direction half of the
/// cylindrical parameterization).
pub fn s_pair_from_dir(w: Vec3) -> [f64; 2] {
    [(w.z.clamp(-1.0, 1.0) + 1.0) * 0.5, (azimuth(w.x, w.y) + PI) / (2.0 * PI)]
}

/// Inverse of [`s_pair_from_dir`].
pub fn dir_from_s_pair(s: [f64; 2]) -> Vec3 {
    dir_from_cylindrical(s[0] * 2.0 - 1.0, s[1] * 2.0 * PI - PI)
}

/// Inverse of [`to_s`]: reconstruct the proxy point (by casting from the box
/// center) and the incident direction. Total on [0,1]^4.
pub fn from_s(s: SParam, aabb: &Aabb) -> (ProxyPoint, Vec3) {
    let raw = s.to_raw();
    let u_dir = dir_from_cylindrical(raw[0], raw[1]);
    let (u, face_normal) =
        aabb_exit_intersect(Vec3::ZERO, u_dir, aabb).expect("center is inside the box");
    let w_i = dir_from_cylindrical(raw[2], raw[3]);
    (ProxyPoint { u, face_normal }, w_i)
}

#[derive(Copy, Clone, Debug)]
pub struct BackProjection {
    /// Asset-local boundary point (the outermost intersection).
    pub x_i: Vec3,
    pub normal: Vec3,
    /// Inverse of [`to_proxy`]'s factor: |n_u.w| / |n_x.w|.
    pub jac: f64,
}

/// Trace from the proxy point back along `-w_i` to the asset boundary; the
/// first hit is the only point visible to the incident light. `None` when
/// the ray misses the asset (such samples carry zero radiance).
pub fn project_back(u: &ProxyPoint, w_i: Vec3, asset: &Asset) -> Option<BackProjection> {
    let ray = Ray { origin: u.u, dir: -w_i, t_min: 0.0, t_max: f64::INFINITY };
    let hit = match asset.shape {
        Shape::Sphere { radius } => {
            crate::geometry::intersect_sphere(&ray, Vec3::ZERO, radius, 0)?
        }
    };
    let denom = hit.normal.dot(w_i).abs();
    let jac = u.face_normal.dot(w_i).abs() / denom.max(GRAZING_EPS);
    Some(BackProjection { x_i: hit.point, normal: hit.normal, jac })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{sample_uniform_sphere, Rgb};
    use crate::scene::Bsdf;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_sphere_asset(half: f64) -> Asset {
        Asset {
            name: "sphere".into(),
            center: Vec3::ZERO,
            shape: Shape::Sphere { radius: 1.0 },
            bsdf: Bsdf::Lambertian { albedo: [1.0, 1.0, 1.0] },
            medium: None,
            aabb: Aabb::new(Vec3::new(half, half, half)),
            neural: false,
            checkpoint: None,
        }
    }

    #[test]
    fn to_proxy_collinear_normals() {
        let aabb = Aabb::new(Vec3::new(1.5, 1.5, 1.5));
        let x = Vec3::new(0.0, 0.0, 1.0);
        let w = Vec3::new(0.0, 0.0, 1.0);
        let (u, jac) = to_proxy(x, x, w, &aabb).unwrap();
        assert!((u.u - Vec3::new(0.0, 0.0, 1.5)).length() < 1e-12);
        assert!((jac - 1.0).abs() < 1e-12);
    }

    #[test]
    fn to_proxy_grazing_surface_has_zero_jac() {
        let aabb = Aabb::new(Vec3::new(1.5, 1.5, 1.5));
        let x = Vec3::new(1.0, 0.0, 0.0);
        let w = Vec3::new(0.0, 0.0, 1.0);
        let (u, jac) = to_proxy(x, x, w, &aabb).unwrap();
        assert!((u.u - Vec3::new(1.0, 0.0, 1.5)).length() < 1e-12);
        assert_eq!(jac, 0.0);
    }

    #[test]
    fn to_proxy_diagonal_hand_case() {
        let aabb = Aabb::new(Vec3::new(1.5, 1.5, 1.5));
        let x = Vec3::new(1.0, 0.0, 0.0);
        let w = Vec3::new(1.0, 0.0, 1.0).normalized();
        let (u, jac) = to_proxy(x, x, w, &aabb).unwrap();
        assert!((u.u - Vec3::new(1.5, 0.0, 0.5)).length() < 1e-9);
        // both |n_x.w| and |n_u.w| equal 1/sqrt(2)
        assert!((jac - 1.0).abs() < 1e-12);
    }

    #[test]
    fn to_s_hand_case() {
        let u = ProxyPoint {
            u: Vec3::new(1.5, 0.0, 0.5),
            face_normal: Vec3::new(1.0, 0.0, 0.0),
        };
        let (s, jac) = to_s(&u, Vec3::new(0.0, 0.0, 1.0));
        let raw = s.to_raw();
        let len = 2.5f64.sqrt();
        assert!((raw[0] - 0.5 / len).abs() < 1e-12);
        assert!((raw[1] - PI / 2.0).abs() < 1e-12);
        assert!((jac - 1.5 / 2.5f64.powf(1.5)).abs() < 1e-12);
        // direction at the +z pole
        assert!((raw[2] - 1.0).abs() < 1e-12);
        assert_eq!(raw[3], 0.0);
    }

    #[test]
    fn from_s_axis_cases() {
        let aabb = Aabb::new(Vec3::new(1.5, 1.5, 2.0));
        let (u, w) = from_s(SParam::from_raw([1.0, 0.0, 1.0, 0.0]), &aabb);
        assert!((u.u - Vec3::new(0.0, 0.0, 2.0)).length() < 1e-9);
        assert!((w - Vec3::new(0.0, 0.0, 1.0)).length() < 1e-12);

        let (u2, _) = from_s(SParam::from_raw([0.0, PI / 2.0, 0.0, 0.0]), &aabb);
        assert!((u2.u - Vec3::new(1.5, 0.0, 0.0)).length() < 1e-9, "{:?}", u2.u);
        assert_eq!(u2.face_normal, Vec3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn from_s_covers_all_faces() {
        let aabb = Aabb::new(Vec3::new(1.0, 1.3, 0.8));
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut seen = [0u64; 6];
        for _ in 0..100_000 {
            let s = SParam([rng.gen(), rng.gen(), rng.gen(), rng.gen()]);
            let (u, _) = from_s(s, &aabb);
            for axis in 0..3 {
                if u.face_normal[axis] != 0.0 {
                    seen[axis * 2 + (u.face_normal[axis] > 0.0) as usize] += 1;
                }
            }
        }
        assert!(seen.iter().all(|&c| c > 0), "face coverage {seen:?}");
    }

    #[test]
    fn s_roundtrip_is_identity() {
        let aabb = Aabb::new(Vec3::new(1.5, 1.1, 2.3));
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..100_000 {
            let s = SParam([rng.gen(), rng.gen(), rng.gen(), rng.gen()]);
            let (u, w) = from_s(s, &aabb);
            let (s2, _) = to_s(&u, w);
            for k in 0..4 {
                assert!((s.0[k] - s2.0[k]).abs() < 1e-9, "dim {k}: {} vs {}", s.0[k], s2.0[k]);
            }
        }
    }

    #[test]
    fn uw_roundtrip_is_identity() {
        let aabb = Aabb::new(Vec3::new(1.5, 1.1, 2.3));
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100_000 {
            let dir = sample_uniform_sphere(&mut rng);
            let (u_pt, face_normal) = aabb_exit_intersect(Vec3::ZERO, dir, &aabb).unwrap();
            let u = ProxyPoint { u: u_pt, face_normal };
            let w = sample_uniform_sphere(&mut rng);
            let (s, _) = to_s(&u, w);
            let (u2, w2) = from_s(s, &aabb);
            assert!((u.u - u2.u).length() < 1e-9);
            assert!((w - w2).length() < 1e-9);
        }
    }

    #[test]
    fn project_back_axis_and_miss() {
        let asset = unit_sphere_asset(1.5);
        let u = ProxyPoint { u: Vec3::new(0.0, 0.0, 1.5), face_normal: Vec3::new(0.0, 0.0, 1.0) };
        let b = project_back(&u, Vec3::new(0.0, 0.0, 1.0), &asset).unwrap();
        assert!((b.x_i - Vec3::new(0.0, 0.0, 1.0)).length() < 1e-12);
        assert!((b.jac - 1.0).abs() < 1e-12);

        let corner = ProxyPoint {
            u: Vec3::new(1.5, 1.5, 1.5) - Vec3::new(1e-6, 1e-6, 0.0),
            face_normal: Vec3::new(0.0, 0.0, 1.0),
        };
        // back-ray skims the z = 1.5 plane and never reaches the sphere
        assert!(project_back(&corner, Vec3::new(1.0, -1.0, 0.0).normalized(), &asset).is_none());
    }

    #[test]
    fn project_back_roundtrip() {
        let asset = unit_sphere_asset(1.5);
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let mut checked = 0;
        for _ in 0..100_000 {
            let x = sample_uniform_sphere(&mut rng);
            // outward hemisphere = valid exit directions
            let mut w = sample_uniform_sphere(&mut rng);
            if w.dot(x) < 0.0 {
                w = -w;
            }
            if w.dot(x) < 1e-6 {
                continue;
            }
            let Some((u, _)) = to_proxy(x, x, w, &asset.aabb) else { continue };
            let b = project_back(&u, w, &asset).unwrap();
            assert!((b.x_i - x).length() < 1e-9);
            checked += 1;
        }
        assert!(checked > 90_000);
    }

    /// Central change-of-variables check: integrating a smooth g over
    /// (boundary area) x (sphere) through the s-parameterization agrees with
    /// direct area x direction sampling. g includes a (x.w)^2 factor so the
    /// estimator stays finite-variance at grazing incidence.
    #[test]
    fn change_of_variables_oracle() {
        let asset = unit_sphere_asset(1.4);
        let g = |x: Vec3, w: Vec3| {
            let c = x.dot(w);
            c * c * (1.0 + x.z * x.z)
        };

        let n = 1_000_000usize;
        // Direct route: x uniform on the unit sphere (area 4 pi), w uniform,
        // restricted to the transport domain where x is the outermost point
        // along the ray (x.w >= 0 on a convex shape); the proxy map is only
        // injective there and project_back lands there by construction.
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let (mut sum_d, mut sum_d2) = (0.0, 0.0);
        for _ in 0..n {
            let x = sample_uniform_sphere(&mut rng);
            let w = sample_uniform_sphere(&mut rng);
            let v = if x.dot(w) >= 0.0 { g(x, w) * (4.0 * PI) * (4.0 * PI) } else { 0.0 };
            sum_d += v;
            sum_d2 += v * v;
        }
        let mean_d = sum_d / n as f64;
        let var_d = (sum_d2 / n as f64 - mean_d * mean_d) / n as f64;

        // s route: s uniform in [0,1]^4. Volumes transform as
        // d(x, w) = (|n_u.w|/|n_x.w|) du dw = b.jac / jac_s ds_raw,
        // and ds_raw = RAW_S_VOLUME ds_unit.
        let (mut sum_s, mut sum_s2) = (0.0, 0.0);
        for _ in 0..n {
            let s = SParam([rng.gen(), rng.gen(), rng.gen(), rng.gen()]);
            let (u, w) = from_s(s, &asset.aabb);
            let v = match project_back(&u, w, &asset) {
                Some(b) => {
                    let (_, jac_s) = to_s(&u, w);
                    g(b.x_i, w) * b.jac * RAW_S_VOLUME / jac_s
                }
                None => 0.0,
            };
            sum_s += v;
            sum_s2 += v * v;
        }
        let mean_s = sum_s / n as f64;
        let var_s = (sum_s2 / n as f64 - mean_s * mean_s) / n as f64;

        let sigma = (var_d + var_s).sqrt();
        assert!(
            (mean_d - mean_s).abs() < 4.0 * sigma,
            "direct {mean_d} vs s-route {mean_s}, sigma {sigma}"
        );
        let _ = Rgb::BLACK;
    }
}
