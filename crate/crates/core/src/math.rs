//! Vectors, color triples, rays and sampling primitives.
//!
//! Everything downstream works in `f64`; directions are plain [`Vec3`]s kept
//! unit-length by convention (constructors and samplers normalize, consumers
//! `debug_assert` where it matters).

use std::ops::{Add, AddAssign, Div, Index, IndexMut, Mul, MulAssign, Neg, Sub};

use rand::Rng;

pub const PI: f64 = std::f64::consts::PI;
pub const TWO_PI: f64 = 2.0 * PI;
pub const FOUR_PI: f64 = 4.0 * PI;
pub const INV_FOUR_PI: f64 = 1.0 / FOUR_PI;

/// Offset applied along a ray to escape the surface it was spawned from.
pub const RAY_EPSILON: f64 = 1e-5;

#[derive(Copy, Clone, Debug, Default, PartialEq)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    #[inline]
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    #[inline]
    pub fn dot(self, rhs: Self) -> f64 {
        self.x * rhs.x + self.y * rhs.y + self.z * rhs.z
    }

    #[inline]
    pub fn cross(self, rhs: Self) -> Self {
        Self::new(
            self.y * rhs.z - self.z * rhs.y,
            self.z * rhs.x - self.x * rhs.z,
            self.x * rhs.y - self.y * rhs.x,
        )
    }

    #[inline]
    pub fn length_squared(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn length(self) -> f64 {
        self.length_squared().sqrt()
    }

    #[inline]
    pub fn normalized(self) -> Self {
        let n = self.length();
        debug_assert!(n > 0.0, "normalizing zero vector");
        self / n
    }

    #[inline]
    pub fn abs(self) -> Self {
        Self::new(self.x.abs(), self.y.abs(), self.z.abs())
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    #[inline]
    pub fn max_component(self) -> f64 {
        self.x.max(self.y).max(self.z)
    }
}

impl Index<usize> for Vec3 {
    type Output = f64;
    #[inline]
    fn index(&self, i: usize) -> &f64 {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vec3 index {i}"),
        }
    }
}

impl IndexMut<usize> for Vec3 {
    #[inline]
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        match i {
            0 => &mut self.x,
            1 => &mut self.y,
            2 => &mut self.z,
            _ => panic!("Vec3 index {i}"),
        }
    }
}

impl Add for Vec3 {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        Self::new(self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

impl AddAssign for Vec3 {
    #[inline]
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl Sub for Vec3 {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }
}

impl Neg for Vec3 {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: f64) -> Self {
        Self::new(self.x * rhs, self.y * rhs, self.z * rhs)
    }
}

impl Mul<Vec3> for f64 {
    type Output = Vec3;
    #[inline]
    fn mul(self, rhs: Vec3) -> Vec3 {
        rhs * self
    }
}

impl Div<f64> for Vec3 {
    type Output = Self;
    #[inline]
    fn div(self, rhs: f64) -> Self {
        Self::new(self.x / rhs, self.y / rhs, self.z / rhs)
    }
}

/// Linear RGB triple; also used for per-channel throughputs and coefficients.
#[derive(Copy, Clone, Debug, Default, PartialEq)]
pub struct Rgb {
    pub r: f64,
    pub g: f64,
    pub b: f64,
}

impl Rgb {
    pub const BLACK: Rgb = Rgb { r: 0.0, g: 0.0, b: 0.0 };
    pub const WHITE: Rgb = Rgb { r: 1.0, g: 1.0, b: 1.0 };

    #[inline]
    pub const fn new(r: f64, g: f64, b: f64) -> Self {
        Self { r, g, b }
    }

    #[inline]
    pub const fn splat(v: f64) -> Self {
        Self { r: v, g: v, b: v }
    }

    #[inline]
    pub fn max_component(self) -> f64 {
        self.r.max(self.g).max(self.b)
    }

    #[inline]
    pub fn mean(self) -> f64 {
        (self.r + self.g + self.b) / 3.0
    }

    #[inline]
    pub fn is_black(self) -> bool {
        self.r == 0.0 && self.g == 0.0 && self.b == 0.0
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.r.is_finite() && self.g.is_finite() && self.b.is_finite()
    }

    #[inline]
    pub fn map(self, f: impl Fn(f64) -> f64) -> Self {
        Self::new(f(self.r), f(self.g), f(self.b))
    }
}

impl Index<usize> for Rgb {
    type Output = f64;
    #[inline]
    fn index(&self, i: usize) -> &f64 {
        match i {
            0 => &self.r,
            1 => &self.g,
            2 => &self.b,
            _ => panic!("Rgb index {i}"),
        }
    }
}

impl IndexMut<usize> for Rgb {
    #[inline]
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        match i {
            0 => &mut self.r,
            1 => &mut self.g,
            2 => &mut self.b,
            _ => panic!("Rgb index {i}"),
        }
    }
}

impl Add for Rgb {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        Self::new(self.r + rhs.r, self.g + rhs.g, self.b + rhs.b)
    }
}

impl AddAssign for Rgb {
    #[inline]
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl Sub for Rgb {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.r - rhs.r, self.g - rhs.g, self.b - rhs.b)
    }
}

impl Mul for Rgb {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        Self::new(self.r * rhs.r, self.g * rhs.g, self.b * rhs.b)
    }
}

impl MulAssign for Rgb {
    #[inline]
    fn mul_assign(&mut self, rhs: Self) {
        *self = *self * rhs;
    }
}

impl Mul<f64> for Rgb {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: f64) -> Self {
        Self::new(self.r * rhs, self.g * rhs, self.b * rhs)
    }
}

impl Mul<Rgb> for f64 {
    type Output = Rgb;
    #[inline]
    fn mul(self, rhs: Rgb) -> Rgb {
        rhs * self
    }
}

impl Div<f64> for Rgb {
    type Output = Self;
    #[inline]
    fn div(self, rhs: f64) -> Self {
        Self::new(self.r / rhs, self.g / rhs, self.b / rhs)
    }
}

#[derive(Copy, Clone, Debug)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
    pub t_min: f64,
    pub t_max: f64,
}

impl Ray {
    #[inline]
    pub fn new(origin: Vec3, dir: Vec3) -> Self {
        Self { origin, dir, t_min: RAY_EPSILON, t_max: f64::INFINITY }
    }

    #[inline]
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.dir * t
    }
}

/// Right-handed orthonormal tangent frame around a unit normal.
///
/// Branches only on the sign of `n.z`; stable at both poles.
#[derive(Copy, Clone, Debug)]
pub struct Frame {
    pub t: Vec3,
    pub b: Vec3,
    pub n: Vec3,
}

impl Frame {
    pub fn from_normal(n: Vec3) -> Self {
        let s = 1.0f64.copysign(n.z);
        let a = -1.0 / (s + n.z);
        let b = n.x * n.y * a;
        let t = Vec3::new(1.0 + s * n.x * n.x * a, s * b, -s * n.x);
        let bt = Vec3::new(b, s + n.y * n.y * a, -n.y);
        Frame { t, b: bt, n }
    }

    /// Local (t, b, n) coordinates to world.
    #[inline]
    pub fn to_world(&self, v: Vec3) -> Vec3 {
        self.t * v.x + self.b * v.y + self.n * v.z
    }

    /// World direction to local (t, b, n) coordinates.
    #[inline]
    pub fn to_local(&self, v: Vec3) -> Vec3 {
        Vec3::new(v.dot(self.t), v.dot(self.b), v.dot(self.n))
    }
}

/// Deterministic tangent/bitangent pair; see [`Frame::from_normal`].
pub fn build_frame(n: Vec3) -> (Vec3, Vec3) {
    let f = Frame::from_normal(n);
    (f.t, f.b)
}

/// Uniform direction on the unit sphere, pdf 1/(4pi).
pub fn sample_uniform_sphere(rng: &mut impl Rng) -> Vec3 {
    let u: f64 = rng.gen();
    let v: f64 = rng.gen();
    let z = 1.0 - 2.0 * u;
    let r = (1.0 - z * z).max(0.0).sqrt();
    let phi = TWO_PI * v;
    Vec3::new(r * phi.cos(), r * phi.sin(), z)
}

/// Cosine-weighted direction on the local +z hemisphere, pdf cos(theta)/pi.
pub fn sample_cosine_hemisphere(rng: &mut impl Rng) -> Vec3 {
    let u: f64 = rng.gen();
    let v: f64 = rng.gen();
    let cos_theta = (1.0 - u).sqrt();
    let sin_theta = u.sqrt();
    let phi = TWO_PI * v;
    Vec3::new(sin_theta * phi.cos(), sin_theta * phi.sin(), cos_theta)
}

/// Uniform direction inside the cone of half-angle `theta_max` around +z,
/// pdf 1/(2pi(1-cos(theta_max))).
pub fn sample_uniform_cone(cos_theta_max: f64, rng: &mut impl Rng) -> Vec3 {
    let u: f64 = rng.gen();
    let v: f64 = rng.gen();
    let cos_theta = 1.0 - u * (1.0 - cos_theta_max);
    let sin_theta = (1.0 - cos_theta * cos_theta).max(0.0).sqrt();
    let phi = TWO_PI * v;
    Vec3::new(sin_theta * phi.cos(), sin_theta * phi.sin(), cos_theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn frame_at_pole_is_orthonormal() {
        let n = Vec3::new(0.0, 0.0, 1.0);
        let (t, b) = build_frame(n);
        assert!(t.dot(n).abs() < 1e-7);
        assert!(b.dot(n).abs() < 1e-7);
        assert!(t.dot(b).abs() < 1e-7);
        assert!((t.length() - 1.0).abs() < 1e-7);
        assert!((b.length() - 1.0).abs() < 1e-7);
    }

    #[test]
    fn frame_at_negative_pole_is_finite() {
        let n = Vec3::new(0.0, 0.0, -1.0);
        let (t, b) = build_frame(n);
        assert!(t.is_finite() && b.is_finite());
        assert!(t.cross(b).dot(n) > 1.0 - 1e-6);
    }

    #[test]
    fn frame_sweep_orthonormal_right_handed() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let n = sample_uniform_sphere(&mut rng);
            let (t, b) = build_frame(n);
            assert!(t.dot(n).abs() < 1e-6);
            assert!(b.dot(n).abs() < 1e-6);
            assert!(t.dot(b).abs() < 1e-6);
            // det [t b n] = t x b . n = +1 for a right-handed frame
            assert!((t.cross(b).dot(n) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn uniform_sphere_mean_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut acc = Vec3::ZERO;
        let n = 1_000_000;
        for _ in 0..n {
            acc += sample_uniform_sphere(&mut rng);
        }
        assert!((acc / n as f64).length() < 0.01);
    }

    #[test]
    fn cosine_hemisphere_z_mean() {
        // E[cos theta] under pdf cos/pi is int cos^2/pi = 2/3.
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = 1_000_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let d = sample_cosine_hemisphere(&mut rng);
            assert!(d.z >= 0.0);
            sum += d.z;
        }
        assert!((sum / n as f64 - 2.0 / 3.0).abs() < 0.01);
    }

    #[test]
    fn uniform_sphere_chi_squared_bins() {
        // 8 equal z-slices x 4 azimuth quadrants = 32 equal-solid-angle bins.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 1_000_000usize;
        let mut counts = [0u64; 32];
        for _ in 0..n {
            let d = sample_uniform_sphere(&mut rng);
            let zi = (((d.z + 1.0) / 2.0 * 8.0) as usize).min(7);
            let phi = d.y.atan2(d.x) + PI;
            let pi_ = ((phi / TWO_PI * 4.0) as usize).min(3);
            counts[zi * 4 + pi_] += 1;
        }
        let expected = n as f64 / 32.0;
        let stat: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        // chi^2 with 31 dof: p > 0.001 means stat below the 0.999 quantile.
        let dist = statrs::distribution::ChiSquared::new(31.0).unwrap();
        let p = 1.0 - statrs::distribution::ContinuousCDF::cdf(&dist, stat);
        assert!(p > 0.001, "chi-squared stat {stat}, p {p}");
    }
}
