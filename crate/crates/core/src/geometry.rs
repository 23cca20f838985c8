//! Analytic shape intersection and axis-aligned bounding boxes.

use thiserror::Error;

use crate::math::{Ray, Vec3};

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("aabb exit query requires an origin strictly inside the box")]
    OriginOutsideBox,
}

/// Surface hit record. `normal` is the geometric outward normal of the shape;
/// `entering` is true when the ray arrived from the outside.
#[derive(Copy, Clone, Debug)]
pub struct Hit {
    pub point: Vec3,
    pub normal: Vec3,
    pub t: f64,
    pub asset_id: usize,
    pub entering: bool,
}

/// Axis-aligned box centered at the asset-local origin.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Aabb {
    pub half_extents: Vec3,
}

impl Aabb {
    pub fn new(half_extents: Vec3) -> Self {
        assert!(
            half_extents.x > 0.0 && half_extents.y > 0.0 && half_extents.z > 0.0,
            "aabb half-extents must be strictly positive"
        );
        Self { half_extents }
    }

    #[inline]
    pub fn contains(&self, p: Vec3) -> bool {
        p.x.abs() < self.half_extents.x
            && p.y.abs() < self.half_extents.y
            && p.z.abs() < self.half_extents.z
    }

    /// Surface area of the box boundary.
    pub fn surface_area(&self) -> f64 {
        let h = self.half_extents;
        8.0 * (h.x * h.y + h.y * h.z + h.z * h.x)
    }
}

/// Nearest intersection of `ray` with the sphere `(center, radius)` in
/// `(t_min, t_max)`, or `None`. The returned normal always points outward.
pub fn intersect_sphere(ray: &Ray, center: Vec3, radius: f64, asset_id: usize) -> Option<Hit> {
    debug_assert!(radius > 0.0);
    let oc = ray.origin - center;
    let a = ray.dir.length_squared();
    let half_b = oc.dot(ray.dir);
    let c = oc.length_squared() - radius * radius;
    let disc = half_b * half_b - a * c;
    if disc < 0.0 {
        return None;
    }
    let sqrt_d = disc.sqrt();
    let mut t = (-half_b - sqrt_d) / a;
    if t <= ray.t_min || t >= ray.t_max {
        t = (-half_b + sqrt_d) / a;
        if t <= ray.t_min || t >= ray.t_max {
            return None;
        }
    }
    let point = ray.at(t);
    let normal = (point - center) / radius;
    Some(Hit { point, normal, t, asset_id, entering: ray.dir.dot(normal) < 0.0 })
}

/// Unique exit intersection of the ray `(origin, dir)` with the box boundary,
/// plus the outward normal of the exit face. Requires `origin` strictly
/// inside; ties at edges resolve to the smallest axis index.
pub fn aabb_exit_intersect(
    origin: Vec3,
    dir: Vec3,
    aabb: &Aabb,
) -> Result<(Vec3, Vec3), GeometryError> {
    if !aabb.contains(origin) {
        return Err(GeometryError::OriginOutsideBox);
    }
    let mut t_exit = f64::INFINITY;
    let mut axis = usize::MAX;
    for i in 0..3 {
        let d = dir[i];
        if d == 0.0 {
            continue;
        }
        let bound = if d > 0.0 { aabb.half_extents[i] } else { -aabb.half_extents[i] };
        let t = (bound - origin[i]) / d;
        if t < t_exit {
            t_exit = t;
            axis = i;
        }
    }
    debug_assert!(axis != usize::MAX, "direction must be non-zero");
    let mut point = origin + dir * t_exit;
    // Pin the exit coordinate exactly onto the face so downstream checks of
    // "exactly one coordinate at +-half_extent" hold to machine precision.
    point[axis] = aabb.half_extents[axis].copysign(dir[axis]);
    let mut normal = Vec3::ZERO;
    normal[axis] = 1.0f64.copysign(dir[axis]);
    Ok((point, normal))
}
