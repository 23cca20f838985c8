//! Scene description: assets (shape + BSDF + optional homogeneous medium),
//! emitters, pinhole camera, plus the intersection and visibility queries
//! shared by the path samplers and integrators.
//!
//! Scenes load from a TOML file; all lengths are scene units, angles degrees.
//! Asset-local math assumes the shape centered at the origin; world placement
//! is a translation applied at scene level.

pub mod bsdf;
pub mod emitter;
pub mod medium;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bsdf::{bsdf_eval_pdf, bsdf_sample, fresnel_dielectric, Bsdf, BsdfSample};
pub use emitter::{emitter_pdf, sample_emitter, Emitter, EmitterSample};
pub use medium::{medium_sample_distance, phase_hg, phase_sample_hg, Medium, MediumEvent};

use crate::geometry::{intersect_sphere, Aabb, Hit};
use crate::math::{Ray, Vec3, RAY_EPSILON};

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("io error reading scene: {0}")]
    Io(#[from] std::io::Error),
    #[error("scene parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scene: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Shape {
    Sphere { radius: f64 },
}

impl Shape {
    /// Half-extent of the shape itself along each axis (asset-local).
    pub fn extent(&self) -> Vec3 {
        match *self {
            Shape::Sphere { radius } => Vec3::new(radius, radius, radius),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AssetConfig {
    pub name: String,
    #[serde(default)]
    pub center: [f64; 3],
    pub shape: Shape,
    pub bsdf: Bsdf,
    #[serde(default)]
    pub medium: Option<Medium>,
    /// Explicit bounding-box half extents (asset-local); defaults to the
    /// shape extent scaled by 1.1.
    #[serde(default)]
    pub aabb_half_extents: Option<[f64; 3]>,
    #[serde(default)]
    pub neural: bool,
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct Asset {
    pub name: String,
    pub center: Vec3,
    pub shape: Shape,
    pub bsdf: Bsdf,
    pub medium: Option<Medium>,
    pub aabb: Aabb,
    pub neural: bool,
    pub checkpoint: Option<PathBuf>,
}

impl Asset {
    /// Radius of the sampling sphere circumscribing the bounding box.
    pub fn bounding_sphere_radius(&self) -> f64 {
        self.aabb.half_extents.length()
    }

    #[inline]
    pub fn to_local(&self, p: Vec3) -> Vec3 {
        p - self.center
    }

    #[inline]
    pub fn to_world(&self, p: Vec3) -> Vec3 {
        p + self.center
    }

    /// Nearest intersection with this asset's boundary, ray in world space.
    pub fn intersect(&self, ray: &Ray, asset_id: usize) -> Option<Hit> {
        match self.shape {
            Shape::Sphere { radius } => intersect_sphere(ray, self.center, radius, asset_id),
        }
    }

    /// Intersection in asset-local coordinates (shape at the origin).
    pub fn intersect_local(&self, ray: &Ray) -> Option<Hit> {
        match self.shape {
            Shape::Sphere { radius } => intersect_sphere(ray, Vec3::ZERO, radius, 0),
        }
    }

    /// True when a ray from `origin` along `dir` escapes without re-hitting
    /// this asset (used for the direct-lobe self-visibility).
    pub fn self_visible(&self, origin: Vec3, dir: Vec3) -> bool {
        let ray = Ray::new(origin + dir * RAY_EPSILON, dir);
        self.intersect(&ray, 0).is_none()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Camera {
    pub position: [f64; 3],
    pub look_at: [f64; 3],
    #[serde(default = "default_up")]
    pub up: [f64; 3],
    /// Vertical field of view in degrees.
    pub vfov: f64,
    pub resolution: [u32; 2],
}

fn default_up() -> [f64; 3] {
    [0.0, 1.0, 0.0]
}

impl Camera {
    /// Primary ray through film coordinates (px, py) in [0,1)^2 (py measured
    /// from the top row).
    pub fn primary_ray(&self, px: f64, py: f64) -> Ray {
        let position = Vec3::new(self.position[0], self.position[1], self.position[2]);
        let look_at = Vec3::new(self.look_at[0], self.look_at[1], self.look_at[2]);
        let up = Vec3::new(self.up[0], self.up[1], self.up[2]);
        let forward = (look_at - position).normalized();
        let right = forward.cross(up).normalized();
        let up2 = right.cross(forward);
        let tan_half = (self.vfov.to_radians() * 0.5).tan();
        let aspect = self.resolution[0] as f64 / self.resolution[1] as f64;
        let x = (2.0 * px - 1.0) * tan_half * aspect;
        let y = (1.0 - 2.0 * py) * tan_half;
        Ray::new(position, (forward + right * x + up2 * y).normalized())
    }
}

#[derive(Clone, Debug, Deserialize)]
struct SceneFile {
    camera: Camera,
    #[serde(default)]
    assets: Vec<AssetConfig>,
    #[serde(default)]
    emitters: Vec<Emitter>,
}

#[derive(Clone, Debug)]
pub struct Scene {
    pub camera: Camera,
    pub assets: Vec<Asset>,
    pub emitters: Vec<Emitter>,
}

/// Either an asset surface or the surface of an area emitter.
#[derive(Copy, Clone, Debug)]
pub enum SceneHit {
    Surface(Hit),
    EmitterSurface { emitter: usize, t: f64 },
}

impl Scene {
    pub fn load(path: &Path) -> Result<Scene, SceneError> {
        let text = std::fs::read_to_string(path)?;
        Scene::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Scene, SceneError> {
        let file: SceneFile = toml::from_str(text)?;
        Scene::build(file)
    }

    fn build(file: SceneFile) -> Result<Scene, SceneError> {
        let mut assets = Vec::new();
        for cfg in file.assets {
            cfg.bsdf.validate().map_err(SceneError::Invalid)?;
            if let Some(m) = &cfg.medium {
                m.validate().map_err(SceneError::Invalid)?;
                if !cfg.bsdf.transmissive() {
                    return Err(SceneError::Invalid(format!(
                        "asset '{}' has a medium behind an opaque bsdf",
                        cfg.name
                    )));
                }
            }
            let extent = cfg.shape.extent();
            let half = match cfg.aabb_half_extents {
                Some(h) => Vec3::new(h[0], h[1], h[2]),
                None => extent * 1.1,
            };
            for i in 0..3 {
                if half[i] < extent[i] + 1e-4 {
                    return Err(SceneError::Invalid(format!(
                        "asset '{}' aabb must enclose the shape with margin >= 1e-4",
                        cfg.name
                    )));
                }
            }
            assets.push(Asset {
                name: cfg.name,
                center: Vec3::new(cfg.center[0], cfg.center[1], cfg.center[2]),
                shape: cfg.shape,
                bsdf: cfg.bsdf,
                medium: cfg.medium,
                aabb: Aabb::new(half),
                neural: cfg.neural,
                checkpoint: cfg.checkpoint,
            });
        }
        for e in &file.emitters {
            e.validate().map_err(SceneError::Invalid)?;
        }
        let scene = Scene { camera: file.camera, assets, emitters: file.emitters };
        scene.validate()?;
        Ok(scene)
    }

    fn validate(&self) -> Result<(), SceneError> {
        let neural_count = self.assets.iter().filter(|a| a.neural).count();
        if neural_count > 1 {
            return Err(SceneError::Invalid(
                "at most one asset may be flagged neural per render".into(),
            ));
        }
        // Emitters must stay outside every asset's convex bounding region.
        for asset in &self.assets {
            let guard = asset.bounding_sphere_radius();
            for e in &self.emitters {
                let ok = match e {
                    Emitter::Point { position, .. } => {
                        (Vec3::new(position[0], position[1], position[2]) - asset.center).length()
                            > guard
                    }
                    Emitter::SphereArea { center, radius, .. } => {
                        (Vec3::new(center[0], center[1], center[2]) - asset.center).length()
                            > guard + radius
                    }
                    Emitter::ConstEnv { .. } => true,
                };
                if !ok {
                    return Err(SceneError::Invalid(format!(
                        "emitter intersects the convex bounding region of asset '{}'",
                        asset.name
                    )));
                }
            }
        }
        if let Some(a) = self.assets.iter().find(|a| a.neural) {
            let cam = Vec3::new(
                self.camera.position[0],
                self.camera.position[1],
                self.camera.position[2],
            );
            if (cam - a.center).length() <= a.bounding_sphere_radius() {
                return Err(SceneError::Invalid(format!(
                    "camera lies inside the bounding region of neural asset '{}'",
                    a.name
                )));
            }
        }
        Ok(())
    }

    pub fn neural_asset_index(&self) -> Option<usize> {
        self.assets.iter().position(|a| a.neural)
    }

    /// Nearest hit among asset boundaries and area-emitter surfaces.
    pub fn intersect(&self, ray: &Ray) -> Option<SceneHit> {
        let mut best_t = ray.t_max;
        let mut best = None;
        for (i, asset) in self.assets.iter().enumerate() {
            let clipped = Ray { t_max: best_t, ..*ray };
            if let Some(hit) = asset.intersect(&clipped, i) {
                best_t = hit.t;
                best = Some(SceneHit::Surface(hit));
            }
        }
        for (i, e) in self.emitters.iter().enumerate() {
            if let Emitter::SphereArea { center, radius, .. } = e {
                let clipped = Ray { t_max: best_t, ..*ray };
                let c = Vec3::new(center[0], center[1], center[2]);
                if let Some(hit) = intersect_sphere(&clipped, c, *radius, usize::MAX) {
                    best_t = hit.t;
                    best = Some(SceneHit::EmitterSurface { emitter: i, t: hit.t });
                }
            }
        }
        best
    }

    /// True when the open segment from `origin` along `dir` of length `dist`
    /// is blocked by any geometry.
    pub fn occluded(&self, origin: Vec3, dir: Vec3, dist: f64) -> bool {
        let ray = Ray { origin, dir, t_min: RAY_EPSILON, t_max: dist - RAY_EPSILON };
        if ray.t_max <= ray.t_min {
            return false;
        }
        self.intersect(&ray).is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCENE: &str = r#"
        [camera]
        position = [0.0, 0.0, 6.0]
        look_at = [0.0, 0.0, 0.0]
        vfov = 35.0
        resolution = [64, 64]

        [[assets]]
        name = "bead"
        shape = { type = "sphere", radius = 1.0 }
        bsdf = { type = "smooth_dielectric", eta = 1.33 }
        medium = { sigma_a = [0.2, 0.2, 0.2], sigma_s = [2.0, 2.0, 2.0], hg_g = 0.0 }
        aabb_half_extents = [1.3, 1.3, 1.3]

        [[emitters]]
        type = "sphere_area"
        center = [4.0, 4.0, 2.0]
        radius = 0.8
        radiance = [12.0, 11.0, 9.0]

        [[emitters]]
        type = "const_env"
        radiance = [0.3, 0.35, 0.4]
    "#;

    #[test]
    fn parses_and_validates() {
        let scene = Scene::from_toml_str(SCENE).unwrap();
        assert_eq!(scene.assets.len(), 1);
        assert_eq!(scene.emitters.len(), 2);
        assert_eq!(scene.assets[0].aabb.half_extents, Vec3::new(1.3, 1.3, 1.3));
    }

    #[test]
    fn rejects_emitter_inside_asset_region() {
        let bad = SCENE.replace("center = [4.0, 4.0, 2.0]", "center = [0.0, 0.0, 1.5]");
        let err = Scene::from_toml_str(&bad).unwrap_err();
        assert!(matches!(err, SceneError::Invalid(_)), "{err}");
    }

    #[test]
    fn rejects_two_neural_assets() {
        let two = format!(
            "{SCENE}\n[[assets]]\nname = \"a\"\ncenter = [3.0, 0.0, 0.0]\nneural = true\nshape = {{ type = \"sphere\", radius = 0.5 }}\nbsdf = {{ type = \"lambertian\", albedo = [0.5, 0.5, 0.5] }}\n\n[[assets]]\nname = \"b\"\ncenter = [-3.0, 0.0, 0.0]\nneural = true\nshape = {{ type = \"sphere\", radius = 0.5 }}\nbsdf = {{ type = \"lambertian\", albedo = [0.5, 0.5, 0.5] }}\n"
        );
        assert!(Scene::from_toml_str(&two).is_err());
    }

    #[test]
    fn rejects_medium_behind_opaque_surface() {
        let bad = SCENE.replace(
            "bsdf = { type = \"smooth_dielectric\", eta = 1.33 }",
            "bsdf = { type = \"lambertian\", albedo = [0.5, 0.5, 0.5] }",
        );
        assert!(Scene::from_toml_str(&bad).is_err());
    }

    #[test]
    fn intersects_nearest_asset() {
        let scene = Scene::from_toml_str(SCENE).unwrap();
        let ray = Ray::new(Vec3::new(0.0, 0.0, 6.0), Vec3::new(0.0, 0.0, -1.0));
        match scene.intersect(&ray).unwrap() {
            SceneHit::Surface(hit) => {
                assert!((hit.t - 5.0).abs() < 1e-9);
                assert!(hit.entering);
            }
            _ => panic!("expected asset surface"),
        }
    }

    #[test]
    fn camera_center_ray_points_at_target() {
        let scene = Scene::from_toml_str(SCENE).unwrap();
        let ray = scene.camera.primary_ray(0.5, 0.5);
        assert!((ray.dir - Vec3::new(0.0, 0.0, -1.0)).length() < 1e-12);
    }

    #[test]
    fn occlusion_respects_segment() {
        let scene = Scene::from_toml_str(SCENE).unwrap();
        let origin = Vec3::new(0.0, 0.0, 6.0);
        let dir = Vec3::new(0.0, 0.0, -1.0);
        assert!(scene.occluded(origin, dir, 100.0));
        assert!(!scene.occluded(origin, dir, 4.0));
    }
}
