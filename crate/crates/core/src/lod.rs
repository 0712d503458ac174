//! Screen-space level-of-detail verdicts.
//!
//! A bisector splits when its projected area exceeds `split_factor` times
//! the pixel target and merges when it falls below `merge_factor` times the
//! target. A split halves the area, so the two thresholds must be more than
//! a factor of two apart or a triangle would flip every epoch.

use std::f64::consts::TAU;
use std::sync::Arc;

use glam::{DVec2, DVec3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bisector::{bisector_vertices, HeapId, RootLayout, Triangle};
use crate::mesh::HalfedgeMesh;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LodDecision {
    Split,
    Keep,
    Merge,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LodError {
    #[error("cannot project the origin onto the planet")]
    Degenerate,
    #[error("camera path has no keyframes")]
    EmptyPath,
    #[error("camera path keyframes are not sorted by time")]
    UnsortedPath,
    #[error("invalid camera: {0}")]
    Camera(String),
    #[error("invalid lod config: {0}")]
    Config(String),
}

/// Pinhole camera. `forward` and `up` are orthonormal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub position: DVec3,
    pub forward: DVec3,
    pub up: DVec3,
    /// Vertical field of view in radians.
    pub fov_y: f64,
    pub width: u32,
    pub height: u32,
    pub near: f64,
}

impl Camera {
    pub fn new(position: DVec3, forward: DVec3, up: DVec3, fov_y: f64, width: u32, height: u32, near: f64) -> Result<Self, LodError> {
        let cam = Self { position, forward, up, fov_y, width, height, near };
        cam.check()?;
        Ok(cam)
    }

    /// Camera at `position` looking at `target`, `up_hint` fixing the roll.
    pub fn look_at(position: DVec3, target: DVec3, up_hint: DVec3, fov_y: f64, width: u32, height: u32) -> Result<Self, LodError> {
        let forward = (target - position).normalize_or_zero();
        let up = (up_hint - forward * up_hint.dot(forward)).normalize_or_zero();
        Self::new(position, forward, up, fov_y, width, height, 0.1)
    }

    pub fn check(&self) -> Result<(), LodError> {
        let bad = |m: &str| Err(LodError::Camera(m.to_owned()));
        if (self.forward.length() - 1.0).abs() > 1e-9 || (self.up.length() - 1.0).abs() > 1e-9 {
            return bad("forward and up must be unit vectors");
        }
        if self.forward.dot(self.up).abs() > 1e-9 {
            return bad("forward and up must be orthogonal");
        }
        if !(self.fov_y > 0.0 && self.fov_y < std::f64::consts::PI) {
            return bad("field of view must lie in (0, pi)");
        }
        if self.width == 0 || self.height == 0 {
            return bad("viewport must be positive");
        }
        if !(self.near > 0.0) {
            return bad("near plane must be positive");
        }
        Ok(())
    }

    pub fn right(&self) -> DVec3 {
        self.forward.cross(self.up)
    }

    /// Focal length in pixels.
    pub fn focal(&self) -> f64 {
        0.5 * self.height as f64 / (0.5 * self.fov_y).tan()
    }

    /// Pixel coordinates of `p`, y down. Points nearer than the near plane
    /// are projected as if they sat on it.
    pub fn project(&self, p: DVec3) -> DVec2 {
        let d = p - self.position;
        let z = d.dot(self.forward).max(self.near);
        let f = self.focal() / z;
        DVec2::new(
            0.5 * self.width as f64 + d.dot(self.right()) * f,
            0.5 * self.height as f64 - d.dot(self.up) * f,
        )
    }

    pub fn screen_area(&self, t: &Triangle) -> f64 {
        let [a, b, c] = t.map(|p| self.project(p));
        0.5 * (b - a).perp_dot(c - a).abs()
    }

    /// Inward-facing planes `(n, o)` with `n.dot(p) + o >= 0` inside: near,
    /// left, right, bottom, top.
    pub fn frustum_planes(&self) -> [(DVec3, f64); 5] {
        let half_h = (0.5 * self.fov_y).tan();
        let half_w = half_h * self.width as f64 / self.height as f64;
        let (f, r, u) = (self.forward, self.right(), self.up);
        let plane = |n: DVec3| {
            let n = n.normalize();
            (n, -n.dot(self.position))
        };
        let (nn, no) = plane(f);
        [
            (nn, no - self.near),
            plane(r + f * half_w),
            plane(-r + f * half_w),
            plane(u + f * half_h),
            plane(-u + f * half_h),
        ]
    }

    /// Whether a ball lies entirely outside one frustum plane.
    pub fn ball_outside(&self, centre: DVec3, radius: f64) -> bool {
        self.frustum_planes()
            .iter()
            .any(|&(n, o)| n.dot(centre) + o < -radius)
    }
}

/// Vertex offset applied after the planet projection, e.g. waves or
/// terrain. `bound` caps the offset length so culling stays conservative.
pub trait Displacement: Send + Sync {
    fn displace(&self, p: DVec3) -> DVec3;
    fn bound(&self) -> f64;
}

/// Product of two sine waves along the surface normal: radial in planet
/// mode, `+z` otherwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SineWaves {
    pub amplitude: f64,
    pub wavelength: f64,
    pub radial: bool,
}

impl Displacement for SineWaves {
    fn displace(&self, p: DVec3) -> DVec3 {
        let k = TAU / self.wavelength;
        let h = self.amplitude * (k * p.x).sin() * (k * p.y).sin();
        let n = if self.radial { p.normalize_or_zero() } else { DVec3::Z };
        p + n * h
    }

    fn bound(&self) -> f64 {
        self.amplitude.abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LodConfig {
    pub target_area_px: f64,
    pub split_factor: f64,
    pub merge_factor: f64,
    pub planet_mode: bool,
    /// Meters.
    pub planet_radius: f64,
    pub frustum_cull: bool,
    /// Verdicts never split beyond this depth. `None` leaves only the
    /// id-width limit.
    pub max_depth: Option<u32>,
}

impl Default for LodConfig {
    fn default() -> Self {
        Self {
            target_area_px: 49.0,
            split_factor: 2.0,
            merge_factor: 0.25,
            planet_mode: false,
            planet_radius: 1.0,
            frustum_cull: true,
            max_depth: None,
        }
    }
}

impl LodConfig {
    pub fn check(&self) -> Result<(), LodError> {
        let bad = |m: &str| Err(LodError::Config(m.to_owned()));
        if !(self.target_area_px > 0.0) {
            return bad("target area must be positive");
        }
        if !(self.split_factor > 1.0) {
            return bad("split factor must exceed 1");
        }
        if !(self.merge_factor > 0.0 && self.merge_factor < 1.0) {
            return bad("merge factor must lie in (0, 1)");
        }
        if !(self.merge_factor < 0.5 * self.split_factor) {
            return bad("merge threshold must stay below half the split threshold");
        }
        if self.planet_mode && !(self.planet_radius > 0.0) {
            return bad("planet radius must be positive");
        }
        Ok(())
    }

    pub fn split_threshold(&self) -> f64 {
        self.split_factor * self.target_area_px
    }

    pub fn merge_threshold(&self) -> f64 {
        self.merge_factor * self.target_area_px
    }
}

/// `radius * p / |p|`.
pub fn project_planet(radius: f64, p: DVec3) -> Result<DVec3, LodError> {
    let len = p.length();
    if len == 0.0 || !len.is_finite() {
        return Err(LodError::Degenerate);
    }
    Ok(p * (radius / len))
}

/// Everything a verdict depends on. Pure and shareable across threads.
#[derive(Clone)]
pub struct Lod {
    pub config: LodConfig,
    pub camera: Camera,
    mesh: Arc<HalfedgeMesh>,
    layout: RootLayout,
    displacement: Option<Arc<dyn Displacement>>,
}

impl std::fmt::Debug for Lod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Lod")
            .field("config", &self.config)
            .field("camera", &self.camera)
            .field("displaced", &self.displacement.is_some())
            .finish()
    }
}

impl Lod {
    pub fn new(config: LodConfig, camera: Camera, mesh: Arc<HalfedgeMesh>) -> Self {
        let layout = RootLayout::new(mesh.halfedge_count() as u32);
        Self { config, camera, mesh, layout, displacement: None }
    }

    pub fn with_displacement(mut self, d: Arc<dyn Displacement>) -> Self {
        self.displacement = Some(d);
        self
    }

    pub fn layout(&self) -> &RootLayout {
        &self.layout
    }

    pub fn depth_limit(&self) -> u32 {
        let hard = self.layout.max_depth();
        self.config.max_depth.map_or(hard, |d| d.min(hard))
    }

    pub fn world_point(&self, p: DVec3) -> DVec3 {
        let p = if self.config.planet_mode {
            project_planet(self.config.planet_radius, p).unwrap_or(p)
        } else {
            p
        };
        match &self.displacement {
            Some(d) => d.displace(p),
            None => p,
        }
    }

    /// Triangle of `id` as seen by the camera: decoded, projected, displaced.
    pub fn world_triangle(&self, id: HeapId) -> Triangle {
        bisector_vertices(&self.mesh, &self.layout, id).map(|p| self.world_point(p))
    }

    /// Conservative visibility: only reports `true` when no part of the
    /// surface patch under the bisector can be on screen.
    pub fn is_culled(&self, t: &Triangle) -> bool {
        let centre = (t[0] + t[1] + t[2]) / 3.0;
        let mut radius = t.iter().map(|p| p.distance(centre)).fold(0.0, f64::max);
        radius += self.displacement.as_ref().map_or(0.0, |d| 2.0 * d.bound());
        if self.config.planet_mode {
            // descendants bulge out to the sphere
            let r = self.config.planet_radius;
            radius += (r - centre.length()).max(0.0);
            let cam = self.camera.position;
            let dist = cam.length();
            if dist > r {
                let horizon = r * r / dist;
                if centre.dot(cam / dist) + radius < horizon {
                    return true;
                }
            }
        }
        self.camera.ball_outside(centre, radius)
    }

    /// Split above the split threshold, merge below the merge threshold or
    /// when culled. A merge is only granted if the parent would not split
    /// right back, which culling alone does not guarantee.
    pub fn decide(&self, id: HeapId) -> LodDecision {
        match self.raw_verdict(id) {
            LodDecision::Merge => match id.parent() {
                Some(p) if self.layout.depth(id) > 0 && self.raw_verdict(p) == LodDecision::Split => LodDecision::Keep,
                _ => LodDecision::Merge,
            },
            v => v,
        }
    }

    fn raw_verdict(&self, id: HeapId) -> LodDecision {
        let t = self.world_triangle(id);
        if self.config.frustum_cull && self.is_culled(&t) {
            return LodDecision::Merge;
        }
        let area = self.camera.screen_area(&t);
        if area > self.config.split_threshold() && self.layout.depth(id) < self.depth_limit() {
            LodDecision::Split
        } else if area < self.config.merge_threshold() {
            LodDecision::Merge
        } else {
            LodDecision::Keep
        }
    }
}

/// Verdict for one bisector without a displacement hook.
pub fn decide(config: &LodConfig, camera: &Camera, mesh: &Arc<HalfedgeMesh>, id: HeapId) -> LodDecision {
    Lod::new(*config, *camera, Arc::clone(mesh)).decide(id)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub t: f64,
    pub position: [f64; 3],
    pub forward: [f64; 3],
    pub up: [f64; 3],
    /// Vertical field of view in radians.
    pub fov: f64,
}

pub fn parse_path(json: &str) -> Result<Vec<Keyframe>, serde_json::Error> {
    serde_json::from_str(json)
}

/// Camera at time `t`: positions interpolate linearly, orientations by
/// normalized lerp. Times outside the path clamp to its ends.
pub fn camera_path_at(path: &[Keyframe], t: f64, width: u32, height: u32, near: f64) -> Result<Camera, LodError> {
    let first = path.first().ok_or(LodError::EmptyPath)?;
    if path.windows(2).any(|w| w[1].t < w[0].t) {
        return Err(LodError::UnsortedPath);
    }
    let at = |k: &Keyframe| {
        Camera::new(k.position.into(), DVec3::from(k.forward).normalize(), DVec3::from(k.up).normalize(), k.fov, width, height, near)
    };
    if t <= first.t {
        return at(first);
    }
    let last = path.last().expect("non-empty");
    if t >= last.t {
        return at(last);
    }
    let i = path.partition_point(|k| k.t <= t) - 1;
    let (a, b) = (&path[i], &path[i + 1]);
    if t == a.t {
        return at(a);
    }
    let s = (t - a.t) / (b.t - a.t);
    let lerp = |x: [f64; 3], y: [f64; 3]| DVec3::from(x).lerp(DVec3::from(y), s);
    let forward = lerp(a.forward, b.forward).normalize();
    let up = lerp(a.up, b.up);
    let up = (up - forward * up.dot(forward)).normalize();
    Camera::new(lerp(a.position, b.position), forward, up, a.fov + (b.fov - a.fov) * s, width, height, near)
}
