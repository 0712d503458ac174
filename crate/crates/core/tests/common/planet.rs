//! Ground-to-space zoom over a dodecahedron planet.

use std::sync::Arc;

use cbt_tess::bisector::bisector_vertices_f32;
use cbt_tess::conformity::check_state;
use cbt_tess::lod::{camera_path_at, project_planet, Keyframe};
use cbt_tess::pipeline::Pipeline;
use cbt_tess::{shapes, Camera, Lod, LodConfig, TriangulationState};
use glam::{DVec3, Vec3};

pub const EARTH_RADIUS: f64 = 6.371e6;
pub const WIDTH: u32 = 1280;
pub const HEIGHT: u32 = 720;

#[derive(Debug, Clone, Copy, Default)]
pub struct ZoomFrame {
    pub altitude: f64,
    pub live: u32,
    pub max_depth: u32,
    pub changes: u32,
    pub oom: u32,
    pub covered_px: f64,
    /// Live bisectors at depth 35 or more.
    pub deep: usize,
    pub deep_zero_area_f32: usize,
    pub deep_zero_area_f64: usize,
    pub conforming: bool,
    pub max_chain_allocations: u32,
    pub min_chain_slack: Option<i64>,
}

/// Unit direction the camera descends along; off every mesh symmetry axis.
pub fn nadir() -> DVec3 {
    DVec3::new(0.31, 0.17, 0.93).normalize()
}

/// Keyframes descending geometrically from `top` to `bottom` altitude in
/// `duration` seconds, looking straight down.
pub fn descent(top: f64, bottom: f64, duration: f64, keys: usize) -> Vec<Keyframe> {
    geometric(top, bottom, 0.0, duration, keys)
}

/// Descent, a hold at `bottom`, then the mirrored ascent back to `top`.
pub fn round_trip(top: f64, bottom: f64, leg: f64, hold: f64, keys: usize) -> Vec<Keyframe> {
    let mut path = geometric(top, bottom, 0.0, leg, keys);
    path.extend(geometric(bottom, top, leg + hold, leg, keys));
    path
}

fn geometric(from: f64, to: f64, start: f64, duration: f64, keys: usize) -> Vec<Keyframe> {
    let n = nadir();
    let up = n.cross(DVec3::X).normalize();
    (0..keys)
        .map(|i| {
            let s = i as f64 / (keys - 1) as f64;
            let h = from * (to / from).powf(s);
            let p = n * (EARTH_RADIUS + h);
            Keyframe { t: start + s * duration, position: p.to_array(), forward: (-n).to_array(), up: up.to_array(), fov: 1.0 }
        })
        .collect()
}

/// Pixels whose primary ray hits the sphere, sampled on a `step` grid.
pub fn covered_pixels(cam: &Camera, radius: f64, step: u32) -> f64 {
    let f = cam.focal();
    let mut hits = 0u64;
    let mut total = 0u64;
    for y in (step / 2..cam.height).step_by(step as usize) {
        for x in (step / 2..cam.width).step_by(step as usize) {
            let dx = x as f64 + 0.5 - 0.5 * cam.width as f64;
            let dy = 0.5 * cam.height as f64 - (y as f64 + 0.5);
            let d = (cam.forward * f + cam.right() * dx + cam.up * dy).normalize();
            let b = cam.position.dot(d);
            let c = cam.position.length_squared() - radius * radius;
            total += 1;
            if b * b - c >= 0.0 && -b + (b * b - c).sqrt() > 0.0 {
                hits += 1;
            }
        }
    }
    hits as f64 / total as f64 * (cam.width * cam.height) as f64
}

fn zero_area(t: [DVec3; 3]) -> bool {
    (t[1] - t[0]).cross(t[2] - t[0]).length_squared() == 0.0
}

/// Single-precision decode and planet projection.
fn planet_f32(t: [Vec3; 3], radius: f32) -> [DVec3; 3] {
    t.map(|p| (p.normalize() * radius).as_dvec3())
}

pub fn run_zoom(depth: u32, config: LodConfig, path: &[Keyframe], frames: usize, hold: usize, threads: usize) -> Vec<ZoomFrame> {
    let mesh = Arc::new(shapes::dodecahedron());
    let mut st = TriangulationState::new(mesh.clone(), depth).unwrap();
    let pipe = Pipeline::new(threads).unwrap();
    let end = path.last().unwrap().t;
    let mut out = Vec::new();
    for i in 0..frames + hold {
        let t = end * (i.min(frames - 1)) as f64 / (frames - 1) as f64;
        let probe = camera_path_at(path, t, WIDTH, HEIGHT, 1.0).unwrap();
        let altitude = probe.position.length() - EARTH_RADIUS;
        let cam = Camera { near: (0.1 * altitude).max(1e-3), ..probe };
        let lod = Lod::new(config, cam, mesh.clone());
        let s = pipe.update(&mut st, |id| lod.decide(id));
        let mut frame = ZoomFrame {
            altitude,
            live: st.live_count(),
            max_depth: st.max_live_depth(),
            changes: s.changes(),
            oom: s.splits_rejected_oom + s.merges_rejected_oom,
            covered_px: covered_pixels(&cam, config.planet_radius, 8),
            conforming: check_state(&st).is_conforming(),
            max_chain_allocations: s.max_chain_allocations,
            min_chain_slack: s.min_chain_slack,
            ..Default::default()
        };
        for slot in st.live_slots() {
            let id = st.id_of(slot);
            if st.layout().depth(id) < 35 {
                continue;
            }
            frame.deep += 1;
            let f64_tri = cbt_tess::bisector::bisector_vertices(&mesh, st.layout(), id)
                .map(|p| project_planet(config.planet_radius, p).unwrap());
            frame.deep_zero_area_f64 += zero_area(f64_tri) as usize;
            let f32_tri = planet_f32(bisector_vertices_f32(&mesh, st.layout(), id), config.planet_radius as f32);
            frame.deep_zero_area_f32 += zero_area(f32_tri) as usize;
        }
        out.push(frame);
    }
    out
}
