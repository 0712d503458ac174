//! Standalone conformity checks on decoded triangles.
//!
//! Vertices are matched after quantizing to `1e-9` of the largest
//! coordinate magnitude. A conforming triangulation uses every edge once
//! on the boundary and twice inside, and no vertex lies strictly inside
//! another triangle's edge.

use std::collections::HashMap;

use glam::DVec3;
use serde::Serialize;

use crate::bisector::Triangle;
use crate::mesh::NULL;
use crate::state::{Edge, TriangulationState};

pub const RELATIVE_QUANTUM: f64 = 1e-9;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ConformityReport {
    pub triangles: usize,
    pub edges: usize,
    /// Edges used by a single triangle.
    pub open_edges: usize,
    /// Open edges with another vertex strictly inside them.
    pub t_junctions: usize,
    /// Edges used by more than two triangles.
    pub overshared: usize,
    /// Neighbor pointers whose triangles do not share the pointed edge.
    pub pointer_mismatches: usize,
    pub pointer_violations: usize,
}

impl ConformityReport {
    pub fn is_conforming(&self) -> bool {
        self.t_junctions == 0 && self.overshared == 0 && self.pointer_mismatches == 0 && self.pointer_violations == 0
    }
}

fn quantum(triangles: &[Triangle]) -> f64 {
    let scale = triangles
        .iter()
        .flatten()
        .map(|p| p.abs().max_element())
        .fold(1.0, f64::max);
    RELATIVE_QUANTUM * scale
}

type Key = [i64; 3];

fn key(p: DVec3, q: f64) -> Key {
    p.to_array().map(|c| (c / q).round() as i64)
}

fn strictly_inside(p: DVec3, a: DVec3, b: DVec3, tol: f64) -> bool {
    let ab = b - a;
    let len2 = ab.length_squared();
    if len2 == 0.0 {
        return false;
    }
    let s = (p - a).dot(ab) / len2;
    let interior = s * len2.sqrt();
    interior > tol && (1.0 - s) * len2.sqrt() > tol && (a + ab * s).distance(p) <= tol
}

/// Edge-pairing check over a triangle soup.
pub fn check_triangles(triangles: &[Triangle]) -> ConformityReport {
    let q = quantum(triangles);
    let mut edges: HashMap<(Key, Key), (usize, [DVec3; 2])> = HashMap::new();
    for t in triangles {
        for i in 0..3 {
            let (a, b) = (t[i], t[(i + 1) % 3]);
            let (ka, kb) = (key(a, q), key(b, q));
            let k = if ka <= kb { (ka, kb) } else { (kb, ka) };
            edges.entry(k).or_insert((0, [a, b])).0 += 1;
        }
    }
    let open: Vec<[DVec3; 2]> = edges.values().filter(|e| e.0 == 1).map(|e| e.1).collect();
    let mut corners: Vec<DVec3> = open.iter().flatten().copied().collect();
    corners.sort_by(|a, b| a.to_array().partial_cmp(&b.to_array()).expect("finite"));
    corners.dedup_by(|a, b| key(*a, q) == key(*b, q));
    let tol = 4.0 * q;
    let t_junctions = open
        .iter()
        .filter(|[a, b]| corners.iter().any(|&p| strictly_inside(p, *a, *b, tol)))
        .count();
    ConformityReport {
        triangles: triangles.len(),
        edges: edges.len(),
        open_edges: open.len(),
        t_junctions,
        overshared: edges.values().filter(|e| e.0 > 2).count(),
        ..Default::default()
    }
}

fn edge_points(t: &Triangle, e: Edge) -> [DVec3; 2] {
    match e {
        Edge::Base => [t[0], t[1]],
        Edge::Next => [t[1], t[2]],
        Edge::Prev => [t[2], t[0]],
    }
}

/// Edge pairing plus agreement of every neighbor pointer with geometry:
/// the shorter of the two pointed edges must lie on the longer one.
pub fn check_state(state: &TriangulationState) -> ConformityReport {
    let tris = state.triangles();
    let soup: Vec<Triangle> = tris.iter().map(|(_, t)| *t).collect();
    let mut report = check_triangles(&soup);
    let tol = 4.0 * quantum(&soup);
    let by_slot: HashMap<u32, Triangle> = state.live_slots().into_iter().zip(soup.iter().copied()).collect();
    for (&slot, t) in &by_slot {
        for e in Edge::ALL {
            let n = state.neighbor(slot, e);
            if n == NULL {
                continue;
            }
            let (Some(tn), Some(back)) = (by_slot.get(&(n as u32)), state.edge_towards(n as u32, slot)) else {
                continue;
            };
            let mine = edge_points(t, e);
            let theirs = edge_points(tn, back);
            let len = |s: &[DVec3; 2]| s[0].distance(s[1]);
            let (short, long) = if len(&mine) <= len(&theirs) { (mine, theirs) } else { (theirs, mine) };
            let on = |p: DVec3| {
                p.distance(long[0]) <= tol || p.distance(long[1]) <= tol || strictly_inside(p, long[0], long[1], tol)
            };
            if !(on(short[0]) && on(short[1])) {
                report.pointer_mismatches += 1;
            }
        }
    }
    report.pointer_violations = state.pointer_violations().len();
    report
}
