//! Halfedge meshes in the directed-edge layout: six flat per-halfedge
//! operator arrays plus vertex positions.
//!
//! Halfedges of a face are stored contiguously in face order, so the
//! halfedge leaving the `i`-th corner of face `f` sits at `offset(f) + i`.
//! `twin` is `-1` on the boundary.

use std::collections::HashMap;
use std::fmt;
use std::io::BufRead;

use glam::DVec3;
use serde::Serialize;
use thiserror::Error;

pub const NULL: i32 = -1;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("mesh has no faces")]
    Empty,
    #[error("face {face} is degenerate ({distinct} distinct vertices)")]
    DegenerateFace { face: usize, distinct: usize },
    #[error("non-manifold edge {edge} between vertices {a} and {b}")]
    NonManifoldEdge { edge: usize, a: u32, b: u32 },
    #[error("inconsistent winding on edge {edge} between vertices {a} and {b}")]
    InconsistentWinding { edge: usize, a: u32, b: u32 },
    #[error("halfedge {0} out of range")]
    HalfedgeRange(u32),
    #[error("mesh failed validation: {0}")]
    Invalid(Violation),
}

/// One broken halfedge identity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub rule: &'static str,
    pub halfedge: usize,
    pub expected: i64,
    pub actual: i64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} violated at h={}: expected {}, found {}",
            self.rule, self.halfedge, self.expected, self.actual
        )
    }
}

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct MeshStats {
    #[serde(rename = "H")]
    pub halfedges: usize,
    #[serde(rename = "V")]
    pub vertices: usize,
    pub faces: usize,
    pub boundary_halfedges: usize,
    pub max_degree: usize,
}

#[derive(Debug, Clone)]
pub struct HalfedgeMesh {
    pub twin: Vec<i32>,
    pub next: Vec<i32>,
    pub prev: Vec<i32>,
    pub vert: Vec<i32>,
    pub edge: Vec<i32>,
    pub face: Vec<i32>,
    pub positions: Vec<DVec3>,
}

impl HalfedgeMesh {
    /// Builds a mesh from polygon faces given as 0-based vertex indices.
    pub fn from_polygons(positions: Vec<DVec3>, faces: &[Vec<u32>]) -> Result<Self, MeshError> {
        if faces.is_empty() {
            return Err(MeshError::Empty);
        }
        let h_count: usize = faces.iter().map(Vec::len).sum();
        let mut mesh = HalfedgeMesh {
            twin: vec![NULL; h_count],
            next: Vec::with_capacity(h_count),
            prev: Vec::with_capacity(h_count),
            vert: Vec::with_capacity(h_count),
            edge: vec![NULL; h_count],
            face: Vec::with_capacity(h_count),
            positions,
        };
        let v_count = mesh.positions.len();
        for (f, poly) in faces.iter().enumerate() {
            let mut distinct = poly.clone();
            distinct.sort_unstable();
            distinct.dedup();
            if distinct.len() < 3 || distinct.len() != poly.len() {
                return Err(MeshError::DegenerateFace {
                    face: f,
                    distinct: distinct.len(),
                });
            }
            if let Some(&v) = poly.iter().find(|&&v| v as usize >= v_count) {
                return Err(MeshError::Parse {
                    line: 0,
                    message: format!("face {f} references missing vertex {v}"),
                });
            }
            let base = mesh.vert.len() as i32;
            let n = poly.len() as i32;
            for (i, &v) in poly.iter().enumerate() {
                let i = i as i32;
                mesh.vert.push(v as i32);
                mesh.next.push(base + (i + 1) % n);
                mesh.prev.push(base + (i + n - 1) % n);
                mesh.face.push(f as i32);
            }
        }

        // undirected edge -> halfedges on it
        let mut edges: HashMap<(u32, u32), Vec<usize>> = HashMap::with_capacity(h_count);
        let mut order: Vec<(u32, u32)> = Vec::new();
        for h in 0..h_count {
            let a = mesh.vert[h] as u32;
            let b = mesh.vert[mesh.next[h] as usize] as u32;
            let key = (a.min(b), a.max(b));
            let entry = edges.entry(key).or_default();
            if entry.is_empty() {
                order.push(key);
            }
            entry.push(h);
        }
        for (edge_id, key) in order.iter().enumerate() {
            let hs = &edges[key];
            match hs.as_slice() {
                [h] => mesh.edge[*h] = edge_id as i32,
                [h0, h1] => {
                    if mesh.vert[*h0] == mesh.vert[*h1] {
                        return Err(MeshError::InconsistentWinding {
                            edge: edge_id,
                            a: key.0,
                            b: key.1,
                        });
                    }
                    mesh.twin[*h0] = *h1 as i32;
                    mesh.twin[*h1] = *h0 as i32;
                    mesh.edge[*h0] = edge_id as i32;
                    mesh.edge[*h1] = edge_id as i32;
                }
                _ => {
                    return Err(MeshError::NonManifoldEdge {
                        edge: edge_id,
                        a: key.0,
                        b: key.1,
                    })
                }
            }
        }
        if let Some(v) = mesh.validate().into_iter().next() {
            return Err(MeshError::Invalid(v));
        }
        Ok(mesh)
    }

    /// Parses ASCII OBJ. Only `v` and `f` records are read; face corners may
    /// carry `/vt/vn` suffixes and negative (relative) indices.
    pub fn load_obj<R: BufRead>(source: R) -> Result<Self, MeshError> {
        let mut positions = Vec::new();
        let mut faces = Vec::new();
        for (lineno, line) in source.lines().enumerate() {
            let line = line?;
            let lineno = lineno + 1;
            let mut tokens = line.split_whitespace();
            match tokens.next() {
                Some("v") => {
                    let mut c = [0.0f64; 3];
                    for slot in &mut c {
                        let tok = tokens.next().ok_or_else(|| MeshError::Parse {
                            line: lineno,
                            message: "vertex needs three coordinates".into(),
                        })?;
                        *slot = tok.parse().map_err(|_| MeshError::Parse {
                            line: lineno,
                            message: format!("bad coordinate {tok:?}"),
                        })?;
                    }
                    positions.push(DVec3::from_array(c));
                }
                Some("f") => {
                    let mut poly = Vec::new();
                    for tok in tokens {
                        let idx = tok.split('/').next().unwrap_or("");
                        let idx: i64 = idx.parse().map_err(|_| MeshError::Parse {
                            line: lineno,
                            message: format!("bad face index {tok:?}"),
                        })?;
                        let resolved = match idx {
                            0 => None,
                            i if i > 0 => Some(i - 1),
                            i => Some(positions.len() as i64 + i),
                        };
                        match resolved {
                            Some(i) if i >= 0 && (i as usize) < positions.len() => poly.push(i as u32),
                            _ => {
                                return Err(MeshError::Parse {
                                    line: lineno,
                                    message: format!("face index {idx} does not name a vertex"),
                                })
                            }
                        }
                    }
                    faces.push(poly);
                }
                _ => {}
            }
        }
        Self::from_polygons(positions, &faces)
    }

    pub fn halfedge_count(&self) -> usize {
        self.vert.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.positions.len()
    }

    pub fn face_count(&self) -> usize {
        self.face.iter().map(|&f| f as usize + 1).max().unwrap_or(0)
    }

    pub fn next_of(&self, h: usize) -> usize {
        self.next[h] as usize
    }

    pub fn position_of(&self, h: usize) -> DVec3 {
        self.positions[self.vert[h] as usize]
    }

    /// Checks every operator identity; empty iff the mesh is consistent.
    pub fn validate(&self) -> Vec<Violation> {
        let h_count = self.halfedge_count();
        let mut out = Vec::new();
        let v_count = self.vertex_count() as i64;
        let in_range = |x: i32| x >= 0 && (x as usize) < h_count;
        if h_count < 3 {
            out.push(Violation {
                rule: "H >= 3",
                halfedge: 0,
                expected: 3,
                actual: h_count as i64,
            });
        }
        for h in 0..h_count {
            let (n, p, t, v) = (self.next[h], self.prev[h], self.twin[h], self.vert[h]);
            if !in_range(n) {
                out.push(Violation { rule: "next in range", halfedge: h, expected: 0, actual: n as i64 });
                continue;
            }
            if !in_range(p) {
                out.push(Violation { rule: "prev in range", halfedge: h, expected: 0, actual: p as i64 });
                continue;
            }
            let pn = self.prev[n as usize];
            if pn != h as i32 {
                out.push(Violation { rule: "prev(next(h)) = h", halfedge: h, expected: h as i64, actual: pn as i64 });
            }
            let np = self.next[p as usize];
            if np != h as i32 {
                out.push(Violation { rule: "next(prev(h)) = h", halfedge: h, expected: h as i64, actual: np as i64 });
            }
            if t != NULL {
                if !in_range(t) {
                    out.push(Violation { rule: "twin in range", halfedge: h, expected: 0, actual: t as i64 });
                } else if self.twin[t as usize] != h as i32 {
                    out.push(Violation {
                        rule: "twin(twin(h)) = h",
                        halfedge: h,
                        expected: h as i64,
                        actual: self.twin[t as usize] as i64,
                    });
                }
            }
            if v < 0 || v as i64 >= v_count {
                out.push(Violation { rule: "vert in range", halfedge: h, expected: v_count - 1, actual: v as i64 });
            }
            if self.face[n as usize] != self.face[h] {
                out.push(Violation {
                    rule: "face(next(h)) = face(h)",
                    halfedge: h,
                    expected: self.face[h] as i64,
                    actual: self.face[n as usize] as i64,
                });
            }
        }
        // next-cycles must not escape their face or loop forever
        if out.is_empty() {
            for h in 0..h_count {
                let mut steps = 0;
                let mut g = self.next_of(h);
                while g != h {
                    steps += 1;
                    if steps > h_count {
                        out.push(Violation { rule: "next cycle closes", halfedge: h, expected: h as i64, actual: g as i64 });
                        break;
                    }
                    g = self.next_of(g);
                }
            }
        }
        out
    }

    /// Root triangle of halfedge `h`: its two endpoints and the mean of its
    /// face's vertices.
    pub fn root_bisector_vertices(&self, h: usize) -> Result<[DVec3; 3], MeshError> {
        if h >= self.halfedge_count() {
            return Err(MeshError::HalfedgeRange(h as u32));
        }
        Ok(self.root_vertices_unchecked(h))
    }

    pub(crate) fn root_vertices_unchecked(&self, h: usize) -> [DVec3; 3] {
        let next = self.next_of(h);
        let v0 = self.position_of(h);
        let v1 = self.position_of(next);
        let mut v2 = v0;
        let mut n = 1.0;
        let mut g = next;
        while g != h {
            v2 += self.position_of(g);
            n += 1.0;
            g = self.next_of(g);
        }
        [v0, v1, v2 / n]
    }

    pub fn face_degree(&self, h: usize) -> usize {
        let mut n = 1;
        let mut g = self.next_of(h);
        while g != h {
            n += 1;
            g = self.next_of(g);
        }
        n
    }

    pub fn stats(&self) -> MeshStats {
        MeshStats {
            halfedges: self.halfedge_count(),
            vertices: self.vertex_count(),
            faces: self.face_count(),
            boundary_halfedges: self.twin.iter().filter(|&&t| t == NULL).count(),
            max_degree: (0..self.halfedge_count()).map(|h| self.face_degree(h)).max().unwrap_or(0),
        }
    }

    /// Writes the polygon mesh back out as OBJ.
    pub fn to_obj(&self) -> String {
        let mut out = String::new();
        for p in &self.positions {
            out.push_str(&format!("v {} {} {}\n", p.x, p.y, p.z));
        }
        let mut seen = vec![false; self.face_count()];
        for h in 0..self.halfedge_count() {
            let f = self.face[h] as usize;
            if seen[f] {
                continue;
            }
            seen[f] = true;
            out.push('f');
            let mut g = h;
            loop {
                out.push_str(&format!(" {}", self.vert[g] + 1));
                g = self.next_of(g);
                if g == h {
                    break;
                }
            }
            out.push('\n');
        }
        out
    }
}
