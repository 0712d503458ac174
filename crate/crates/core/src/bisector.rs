//! Bisector identity and vertex decoding.
//!
//! A bisector is named by a heap index: the root bisector of halfedge `h`
//! is `2^R + h` with `R = ceil(log2 H)`, and bisector `j` splits into `2j`
//! and `2j + 1`. The bits below the root prefix spell the split path, which
//! is all that is needed to recover the triangle from the root's vertices.

use glam::{DVec3, Vec3};
use thiserror::Error;

use crate::mesh::HalfedgeMesh;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BisectorError {
    #[error("bisector {0} cannot be split further without overflowing 64 bits")]
    DepthLimit(u64),
    #[error("halfedge {h} out of range for {halfedges} halfedges")]
    Halfedge { h: u64, halfedges: u32 },
    #[error("{0} is not a bisector id for this mesh")]
    NotAnId(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HeapId(u64);

impl HeapId {
    pub fn new(value: u64) -> Option<Self> {
        (value >= 1).then_some(Self(value))
    }

    pub fn get(self) -> u64 {
        self.0
    }

    /// `floor(log2 j)`.
    pub fn level(self) -> u32 {
        63 - self.0.leading_zeros()
    }

    /// Low bit: 0 for a first child, 1 for a second child.
    pub fn child_bit(self) -> u64 {
        self.0 & 1
    }

    pub fn children(self) -> Result<(HeapId, HeapId), BisectorError> {
        if self.0 >> 63 != 0 {
            return Err(BisectorError::DepthLimit(self.0));
        }
        Ok((Self(self.0 << 1), Self((self.0 << 1) | 1)))
    }

    pub fn parent(self) -> Option<HeapId> {
        Self::new(self.0 >> 1)
    }

    pub fn is_sibling_of(self, other: HeapId) -> bool {
        self.0 >> 1 == other.0 >> 1
    }
}

impl std::fmt::Display for HeapId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// How root ids are laid out for a mesh with `H` halfedges.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RootLayout {
    halfedges: u32,
    root_bits: u32,
}

impl RootLayout {
    pub fn new(halfedges: u32) -> Self {
        assert!(halfedges >= 1);
        let root_bits = halfedges.next_power_of_two().trailing_zeros();
        Self { halfedges, root_bits }
    }

    pub fn halfedges(&self) -> u32 {
        self.halfedges
    }

    /// `R = ceil(log2 H)`.
    pub fn root_bits(&self) -> u32 {
        self.root_bits
    }

    /// Deepest subdivision level whose ids still fit in 64 bits.
    pub fn max_depth(&self) -> u32 {
        63 - self.root_bits
    }

    pub fn make_root_id(&self, h: u32) -> Result<HeapId, BisectorError> {
        if h >= self.halfedges {
            return Err(BisectorError::Halfedge {
                h: h as u64,
                halfedges: self.halfedges,
            });
        }
        Ok(HeapId((1u64 << self.root_bits) + h as u64))
    }

    pub fn depth(&self, id: HeapId) -> u32 {
        debug_assert!(self.is_valid(id), "{id} is not valid for H={}", self.halfedges);
        id.level() - self.root_bits
    }

    pub fn root_halfedge(&self, id: HeapId) -> u32 {
        let d = self.depth(id);
        ((id.0 >> d) - (1u64 << self.root_bits)) as u32
    }

    pub fn is_valid(&self, id: HeapId) -> bool {
        let level = id.level();
        if level < self.root_bits {
            return false;
        }
        let root = id.0 >> (level - self.root_bits);
        root - (1u64 << self.root_bits) < self.halfedges as u64
    }

    pub fn check(&self, id: HeapId) -> Result<(), BisectorError> {
        if self.is_valid(id) {
            Ok(())
        } else {
            Err(BisectorError::NotAnId(id.0))
        }
    }
}

pub type Mat3 = [[f64; 3]; 3];

/// Subdivision matrix selecting the first child's vertices from its parent's.
pub const SPLIT_FIRST: Mat3 = [[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.5, 0.5, 0.0]];
/// Subdivision matrix selecting the second child's vertices.
pub const SPLIT_SECOND: Mat3 = [[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [0.5, 0.5, 0.0]];

fn mat_mul<T>(a: &[[T; 3]; 3], b: &[[T; 3]; 3]) -> [[T; 3]; 3]
where
    T: Copy + Default + std::ops::Add<Output = T> + std::ops::Mul<Output = T>,
{
    let mut out = [[T::default(); 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

/// Product of split matrices along the path from `id` up to its root,
/// accumulated right to left as the id is halved.
pub fn subdivision_matrix(layout: &RootLayout, id: HeapId) -> Mat3 {
    let mut m = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let mut j = id.get();
    for _ in 0..layout.depth(id) {
        let step = if j & 1 == 0 { &SPLIT_FIRST } else { &SPLIT_SECOND };
        m = mat_mul(&m, step);
        j >>= 1;
    }
    m
}

pub type Triangle = [DVec3; 3];

/// Decodes the triangle of `id` from its root halfedge, in double precision.
pub fn bisector_vertices(mesh: &HalfedgeMesh, layout: &RootLayout, id: HeapId) -> Triangle {
    let root = mesh.root_vertices_unchecked(layout.root_halfedge(id) as usize);
    let m = subdivision_matrix(layout, id);
    m.map(|row| root[0] * row[0] + root[1] * row[1] + root[2] * row[2])
}

/// Single-precision counterpart of [`bisector_vertices`]: root vertices,
/// matrix products and the final combination all run in `f32`.
pub fn bisector_vertices_f32(mesh: &HalfedgeMesh, layout: &RootLayout, id: HeapId) -> [Vec3; 3] {
    let root = mesh
        .root_vertices_unchecked(layout.root_halfedge(id) as usize)
        .map(|v| v.as_vec3());
    let first = SPLIT_FIRST.map(|r| r.map(|x| x as f32));
    let second = SPLIT_SECOND.map(|r| r.map(|x| x as f32));
    let mut m = [[1.0f32, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let mut j = id.get();
    for _ in 0..layout.depth(id) {
        m = mat_mul(&m, if j & 1 == 0 { &first } else { &second });
        j >>= 1;
    }
    m.map(|row| root[0] * row[0] + root[1] * row[1] + root[2] * row[2])
}

/// Command word bits. The low three request a split of one edge each; the
/// next three carry a merge request.
pub mod command {
    /// Split the base edge (the edge shared with the twin).
    pub const SPLIT_BASE: u32 = 1 << 0;
    /// Split the edge shared with the next neighbor.
    pub const SPLIT_NEXT: u32 = 1 << 1;
    /// Split the edge shared with the prev neighbor.
    pub const SPLIT_PREV: u32 = 1 << 2;
    pub const SPLIT_MASK: u32 = SPLIT_BASE | SPLIT_NEXT | SPLIT_PREV;
    pub const MERGE: u32 = 1 << 3;
    /// Four bisectors merge into two (otherwise a boundary pair into one).
    pub const MERGE_QUAD: u32 = 1 << 4;
    /// Set on the member of a merge group with the smallest id.
    pub const MERGE_OWNER: u32 = 1 << 5;
    pub const MERGE_MASK: u32 = MERGE | MERGE_QUAD | MERGE_OWNER;
    /// Set during block reservation once the whole merge group agreed.
    pub const MERGE_COMMIT: u32 = 1 << 6;
}

/// A pool record, as a plain value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bisector {
    pub id: HeapId,
    pub next: i32,
    pub prev: i32,
    pub twin: i32,
    pub command: u32,
    pub reserved: [i32; 4],
}

impl Bisector {
    pub fn new(id: HeapId, next: i32, prev: i32, twin: i32) -> Self {
        Self {
            id,
            next,
            prev,
            twin,
            command: 0,
            reserved: [-1; 4],
        }
    }
}
