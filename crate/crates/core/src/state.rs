//! Bisector memory pool governed by a [`Cbt`], with the allocation counter
//! and pointer cache used by the parallel update.
//!
//! Every field of a pool record is an atomic so that stages of the parallel
//! update can share the state by reference. Outside an update the state is
//! quiescent and plain relaxed loads and stores are enough.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::atomic::{AtomicI32, AtomicI64, AtomicU32, AtomicU64, Ordering::Relaxed};
use std::sync::Arc;

use thiserror::Error;

use crate::bisector::{bisector_vertices, Bisector, HeapId, RootLayout, Triangle};
use crate::cbt::{Cbt, CbtError};
use crate::mesh::{HalfedgeMesh, NULL};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StateError {
    #[error("cbt depth {depth} holds {capacity} bisectors, {needed} needed")]
    Capacity { depth: u32, capacity: u64, needed: u64 },
    #[error(transparent)]
    Cbt(#[from] CbtError),
}

/// The three edges of a bisector, named after the neighbor pointer that
/// crosses them. `Base` is the edge shared with the twin and the one a
/// split cuts in half.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Edge {
    Base,
    Next,
    Prev,
}

impl Edge {
    pub const ALL: [Edge; 3] = [Edge::Base, Edge::Next, Edge::Prev];
}

#[derive(Debug, Default)]
pub(crate) struct PoolSlot {
    id: AtomicU64,
    next: AtomicI32,
    prev: AtomicI32,
    twin: AtomicI32,
    pub(crate) command: AtomicU32,
    reserved: [AtomicI32; 4],
}

impl PoolSlot {
    fn empty() -> Self {
        let s = Self::default();
        for p in [&s.next, &s.prev, &s.twin] {
            p.store(NULL, Relaxed);
        }
        for r in &s.reserved {
            r.store(NULL, Relaxed);
        }
        s
    }

    pub(crate) fn field(&self, edge: Edge) -> &AtomicI32 {
        match edge {
            Edge::Base => &self.twin,
            Edge::Next => &self.next,
            Edge::Prev => &self.prev,
        }
    }

    pub(crate) fn reserved(&self, i: usize) -> &AtomicI32 {
        &self.reserved[i]
    }

    pub(crate) fn id(&self) -> HeapId {
        HeapId::new(self.id.load(Relaxed)).expect("live slot holds an id")
    }
}

/// One pointer-cache element: the slot of the i-th live bisector and the
/// i-th free slot.
#[derive(Debug, Default)]
pub(crate) struct CacheEntry {
    pub(crate) live: AtomicU32,
    pub(crate) free: AtomicU32,
}

pub struct TriangulationState {
    mesh: Arc<HalfedgeMesh>,
    layout: RootLayout,
    pub(crate) pool: Vec<PoolSlot>,
    pub(crate) cbt: Cbt,
    pub(crate) counter: AtomicI64,
    pub(crate) cache: Vec<CacheEntry>,
}

impl TriangulationState {
    /// Places one root bisector per halfedge in slots `[0, H)`, copying the
    /// halfedge neighbor operators.
    pub fn new(mesh: Arc<HalfedgeMesh>, depth: u32) -> Result<Self, StateError> {
        let h_count = mesh.halfedge_count() as u32;
        let layout = RootLayout::new(h_count);
        let cbt = Cbt::new(depth)?;
        if (h_count as u64) > cbt.capacity() as u64 {
            return Err(StateError::Capacity {
                depth,
                capacity: cbt.capacity() as u64,
                needed: h_count as u64,
            });
        }
        let capacity = cbt.capacity() as usize;
        let pool: Vec<PoolSlot> = (0..capacity).map(|_| PoolSlot::empty()).collect();
        let cache = (0..capacity).map(|_| CacheEntry::default()).collect();
        let mut state = Self {
            mesh,
            layout,
            pool,
            cbt,
            counter: AtomicI64::new(0),
            cache,
        };
        for h in 0..h_count {
            let m = &state.mesh;
            let b = Bisector::new(
                layout.make_root_id(h).expect("h < H"),
                m.next[h as usize],
                m.prev[h as usize],
                m.twin[h as usize],
            );
            state.store(h, &b);
            state.cbt.set_bit(h, true)?;
        }
        state.cbt.sum_reduce();
        Ok(state)
    }

    pub fn mesh(&self) -> &Arc<HalfedgeMesh> {
        &self.mesh
    }

    pub fn layout(&self) -> &RootLayout {
        &self.layout
    }

    pub fn cbt(&self) -> &Cbt {
        &self.cbt
    }

    pub fn capacity(&self) -> u32 {
        self.cbt.capacity()
    }

    pub fn live_count(&self) -> u32 {
        self.cbt.count()
    }

    pub fn free_count(&self) -> u32 {
        self.capacity() - self.live_count()
    }

    pub fn allocation_counter(&self) -> i64 {
        self.counter.load(Relaxed)
    }

    pub fn is_live(&self, slot: u32) -> bool {
        self.cbt.get_bit(slot).unwrap_or(false)
    }

    pub fn load(&self, slot: u32) -> Bisector {
        let s = &self.pool[slot as usize];
        Bisector {
            id: s.id(),
            next: s.next.load(Relaxed),
            prev: s.prev.load(Relaxed),
            twin: s.twin.load(Relaxed),
            command: s.command.load(Relaxed),
            reserved: std::array::from_fn(|i| s.reserved[i].load(Relaxed)),
        }
    }

    pub fn store(&self, slot: u32, b: &Bisector) {
        let s = &self.pool[slot as usize];
        s.id.store(b.id.get(), Relaxed);
        s.next.store(b.next, Relaxed);
        s.prev.store(b.prev, Relaxed);
        s.twin.store(b.twin, Relaxed);
        s.command.store(b.command, Relaxed);
        for (r, v) in s.reserved.iter().zip(b.reserved) {
            r.store(v, Relaxed);
        }
    }

    pub(crate) fn slot(&self, slot: u32) -> &PoolSlot {
        &self.pool[slot as usize]
    }

    pub fn neighbor(&self, slot: u32, edge: Edge) -> i32 {
        self.pool[slot as usize].field(edge).load(Relaxed)
    }

    pub(crate) fn set_neighbor(&self, slot: u32, edge: Edge, value: i32) {
        self.pool[slot as usize].field(edge).store(value, Relaxed);
    }

    pub fn id_of(&self, slot: u32) -> HeapId {
        self.pool[slot as usize].id()
    }

    pub fn depth_of(&self, slot: u32) -> u32 {
        self.layout.depth(self.id_of(slot))
    }

    /// Which pointer of `slot` references `target`, if any.
    pub fn edge_towards(&self, slot: u32, target: u32) -> Option<Edge> {
        Edge::ALL
            .into_iter()
            .find(|&e| self.neighbor(slot, e) == target as i32)
    }

    /// Live slots in ascending order.
    pub fn live_slots(&self) -> Vec<u32> {
        (0..self.live_count())
            .map(|i| self.cbt.one_to_bit_id(i).expect("rank below count"))
            .collect()
    }

    pub fn find(&self, id: HeapId) -> Option<u32> {
        self.live_slots().into_iter().find(|&s| self.id_of(s) == id)
    }

    pub fn live_ids(&self) -> BTreeSet<HeapId> {
        self.live_slots().into_iter().map(|s| self.id_of(s)).collect()
    }

    pub fn max_live_depth(&self) -> u32 {
        self.live_slots()
            .into_iter()
            .map(|s| self.depth_of(s))
            .max()
            .unwrap_or(0)
    }

    /// Decoded triangle of every live bisector.
    pub fn triangles(&self) -> Vec<(HeapId, Triangle)> {
        self.live_slots()
            .into_iter()
            .map(|s| {
                let id = self.id_of(s);
                (id, bisector_vertices(&self.mesh, &self.layout, id))
            })
            .collect()
    }

    /// Neighbor relations keyed by id, in `[next, prev, twin]` order.
    pub fn neighbor_relations(&self) -> BTreeMap<HeapId, [Option<HeapId>; 3]> {
        self.live_slots()
            .into_iter()
            .map(|s| {
                let b = self.load(s);
                let resolve = |p: i32| (p != NULL).then(|| self.id_of(p as u32));
                (b.id, [resolve(b.next), resolve(b.prev), resolve(b.twin)])
            })
            .collect()
    }

    /// Every broken pointer invariant: dangling pointers and neighbors that
    /// do not point back exactly once.
    pub fn pointer_violations(&self) -> Vec<PointerViolation> {
        let mut out = Vec::new();
        let mut seen: HashMap<HeapId, u32> = HashMap::new();
        for s in self.live_slots() {
            if let Some(other) = seen.insert(self.id_of(s), s) {
                out.push(PointerViolation { slot: s, edge: Edge::Base, kind: ViolationKind::DuplicateId(other) });
            }
            for e in Edge::ALL {
                let n = self.neighbor(s, e);
                if n == NULL {
                    continue;
                }
                if n < 0 || n as u32 >= self.capacity() || !self.is_live(n as u32) {
                    out.push(PointerViolation { slot: s, edge: e, kind: ViolationKind::Dangling(n) });
                    continue;
                }
                let back = Edge::ALL
                    .into_iter()
                    .filter(|&f| self.neighbor(n as u32, f) == s as i32)
                    .count();
                if back != 1 {
                    out.push(PointerViolation { slot: s, edge: e, kind: ViolationKind::NotReciprocal { neighbor: n as u32, back_refs: back } });
                }
            }
        }
        out
    }

    /// Approximate bytes held by the pool, the cbt and the pointer cache.
    pub fn memory_bytes(&self) -> usize {
        self.pool.len() * std::mem::size_of::<PoolSlot>()
            + self.cbt.memory_bytes()
            + self.cache.len() * std::mem::size_of::<CacheEntry>()
    }
}

impl Clone for TriangulationState {
    fn clone(&self) -> Self {
        let mut cbt = Cbt::new(self.cbt.depth()).expect("same depth");
        let pool: Vec<PoolSlot> = (0..self.pool.len()).map(|_| PoolSlot::empty()).collect();
        let mut out = Self {
            mesh: Arc::clone(&self.mesh),
            layout: self.layout,
            pool,
            cbt: Cbt::new(1).expect("placeholder"),
            counter: AtomicI64::new(self.counter.load(Relaxed)),
            cache: (0..self.cache.len()).map(|_| CacheEntry::default()).collect(),
        };
        for slot in 0..self.capacity() {
            if self.is_live(slot) {
                out.store(slot, &self.load(slot));
                cbt.set_bit(slot, true).expect("in range");
            }
        }
        cbt.sum_reduce();
        out.cbt = cbt;
        out
    }
}

impl fmt::Debug for TriangulationState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TriangulationState")
            .field("halfedges", &self.layout.halfedges())
            .field("cbt", &self.cbt)
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ViolationKind {
    Dangling(i32),
    NotReciprocal { neighbor: u32, back_refs: usize },
    DuplicateId(u32),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PointerViolation {
    pub slot: u32,
    pub edge: Edge,
    pub kind: ViolationKind,
}
