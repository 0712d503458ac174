//! Single-threaded refinement and decimation. This is the reference the
//! parallel update is checked against, so it favors assertions over speed.
//!
//! Slots are always allocated before the slots they replace are freed, so a
//! freshly written record never aliases one still being read.

use std::collections::{HashMap, HashSet};

use thiserror::Error;

use crate::bisector::{Bisector, HeapId};
use crate::lod::LodDecision;
use crate::mesh::NULL;
use crate::state::{Edge, TriangulationState};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SequentialError {
    #[error("slot {0} holds no live bisector")]
    NotLive(u32),
    #[error("bisector {0} is at the depth limit")]
    DepthLimit(HeapId),
    #[error("split chain needs {needed} free slots at its peak, {free} available")]
    Capacity { needed: u32, free: u32 },
}

/// The siblings a decimation would collapse: the pair the query started
/// from, then for a quad the pair across its base. Each pair is ordered even
/// id first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MergeFamily {
    slots: [u32; 4],
    pub quad: bool,
}

impl MergeFamily {
    pub fn members(&self) -> &[u32] {
        &self.slots[..2 * self.parents() as usize]
    }

    pub fn pair(&self, i: usize) -> [u32; 2] {
        [self.slots[2 * i], self.slots[2 * i + 1]]
    }

    /// Number of parents the merge creates.
    pub fn parents(&self) -> u32 {
        1 + self.quad as u32
    }
}

/// Locates the merge family of `slot` following the decimation test:
/// the id parity picks which neighbor must be the sibling, and an interior
/// pair additionally needs an equal-depth sibling pair across its base.
/// Roots have no parent and never qualify.
pub fn merge_family(state: &TriangulationState, slot: u32) -> Option<MergeFamily> {
    let b1 = state.load(slot);
    if state.layout().depth(b1.id) == 0 {
        return None;
    }
    let odd = b1.id.child_bit() == 1;
    let (j2, j3) = if odd { (b1.prev, b1.next) } else { (b1.next, b1.prev) };
    if j2 == NULL || !b1.id.is_sibling_of(state.id_of(j2 as u32)) {
        return None;
    }
    let pair = order_pair(state, slot, j2 as u32);
    if j3 == NULL {
        return Some(MergeFamily { slots: [pair[0], pair[1], 0, 0], quad: false });
    }
    let j3 = j3 as u32;
    let id3 = state.id_of(j3);
    if id3.level() != b1.id.level() || pair.contains(&j3) {
        return None;
    }
    let j4 = if odd { state.neighbor(j3, Edge::Next) } else { state.neighbor(j3, Edge::Prev) };
    if j4 == NULL || !id3.is_sibling_of(state.id_of(j4 as u32)) {
        return None;
    }
    let [e0, e1] = order_pair(state, j3, j4 as u32);
    Some(MergeFamily { slots: [pair[0], pair[1], e0, e1], quad: true })
}

fn order_pair(state: &TriangulationState, a: u32, b: u32) -> [u32; 2] {
    if state.id_of(a).child_bit() == 0 {
        [a, b]
    } else {
        [b, a]
    }
}

fn alloc(state: &mut TriangulationState) -> u32 {
    let slot = state.cbt.zero_to_bit_id(0).expect("capacity checked before allocating");
    state.cbt.set_bit_propagate(slot, true).expect("slot in range");
    slot
}

fn release(state: &mut TriangulationState, slot: u32) {
    state.cbt.set_bit_propagate(slot, false).expect("slot in range");
}

/// Points whichever pointer of `neighbor` referenced `old` at `new`.
fn redirect(state: &TriangulationState, neighbor: i32, old: u32, new: u32) {
    if neighbor == NULL {
        return;
    }
    let n = neighbor as u32;
    let hits: Vec<Edge> = Edge::ALL
        .into_iter()
        .filter(|&e| state.neighbor(n, e) == old as i32)
        .collect();
    debug_assert_eq!(hits.len(), 1, "slot {n} references {old} {} times", hits.len());
    for e in hits {
        state.set_neighbor(n, e, new as i32);
    }
}

/// Steps of a compatibility chain, starting bisector first. The last entry
/// is a boundary bisector or one whose twin points back.
fn chain(state: &TriangulationState, slot: u32) -> Vec<u32> {
    let mut out = vec![slot];
    let mut cur = slot;
    loop {
        let k = state.neighbor(cur, Edge::Base);
        if k == NULL || state.neighbor(k as u32, Edge::Base) == cur as i32 {
            return out;
        }
        debug_assert_eq!(state.depth_of(k as u32) + 1, state.depth_of(cur));
        cur = k as u32;
        out.push(cur);
    }
}

/// Free slots a chain needs at its most demanding split.
fn chain_peak(state: &TriangulationState, links: &[u32]) -> u32 {
    let last = *links.last().expect("chain is never empty");
    let mut need = if state.neighbor(last, Edge::Base) == NULL { 2 } else { 4 };
    let mut net = need / 2;
    // every remaining link is a pair split: 4 allocations before 2 releases
    for _ in 1..links.len() {
        need = need.max(net + 4);
        net += 2;
    }
    need
}

/// Splits `slot` and, through its compatibility chain, every coarser
/// bisector needed to keep the triangulation conforming. All or nothing.
pub fn refine(state: &mut TriangulationState, slot: u32) -> Result<(), SequentialError> {
    if !state.is_live(slot) {
        return Err(SequentialError::NotLive(slot));
    }
    let id = state.id_of(slot);
    if state.layout().depth(id) >= state.layout().max_depth() {
        return Err(SequentialError::DepthLimit(id));
    }
    let links = chain(state, slot);
    let needed = chain_peak(state, &links);
    if needed > state.free_count() {
        return Err(SequentialError::Capacity { needed, free: state.free_count() });
    }
    refine_rec(state, slot);
    Ok(())
}

fn refine_rec(state: &mut TriangulationState, j: u32) {
    let k = state.neighbor(j, Edge::Base);
    if k == NULL {
        split(state, j, None);
        return;
    }
    if state.neighbor(k as u32, Edge::Base) != j as i32 {
        refine_rec(state, k as u32);
    }
    // the twin was replaced if it just split
    let k = state.neighbor(j, Edge::Base);
    debug_assert_eq!(state.neighbor(k as u32, Edge::Base), j as i32);
    split(state, j, Some(k as u32));
}

fn split(state: &mut TriangulationState, j: u32, k: Option<u32>) {
    let bj = state.load(j);
    let (j0, j1) = bj.id.children().expect("depth limit checked");
    let sj0 = alloc(state);
    let sj1 = alloc(state);
    let partner = k.map(|k| {
        let bk = state.load(k);
        debug_assert_eq!(bk.id.level(), bj.id.level());
        (k, bk, alloc(state), alloc(state))
    });
    let (to_k0, to_k1) = partner.map_or((NULL, NULL), |(_, _, a, b)| (a as i32, b as i32));
    state.store(sj0, &Bisector::new(j0, sj1 as i32, to_k1, bj.prev));
    state.store(sj1, &Bisector::new(j1, to_k0, sj0 as i32, bj.next));
    refine_pointers(state, j, &bj, sj0, sj1);
    if let Some((k, bk, sk0, sk1)) = partner {
        let (k0, k1) = bk.id.children().expect("same depth as partner");
        state.store(sk0, &Bisector::new(k0, sk1 as i32, sj1 as i32, bk.prev));
        state.store(sk1, &Bisector::new(k1, sj0 as i32, sk0 as i32, bk.next));
        refine_pointers(state, k, &bk, sk0, sk1);
        release(state, k);
    }
    release(state, j);
}

/// The neighbor across the old next edge now borders the second child, the
/// one across the old prev edge the first.
fn refine_pointers(state: &TriangulationState, old: u32, b: &Bisector, first: u32, second: u32) {
    redirect(state, b.next, old, second);
    redirect(state, b.prev, old, first);
}

/// Merges the family of `slot` into its parents if the decimation test
/// accepts it. Returns whether anything changed.
pub fn decimate(state: &mut TriangulationState, slot: u32) -> Result<bool, SequentialError> {
    if !state.is_live(slot) {
        return Err(SequentialError::NotLive(slot));
    }
    let Some(family) = merge_family(state, slot) else {
        return Ok(false);
    };
    if family.parents() > state.free_count() {
        return Ok(false);
    }
    merge(state, &family);
    Ok(true)
}

fn merge(state: &mut TriangulationState, family: &MergeFamily) {
    let [c0, c1] = family.pair(0);
    let (b0, b1) = (state.load(c0), state.load(c1));
    let p_id = b0.id.parent().expect("depth >= 1");
    let sp = alloc(state);
    if family.quad {
        let [e0, e1] = family.pair(1);
        let (d0, d1) = (state.load(e0), state.load(e1));
        let q_id = d0.id.parent().expect("depth >= 1");
        let sq = alloc(state);
        state.store(sp, &Bisector::new(p_id, b1.twin, b0.twin, sq as i32));
        state.store(sq, &Bisector::new(q_id, d1.twin, d0.twin, sp as i32));
        decimate_pointers(state, [c0, c1], &b0, &b1, sp);
        decimate_pointers(state, [e0, e1], &d0, &d1, sq);
        for s in [c0, c1, e0, e1] {
            release(state, s);
        }
    } else {
        state.store(sp, &Bisector::new(p_id, b1.twin, b0.twin, NULL));
        decimate_pointers(state, [c0, c1], &b0, &b1, sp);
        release(state, c0);
        release(state, c1);
    }
}

/// The twins of both children now border the parent.
fn decimate_pointers(state: &TriangulationState, [c0, c1]: [u32; 2], b0: &Bisector, b1: &Bisector, parent: u32) {
    redirect(state, b1.twin, c1, parent);
    redirect(state, b0.twin, c0, parent);
}

/// What one update applied sequentially.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SequentialStats {
    pub splits: u32,
    pub merges: u32,
    pub rejected: u32,
}

/// Applies one round of verdicts with the semantics of the parallel
/// update: requested splits first, over the bisectors live at entry in
/// ascending id order, then merges among families whose members were all
/// live at entry, survived the splits and all voted to merge.
pub fn apply_verdicts<F>(state: &mut TriangulationState, decide: F) -> SequentialStats
where
    F: Fn(HeapId) -> LodDecision,
{
    let mut entry: Vec<(HeapId, u32)> = state.live_slots().into_iter().map(|s| (state.id_of(s), s)).collect();
    entry.sort_unstable();
    let verdicts: HashMap<HeapId, LodDecision> = entry.iter().map(|&(id, _)| (id, decide(id))).collect();
    let still_live = |state: &TriangulationState, id: HeapId, slot: u32| state.is_live(slot) && state.id_of(slot) == id;
    let mut stats = SequentialStats::default();
    for &(id, slot) in &entry {
        if verdicts[&id] != LodDecision::Split || !still_live(state, id, slot) {
            continue;
        }
        match refine(state, slot) {
            Ok(()) => stats.splits += 1,
            Err(SequentialError::DepthLimit(_)) => {}
            Err(_) => stats.rejected += 1,
        }
    }
    let entry_ids: HashSet<HeapId> = entry.iter().map(|&(id, _)| id).collect();
    for &(id, slot) in &entry {
        if verdicts[&id] != LodDecision::Merge || !still_live(state, id, slot) {
            continue;
        }
        let Some(family) = merge_family(state, slot) else { continue };
        let ids: Vec<HeapId> = family.members().iter().map(|&s| state.id_of(s)).collect();
        let agreed = ids
            .iter()
            .all(|m| entry_ids.contains(m) && verdicts[m] == LodDecision::Merge);
        if !agreed || ids.iter().min() != Some(&id) {
            continue;
        }
        if family.parents() > state.free_count() {
            stats.rejected += 1;
            continue;
        }
        merge(state, &family);
        stats.merges += 1;
    }
    stats
}
