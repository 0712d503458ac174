//! Nine-stage incremental update over a rayon pool.
//!
//! Each stage is one parallel loop; returning from the loop is the barrier.
//! Shared writes within a stage are either to a slot the task owns, an
//! atomic add on the allocation counter, or an atomic OR on a command word.
//! Reads of another bisector's record only happen while that record cannot
//! change: pointers are frozen until stage 7, and in stage 7 only bisectors
//! that survive the update rewrite their own pointers.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use rayon::{ThreadPool, ThreadPoolBuildError, ThreadPoolBuilder};
use std::sync::atomic::Ordering::Relaxed;

use crate::bisector::command::*;
use crate::bisector::{Bisector, HeapId};
use crate::lod::LodDecision;
use crate::mesh::NULL;
use crate::sequential::merge_family;
use crate::state::{Edge, TriangulationState};

pub const STAGE_NAMES: [&str; 9] = [
    "ResetCounter",
    "CachePointers",
    "ResetCommands",
    "GenerateCommands",
    "ReserveBlocks",
    "FillNewBlocks",
    "UpdateNeighbors",
    "UpdateBitfield",
    "SumReduction",
];

const MIN_LEN: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UpdateStats {
    pub live_before: u32,
    pub live_after: u32,
    /// Bisectors replaced by their children.
    pub splits_applied: u32,
    /// Sibling families replaced by their parents.
    pub merges_applied: u32,
    pub splits_rejected_oom: u32,
    pub merges_rejected_oom: u32,
    /// Split verdicts at the depth limit, treated as keep.
    pub splits_demoted: u32,
    pub allocated: u32,
    pub released: u32,
    /// Allocation counter after stage 4: the sum of all reservations.
    pub reserved: u32,
    /// Largest number of slots any single accepted split request would
    /// consume alone, its chain included.
    pub max_chain_allocations: u32,
    /// Smallest `3d + 4 - chain allocations` over accepted split requests.
    pub min_chain_slack: Option<i64>,
    /// Only filled when checks are on: reserved slots that collide or are
    /// already occupied.
    pub reservation_conflicts: u32,
    pub stage_times: [Duration; 9],
}

impl UpdateStats {
    pub const CSV_HEADER: &'static str =
        "epoch,live_before,live_after,splits,merges,oom_splits,oom_merges,t1,t2,t3,t4,t5,t6,t7,t8,t9";

    pub fn changes(&self) -> u32 {
        self.splits_applied + self.merges_applied
    }

    pub fn total_time(&self) -> Duration {
        self.stage_times.iter().sum()
    }

    /// One CSV row; stage times in microseconds, or zero without timing.
    pub fn csv_row(&self, epoch: usize, timing: bool) -> String {
        let mut row = format!(
            "{epoch},{},{},{},{},{},{}",
            self.live_before,
            self.live_after,
            self.splits_applied,
            self.merges_applied,
            self.splits_rejected_oom,
            self.merges_rejected_oom
        );
        for t in &self.stage_times {
            let us = if timing { t.as_micros() } else { 0 };
            row.push_str(&format!(",{us}"));
        }
        row
    }
}

#[derive(Debug, Clone)]
pub struct EpochRun {
    pub stats: Vec<UpdateStats>,
    /// Index of the first epoch that changed nothing.
    pub converged_at: Option<usize>,
}

pub struct Pipeline {
    pool: ThreadPool,
    checks: bool,
}

impl std::fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pipeline")
            .field("threads", &self.threads())
            .field("checks", &self.checks)
            .finish()
    }
}

impl Pipeline {
    pub fn new(threads: usize) -> Result<Self, ThreadPoolBuildError> {
        let pool = ThreadPoolBuilder::new().num_threads(threads.max(1)).build()?;
        Ok(Self { pool, checks: false })
    }

    /// Enables the reservation-safety audit after stage 5.
    pub fn with_checks(mut self, on: bool) -> Self {
        self.checks = on;
        self
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }

    pub fn update<F>(&self, state: &mut TriangulationState, decide: F) -> UpdateStats
    where
        F: Fn(HeapId) -> LodDecision + Sync,
    {
        self.pool.install(|| update_in_pool(state, &decide, self.checks))
    }

    pub fn run_epochs<F>(&self, state: &mut TriangulationState, decide: F, n: usize) -> EpochRun
    where
        F: Fn(HeapId) -> LodDecision + Sync,
    {
        let mut stats = Vec::with_capacity(n);
        let mut converged_at = None;
        for epoch in 0..n {
            let s = self.update(state, &decide);
            if converged_at.is_none() && s.changes() == 0 {
                converged_at = Some(epoch);
            }
            stats.push(s);
        }
        EpochRun { stats, converged_at }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Action {
    Keep,
    Split(u32),
    Merge,
}

fn action(st: &TriangulationState, slot: u32) -> Action {
    let cmd = st.slot(slot).command.load(Relaxed);
    if cmd & SPLIT_MASK != 0 {
        Action::Split(cmd & SPLIT_MASK)
    } else if cmd & MERGE_COMMIT != 0 {
        Action::Merge
    } else {
        Action::Keep
    }
}

/// Slots a split consumes: two children, plus one more for each side edge
/// that must also be cut.
pub fn split_allocations(flags: u32) -> u32 {
    2 + (flags & SPLIT_NEXT != 0) as u32 + (flags & SPLIT_PREV != 0) as u32
}

/// Which end of an edge, walking it in the owner's winding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Part {
    Whole,
    First,
    Second,
}

impl Part {
    fn flip(self) -> Self {
        match self {
            Part::First => Part::Second,
            Part::Second => Part::First,
            Part::Whole => Part::Whole,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Link {
    Leaf(u64),
    Outer(Edge, Part),
}

#[derive(Debug, Clone, Copy)]
struct Block {
    id: u64,
    base: Link,
    next: Link,
    prev: Link,
}

/// New bisectors replacing `j` when cut along `flags`, ascending by id.
/// A triangle `(v0, v1, v2)` has base `v0 -> v1`; child `2j` keeps the `v0`
/// side and `2j + 1` the `v1` side. A cut prev edge splits `2j` into
/// `4j, 4j + 1`, a cut next edge splits `2j + 1` into `4j + 2, 4j + 3`.
fn split_leaves(j: u64, flags: u32) -> ([Block; 4], usize) {
    use Link::*;
    let (p, n) = (flags & SPLIT_PREV != 0, flags & SPLIT_NEXT != 0);
    let c0_owner = if p { 4 * j + 1 } else { 2 * j };
    let c1_owner = if n { 4 * j + 2 } else { 2 * j + 1 };
    let mut out = [Block { id: 0, base: Leaf(0), next: Leaf(0), prev: Leaf(0) }; 4];
    let mut len = 0;
    let mut push = |l: Block| {
        out[len] = l;
        len += 1;
    };
    if p {
        push(Block { id: 4 * j, base: Outer(Edge::Base, Part::First), next: Leaf(4 * j + 1), prev: Outer(Edge::Prev, Part::Second) });
        push(Block { id: 4 * j + 1, base: Leaf(c1_owner), next: Outer(Edge::Prev, Part::First), prev: Leaf(4 * j) });
    } else {
        push(Block { id: 2 * j, base: Outer(Edge::Prev, Part::Whole), next: Leaf(c1_owner), prev: Outer(Edge::Base, Part::First) });
    }
    if n {
        push(Block { id: 4 * j + 2, base: Leaf(c0_owner), next: Leaf(4 * j + 3), prev: Outer(Edge::Next, Part::Second) });
        push(Block { id: 4 * j + 3, base: Outer(Edge::Base, Part::Second), next: Outer(Edge::Next, Part::First), prev: Leaf(4 * j + 2) });
    } else {
        push(Block { id: 2 * j + 1, base: Outer(Edge::Next, Part::Whole), next: Outer(Edge::Base, Part::Second), prev: Leaf(c0_owner) });
    }
    out[..len].sort_unstable_by_key(|l| l.id);
    (out, len)
}

/// Slot reserved for the leaf `leaf` of the split bisector at `slot`.
fn leaf_slot(st: &TriangulationState, slot: u32, flags: u32, leaf: u64) -> i32 {
    let (leaves, len) = split_leaves(st.id_of(slot).get(), flags);
    let i = leaves[..len]
        .iter()
        .position(|l| l.id == leaf)
        .expect("leaf belongs to this split");
    st.slot(slot).reserved(i).load(Relaxed)
}

/// Slot that will cover the whole edge `e` of `n` after the update.
fn owner_whole(st: &TriangulationState, n: u32, e: Edge) -> i32 {
    match action(st, n) {
        Action::Keep => n as i32,
        Action::Split(f) => {
            let j = st.id_of(n).get();
            match e {
                Edge::Prev if f & SPLIT_PREV == 0 => leaf_slot(st, n, f, 2 * j),
                Edge::Next if f & SPLIT_NEXT == 0 => leaf_slot(st, n, f, 2 * j + 1),
                _ => unreachable!("edge {e:?} of slot {n} is cut, its neighbor must split too"),
            }
        }
        Action::Merge => {
            debug_assert_eq!(e, Edge::Base, "merging families only border others through their bases");
            parent_slot(st, n)
        }
    }
}

/// Slot that will cover the half `part` of edge `e` of the splitting `n`.
fn owner_half(st: &TriangulationState, n: u32, e: Edge, part: Part) -> i32 {
    let Action::Split(f) = action(st, n) else {
        unreachable!("slot {n} must split to expose half edges");
    };
    let j = st.id_of(n).get();
    let (p, nx) = (f & SPLIT_PREV != 0, f & SPLIT_NEXT != 0);
    let leaf = match (e, part) {
        (Edge::Base, Part::First) => if p { 4 * j } else { 2 * j },
        (Edge::Base, Part::Second) => if nx { 4 * j + 3 } else { 2 * j + 1 },
        (Edge::Prev, Part::First) => 4 * j + 1,
        (Edge::Prev, Part::Second) => 4 * j,
        (Edge::Next, Part::First) => 4 * j + 3,
        (Edge::Next, Part::Second) => 4 * j + 2,
        (_, Part::Whole) => unreachable!(),
    };
    leaf_slot(st, n, f, leaf)
}

/// Parent slot of the merging bisector at `m`: the owner keeps its own
/// pair's parent in `reserved[0]` and the other pair's in `reserved[1]`.
fn parent_slot(st: &TriangulationState, m: u32) -> i32 {
    let fam = merge_family(st, m).expect("committed merge keeps its family");
    let owner = *fam
        .members()
        .iter()
        .min_by_key(|&&s| st.id_of(s))
        .expect("non-empty family");
    let same_pair = fam.pair(0).contains(&owner);
    st.slot(owner).reserved(if same_pair { 0 } else { 1 }).load(Relaxed)
}

/// Post-update slot across edge `e` of `x`, restricted to `part` of it.
/// Bisectors along an edge traverse it in opposite directions when their
/// depths share parity, so halves swap names across such an edge.
fn outer(st: &TriangulationState, x: u32, e: Edge, part: Part) -> i32 {
    let n = st.neighbor(x, e);
    if n == NULL {
        return NULL;
    }
    let n = n as u32;
    if part == Part::Whole && action(st, n) == Action::Keep {
        return n as i32;
    }
    let back = st.edge_towards(n, x).expect("pointers are reciprocal");
    if part == Part::Whole {
        return owner_whole(st, n, back);
    }
    let same_parity = st.depth_of(x) % 2 == st.depth_of(n) % 2;
    owner_half(st, n, back, if same_parity { part.flip() } else { part })
}

#[derive(Debug, Clone, Copy)]
struct Tally {
    split_oom: u32,
    demoted: u32,
    merge_oom: u32,
    max_cost: u32,
    min_slack: Option<i64>,
}

impl Tally {
    const ZERO: Self = Self { split_oom: 0, demoted: 0, merge_oom: 0, max_cost: 0, min_slack: None };

    fn add(self, o: Self) -> Self {
        let min_slack = match (self.min_slack, o.min_slack) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        Self {
            split_oom: self.split_oom + o.split_oom,
            demoted: self.demoted + o.demoted,
            merge_oom: self.merge_oom + o.merge_oom,
            max_cost: self.max_cost.max(o.max_cost),
            min_slack,
        }
    }
}

/// Marks the split edges of `slot`'s compatibility chain. Marking stops at
/// the first member whose base was already marked, since whoever marked it
/// also marks the rest; the walk continues to price the chain. Returns the
/// slots this chain would allocate on its own.
fn scatter_chain(st: &TriangulationState, slot: u32) -> u32 {
    let or = |s: u32, bits: u32| st.slot(s).command.fetch_or(bits, Relaxed) & SPLIT_BASE != 0;
    let mut marking = !or(slot, SPLIT_BASE);
    let mut cost = 2;
    let mut cur = slot;
    loop {
        let k = st.neighbor(cur, Edge::Base);
        if k == NULL {
            return cost;
        }
        let k = k as u32;
        if st.neighbor(k, Edge::Base) == cur as i32 {
            if marking {
                or(k, SPLIT_BASE);
            }
            return cost + 2;
        }
        let side = if st.neighbor(k, Edge::Next) == cur as i32 {
            SPLIT_NEXT
        } else {
            debug_assert_eq!(st.neighbor(k, Edge::Prev), cur as i32);
            SPLIT_PREV
        };
        if marking && or(k, SPLIT_BASE | side) {
            marking = false;
        }
        cost += 3;
        cur = k;
    }
}

fn generate<F>(st: &TriangulationState, slot: u32, decide: &F, free: i64) -> Tally
where
    F: Fn(HeapId) -> LodDecision + Sync,
{
    let mut t = Tally::ZERO;
    let id = st.id_of(slot);
    let depth = st.layout().depth(id);
    let reserve = |n: i64| {
        let old = st.counter.fetch_add(n, Relaxed);
        if old + n > free {
            st.counter.fetch_sub(n, Relaxed);
            false
        } else {
            true
        }
    };
    match decide(id) {
        LodDecision::Keep => {}
        LodDecision::Split if depth >= st.layout().max_depth() => t.demoted = 1,
        LodDecision::Split => {
            let budget = 3 * depth as i64 + 4;
            if reserve(budget) {
                let cost = scatter_chain(st, slot);
                t.max_cost = cost;
                t.min_slack = Some(budget - cost as i64);
            } else {
                t.split_oom = 1;
            }
        }
        LodDecision::Merge => {
            if let Some(fam) = merge_family(st, slot) {
                if reserve(2) {
                    let owner = fam.members().iter().all(|&m| st.id_of(m) >= id);
                    let bits = MERGE | if fam.quad { MERGE_QUAD } else { 0 } | if owner { MERGE_OWNER } else { 0 };
                    st.slot(slot).command.fetch_or(bits, Relaxed);
                } else {
                    t.merge_oom = 1;
                }
            }
        }
    }
    t
}

#[derive(Debug, Clone, Copy, Default)]
struct Claimed {
    splits: u32,
    merges: u32,
    allocated: u32,
    released: u32,
}

impl Claimed {
    fn add(self, o: Self) -> Self {
        Self {
            splits: self.splits + o.splits,
            merges: self.merges + o.merges,
            allocated: self.allocated + o.allocated,
            released: self.released + o.released,
        }
    }
}

fn reserve_blocks(st: &TriangulationState, slot: u32) -> Claimed {
    let mut c = Claimed::default();
    let cmd = st.slot(slot).command.load(Relaxed);
    let n = if cmd & SPLIT_MASK != 0 {
        // a split overrides any merge request
        c.splits = 1;
        c.released = 1;
        split_allocations(cmd & SPLIT_MASK)
    } else if cmd & MERGE != 0 {
        let fam = merge_family(st, slot).expect("pointers unchanged since stage 4");
        let agreed = fam
            .members()
            .iter()
            .all(|&m| st.slot(m).command.load(Relaxed) & (SPLIT_MASK | MERGE) == MERGE);
        if !agreed {
            0
        } else {
            st.slot(slot).command.fetch_or(MERGE_COMMIT, Relaxed);
            c.released = 1;
            if cmd & MERGE_OWNER != 0 {
                c.merges = 1;
                fam.parents()
            } else {
                0
            }
        }
    } else {
        0
    };
    if n > 0 {
        let old = st.counter.fetch_sub(n as i64, Relaxed);
        let start = old - n as i64;
        debug_assert!(start >= 0, "allocations exceed reservations");
        for i in 0..n as usize {
            let free = st.cache[start as usize + i].free.load(Relaxed);
            st.slot(slot).reserved(i).store(free as i32, Relaxed);
        }
        c.allocated = n;
    }
    c
}

fn fill_new_blocks(st: &TriangulationState, slot: u32) {
    match action(st, slot) {
        Action::Keep => {}
        Action::Split(f) => {
            let j = st.id_of(slot).get();
            let (leaves, len) = split_leaves(j, f);
            let resolve = |l: Link| match l {
                Link::Leaf(id) => leaf_slot(st, slot, f, id),
                Link::Outer(..) => NULL,
            };
            for (i, leaf) in leaves[..len].iter().enumerate() {
                let target = st.slot(slot).reserved(i).load(Relaxed) as u32;
                let id = HeapId::new(leaf.id).expect("child of a valid id");
                st.store(target, &Bisector::new(id, resolve(leaf.next), resolve(leaf.prev), resolve(leaf.base)));
            }
        }
        Action::Merge => {
            if st.slot(slot).command.load(Relaxed) & MERGE_OWNER == 0 {
                return;
            }
            let fam = merge_family(st, slot).expect("committed merge keeps its family");
            let sp = st.slot(slot).reserved(0).load(Relaxed);
            let sq = if fam.quad { st.slot(slot).reserved(1).load(Relaxed) } else { NULL };
            let parent = |pair: [u32; 2]| st.id_of(pair[0]).parent().expect("merged bisectors have depth >= 1");
            st.store(sp as u32, &Bisector::new(parent(fam.pair(0)), NULL, NULL, sq));
            if fam.quad {
                st.store(sq as u32, &Bisector::new(parent(fam.pair(1)), NULL, NULL, sp));
            }
        }
    }
}

fn update_neighbors(st: &TriangulationState, slot: u32) {
    match action(st, slot) {
        Action::Keep => {
            for e in Edge::ALL {
                let n = st.neighbor(slot, e);
                if n == NULL || action(st, n as u32) == Action::Keep {
                    continue;
                }
                let back = st.edge_towards(n as u32, slot).expect("pointers are reciprocal");
                st.set_neighbor(slot, e, owner_whole(st, n as u32, back));
            }
        }
        Action::Split(f) => {
            let j = st.id_of(slot).get();
            let (leaves, len) = split_leaves(j, f);
            for (i, leaf) in leaves[..len].iter().enumerate() {
                let target = st.slot(slot).reserved(i).load(Relaxed) as u32;
                for (field, link) in [(Edge::Base, leaf.base), (Edge::Next, leaf.next), (Edge::Prev, leaf.prev)] {
                    if let Link::Outer(e, part) = link {
                        st.set_neighbor(target, field, outer(st, slot, e, part));
                    }
                }
            }
        }
        Action::Merge => {
            if st.slot(slot).command.load(Relaxed) & MERGE_OWNER == 0 {
                return;
            }
            let fam = merge_family(st, slot).expect("committed merge keeps its family");
            for p in 0..fam.parents() as usize {
                let [c0, c1] = fam.pair(p);
                let target = st.slot(slot).reserved(p).load(Relaxed) as u32;
                st.set_neighbor(target, Edge::Prev, outer(st, c0, Edge::Base, Part::Whole));
                st.set_neighbor(target, Edge::Next, outer(st, c1, Edge::Base, Part::Whole));
            }
        }
    }
}

fn update_bitfield(st: &TriangulationState, slot: u32) {
    if action(st, slot) != Action::Keep {
        st.cbt.set_bit(slot, false).expect("live slot in range");
    }
    for i in 0..4 {
        let r = st.slot(slot).reserved(i).load(Relaxed);
        if r != NULL {
            st.cbt.set_bit(r as u32, true).expect("reserved slot in range");
        }
    }
}

fn audit_reservations(st: &TriangulationState, count: u32) -> u32 {
    let mut seen = std::collections::HashSet::new();
    let mut conflicts = 0;
    for i in 0..count as usize {
        let slot = st.cache[i].live.load(Relaxed);
        for r in 0..4 {
            let v = st.slot(slot).reserved(r).load(Relaxed);
            if v == NULL {
                continue;
            }
            if !seen.insert(v) || st.is_live(v as u32) {
                conflicts += 1;
            }
        }
    }
    conflicts
}

struct Laps {
    times: [Duration; 9],
    clock: Instant,
}

impl Laps {
    fn lap(&mut self, stage: usize) {
        let now = Instant::now();
        self.times[stage] = now - self.clock;
        self.clock = now;
    }
}

fn update_in_pool<F>(state: &mut TriangulationState, decide: &F, checks: bool) -> UpdateStats
where
    F: Fn(HeapId) -> LodDecision + Sync,
{
    let mut laps = Laps { times: [Duration::ZERO; 9], clock: Instant::now() };

    let st: &TriangulationState = state;
    let count = st.cbt.count();
    let free = st.capacity() - count;

    st.counter.store(0, Relaxed);
    laps.lap(0);

    // one entry per live bisector; free ranks past `count` are filled on
    // demand once the reservations are known
    let cache_free = |range: std::ops::Range<u32>| {
        range.into_par_iter().with_min_len(MIN_LEN).for_each(|i| {
            st.cache[i as usize].free.store(st.cbt.zero_to_bit_id(i).expect("rank below free"), Relaxed);
        });
    };
    (0..count).into_par_iter().with_min_len(MIN_LEN).for_each(|i| {
        let e = &st.cache[i as usize];
        e.live.store(st.cbt.one_to_bit_id(i).expect("rank below count"), Relaxed);
        if i < free {
            e.free.store(st.cbt.zero_to_bit_id(i).expect("rank below free"), Relaxed);
        }
    });
    laps.lap(1);

    let live = |i: u32| st.cache[i as usize].live.load(Relaxed);
    (0..count).into_par_iter().with_min_len(MIN_LEN).for_each(|i| {
        let s = st.slot(live(i));
        s.command.store(0, Relaxed);
        for r in 0..4 {
            s.reserved(r).store(NULL, Relaxed);
        }
    });
    laps.lap(2);

    let tally = (0..count)
        .into_par_iter()
        .with_min_len(MIN_LEN)
        .map(|i| generate(st, live(i), decide, free as i64))
        .reduce(|| Tally::ZERO, Tally::add);
    let reserved = st.counter.load(Relaxed);
    laps.lap(3);

    let cached = count.min(free);
    if (reserved as u32) > cached {
        cache_free(cached..reserved as u32);
    }
    let claimed = (0..count)
        .into_par_iter()
        .with_min_len(MIN_LEN)
        .map(|i| reserve_blocks(st, live(i)))
        .reduce(Claimed::default, Claimed::add);
    laps.lap(4);
    let conflicts = if checks { audit_reservations(st, count) } else { 0 };
    laps.clock = Instant::now();

    (0..count).into_par_iter().with_min_len(MIN_LEN).for_each(|i| fill_new_blocks(st, live(i)));
    laps.lap(5);

    (0..count).into_par_iter().with_min_len(MIN_LEN).for_each(|i| update_neighbors(st, live(i)));
    laps.lap(6);

    (0..count).into_par_iter().with_min_len(MIN_LEN).for_each(|i| update_bitfield(st, live(i)));
    laps.lap(7);

    state.cbt.par_sum_reduce();
    laps.lap(8);

    UpdateStats {
        live_before: count,
        live_after: state.cbt.count(),
        splits_applied: claimed.splits,
        merges_applied: claimed.merges,
        splits_rejected_oom: tally.split_oom,
        merges_rejected_oom: tally.merge_oom,
        splits_demoted: tally.demoted,
        allocated: claimed.allocated,
        released: claimed.released,
        reserved: reserved as u32,
        max_chain_allocations: tally.max_cost,
        min_chain_slack: tally.min_slack,
        reservation_conflicts: conflicts,
        stage_times: laps.times,
    }
}
