#![allow(dead_code)]

use std::collections::BTreeSet;
use std::f64::consts::{FRAC_PI_2, TAU};
use std::sync::Arc;

use cbt_tess::conformity::check_state;
use cbt_tess::pipeline::Pipeline;
use cbt_tess::sequential::apply_verdicts;
use cbt_tess::{HalfedgeMesh, HeapId, LodDecision, RootLayout, TriangulationState};
use glam::DVec3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Triangle, quad and pentagon around a shared vertex. Halfedges: triangle
/// 0..3, quad 3..7, pentagon 7..12; pentagon halfedge 7 twins triangle
/// halfedge 1, pentagon 8 twins quad 3, quad 4 twins triangle 0, and
/// pentagon 11 is on the boundary.
pub fn pentagon_fixture() -> HalfedgeMesh {
    let p: Vec<DVec3> = (0..5)
        .map(|i| {
            let a = FRAC_PI_2 + TAU * i as f64 / 5.0;
            DVec3::new(a.cos(), a.sin(), 0.0)
        })
        .collect();
    let mut positions = p.clone();
    positions.push(2.0 * p[1]); // 5 = X
    positions.push(2.0 * p[2]); // 6 = Y
    HalfedgeMesh::from_polygons(positions, &[vec![5, 1, 0], vec![2, 1, 5, 6], vec![0, 1, 2, 3, 4]]).unwrap()
}

/// Id of the bisector labelled `j` at `depth` when roots are labelled by
/// their halfedge index.
pub fn label(layout: &RootLayout, j: u64, depth: u32) -> HeapId {
    HeapId::new(j + (1u64 << (layout.root_bits() + depth))).unwrap()
}

pub fn labels(layout: &RootLayout, ls: &[(u64, u32)]) -> BTreeSet<HeapId> {
    ls.iter().map(|&(j, d)| label(layout, j, d)).collect()
}

/// Reproducible verdict per (seed, epoch, id). Weights are percentages for
/// split and merge; the rest keep. Splits beyond `max_depth` keep instead.
pub fn random_verdict(seed: u64, epoch: u64, id: HeapId, layout: &RootLayout, max_depth: u32, split: u32, merge: u32) -> LodDecision {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ epoch.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ id.get().wrapping_mul(0xc2b2_ae3d_27d4_eb4f));
    let roll = rng.gen_range(0..100);
    if roll < split {
        if layout.depth(id) < max_depth {
            LodDecision::Split
        } else {
            LodDecision::Keep
        }
    } else if roll < split + merge {
        LodDecision::Merge
    } else {
        LodDecision::Keep
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct EquivalenceTotals {
    pub epochs: usize,
    pub updates: usize,
    pub max_live: u32,
    pub max_occupancy: f64,
    pub max_chain_allocations: u32,
    pub min_chain_slack: Option<i64>,
    pub splits: u64,
    pub merges: u64,
}

/// Runs one random verdict sequence through the sequential engine and the
/// pipeline at each thread count, checking after every epoch that live ids
/// and id-level neighbor relations agree and that every state conforms.
pub fn run_sequence(mesh: &Arc<HalfedgeMesh>, depth: u32, seed: u64, epochs: u64, max_depth: u32, threads: &[usize]) -> Result<EquivalenceTotals, String> {
    let mut seq = TriangulationState::new(mesh.clone(), depth).map_err(|e| e.to_string())?;
    let pipes: Vec<Pipeline> = threads.iter().map(|&t| Pipeline::new(t).unwrap().with_checks(true)).collect();
    let mut pars: Vec<TriangulationState> = threads.iter().map(|_| seq.clone()).collect();
    let layout = *seq.layout();
    let mut totals = EquivalenceTotals::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for epoch in 0..epochs {
        // split-heavy, merge-heavy or mixed epochs
        let (split, merge) = match rng.gen_range(0..3) {
            0 => (rng.gen_range(40..70), rng.gen_range(0..20)),
            1 => (rng.gen_range(0..10), rng.gen_range(70..95)),
            _ => (rng.gen_range(10..50), rng.gen_range(10..50)),
        };
        let decide = |id: HeapId| random_verdict(seed, epoch, id, &layout, max_depth, split, merge);
        let s = apply_verdicts(&mut seq, decide);
        if s.rejected != 0 {
            return Err(format!("seed {seed} epoch {epoch}: sequential rejected {} for capacity", s.rejected));
        }
        let want_ids = seq.live_ids();
        let want_rel = seq.neighbor_relations();
        let report = check_state(&seq);
        if !report.is_conforming() {
            return Err(format!("seed {seed} epoch {epoch}: sequential state not conforming: {report:?}"));
        }
        for ((pipe, par), &t) in pipes.iter().zip(pars.iter_mut()).zip(threads) {
            let stats = pipe.update(par, decide);
            totals.updates += 1;
            if stats.splits_rejected_oom + stats.merges_rejected_oom != 0 {
                return Err(format!("seed {seed} epoch {epoch} threads {t}: unexpected oom {stats:?}"));
            }
            if stats.reservation_conflicts != 0 {
                return Err(format!("seed {seed} epoch {epoch} threads {t}: {} reservation conflicts", stats.reservation_conflicts));
            }
            if stats.live_after as i64 != stats.live_before as i64 + stats.allocated as i64 - stats.released as i64 {
                return Err(format!("seed {seed} epoch {epoch} threads {t}: live count bookkeeping {stats:?}"));
            }
            totals.max_chain_allocations = totals.max_chain_allocations.max(stats.max_chain_allocations);
            totals.min_chain_slack = match (totals.min_chain_slack, stats.min_chain_slack) {
                (Some(a), Some(b)) => Some(a.min(b)),
                (a, b) => a.or(b),
            };
            if par.live_ids() != want_ids {
                let got = par.live_ids();
                let missing: Vec<_> = want_ids.difference(&got).take(8).collect();
                let extra: Vec<_> = got.difference(&want_ids).take(8).collect();
                return Err(format!("seed {seed} epoch {epoch} threads {t}: live ids differ, missing {missing:?} extra {extra:?}"));
            }
            if par.neighbor_relations() != want_rel {
                return Err(format!("seed {seed} epoch {epoch} threads {t}: neighbor relations differ"));
            }
            let report = check_state(par);
            if !report.is_conforming() {
                return Err(format!("seed {seed} epoch {epoch} threads {t}: not conforming: {report:?}"));
            }
        }
        totals.splits += s.splits as u64;
        totals.merges += s.merges as u64;
        totals.epochs += 1;
        totals.max_live = totals.max_live.max(seq.live_count());
        totals.max_occupancy = totals.max_occupancy.max(seq.live_count() as f64 / seq.capacity() as f64);
    }
    Ok(totals)
}
