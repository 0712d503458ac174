//! Concurrent binary tree: a bitfield of `2^D` slot-occupancy bits with a
//! sum-reduction tree on top, stored as a flat heap.
//!
//! Node `k >= 1` has children `2k` and `2k + 1`; leaves live at
//! `[2^D, 2^(D+1))` and index 0 is padding. Leaf writes are deferred: the
//! internal nodes are only authoritative after [`Cbt::sum_reduce`].

use std::fmt::Write as _;
use std::sync::atomic::{AtomicBool, AtomicU32, Ordering};

use rayon::prelude::*;
use thiserror::Error;

pub const MIN_DEPTH: u32 = 1;
pub const MAX_DEPTH: u32 = 25;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CbtError {
    #[error("cbt depth {0} outside [{MIN_DEPTH}, {MAX_DEPTH}]")]
    Depth(u32),
    #[error("slot {slot} out of range for capacity {capacity}")]
    SlotRange { slot: u32, capacity: u32 },
    #[error("rank {rank} out of range, only {available} candidates")]
    Rank { rank: u32, available: u32 },
}

pub struct Cbt {
    depth: u32,
    nodes: Vec<AtomicU32>,
    dirty: AtomicBool,
}

impl Cbt {
    pub fn new(depth: u32) -> Result<Self, CbtError> {
        if !(MIN_DEPTH..=MAX_DEPTH).contains(&depth) {
            return Err(CbtError::Depth(depth));
        }
        let nodes = (0..(2usize << depth)).map(|_| AtomicU32::new(0)).collect();
        Ok(Self {
            depth,
            nodes,
            dirty: AtomicBool::new(false),
        })
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    /// Number of slots tracked by the bitfield, `2^D`.
    pub fn capacity(&self) -> u32 {
        1 << self.depth
    }

    pub fn node(&self, index: usize) -> u32 {
        self.nodes[index].load(Ordering::Relaxed)
    }

    fn check_slot(&self, slot: u32) -> Result<(), CbtError> {
        if slot >= self.capacity() {
            return Err(CbtError::SlotRange {
                slot,
                capacity: self.capacity(),
            });
        }
        Ok(())
    }

    /// Writes a leaf. Internal nodes are left stale until the next
    /// `sum_reduce`. Writes to distinct slots may run concurrently.
    pub fn set_bit(&self, slot: u32, value: bool) -> Result<(), CbtError> {
        self.check_slot(slot)?;
        self.nodes[(self.capacity() + slot) as usize].store(value as u32, Ordering::Relaxed);
        self.dirty.store(true, Ordering::Relaxed);
        Ok(())
    }

    pub fn get_bit(&self, slot: u32) -> Result<bool, CbtError> {
        self.check_slot(slot)?;
        Ok(self.node((self.capacity() + slot) as usize) == 1)
    }

    /// Writes a leaf and repairs the path up to the root in O(D), keeping a
    /// current tree current. Exclusive access only.
    pub fn set_bit_propagate(&mut self, slot: u32, value: bool) -> Result<(), CbtError> {
        self.check_slot(slot)?;
        let mut k = (self.capacity() + slot) as usize;
        let old = *self.nodes[k].get_mut();
        let new = value as u32;
        if old == new {
            return Ok(());
        }
        *self.nodes[k].get_mut() = new;
        while k > 1 {
            k /= 2;
            let n = self.nodes[k].get_mut();
            *n = if new == 1 { *n + 1 } else { *n - 1 };
        }
        Ok(())
    }

    /// Recomputes every internal node bottom-up.
    pub fn sum_reduce(&mut self) {
        for k in (1..self.capacity() as usize).rev() {
            let s = *self.nodes[2 * k].get_mut() + *self.nodes[2 * k + 1].get_mut();
            *self.nodes[k].get_mut() = s;
        }
        *self.dirty.get_mut() = false;
    }

    /// Same result as [`Cbt::sum_reduce`]; each level is reduced in parallel
    /// on the current rayon pool, levels in sequence.
    pub fn par_sum_reduce(&mut self) {
        let nodes = &self.nodes;
        for level in (0..self.depth).rev() {
            let lo = 1usize << level;
            let hi = lo << 1;
            (lo..hi).into_par_iter().with_min_len(4096).for_each(|k| {
                let s = nodes[2 * k].load(Ordering::Relaxed) + nodes[2 * k + 1].load(Ordering::Relaxed);
                nodes[k].store(s, Ordering::Relaxed);
            });
        }
        *self.dirty.get_mut() = false;
    }

    /// Whether leaves were written since the last reduction.
    pub fn is_dirty(&self) -> bool {
        self.dirty.load(Ordering::Relaxed)
    }

    /// Number of bits set to one. Requires a current reduction.
    pub fn count(&self) -> u32 {
        debug_assert!(!self.is_dirty(), "cbt read while reduction is stale");
        self.node(1)
    }

    /// Index of the `(rank + 1)`-th set bit in ascending slot order.
    pub fn one_to_bit_id(&self, rank: u32) -> Result<u32, CbtError> {
        let available = self.count();
        if rank >= available {
            return Err(CbtError::Rank { rank, available });
        }
        let mut rank = rank;
        let mut bit = 1usize;
        let leaves = self.capacity() as usize;
        while bit < leaves {
            bit *= 2;
            let left = self.node(bit);
            if rank >= left {
                rank -= left;
                bit += 1;
            }
        }
        Ok((bit - leaves) as u32)
    }

    /// Index of the `(rank + 1)`-th unset bit in ascending slot order.
    pub fn zero_to_bit_id(&self, rank: u32) -> Result<u32, CbtError> {
        let available = self.capacity() - self.count();
        if rank >= available {
            return Err(CbtError::Rank { rank, available });
        }
        let mut rank = rank;
        let mut bit = 1usize;
        let leaves = self.capacity() as usize;
        // capacity of the subtree rooted at the left child being inspected
        let mut c = self.capacity() / 2;
        while bit < leaves {
            bit *= 2;
            let zeros = c - self.node(bit);
            if rank >= zeros {
                rank -= zeros;
                bit += 1;
            }
            c /= 2;
        }
        Ok((bit - leaves) as u32)
    }

    /// Bytes held by the node array.
    pub fn memory_bytes(&self) -> usize {
        self.nodes.len() * std::mem::size_of::<AtomicU32>()
    }

    /// Per-level rendering of the heap, root first. Diagnostics only.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for level in 0..=self.depth {
            let lo = 1usize << level;
            let _ = write!(out, "{level:>2}:");
            for k in lo..(lo << 1) {
                let _ = write!(out, " {}", self.node(k));
            }
            out.push('\n');
        }
        out
    }
}

impl std::fmt::Debug for Cbt {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Cbt")
            .field("depth", &self.depth)
            .field("root", &self.node(1))
            .field("dirty", &self.is_dirty())
            .finish()
    }
}
