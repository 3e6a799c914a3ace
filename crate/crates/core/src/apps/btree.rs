// SPDX-License-Identifier: Apache-2.0
// Copyright The amrt Authors

//! Read-mostly B-tree packed into one region, and its NIC-side cache.

use super::{assemble_app, mix64};
use crate::vm::isa::Instruction;

pub const GET_SOURCE: &str = include_str!("asm/btree_get.s");
pub const GET_CACHED_SOURCE: &str = include_str!("asm/btree_get_cached.s");
pub const PUT_SOURCE: &str = include_str!("asm/btree_put.s");

pub const NODE_LEN: usize = 264;
pub const MAX_FANOUT: usize = 16;
pub const CACHE_LINE: u64 = 24;
pub const DEFAULT_CACHE_SLOTS: u64 = 1024;

pub mod status {
    pub const OK: u32 = 0;
    pub const NOT_FOUND: u32 = 1;
    pub const UDMA_FAILURE: u32 = 2;
    pub const CORRUPT: u32 = 3;
}

pub fn get_program(region: u8) -> Vec<Instruction> {
    assemble_app(GET_SOURCE, &[("REGION", region as i64)]).expect("bundled source assembles")
}

pub fn get_cached_program(region: u8, cache_region: u8, cache_slots: u64) -> Vec<Instruction> {
    assemble_app(
        GET_CACHED_SOURCE,
        &[
            ("REGION", region as i64),
            ("CACHE_REGION", cache_region as i64),
            ("CACHE_SLOTS", cache_slots as i64),
        ],
    )
    .expect("bundled source assembles")
}

/// `cache_region = None` builds the variant without invalidation.
pub fn put_program(region: u8, cache_region: Option<u8>, cache_slots: u64) -> Vec<Instruction> {
    assemble_app(
        PUT_SOURCE,
        &[
            ("REGION", region as i64),
            ("CACHE_REGION", cache_region.unwrap_or(0) as i64),
            ("CACHE_SLOTS", cache_slots as i64),
            ("INVALIDATE", cache_region.is_some() as i64),
        ],
    )
    .expect("bundled source assembles")
}

/// Byte offset of `key`'s slot in the cache region.
pub fn cache_slot(key: u64, slots: u64) -> u64 {
    (mix64(key) & (slots - 1)) * CACHE_LINE
}

#[derive(Debug, Clone)]
pub struct TreeImage {
    pub bytes: Vec<u8>,
    pub depth: usize,
    pub nodes: usize,
}

/// Levels needed for `n` keys at `fanout`.
pub fn depth_for(n: usize, fanout: usize) -> usize {
    let mut d = 1;
    let mut cap = fanout;
    while cap < n {
        cap = cap.saturating_mul(fanout);
        d += 1;
    }
    d
}

/// Smallest fanout giving depth at most `depth` for `n` keys.
pub fn fanout_for_depth(n: usize, depth: usize) -> usize {
    (2..=MAX_FANOUT)
        .find(|&f| depth_for(n, f) <= depth)
        .unwrap_or(MAX_FANOUT)
}

struct Node {
    leaf: bool,
    keys: Vec<u64>,
    vals: Vec<u64>,
}

/// Packs `pairs` (sorted by key, keys distinct) bottom-up with `fanout`
/// entries per node; the root lands at offset 0.
///
/// # Panics
/// If `pairs` is empty, unsorted, or `fanout` is outside `2..=16`.
pub fn build(pairs: &[(u64, u64)], fanout: usize) -> TreeImage {
    assert!(!pairs.is_empty());
    assert!((2..=MAX_FANOUT).contains(&fanout));
    assert!(pairs.windows(2).all(|w| w[0].0 < w[1].0), "keys must be sorted and distinct");
    // levels[0] = leaves; children are referenced by index into the level below.
    let mut levels: Vec<Vec<Node>> = vec![pairs
        .chunks(fanout)
        .map(|c| Node {
            leaf: true,
            keys: c.iter().map(|p| p.0).collect(),
            vals: c.iter().map(|p| p.1).collect(),
        })
        .collect()];
    while levels.last().unwrap().len() > 1 {
        let below = levels.last().unwrap();
        let up = (0..below.len())
            .collect::<Vec<_>>()
            .chunks(fanout)
            .map(|c| Node {
                leaf: false,
                keys: c.iter().map(|&i| below[i].keys[0]).collect(),
                vals: c.iter().map(|&i| i as u64).collect(),
            })
            .collect();
        levels.push(up);
    }
    let depth = levels.len();
    // Offsets top-down so the root is node 0.
    let mut first = vec![0usize; depth];
    let mut n = 0;
    for l in (0..depth).rev() {
        first[l] = n;
        n += levels[l].len();
    }
    let mut bytes = vec![0u8; n * NODE_LEN];
    for (l, level) in levels.iter().enumerate() {
        for (i, node) in level.iter().enumerate() {
            let o = (first[l] + i) * NODE_LEN;
            let b = &mut bytes[o..o + NODE_LEN];
            b[0..4].copy_from_slice(&(node.leaf as u32).to_le_bytes());
            b[4..8].copy_from_slice(&(node.keys.len() as u32).to_le_bytes());
            for (j, (&k, &v)) in node.keys.iter().zip(&node.vals).enumerate() {
                let v = if node.leaf { v } else { ((first[l - 1] + v as usize) * NODE_LEN) as u64 };
                b[8 + 8 * j..16 + 8 * j].copy_from_slice(&k.to_le_bytes());
                b[136 + 8 * j..144 + 8 * j].copy_from_slice(&v.to_le_bytes());
            }
        }
    }
    TreeImage { bytes, depth, nodes: n }
}

impl TreeImage {
    /// Walks the image: the value (or None) and the number of nodes read.
    pub fn lookup(&self, key: u64) -> (Option<u64>, usize) {
        let rd = |o: usize| u64::from_le_bytes(self.bytes[o..o + 8].try_into().unwrap());
        let mut off = 0usize;
        let mut reads = 0;
        loop {
            reads += 1;
            let leaf = self.bytes[off] != 0;
            let count = u32::from_le_bytes(self.bytes[off + 4..off + 8].try_into().unwrap()) as usize;
            let keys: Vec<u64> = (0..count).map(|j| rd(off + 8 + 8 * j)).collect();
            if leaf {
                return (keys.iter().position(|&k| k == key).map(|j| rd(off + 136 + 8 * j)), reads);
            }
            match keys.iter().rposition(|&k| k <= key) {
                Some(j) => off = rd(off + 136 + 8 * j) as usize,
                None => return (None, reads),
            }
        }
    }
}
