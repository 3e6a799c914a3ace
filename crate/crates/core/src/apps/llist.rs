// SPDX-License-Identifier: Apache-2.0
// Copyright The amrt Authors

//! Linked-list traversal over a region.

use rand::seq::SliceRandom;
use rand::Rng;

use super::assemble_app;
use crate::vm::buffer::MessageBuffer;
use crate::vm::isa::Instruction;

pub const SOURCE: &str = include_str!("asm/llist.s");
pub const NODE_LEN: usize = 8;
pub const DEFAULT_MAX_LEN: u32 = 4096;

pub fn program(region: u8, max_len: u32) -> Vec<Instruction> {
    assemble_app(SOURCE, &[("REGION", region as i64), ("MAX_LEN", max_len as i64)]).expect("bundled source assembles")
}

/// Lays out a list of `values` in `slots` node positions, head at offset 0,
/// remaining nodes scattered at random.
///
/// # Panics
/// If `slots < values.len()` or `values` is empty.
pub fn layout<R: Rng>(values: &[u32], slots: usize, rng: &mut R) -> Vec<u8> {
    assert!(!values.is_empty() && slots >= values.len());
    let mut pos: Vec<usize> = (1..slots).collect();
    pos.shuffle(rng);
    let mut at = vec![0usize];
    at.extend_from_slice(&pos[..values.len() - 1]);
    let mut bytes = vec![0u8; slots * NODE_LEN];
    for (i, v) in values.iter().enumerate() {
        let next = at.get(i + 1).map_or(0, |p| (p * NODE_LEN) as u32);
        let o = at[i] * NODE_LEN;
        bytes[o..o + 4].copy_from_slice(&next.to_le_bytes());
        bytes[o + 4..o + 8].copy_from_slice(&v.to_le_bytes());
    }
    bytes
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ListReply {
    pub last_node: [u8; 8],
    pub hops: u64,
    pub status: u32,
}

impl ListReply {
    pub fn parse(msg: &MessageBuffer) -> Self {
        let a = msg.app_region();
        Self {
            last_node: a[0..8].try_into().unwrap(),
            hops: u64::from_le_bytes(a[8..16].try_into().unwrap()),
            status: u32::from_le_bytes(a[16..20].try_into().unwrap()),
        }
    }

    pub fn last_value(&self) -> u32 {
        u32::from_le_bytes(self.last_node[4..8].try_into().unwrap())
    }
}

/// Direct traversal of a region image.
pub fn reference(region: &[u8], max_len: u32) -> ListReply {
    let mut r = ListReply {
        last_node: [0; 8],
        hops: 0,
        status: 0,
    };
    let mut cur = 0usize;
    loop {
        let Some(node) = region.get(cur..cur + NODE_LEN) else {
            r.status = 1;
            return r;
        };
        r.last_node.copy_from_slice(node);
        r.hops += 1;
        let next = u32::from_le_bytes(node[0..4].try_into().unwrap()) as usize;
        if next == 0 || r.hops >= max_len as u64 {
            return r;
        }
        cur = next;
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn layout_is_a_chain_from_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = layout(&[10, 20, 30], 16, &mut rng);
        let r = reference(&img, 100);
        assert_eq!((r.hops, r.last_value(), r.status), (3, 30, 0));
        assert_eq!(reference(&img, 2).hops, 2);
    }

    #[test]
    fn dangling_next_fails() {
        let mut img = vec![0u8; 16];
        img[0..4].copy_from_slice(&64u32.to_le_bytes());
        let r = reference(&img, 10);
        assert_eq!((r.hops, r.status), (1, 1));
    }
}
