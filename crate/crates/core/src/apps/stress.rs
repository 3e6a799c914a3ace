// SPDX-License-Identifier: Apache-2.0
// Copyright The amrt Authors

//! Relocation stress function: every relocatable location holds a buffer
//! pointer at every yield.

use super::assemble_app;
use crate::vm::buffer::{MessageBuffer, OFF_APP, STACK_SLOTS};
use crate::vm::isa::Instruction;

pub const SOURCE: &str = include_str!("asm/reloc_stress.s");
pub const PAYLOAD_LEN: usize = 1208;
pub const DEFAULT_ROUNDS: u32 = 4;
/// App offset the per-round region word is copied to.
pub const K_OFFSET: usize = 1200;

pub fn program(region: u8, rounds: u32) -> Vec<Instruction> {
    assemble_app(SOURCE, &[("REGION", region as i64), ("ROUNDS", rounds as i64)]).expect("bundled source assembles")
}

/// Expected reply computed on plain byte arrays. `region` holds one u64
/// per round. Returns the final app region prefix and stack slot 63 (the
/// word behind r7).
pub fn reference(payload: &[u8], region: &[u64], rounds: u32) -> (Vec<u8>, u64) {
    let mut app = vec![0u8; PAYLOAD_LEN];
    app[..payload.len()].copy_from_slice(payload);
    let mut slot63 = 0u64;
    let rd = |a: &[u8], o: usize| u64::from_le_bytes(a[o..o + 8].try_into().unwrap());
    for round in 0..rounds as usize {
        let mut k = region[round];
        app[K_OFFSET..K_OFFSET + 8].copy_from_slice(&k.to_le_bytes());
        let mut step = |v: u64| {
            let n = v.wrapping_mul(3).wrapping_add(k);
            k ^= n;
            n
        };
        let v = step(rd(&app, 0));
        app[0..8].copy_from_slice(&v.to_le_bytes());
        slot63 = step(slot63);
        for o in [800usize, 1000].into_iter().chain((0..60).map(|j| 16 + 8 * j)) {
            let v = step(rd(&app, o));
            app[o..o + 8].copy_from_slice(&v.to_le_bytes());
        }
    }
    (app, slot63)
}

/// Reads back what [`reference`] predicts from a finished message.
pub fn observed(msg: &MessageBuffer) -> (Vec<u8>, u64) {
    let app = msg.as_bytes()[OFF_APP..OFF_APP + PAYLOAD_LEN].to_vec();
    (app, msg.stack_slot(STACK_SLOTS - 1))
}
