// SPDX-License-Identifier: Apache-2.0
// Copyright The amrt Authors

//! Next-hop forwarder: an unchecked version the verifier must refuse and a
//! bounds-checked fix.

use super::assemble_app;
use crate::vm::buffer::MessageBuffer;
use crate::vm::isa::Instruction;

pub const FAULTY_SOURCE: &str = include_str!("asm/faulty_forwarder.s");
pub const FIXED_SOURCE: &str = include_str!("asm/fixed_forwarder.s");
pub const TABLE_LEN: usize = 64;

pub fn faulty_program() -> Vec<Instruction> {
    assemble_app(FAULTY_SOURCE, &[]).expect("bundled source assembles")
}

pub fn fixed_program() -> Vec<Instruction> {
    assemble_app(FIXED_SOURCE, &[("TABLE_LEN", TABLE_LEN as i64)]).expect("bundled source assembles")
}

pub fn request(index: u16, table: &[u32]) -> Vec<u8> {
    let mut p = vec![0u8; 16];
    p[0..2].copy_from_slice(&index.to_le_bytes());
    for t in table {
        p.extend_from_slice(&t.to_le_bytes());
    }
    p
}

/// Next hop in the reply.
pub fn next_hop(msg: &MessageBuffer) -> u32 {
    u32::from_le_bytes(msg.app_region()[4..8].try_into().unwrap())
}

/// What the fixed forwarder answers for a raw app region.
pub fn reference(app: &[u8]) -> u32 {
    let idx = u16::from_le_bytes([app[0], app[1]]) as usize;
    if idx >= TABLE_LEN {
        return u32::MAX;
    }
    let o = 16 + 4 * idx;
    u32::from_le_bytes(app[o..o + 4].try_into().unwrap())
}
