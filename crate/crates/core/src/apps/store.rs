// SPDX-License-Identifier: Apache-2.0
// Copyright The amrt Authors

//! Fixed-size remote store: one 16-byte UDMA write per message.

use super::{assemble_app, kv_request};
use crate::vm::isa::Instruction;

pub const SOURCE: &str = include_str!("asm/store16.s");
pub const SLOT_LEN: u64 = 16;

pub fn program(region: u8, slots: u64) -> Vec<Instruction> {
    assemble_app(SOURCE, &[("REGION", region as i64), ("SLOTS", slots as i64)]).expect("bundled source assembles")
}

pub fn request(key: u64, value: [u8; 16]) -> Vec<u8> {
    kv_request(key, &value)
}

pub fn slot_offset(key: u64, slots: u64) -> u64 {
    (key & (slots - 1)) * SLOT_LEN
}
