// SPDX-License-Identifier: Apache-2.0
// Copyright The amrt Authors

//! Example functions, their data layouts and in-memory reference models.
//!
//! Each function is an assembler source under `apps/asm/`. Parameters such
//! as region ids are `.default` constants that [`assemble_app`] overrides.

pub mod btree;
pub mod forwarder;
pub mod llist;
pub mod mica;
pub mod store;
pub mod stress;

use crate::vm::asm::{assemble, AsmError};
use crate::vm::buffer::MessageBuffer;
use crate::vm::isa::Instruction;

/// Every bundled source by name.
pub const SOURCES: &[(&str, &str)] = &[
    ("llist", llist::SOURCE),
    ("mica_get", mica::GET_SOURCE),
    ("mica_put", mica::PUT_SOURCE),
    ("btree_get", btree::GET_SOURCE),
    ("btree_get_cached", btree::GET_CACHED_SOURCE),
    ("btree_put", btree::PUT_SOURCE),
    ("faulty_forwarder", forwarder::FAULTY_SOURCE),
    ("fixed_forwarder", forwarder::FIXED_SOURCE),
    ("reloc_stress", stress::SOURCE),
    ("store16", store::SOURCE),
];

pub fn source(name: &str) -> Option<&'static str> {
    SOURCES.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

/// Assembles `src` with `consts` defined ahead of the source's defaults.
pub fn assemble_app(src: &str, consts: &[(&str, i64)]) -> Result<Vec<Instruction>, AsmError> {
    let mut text = String::new();
    for (k, v) in consts {
        text.push_str(&format!(".equ {k}, {v}\n"));
    }
    let head = text.lines().count();
    text.push_str(src);
    assemble(&text).map_err(|mut e| {
        e.line = e.line.saturating_sub(head);
        e
    })
}

/// The multiplicative mix every hashing function uses.
pub fn mix64(key: u64) -> u64 {
    let h = key.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    h ^ (h >> 32)
}

/// Key-value request payload: `u32 8, u32 len, u64 key, value`.
pub fn kv_request(key: u64, value: &[u8]) -> Vec<u8> {
    let mut p = Vec::with_capacity(16 + value.len());
    p.extend_from_slice(&8u32.to_le_bytes());
    p.extend_from_slice(&(value.len() as u32).to_le_bytes());
    p.extend_from_slice(&key.to_le_bytes());
    p.extend_from_slice(value);
    p
}

/// Reply of the key-value functions: `u32 status, u32 len, u64 key, value`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KvReply {
    pub status: u32,
    pub key: u64,
    pub value: Vec<u8>,
}

impl KvReply {
    pub fn parse(msg: &MessageBuffer) -> Self {
        let app = msg.app_region();
        let status = u32::from_le_bytes(app[0..4].try_into().unwrap());
        let len = u32::from_le_bytes(app[4..8].try_into().unwrap()) as usize;
        let key = u64::from_le_bytes(app[8..16].try_into().unwrap());
        let end = (16 + len).min(app.len());
        Self {
            status,
            key,
            value: app[16..end].to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verifier::verify;

    #[test]
    fn bundled_sources_assemble() {
        for (name, src) in SOURCES {
            assemble_app(src, &[]).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn verdicts() {
        for (name, src) in SOURCES {
            let r = verify(&assemble_app(src, &[]).unwrap());
            assert_eq!(r.is_accepted(), *name != "faulty_forwarder", "{name}: {:?}", r.rejection());
        }
    }

    #[test]
    fn error_lines_refer_to_the_source() {
        let e = assemble_app("exit\nbogus r1", &[("A", 1), ("B", 2)]).unwrap_err();
        assert_eq!(e.line, 2);
    }
}
