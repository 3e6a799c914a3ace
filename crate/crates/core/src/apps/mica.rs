// SPDX-License-Identifier: Apache-2.0
// Copyright The amrt Authors

//! Bucketized hash table with an item log, plus its reference model.

use std::collections::{HashMap, HashSet};

use super::{assemble_app, mix64};
use crate::vm::isa::Instruction;

pub const GET_SOURCE: &str = include_str!("asm/mica_get.s");
pub const PUT_SOURCE: &str = include_str!("asm/mica_put.s");

pub const BUCKET_LEN: u64 = 72;
pub const ENTRIES: usize = 8;
pub const ITEM_HEADER: u64 = 16;
pub const OFFSET_MASK: u64 = (1 << 48) - 1;

pub mod status {
    pub const OK: u32 = 0;
    pub const NOT_FOUND: u32 = 1;
    pub const UDMA_FAILURE: u32 = 2;
    pub const CORRUPT: u32 = 3;
    pub const RETRY_EXCEEDED: u32 = 4;
    pub const BUCKET_FULL: u32 = 5;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    /// Power of two.
    pub nbuckets: u64,
    pub max_value: u32,
}

impl Default for Layout {
    fn default() -> Self {
        Self {
            nbuckets: 1 << 16,
            max_value: 256,
        }
    }
}

impl Layout {
    pub fn bucket_of(&self, key: u64) -> u64 {
        mix64(key) & (self.nbuckets - 1)
    }

    pub fn tag_of(key: u64) -> u64 {
        mix64(key) >> 48
    }

    pub fn bucket_off(&self, b: u64) -> u64 {
        8 + BUCKET_LEN * b
    }

    pub fn log_start(&self) -> u64 {
        8 + BUCKET_LEN * self.nbuckets
    }

    pub fn item_len(vlen: usize) -> u64 {
        (ITEM_HEADER + vlen as u64 + 7) & !7
    }

    fn consts(&self, region: u8) -> [(&'static str, i64); 3] {
        [
            ("REGION", region as i64),
            ("NBUCKETS", self.nbuckets as i64),
            ("MAXV", self.max_value as i64),
        ]
    }

    pub fn get_program(&self, region: u8) -> Vec<Instruction> {
        assemble_app(GET_SOURCE, &self.consts(region)).expect("bundled source assembles")
    }

    pub fn put_program(&self, region: u8) -> Vec<Instruction> {
        assemble_app(PUT_SOURCE, &self.consts(region)).expect("bundled source assembles")
    }
}

/// Region image built directly by the harness (preloading), following the
/// same layout rules the PUT function uses.
#[derive(Debug, Clone)]
pub struct TableImage {
    pub layout: Layout,
    pub bytes: Vec<u8>,
}

impl TableImage {
    /// An empty table with room for `log_bytes` of items.
    pub fn new(layout: Layout, log_bytes: u64) -> Self {
        let size = layout.log_start() + log_bytes;
        let mut bytes = vec![0u8; size as usize];
        bytes[0..4].copy_from_slice(&(layout.log_start() as u32).to_le_bytes());
        Self { layout, bytes }
    }

    fn u64_at(&self, o: u64) -> u64 {
        u64::from_le_bytes(self.bytes[o as usize..o as usize + 8].try_into().unwrap())
    }

    fn u32_at(&self, o: u64) -> u32 {
        u32::from_le_bytes(self.bytes[o as usize..o as usize + 4].try_into().unwrap())
    }

    fn put_u64(&mut self, o: u64, v: u64) {
        self.bytes[o as usize..o as usize + 8].copy_from_slice(&v.to_le_bytes());
    }

    pub fn tail(&self) -> u64 {
        self.u32_at(0) as u64
    }

    pub fn entry(&self, bucket: u64, i: usize) -> u64 {
        self.u64_at(self.layout.bucket_off(bucket) + 8 + 8 * i as u64)
    }

    fn item_key(&self, off: u64) -> Option<u64> {
        (off + ITEM_HEADER <= self.bytes.len() as u64).then(|| self.u64_at(off + 8))
    }

    /// Inserts or overwrites; returns the PUT status code.
    pub fn insert(&mut self, key: u64, value: &[u8]) -> u32 {
        if value.len() > self.layout.max_value as usize {
            return status::CORRUPT;
        }
        let b = self.layout.bucket_of(key);
        let tag = Layout::tag_of(key);
        let mut slot = None;
        let mut existing = None;
        for i in 0..ENTRIES {
            let e = self.entry(b, i);
            if e == 0 {
                slot.get_or_insert(i);
            } else if e >> 48 == tag && self.item_key(e & OFFSET_MASK) == Some(key) {
                existing = Some((i, e & OFFSET_MASK));
                break;
            }
        }
        if let Some((i, off)) = existing {
            if self.u32_at(off + 4) as usize == value.len() {
                let o = (off + ITEM_HEADER) as usize;
                self.bytes[o..o + value.len()].copy_from_slice(value);
                return status::OK;
            }
            slot = Some(i);
        }
        let Some(i) = slot else {
            return status::BUCKET_FULL;
        };
        let off = self.tail();
        let len = Layout::item_len(value.len());
        if off + ITEM_HEADER + value.len() as u64 > self.bytes.len() as u64 {
            return status::UDMA_FAILURE;
        }
        self.bytes[0..4].copy_from_slice(&((off + len) as u32).to_le_bytes());
        let o = off as usize;
        self.bytes[o..o + 4].copy_from_slice(&8u32.to_le_bytes());
        self.bytes[o + 4..o + 8].copy_from_slice(&(value.len() as u32).to_le_bytes());
        self.bytes[o + 8..o + 16].copy_from_slice(&key.to_le_bytes());
        self.bytes[o + 16..o + 16 + value.len()].copy_from_slice(value);
        let eo = self.layout.bucket_off(b) + 8 + 8 * i as u64;
        self.put_u64(eo, tag << 48 | off);
        status::OK
    }

    /// UDMA operations a GET for `key` issues against this image, counted by
    /// walking the bucket: one bucket read, one header read per tag match
    /// and one value read on a hit.
    pub fn get_udma_ops(&self, key: u64) -> u32 {
        let b = self.layout.bucket_of(key);
        let tag = Layout::tag_of(key);
        let mut n = 1;
        for i in 0..ENTRIES {
            let e = self.entry(b, i);
            if e != 0 && e >> 48 == tag {
                n += 1;
                if self.item_key(e & OFFSET_MASK) == Some(key) {
                    return n + 1;
                }
            }
        }
        n
    }
}

/// Reference semantics: a map plus per-bucket capacity.
#[derive(Debug, Clone)]
pub struct Reference {
    layout: Layout,
    map: HashMap<u64, Vec<u8>>,
    per_bucket: HashMap<u64, HashSet<u64>>,
}

impl Reference {
    pub fn new(layout: Layout) -> Self {
        Self {
            layout,
            map: HashMap::new(),
            per_bucket: HashMap::new(),
        }
    }

    pub fn get(&self, key: u64) -> Option<&[u8]> {
        self.map.get(&key).map(Vec::as_slice)
    }

    pub fn put(&mut self, key: u64, value: &[u8]) -> u32 {
        if value.len() > self.layout.max_value as usize {
            return status::CORRUPT;
        }
        let keys = self.per_bucket.entry(self.layout.bucket_of(key)).or_default();
        if !keys.contains(&key) && keys.len() >= ENTRIES {
            return status::BUCKET_FULL;
        }
        keys.insert(key);
        self.map.insert(key, value.to_vec());
        status::OK
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Layout {
        Layout {
            nbuckets: 4,
            max_value: 32,
        }
    }

    #[test]
    fn insert_and_count() {
        let mut t = TableImage::new(small(), 4096);
        assert_eq!(t.insert(7, b"seven"), status::OK);
        assert_eq!(t.get_udma_ops(7), 3);
        assert_eq!(t.get_udma_ops(8), 1);
        assert_eq!(t.insert(7, b"SEVEN"), status::OK);
        let tail = t.tail();
        assert_eq!(t.insert(7, b"longer value"), status::OK);
        assert_eq!(t.tail(), tail + Layout::item_len(12));
    }

    #[test]
    fn bucket_capacity_matches_reference() {
        let mut t = TableImage::new(small(), 1 << 16);
        let mut r = Reference::new(small());
        for k in 0..200u64 {
            assert_eq!(t.insert(k, &k.to_le_bytes()), r.put(k, &k.to_le_bytes()), "key {k}");
        }
        assert_eq!(r.len(), 32);
    }
}
