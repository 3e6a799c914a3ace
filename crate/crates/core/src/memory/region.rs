// SPDX-License-Identifier: Apache-2.0
// Copyright The amrt Authors

//! Fixed-size byte stores addressable from any node.
//!
//! Bytes live in 32-bit atomic words so that UCAS/UFAA are linearizable
//! against each other and against partial-word writes. Bulk copies are not
//! atomic as a whole.

use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;

use thiserror::Error;

use crate::NodeId;

/// Region ids are 8 bits; id 0 names the message buffer and is never allocated.
pub const MAX_REGIONS: usize = 255;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegionError {
    #[error("region size must be positive")]
    ZeroSize,
    #[error("all {MAX_REGIONS} region ids are in use")]
    CapacityExceeded,
    #[error("region id {0} already exists")]
    DuplicateId(u8),
    #[error("region id 0 is reserved for the message buffer")]
    ReservedId,
    #[error("access [{offset}, {offset}+{len}) outside region of {size} bytes")]
    OutOfBounds { offset: u64, len: u64, size: u64 },
    #[error("atomic access at {0} is not 4-byte aligned")]
    Misaligned(u64),
}

#[derive(Debug)]
pub struct MemoryRegion {
    id: u8,
    size: u64,
    home: NodeId,
    words: Box<[AtomicU32]>,
}

impl MemoryRegion {
    fn new(id: u8, size: u64, home: NodeId) -> Self {
        let n = size.div_ceil(4) as usize;
        Self {
            id,
            size,
            home,
            words: (0..n).map(|_| AtomicU32::new(0)).collect(),
        }
    }

    pub fn id(&self) -> u8 {
        self.id
    }

    pub fn size(&self) -> u64 {
        self.size
    }

    pub fn home(&self) -> NodeId {
        self.home
    }

    pub fn check(&self, offset: u64, len: u64) -> Result<(), RegionError> {
        match offset.checked_add(len) {
            Some(end) if end <= self.size => Ok(()),
            _ => Err(RegionError::OutOfBounds {
                offset,
                len,
                size: self.size,
            }),
        }
    }

    pub fn read(&self, offset: u64, out: &mut [u8]) -> Result<(), RegionError> {
        self.check(offset, out.len() as u64)?;
        let mut pos = offset as usize;
        let mut i = 0;
        while i < out.len() {
            let w = self.words[pos / 4].load(Ordering::Acquire).to_le_bytes();
            let k = pos % 4;
            let n = (4 - k).min(out.len() - i);
            out[i..i + n].copy_from_slice(&w[k..k + n]);
            i += n;
            pos += n;
        }
        Ok(())
    }

    pub fn write(&self, offset: u64, data: &[u8]) -> Result<(), RegionError> {
        self.check(offset, data.len() as u64)?;
        let mut pos = offset as usize;
        let mut i = 0;
        while i < data.len() {
            let k = pos % 4;
            let n = (4 - k).min(data.len() - i);
            let word = &self.words[pos / 4];
            if n == 4 {
                word.store(u32::from_le_bytes(data[i..i + 4].try_into().unwrap()), Ordering::Release);
            } else {
                let _ = word.fetch_update(Ordering::AcqRel, Ordering::Acquire, |w| {
                    let mut b = w.to_le_bytes();
                    b[k..k + n].copy_from_slice(&data[i..i + n]);
                    Some(u32::from_le_bytes(b))
                });
            }
            i += n;
            pos += n;
        }
        Ok(())
    }

    fn word(&self, offset: u64) -> Result<&AtomicU32, RegionError> {
        if offset % 4 != 0 {
            return Err(RegionError::Misaligned(offset));
        }
        self.check(offset, 4)?;
        Ok(&self.words[(offset / 4) as usize])
    }

    pub fn load_u32(&self, offset: u64) -> Result<u32, RegionError> {
        Ok(self.word(offset)?.load(Ordering::SeqCst))
    }

    /// `*dst = new if *dst == old`; returns the prior value.
    pub fn cas(&self, offset: u64, old: u32, new: u32) -> Result<u32, RegionError> {
        let w = self.word(offset)?;
        Ok(match w.compare_exchange(old, new, Ordering::SeqCst, Ordering::SeqCst) {
            Ok(v) | Err(v) => v,
        })
    }

    /// `*dst += val` (wrapping); returns the prior value.
    pub fn faa(&self, offset: u64, val: u32) -> Result<u32, RegionError> {
        Ok(self.word(offset)?.fetch_add(val, Ordering::SeqCst))
    }

    pub fn snapshot(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.size as usize];
        self.read(0, &mut out).expect("whole region is in bounds");
        out
    }
}

/// Cluster-wide region registry, indexed by id.
#[derive(Debug, Clone)]
pub struct RegionTable {
    slots: Vec<Option<Arc<MemoryRegion>>>,
}

impl Default for RegionTable {
    fn default() -> Self {
        Self::new()
    }
}

impl RegionTable {
    pub fn new() -> Self {
        Self {
            slots: vec![None; MAX_REGIONS + 1],
        }
    }

    /// Creates a zeroed region under the lowest free id.
    pub fn create_region(&mut self, size: u64, home: NodeId) -> Result<u8, RegionError> {
        let id = (1..=MAX_REGIONS)
            .find(|&i| self.slots[i].is_none())
            .ok_or(RegionError::CapacityExceeded)? as u8;
        self.create_region_with_id(id, size, home)?;
        Ok(id)
    }

    pub fn create_region_with_id(&mut self, id: u8, size: u64, home: NodeId) -> Result<(), RegionError> {
        if size == 0 {
            return Err(RegionError::ZeroSize);
        }
        if id == 0 {
            return Err(RegionError::ReservedId);
        }
        if self.slots[id as usize].is_some() {
            return Err(RegionError::DuplicateId(id));
        }
        self.slots[id as usize] = Some(Arc::new(MemoryRegion::new(id, size, home)));
        Ok(())
    }

    pub fn get(&self, id: u8) -> Option<&Arc<MemoryRegion>> {
        self.slots[id as usize].as_ref()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<MemoryRegion>> {
        self.slots.iter().flatten()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn creation_rules() {
        let mut t = RegionTable::new();
        let a = t.create_region(4096, 2).unwrap();
        let b = t.create_region(16, 2).unwrap();
        assert_ne!(a, b);
        assert_eq!(t.get(a).unwrap().snapshot(), vec![0; 4096]);
        assert_eq!(t.create_region(0, 2), Err(RegionError::ZeroSize));
        assert_eq!(t.create_region_with_id(a, 8, 2), Err(RegionError::DuplicateId(a)));
        for _ in 2..MAX_REGIONS {
            t.create_region(1, 2).unwrap();
        }
        assert_eq!(t.create_region(1, 2), Err(RegionError::CapacityExceeded));
    }

    #[test]
    fn cas_and_faa_semantics() {
        let mut t = RegionTable::new();
        let id = t.create_region(64, 1).unwrap();
        let r = t.get(id).unwrap().clone();
        r.write(0, &5u32.to_le_bytes()).unwrap();
        assert_eq!(r.cas(0, 5, 9), Ok(5));
        assert_eq!(r.load_u32(0), Ok(9));
        assert_eq!(r.cas(0, 7, 1), Ok(9));
        assert_eq!(r.load_u32(0), Ok(9));
        r.write(4, &10u32.to_le_bytes()).unwrap();
        assert_eq!(r.faa(4, 5), Ok(10));
        assert_eq!(r.load_u32(4), Ok(15));
        assert_eq!(r.faa(8, 0), Ok(0));
        assert_eq!(r.cas(2, 0, 0), Err(RegionError::Misaligned(2)));
        assert!(r.faa(64, 1).is_err());
    }

    proptest! {
        #[test]
        fn unaligned_writes_read_back(size in 1u64..200, off in 0u64..200, data in proptest::collection::vec(any::<u8>(), 0..64)) {
            let mut t = RegionTable::new();
            let id = t.create_region(size, 1).unwrap();
            let r = t.get(id).unwrap().clone();
            let mut model = vec![0u8; size as usize];
            let res = r.write(off, &data);
            if off + data.len() as u64 <= size {
                prop_assert!(res.is_ok());
                model[off as usize..off as usize + data.len()].copy_from_slice(&data);
            } else {
                prop_assert!(res.is_err());
            }
            prop_assert_eq!(r.snapshot(), model);
        }
    }
}
