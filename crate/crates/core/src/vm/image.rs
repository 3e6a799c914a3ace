// SPDX-License-Identifier: Apache-2.0
// Copyright The amrt Authors

//! Registered function images and their binary serialization.
//!
//! Binary format (little-endian):
//!
//! ```text
//! "AMFI" | version u8 = 1 | function_id u32 | udp_port u16
//! | n_insns u32 | n_insns x 8-byte instruction
//! | n_yields u32 | n_yields x (site u32, vector u64)
//! | n_regions u16 | n_regions x region id u8
//! ```

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use super::isa::{self, helper, DecodeError, Instruction, Op, INSN_SIZE};

pub const IMAGE_MAGIC: &[u8; 4] = b"AMFI";
pub const IMAGE_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ImageError {
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("yield site {0} has no relocation vector")]
    MissingVector(usize),
    #[error("vector given for slot {0}, which is not a yield site")]
    StrayVector(usize),
    #[error("bad image magic")]
    BadMagic,
    #[error("unsupported image version {0}")]
    BadVersion(u8),
    #[error("image truncated")]
    Truncated,
    #[error("trailing bytes after image")]
    Trailing,
}

/// Verified bytecode plus everything the runtime needs to resume it.
///
/// Immutable once built; share it behind an `Arc`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionImage {
    function_id: u32,
    udp_port: u16,
    bytecode: Vec<Instruction>,
    ops: Vec<Option<Op>>,
    yield_vectors: BTreeMap<usize, u64>,
    allowed_regions: BTreeSet<u8>,
}

/// Slot indices of every yielding helper call.
pub fn yield_sites(ops: &[Option<Op>]) -> Vec<usize> {
    ops.iter()
        .enumerate()
        .filter_map(|(pc, op)| match op {
            Some(Op::Call { helper: h }) if helper::is_yielding(*h) => Some(pc),
            _ => None,
        })
        .collect()
}

impl FunctionImage {
    /// Assembles an image from parts without running the verifier.
    ///
    /// Registration goes through the switch registry, which verifies first.
    /// Tests use this directly to build images with hand-made vectors.
    pub fn from_parts(
        function_id: u32,
        udp_port: u16,
        bytecode: Vec<Instruction>,
        yield_vectors: BTreeMap<usize, u64>,
        allowed_regions: BTreeSet<u8>,
    ) -> Result<Self, ImageError> {
        let ops = isa::decode(&bytecode)?;
        let sites = yield_sites(&ops);
        for &s in &sites {
            if !yield_vectors.contains_key(&s) {
                return Err(ImageError::MissingVector(s));
            }
        }
        for &s in yield_vectors.keys() {
            if sites.binary_search(&s).is_err() {
                return Err(ImageError::StrayVector(s));
            }
        }
        Ok(Self {
            function_id,
            udp_port,
            bytecode,
            ops,
            yield_vectors,
            allowed_regions,
        })
    }

    pub fn function_id(&self) -> u32 {
        self.function_id
    }

    pub fn udp_port(&self) -> u16 {
        self.udp_port
    }

    pub fn bytecode(&self) -> &[Instruction] {
        &self.bytecode
    }

    pub fn ops(&self) -> &[Option<Op>] {
        &self.ops
    }

    pub fn yield_vectors(&self) -> &BTreeMap<usize, u64> {
        &self.yield_vectors
    }

    pub fn vector_at(&self, site: usize) -> Option<u64> {
        self.yield_vectors.get(&site).copied()
    }

    pub fn allowed_regions(&self) -> &BTreeSet<u8> {
        &self.allowed_regions
    }

    pub fn allows(&self, region: u8) -> bool {
        self.allowed_regions.contains(&region)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.bytecode.len() * INSN_SIZE);
        out.extend_from_slice(IMAGE_MAGIC);
        out.push(IMAGE_VERSION);
        out.extend_from_slice(&self.function_id.to_le_bytes());
        out.extend_from_slice(&self.udp_port.to_le_bytes());
        out.extend_from_slice(&(self.bytecode.len() as u32).to_le_bytes());
        out.extend_from_slice(&isa::encode_program(&self.bytecode));
        out.extend_from_slice(&(self.yield_vectors.len() as u32).to_le_bytes());
        for (&site, &v) in &self.yield_vectors {
            out.extend_from_slice(&(site as u32).to_le_bytes());
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.allowed_regions.len() as u16).to_le_bytes());
        out.extend(self.allowed_regions.iter().copied());
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, ImageError> {
        let mut r = Reader { b, pos: 0 };
        if r.take(4)? != IMAGE_MAGIC {
            return Err(ImageError::BadMagic);
        }
        let version = r.take(1)?[0];
        if version != IMAGE_VERSION {
            return Err(ImageError::BadVersion(version));
        }
        let function_id = r.u32()?;
        let udp_port = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
        let n = r.u32()? as usize;
        let code = r.take(n.checked_mul(INSN_SIZE).ok_or(ImageError::Truncated)?)?;
        let bytecode = isa::decode_program(code)?;
        let n_yields = r.u32()?;
        let mut yield_vectors = BTreeMap::new();
        for _ in 0..n_yields {
            let site = r.u32()? as usize;
            let v = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
            yield_vectors.insert(site, v);
        }
        let n_regions = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
        let allowed_regions = r.take(n_regions as usize)?.iter().copied().collect();
        if r.pos != b.len() {
            return Err(ImageError::Trailing);
        }
        Self::from_parts(function_id, udp_port, bytecode, yield_vectors, allowed_regions)
    }
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ImageError> {
        let end = self.pos.checked_add(n).ok_or(ImageError::Truncated)?;
        let s = self.b.get(self.pos..end).ok_or(ImageError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ImageError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
