// SPDX-License-Identifier: Apache-2.0
// Copyright The amrt Authors

//! Region addresses and UDMA descriptors.

use serde::{Deserialize, Serialize};

/// Bits of a packed address available for the offset.
pub const OFFSET_BITS: u32 = 56;
const OFFSET_MASK: u64 = (1 << OFFSET_BITS) - 1;

/// Region id 0 always names the message's own buffer.
pub const BUFFER_REGION: u8 = 0;

/// `(region_id, offset)` pair.
///
/// In registers it travels packed as `region << 56 | offset`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Addr {
    pub region: u8,
    pub offset: u64,
}

impl Addr {
    pub const fn new(region: u8, offset: u64) -> Self {
        Self { region, offset }
    }

    pub fn pack(self) -> u64 {
        ((self.region as u64) << OFFSET_BITS) | (self.offset & OFFSET_MASK)
    }

    pub fn unpack(v: u64) -> Self {
        Self {
            region: (v >> OFFSET_BITS) as u8,
            offset: v & OFFSET_MASK,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UdmaOp {
    Copy,
    Cas,
    Faa,
}

impl UdmaOp {
    pub fn code(self) -> u8 {
        match self {
            UdmaOp::Copy => 1,
            UdmaOp::Cas => 2,
            UdmaOp::Faa => 3,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            1 => Some(UdmaOp::Copy),
            2 => Some(UdmaOp::Cas),
            3 => Some(UdmaOp::Faa),
            _ => None,
        }
    }

    pub fn is_atomic(self) -> bool {
        !matches!(self, UdmaOp::Copy)
    }
}

/// A data-access request left in the message by a yielding helper.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UdmaDescriptor {
    pub op: UdmaOp,
    pub dst: Addr,
    pub src: Addr,
    pub len: u64,
    pub cas_old: u32,
    pub cas_new_or_add: u32,
}

impl UdmaDescriptor {
    pub fn copy(dst: Addr, src: Addr, len: u64) -> Self {
        Self {
            op: UdmaOp::Copy,
            dst,
            src,
            len,
            cas_old: 0,
            cas_new_or_add: 0,
        }
    }

    pub fn cas(dst: Addr, old: u32, new: u32) -> Self {
        Self {
            op: UdmaOp::Cas,
            dst,
            src: Addr::default(),
            len: 4,
            cas_old: old,
            cas_new_or_add: new,
        }
    }

    pub fn faa(dst: Addr, val: u32) -> Self {
        Self {
            op: UdmaOp::Faa,
            dst,
            src: Addr::default(),
            len: 4,
            cas_old: 0,
            cas_new_or_add: val,
        }
    }

    /// The non-buffer region this descriptor touches, used for routing.
    ///
    /// For region-to-region copies the source wins: data is read where it lives.
    pub fn target_region(&self) -> u8 {
        match self.op {
            UdmaOp::Copy if self.src.region != BUFFER_REGION => self.src.region,
            _ => self.dst.region,
        }
    }

    /// Bytes moved from a remote region into the message (reads).
    pub fn inbound_bytes(&self) -> u64 {
        match self.op {
            UdmaOp::Copy if self.dst.region == BUFFER_REGION => self.len,
            UdmaOp::Copy => 0,
            _ => 4,
        }
    }

    /// Bytes carried from the message out to a remote region (writes).
    pub fn outbound_bytes(&self) -> u64 {
        match self.op {
            UdmaOp::Copy if self.src.region == BUFFER_REGION => self.len,
            UdmaOp::Copy => 0,
            _ => 8,
        }
    }
}
