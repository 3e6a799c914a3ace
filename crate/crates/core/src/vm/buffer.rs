// SPDX-License-Identifier: Apache-2.0
// Copyright The amrt Authors

//! Message buffer byte layout.
//!
//! ```text
//!   0..2    flow source port (u16)
//!   2..4    destination port (u16)
//!   4..8    function id (u32)
//!   8       state flag (0 fresh, 1 suspended, 2 complete)
//!   9       reserved
//!  10..12   app payload length (u16)
//!  12..16   reserved
//!  16..24   receive timestamp, simulated ns (u64)
//!  24..32   saved pc (u64)
//!  32..120  saved r0..r10 (11 x u64)
//! 120..632  stack, 64 slots of 8 bytes; r10 points at 632
//! 632..640  relocation vector of the pending yield (u64)
//! 640..672  UDMA descriptor
//! 672..     app region
//! ```
//!
//! Descriptor (offsets relative to 640): op u8 @0, dst region @1, src region
//! @2, status @3, result u32 @4, dst offset u64 @8, src offset u64 @16 (for
//! atomics: compare value u32 @16, new/add value u32 @20), len u64 @24.
//!
//! All multi-byte fields are little-endian.

use serde::{Deserialize, Serialize};

use crate::memory::{Addr, UdmaDescriptor, UdmaOp};
use crate::NodeId;

pub const CAPACITY: usize = 2048;

pub const OFF_SRC_PORT: usize = 0;
pub const OFF_DST_PORT: usize = 2;
pub const OFF_FUNCTION_ID: usize = 4;
pub const OFF_STATE: usize = 8;
pub const OFF_APP_LEN: usize = 10;
pub const HEADER_LEN: usize = 16;
pub const OFF_RECV_TS: usize = 16;
pub const OFF_PC: usize = 24;
pub const OFF_REGS: usize = 32;
pub const OFF_STACK: usize = 120;
pub const STACK_SIZE: usize = 512;
pub const STACK_SLOTS: usize = STACK_SIZE / 8;
/// Offset r10 points at.
pub const OFF_STACK_TOP: usize = OFF_STACK + STACK_SIZE;
pub const OFF_VECTOR: usize = 632;
pub const OFF_DESC: usize = 640;
pub const DESC_LEN: usize = 32;
pub const OFF_APP: usize = 672;
pub const APP_CAPACITY: usize = CAPACITY - OFF_APP;

/// Number of stack slots a relocation vector can mark.
pub const RELOC_SLOTS: usize = 60;

/// Descriptor status byte while the UDMA module has not answered.
pub const STATUS_PENDING: u8 = 0xff;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StateFlag {
    Fresh,
    Suspended,
    Complete,
}

impl StateFlag {
    pub fn code(self) -> u8 {
        match self {
            StateFlag::Fresh => 0,
            StateFlag::Suspended => 1,
            StateFlag::Complete => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(StateFlag::Fresh),
            1 => Some(StateFlag::Suspended),
            2 => Some(StateFlag::Complete),
            _ => None,
        }
    }
}

/// Byte range `[lo, hi)` of stack slot `j`, counted down from r10.
pub fn slot_range(j: usize) -> (usize, usize) {
    let hi = OFF_STACK_TOP - 8 * j;
    (hi - 8, hi)
}

/// A message: the fixed-capacity byte image plus simulator metadata.
///
/// `base` is the simulated address of byte 0 in whichever memory currently
/// holds the buffer. Pointers held by the function are absolute addresses
/// derived from it, which is why moving the buffer needs relocation.
#[derive(Clone, PartialEq, Eq)]
pub struct MessageBuffer {
    bytes: Box<[u8]>,
    pub base: u64,
    /// Client-mode execution: where the message returns after a UDMA.
    pub return_to: Option<NodeId>,
}

impl std::fmt::Debug for MessageBuffer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MessageBuffer")
            .field("src_port", &self.src_port())
            .field("dst_port", &self.dst_port())
            .field("function_id", &self.function_id())
            .field("state", &self.state())
            .field("pc", &self.saved_pc())
            .field("app_len", &self.app_len())
            .field("base", &format_args!("{:#x}", self.base))
            .finish()
    }
}

impl Default for MessageBuffer {
    fn default() -> Self {
        Self::new()
    }
}

impl MessageBuffer {
    pub fn new() -> Self {
        Self {
            bytes: vec![0u8; CAPACITY].into_boxed_slice(),
            base: 0,
            return_to: None,
        }
    }

    /// A client request: zeroed state and the payload in the app region.
    ///
    /// # Panics
    /// If the payload exceeds the app region.
    pub fn request(src_port: u16, dst_port: u16, payload: &[u8]) -> Self {
        let mut m = Self::new();
        m.set_src_port(src_port);
        m.set_dst_port(dst_port);
        m.set_payload(payload);
        m
    }

    /// Builds a buffer from raw wire bytes, zero padding up to capacity.
    /// Longer inputs are truncated.
    pub fn from_wire(raw: &[u8]) -> Self {
        let mut m = Self::new();
        let n = raw.len().min(CAPACITY);
        m.bytes[..n].copy_from_slice(&raw[..n]);
        m
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn as_bytes_mut(&mut self) -> &mut [u8] {
        &mut self.bytes
    }

    pub fn u16_at(&self, off: usize) -> u16 {
        u16::from_le_bytes(self.bytes[off..off + 2].try_into().unwrap())
    }

    pub fn u32_at(&self, off: usize) -> u32 {
        u32::from_le_bytes(self.bytes[off..off + 4].try_into().unwrap())
    }

    pub fn u64_at(&self, off: usize) -> u64 {
        u64::from_le_bytes(self.bytes[off..off + 8].try_into().unwrap())
    }

    pub fn put_u16(&mut self, off: usize, v: u16) {
        self.bytes[off..off + 2].copy_from_slice(&v.to_le_bytes());
    }

    pub fn put_u32(&mut self, off: usize, v: u32) {
        self.bytes[off..off + 4].copy_from_slice(&v.to_le_bytes());
    }

    pub fn put_u64(&mut self, off: usize, v: u64) {
        self.bytes[off..off + 8].copy_from_slice(&v.to_le_bytes());
    }

    pub fn src_port(&self) -> u16 {
        self.u16_at(OFF_SRC_PORT)
    }

    pub fn set_src_port(&mut self, p: u16) {
        self.put_u16(OFF_SRC_PORT, p)
    }

    pub fn dst_port(&self) -> u16 {
        self.u16_at(OFF_DST_PORT)
    }

    pub fn set_dst_port(&mut self, p: u16) {
        self.put_u16(OFF_DST_PORT, p)
    }

    pub fn function_id(&self) -> u32 {
        self.u32_at(OFF_FUNCTION_ID)
    }

    pub fn set_function_id(&mut self, id: u32) {
        self.put_u32(OFF_FUNCTION_ID, id)
    }

    pub fn state(&self) -> Option<StateFlag> {
        StateFlag::from_code(self.bytes[OFF_STATE])
    }

    pub fn set_state(&mut self, s: StateFlag) {
        self.bytes[OFF_STATE] = s.code();
    }

    pub fn app_len(&self) -> usize {
        (self.u16_at(OFF_APP_LEN) as usize).min(APP_CAPACITY)
    }

    pub fn set_app_len(&mut self, n: usize) {
        self.put_u16(OFF_APP_LEN, n.min(APP_CAPACITY) as u16)
    }

    pub fn recv_timestamp(&self) -> u64 {
        self.u64_at(OFF_RECV_TS)
    }

    pub fn set_recv_timestamp(&mut self, t: u64) {
        self.put_u64(OFF_RECV_TS, t)
    }

    pub fn saved_pc(&self) -> u64 {
        self.u64_at(OFF_PC)
    }

    pub fn saved_reg(&self, i: usize) -> u64 {
        self.u64_at(OFF_REGS + 8 * i)
    }

    pub fn relocation_vector(&self) -> u64 {
        self.u64_at(OFF_VECTOR)
    }

    pub fn stack_slot(&self, j: usize) -> u64 {
        self.u64_at(slot_range(j).0)
    }

    /// The payload, `app_len` bytes from the start of the app region.
    pub fn payload(&self) -> &[u8] {
        &self.bytes[OFF_APP..OFF_APP + self.app_len()]
    }

    /// The whole app region regardless of `app_len`.
    pub fn app_region(&self) -> &[u8] {
        &self.bytes[OFF_APP..]
    }

    pub fn app_region_mut(&mut self) -> &mut [u8] {
        &mut self.bytes[OFF_APP..]
    }

    /// Overwrites the app region with `payload` (zero-filling the rest).
    ///
    /// # Panics
    /// If the payload exceeds the app region.
    pub fn set_payload(&mut self, payload: &[u8]) {
        assert!(payload.len() <= APP_CAPACITY, "payload too large");
        let app = self.app_region_mut();
        app.fill(0);
        app[..payload.len()].copy_from_slice(payload);
        self.set_app_len(payload.len());
    }

    /// Trusted initialization for a message arriving on a function port:
    /// clears every VM-state byte and marks the buffer fresh.
    pub fn reset_vm_state(&mut self, function_id: u32) {
        self.set_function_id(function_id);
        self.set_state(StateFlag::Fresh);
        self.bytes[9] = 0;
        self.bytes[12..16].fill(0);
        self.bytes[OFF_PC..OFF_APP].fill(0);
    }

    /// True when every VM-state byte is zero and the flag is fresh.
    pub fn is_zeroed_state(&self) -> bool {
        self.state() == Some(StateFlag::Fresh) && self.bytes[OFF_PC..OFF_APP].iter().all(|&b| b == 0)
    }

    pub fn descriptor(&self) -> Option<UdmaDescriptor> {
        let d = &self.bytes[OFF_DESC..OFF_DESC + DESC_LEN];
        let op = UdmaOp::from_code(d[0])?;
        let dst = Addr::new(d[1], self.u64_at(OFF_DESC + 8));
        let len = self.u64_at(OFF_DESC + 24);
        Some(match op {
            UdmaOp::Copy => UdmaDescriptor::copy(dst, Addr::new(d[2], self.u64_at(OFF_DESC + 16)), len),
            UdmaOp::Cas => UdmaDescriptor::cas(dst, self.u32_at(OFF_DESC + 16), self.u32_at(OFF_DESC + 20)),
            UdmaOp::Faa => UdmaDescriptor::faa(dst, self.u32_at(OFF_DESC + 20)),
        })
    }

    /// Writes `desc` and marks its status pending.
    pub fn set_descriptor(&mut self, desc: &UdmaDescriptor) {
        self.bytes[OFF_DESC..OFF_DESC + DESC_LEN].fill(0);
        self.bytes[OFF_DESC] = desc.op.code();
        self.bytes[OFF_DESC + 1] = desc.dst.region;
        self.bytes[OFF_DESC + 2] = desc.src.region;
        self.bytes[OFF_DESC + 3] = STATUS_PENDING;
        self.put_u64(OFF_DESC + 8, desc.dst.offset);
        match desc.op {
            UdmaOp::Copy => self.put_u64(OFF_DESC + 16, desc.src.offset),
            _ => {
                self.put_u32(OFF_DESC + 16, desc.cas_old);
                self.put_u32(OFF_DESC + 20, desc.cas_new_or_add);
            }
        }
        self.put_u64(OFF_DESC + 24, desc.len);
    }

    pub fn udma_status(&self) -> u8 {
        self.bytes[OFF_DESC + 3]
    }

    pub fn udma_result(&self) -> u32 {
        self.u32_at(OFF_DESC + 4)
    }

    /// Bytes this buffer occupies on the wire. Trailing zeros past the
    /// payload are elided; [`Self::from_wire`] restores them.
    pub fn wire_len(&self) -> usize {
        // Word-wise from the end; CAPACITY is a multiple of 16.
        let last = self
            .bytes
            .chunks_exact(16)
            .rposition(|c| u128::from_ne_bytes(c.try_into().unwrap()) != 0)
            .map_or(0, |w| 16 * w + self.bytes[16 * w..16 * w + 16].iter().rposition(|&b| b != 0).unwrap() + 1);
        last.max(OFF_APP + self.app_len())
    }

    /// Records the UDMA module's answer.
    pub fn complete_udma(&mut self, status: u8, result: u32) {
        self.bytes[OFF_DESC + 3] = status;
        self.put_u32(OFF_DESC + 4, result);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_round_trip() {
        let mut m = MessageBuffer::request(7000, 9000, &[1, 2, 3]);
        assert_eq!(m.wire_len(), OFF_APP + 3);
        m.app_region_mut()[100] = 9;
        assert_eq!(m.wire_len(), OFF_APP + 101);
        let back = MessageBuffer::from_wire(&m.as_bytes()[..m.wire_len()]);
        assert_eq!(back.as_bytes(), m.as_bytes());
    }

    #[test]
    fn layout_is_contiguous() {
        assert_eq!(OFF_REGS + 11 * 8, OFF_STACK);
        assert_eq!(OFF_STACK_TOP, OFF_VECTOR);
        assert_eq!(OFF_VECTOR + 8, OFF_DESC);
        assert_eq!(OFF_DESC + DESC_LEN, OFF_APP);
        assert_eq!(slot_range(0), (624, 632));
        assert_eq!(slot_range(63), (120, 128));
    }

    #[test]
    fn request_is_fresh_and_zeroed() {
        let m = MessageBuffer::request(7000, 9000, b"hello");
        assert_eq!(m.src_port(), 7000);
        assert_eq!(m.dst_port(), 9000);
        assert!(m.is_zeroed_state());
        assert_eq!(m.payload(), b"hello");
    }

    #[test]
    fn descriptor_round_trip() {
        let mut m = MessageBuffer::new();
        for d in [
            UdmaDescriptor::copy(Addr::new(0, 672), Addr::new(1, 40), 8),
            UdmaDescriptor::cas(Addr::new(2, 4), 5, 9),
            UdmaDescriptor::faa(Addr::new(2, 8), 3),
        ] {
            m.set_descriptor(&d);
            assert_eq!(m.descriptor(), Some(d));
            assert_eq!(m.udma_status(), STATUS_PENDING);
        }
    }

    #[test]
    fn reset_clears_planted_state() {
        let mut m = MessageBuffer::request(1, 2, b"x");
        m.as_bytes_mut()[OFF_PC..OFF_APP].fill(0xab);
        m.set_state(StateFlag::Suspended);
        m.reset_vm_state(4);
        assert!(m.is_zeroed_state());
        assert_eq!(m.function_id(), 4);
        assert_eq!(m.payload(), b"x");
    }
}
