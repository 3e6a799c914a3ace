// SPDX-License-Identifier: Apache-2.0
// Copyright The amrt Authors

//! The UDMA module: executes descriptors against regions and decides how a
//! descriptor is realized at a given node.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::addr::{UdmaDescriptor, UdmaOp, BUFFER_REGION};
use super::region::{RegionError, RegionTable};
use crate::vm::buffer::{MessageBuffer, CAPACITY, OFF_APP};
use crate::{NodeId, NodeRole};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UdmaFailure {
    RegionNotAllowed,
    OutOfRegionBounds,
    BadDescriptor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UdmaResult {
    /// 0 on success, 1 on failure.
    pub status: u8,
    /// Prior value for atomics.
    pub result: u32,
    pub failure: Option<UdmaFailure>,
}

impl UdmaResult {
    fn ok(result: u32) -> Self {
        Self {
            status: 0,
            result,
            failure: None,
        }
    }

    fn fail(f: UdmaFailure) -> Self {
        Self {
            status: 1,
            result: 0,
            failure: Some(f),
        }
    }
}

fn map_err(e: RegionError) -> UdmaFailure {
    match e {
        RegionError::OutOfBounds { .. } => UdmaFailure::OutOfRegionBounds,
        _ => UdmaFailure::BadDescriptor,
    }
}

/// Buffer-side range of a COPY: only the app region may be read or written.
fn buffer_range(offset: u64, len: u64) -> Result<(usize, usize), UdmaFailure> {
    match offset.checked_add(len) {
        Some(end) if offset >= OFF_APP as u64 && end <= CAPACITY as u64 => Ok((offset as usize, end as usize)),
        _ => Err(UdmaFailure::OutOfRegionBounds),
    }
}

/// Executes `desc` and writes the status and result into `msg`.
///
/// `allow` is the function's region allow-list. Regions outside it are never
/// touched.
pub fn execute_udma(
    desc: &UdmaDescriptor,
    msg: &mut MessageBuffer,
    regions: &RegionTable,
    allow: &BTreeSet<u8>,
) -> UdmaResult {
    let r = match apply(desc, msg, regions, allow) {
        Ok(v) => UdmaResult::ok(v),
        Err(f) => UdmaResult::fail(f),
    };
    msg.complete_udma(r.status, r.result);
    r
}

fn apply(
    desc: &UdmaDescriptor,
    msg: &mut MessageBuffer,
    regions: &RegionTable,
    allow: &BTreeSet<u8>,
) -> Result<u32, UdmaFailure> {
    let region = |id: u8| {
        let r = regions.get(id).ok_or(UdmaFailure::BadDescriptor)?;
        if !allow.contains(&id) {
            return Err(UdmaFailure::RegionNotAllowed);
        }
        Ok(r)
    };
    match desc.op {
        UdmaOp::Copy => {
            let (d, s) = (desc.dst, desc.src);
            match (d.region == BUFFER_REGION, s.region == BUFFER_REGION) {
                (true, true) => Err(UdmaFailure::BadDescriptor),
                (true, false) => {
                    let src = region(s.region)?;
                    let (lo, hi) = buffer_range(d.offset, desc.len)?;
                    src.read(s.offset, &mut msg.as_bytes_mut()[lo..hi]).map_err(map_err)?;
                    Ok(0)
                }
                (false, true) => {
                    let dst = region(d.region)?;
                    let (lo, hi) = buffer_range(s.offset, desc.len)?;
                    dst.write(d.offset, &msg.as_bytes()[lo..hi]).map_err(map_err)?;
                    Ok(0)
                }
                (false, false) => {
                    let (src, dst) = (region(s.region)?, region(d.region)?);
                    dst.check(d.offset, desc.len).map_err(map_err)?;
                    src.check(s.offset, desc.len).map_err(map_err)?;
                    let len = usize::try_from(desc.len).map_err(|_| UdmaFailure::OutOfRegionBounds)?;
                    let mut tmp = vec![0u8; len];
                    src.read(s.offset, &mut tmp).map_err(map_err)?;
                    dst.write(d.offset, &tmp).map_err(map_err)?;
                    Ok(0)
                }
            }
        }
        UdmaOp::Cas | UdmaOp::Faa => {
            if desc.dst.region == BUFFER_REGION {
                return Err(UdmaFailure::BadDescriptor);
            }
            let r = region(desc.dst.region)?;
            let v = if desc.op == UdmaOp::Cas {
                r.cas(desc.dst.offset, desc.cas_old, desc.cas_new_or_add)
            } else {
                r.faa(desc.dst.offset, desc.cas_new_or_add)
            };
            v.map_err(map_err)
        }
    }
}

/// How a descriptor is realized at node `at`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UdmaRoute {
    /// Region is in this node's memory: a memcpy or a local atomic.
    Local,
    /// NIC and host of one server reach each other's memory over PCIe.
    Dma,
    /// Forward the whole message to the region's home node.
    Forward(NodeId),
}

/// Chooses the realization of `desc` at `at`. `role_of` maps node ids to
/// roles; NIC and host are assumed to share one server.
pub fn route(
    desc: &UdmaDescriptor,
    at: NodeId,
    regions: &RegionTable,
    role_of: impl Fn(NodeId) -> Option<NodeRole>,
    atomic_dma: bool,
) -> UdmaRoute {
    let Some(home) = regions.get(desc.target_region()).map(|r| r.home()) else {
        // Unknown regions fail locally with BadDescriptor.
        return UdmaRoute::Local;
    };
    if home == at {
        return UdmaRoute::Local;
    }
    match (role_of(at), role_of(home)) {
        (Some(NodeRole::Nic), Some(NodeRole::Host)) | (Some(NodeRole::Host), Some(NodeRole::Nic)) => {
            if desc.op.is_atomic() && !atomic_dma {
                UdmaRoute::Forward(home)
            } else {
                UdmaRoute::Dma
            }
        }
        _ => UdmaRoute::Forward(home),
    }
}

/// Latency knobs for executing a descriptor, in simulated ns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UdmaTiming {
    pub local_base_ns: u64,
    pub local_per_64b_ns: u64,
    pub dma_base_ns: u64,
    /// DMA bandwidth term: one ns per this many bytes.
    pub dma_bytes_per_ns: u64,
}

impl Default for UdmaTiming {
    fn default() -> Self {
        Self {
            local_base_ns: 100,
            local_per_64b_ns: 10,
            dma_base_ns: 3500,
            dma_bytes_per_ns: 16,
        }
    }
}

impl UdmaTiming {
    /// Charge for executing `desc` via `route` (forwarding is charged by the fabric).
    pub fn cost(&self, route: UdmaRoute, desc: &UdmaDescriptor) -> u64 {
        let len = if desc.op.is_atomic() { 4 } else { desc.len };
        match route {
            UdmaRoute::Local => self.local_base_ns + self.local_per_64b_ns * len.div_ceil(64),
            UdmaRoute::Dma => self.dma_base_ns + len / self.dma_bytes_per_ns.max(1),
            UdmaRoute::Forward(_) => 0,
        }
    }
}
