// SPDX-License-Identifier: Apache-2.0
// Copyright The amrt Authors

//! Memory regions and the UDMA engine.

mod addr;
mod region;
mod udma;

pub use addr::{Addr, UdmaDescriptor, UdmaOp, BUFFER_REGION, OFFSET_BITS};
pub use region::{MemoryRegion, RegionError, RegionTable, MAX_REGIONS};
pub use udma::{execute_udma, route, UdmaFailure, UdmaResult, UdmaRoute, UdmaTiming};
