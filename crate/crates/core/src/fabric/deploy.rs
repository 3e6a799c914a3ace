// SPDX-License-Identifier: Apache-2.0
// Copyright The amrt Authors

//! Runs single requests to completion under a fixed placement, counting
//! what each placement costs. No clock: stages run back to back.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::topology::{Topology, CLIENT, HOST, NIC};
use crate::switch::{buffer_base, DropReason, RoutingDecision, Switch};
use crate::vm::buffer::MessageBuffer;
use crate::{NodeId, NodeRole};

/// Where a request starts executing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    Client,
    Nic,
    Host,
}

impl Placement {
    pub const ALL: [Placement; 3] = [Placement::Client, Placement::Nic, Placement::Host];

    pub fn role(self) -> NodeRole {
        match self {
            Placement::Client => NodeRole::Client,
            Placement::Nic => NodeRole::Nic,
            Placement::Host => NodeRole::Host,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DeployStats {
    /// Switch stages executed anywhere.
    pub stages: u64,
    pub insns: u64,
    /// Descriptors executed by a UDMA module.
    pub udma_ops: u64,
    /// Client-server round trips made while the function runs. The
    /// request/reply exchange of a server placement is not counted.
    pub network_round_trips: u64,
    /// Bytes crossing the client link, request and reply included.
    pub wire_bytes: u64,
    /// Hops between nodes (any link).
    pub hops: u64,
}

/// A fixed three-node deployment sharing one switch configuration.
#[derive(Debug, Clone)]
pub struct Deployment {
    pub switch: Switch,
    pub topology: Topology,
    /// Abort after this many stages.
    pub max_stages: u64,
    moves: Arc<AtomicU64>,
}

impl Deployment {
    pub fn new(switch: Switch, topology: Topology) -> Self {
        Self {
            switch,
            topology,
            max_stages: 1 << 20,
            moves: Arc::new(AtomicU64::new(0)),
        }
    }

    fn node_for(&self, p: Placement) -> NodeId {
        self.topology.first_of(p.role()).map_or(
            match p {
                Placement::Client => CLIENT,
                Placement::Nic => NIC,
                Placement::Host => HOST,
            },
            |n| n.id,
        )
    }

    /// A fresh buffer address for every stage so every resume relocates.
    fn fresh_base(&self, node: NodeId) -> u64 {
        let n = self.moves.fetch_add(1, Ordering::Relaxed);
        buffer_base(node, (n % 7) as u32, n % 4093)
    }

    fn crosses_client(&self, a: NodeId, b: NodeId) -> bool {
        let client = self.node_for(Placement::Client);
        a != b && (a == client || b == client)
    }

    /// Runs one request. Returns the reply buffer or the drop reason.
    pub fn run(&self, placement: Placement, msg: MessageBuffer) -> (Result<MessageBuffer, DropReason>, DeployStats) {
        let mut msg = msg;
        let mut st = DeployStats::default();
        let client = self.node_for(Placement::Client);
        let mut here = self.node_for(placement);
        if placement == Placement::Client {
            msg.return_to = Some(client);
        } else {
            st.wire_bytes += msg.wire_len() as u64;
            st.hops += self.topology.path(client, here).map_or(0, |p| p.len() as u64);
        }
        let mut crossings = 0u64;
        loop {
            if st.stages >= self.max_stages {
                return (Err(DropReason::Trap), st);
            }
            msg.base = self.fresh_base(here);
            let rep = self.switch.process(&mut msg, here);
            st.stages += 1;
            st.insns += rep.insns;
            if rep.udma.is_some() {
                st.udma_ops += 1;
            }
            match rep.decision {
                RoutingDecision::LocalVm | RoutingDecision::LocalUdma => {}
                RoutingDecision::RemoteNode(n) => {
                    if self.crosses_client(here, n) {
                        crossings += 1;
                        st.wire_bytes += msg.wire_len() as u64;
                    }
                    st.hops += self.topology.path(here, n).map_or(1, |p| p.len() as u64);
                    here = n;
                }
                RoutingDecision::ReplyToClient => {
                    if here != client {
                        st.wire_bytes += msg.wire_len() as u64;
                        st.hops += self.topology.path(here, client).map_or(0, |p| p.len() as u64);
                    }
                    st.network_round_trips = crossings / 2;
                    return (Ok(msg), st);
                }
                RoutingDecision::Drop(r) => return (Err(r), st),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::apps::{kv_request, mica, KvReply};
    use crate::memory::RegionTable;
    use crate::switch::{FunctionRegistry, SwitchConfig};

    #[test]
    fn mica_get_costs_by_placement() {
        let layout = mica::Layout { nbuckets: 64, max_value: 64 };
        let mut t = mica::TableImage::new(layout, 1 << 14);
        t.insert(5, b"five");
        let mut regions = RegionTable::new();
        regions.create_region_with_id(2, t.bytes.len() as u64, HOST).unwrap();
        regions.get(2).unwrap().write(0, &t.bytes).unwrap();
        let mut reg = FunctionRegistry::default();
        let (_, port) = reg.register_function(&layout.get_program(2), BTreeSet::from([2])).unwrap();
        let topo = Topology::default();
        let sw = Switch::new(Arc::new(reg), Arc::new(regions), topo.roles(), SwitchConfig::default());
        let d = Deployment::new(sw, topo);
        let mut replies = Vec::new();
        for p in Placement::ALL {
            let (r, st) = d.run(p, MessageBuffer::request(7000, port, &kv_request(5, &[])));
            let r = r.unwrap();
            assert_eq!(st.udma_ops, 3, "{p:?}");
            let trips = if p == Placement::Client { 3 } else { 0 };
            assert_eq!(st.network_round_trips, trips, "{p:?}");
            replies.push(r.app_region()[..r.app_len()].to_vec());
            assert_eq!(KvReply::parse(&r).value, b"five");
        }
        assert!(replies.windows(2).all(|w| w[0] == w[1]));
    }
}
