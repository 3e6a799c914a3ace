// SPDX-License-Identifier: Apache-2.0
// Copyright The amrt Authors

//! Nodes, links and path latency.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ConfigError;
use crate::{NodeId, NodeRole};

pub const CLIENT: NodeId = 0;
pub const NIC: NodeId = 1;
pub const HOST: NodeId = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: NodeId,
    pub role: NodeRole,
    pub cores: u32,
    /// Cost multiplier for work on this node; 5.0 is five times slower.
    #[serde(default = "one")]
    pub speed: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub a: NodeId,
    pub b: NodeId,
    pub latency_ns: u64,
    pub gbps: f64,
}

impl Link {
    /// Propagation plus serialization of `bytes`.
    pub fn transit_ns(&self, bytes: usize) -> u64 {
        self.latency_ns + (bytes as f64 * 8.0 / self.gbps).ceil() as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub nodes: Vec<NodeSpec>,
    pub links: Vec<Link>,
    pub steering_node: NodeId,
}

impl Default for Topology {
    fn default() -> Self {
        Self::standard(24, 6, 2)
    }
}

impl Topology {
    /// Client, NIC and host in a line; the NIC steers everything addressed
    /// to the server.
    pub fn standard(client_cores: u32, nic_cores: u32, host_cores: u32) -> Self {
        Self {
            nodes: vec![
                NodeSpec {
                    id: CLIENT,
                    role: NodeRole::Client,
                    cores: client_cores,
                    speed: 1.0,
                },
                NodeSpec {
                    id: NIC,
                    role: NodeRole::Nic,
                    cores: nic_cores,
                    speed: 5.0,
                },
                NodeSpec {
                    id: HOST,
                    role: NodeRole::Host,
                    cores: host_cores,
                    speed: 1.0,
                },
            ],
            links: vec![
                Link {
                    a: CLIENT,
                    b: NIC,
                    latency_ns: 5_000,
                    gbps: 100.0,
                },
                Link {
                    a: NIC,
                    b: HOST,
                    latency_ns: 1_000,
                    gbps: 128.0,
                },
            ],
            steering_node: NIC,
        }
    }

    pub fn node(&self, id: NodeId) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn first_of(&self, role: NodeRole) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.role == role)
    }

    pub fn roles(&self) -> BTreeMap<NodeId, NodeRole> {
        self.nodes.iter().map(|n| (n.id, n.role)).collect()
    }

    pub fn link(&self, a: NodeId, b: NodeId) -> Option<&Link> {
        self.links.iter().find(|l| (l.a, l.b) == (a, b) || (l.a, l.b) == (b, a))
    }

    /// Hops from `a` to `b`: direct, or through the steering node.
    pub fn path(&self, a: NodeId, b: NodeId) -> Option<Vec<&Link>> {
        if a == b {
            return Some(Vec::new());
        }
        if let Some(l) = self.link(a, b) {
            return Some(vec![l]);
        }
        let s = self.steering_node;
        Some(vec![self.link(a, s)?, self.link(s, b)?])
    }

    pub fn transit_ns(&self, a: NodeId, b: NodeId, bytes: usize) -> u64 {
        self.path(a, b)
            .map(|p| p.iter().map(|l| l.transit_ns(bytes)).sum())
            .unwrap_or(0)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut seen = BTreeMap::new();
        for n in &self.nodes {
            if seen.insert(n.id, ()).is_some() {
                return Err(ConfigError::Invalid(format!("duplicate node id {}", n.id)));
            }
            if n.cores == 0 {
                return Err(ConfigError::Invalid(format!("node {} has no cores", n.id)));
            }
            if !(n.speed.is_finite() && n.speed > 0.0) {
                return Err(ConfigError::Invalid(format!("node {} speed must be positive", n.id)));
            }
        }
        match self.node(self.steering_node) {
            Some(n) if n.role == NodeRole::Nic => {}
            _ => return Err(ConfigError::Invalid("steering node must be a NIC".into())),
        }
        for l in &self.links {
            if self.node(l.a).is_none() || self.node(l.b).is_none() {
                return Err(ConfigError::Invalid(format!("link {}-{} names an unknown node", l.a, l.b)));
            }
            if !(l.gbps.is_finite() && l.gbps > 0.0) {
                return Err(ConfigError::Invalid(format!("link {}-{} bandwidth must be positive", l.a, l.b)));
            }
        }
        let client = self.first_of(NodeRole::Client).map(|n| n.id);
        let host = self.first_of(NodeRole::Host).map(|n| n.id);
        match (client, host) {
            (Some(c), Some(h)) if self.path(c, h).is_some() => Ok(()),
            _ => Err(ConfigError::Invalid("need a client and a host connected through the NIC".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn client_to_host_goes_through_the_nic() {
        let t = Topology::default();
        t.validate().unwrap();
        assert_eq!(t.path(CLIENT, HOST).unwrap().len(), 2);
        // 1000 B at 100 Gb/s is 80 ns, at 128 Gb/s 62.5 -> 63 ns.
        assert_eq!(t.transit_ns(CLIENT, HOST, 1000), 5_000 + 80 + 1_000 + 63);
        assert_eq!(t.transit_ns(HOST, HOST, 1000), 0);
    }

    #[test]
    fn rejects_bad_shapes() {
        let mut t = Topology::default();
        t.nodes[1].cores = 0;
        assert!(t.validate().is_err());
        let mut t = Topology::default();
        t.steering_node = HOST;
        assert!(t.validate().is_err());
        let mut t = Topology::default();
        t.links.pop();
        assert!(t.validate().is_err());
    }
}
