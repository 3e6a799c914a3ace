// SPDX-License-Identifier: Apache-2.0
// Copyright The amrt Authors

//! Shared fixtures for the integration tests.

#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::Arc;

use amrt_core::fabric::{Deployment, Scenario, Topology, CLIENT, HOST, NIC};
use amrt_core::memory::RegionTable;
use amrt_core::switch::{FunctionRegistry, Switch, SwitchConfig};
use amrt_core::vm::buffer::MessageBuffer;
use amrt_core::vm::isa::Instruction;
use amrt_core::{NodeId, NodeRole};

pub fn node_of(role: NodeRole) -> NodeId {
    match role {
        NodeRole::Client => CLIENT,
        NodeRole::Nic => NIC,
        NodeRole::Host => HOST,
    }
}

/// Regions with their initial bytes and home.
pub fn regions(specs: &[(u8, &[u8], NodeRole)]) -> RegionTable {
    let mut t = RegionTable::new();
    for &(id, bytes, home) in specs {
        t.create_region_with_id(id, bytes.len() as u64, node_of(home)).unwrap();
        t.get(id).unwrap().write(0, bytes).unwrap();
    }
    t
}

/// A three-node deployment over `table` with `programs` registered in
/// order. Returns the deployment and each program's port.
pub fn rig(table: RegionTable, programs: &[(Vec<Instruction>, &[u8])]) -> (Deployment, Vec<u16>) {
    let mut reg = FunctionRegistry::default();
    let ports = programs
        .iter()
        .map(|(code, allowed)| reg.register_function(code, allowed.iter().copied().collect::<BTreeSet<u8>>()).unwrap().1)
        .collect();
    (deployment(reg, table), ports)
}

pub fn deployment(reg: FunctionRegistry, table: RegionTable) -> Deployment {
    let topo = Topology::default();
    let sw = Switch::new(Arc::new(reg), Arc::new(table), topo.roles(), SwitchConfig::default());
    Deployment::new(sw, topo)
}

/// Reply payload: the app region up to its length.
pub fn reply(msg: &MessageBuffer) -> Vec<u8> {
    msg.app_region()[..msg.app_len()].to_vec()
}

pub fn repo_file(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

pub fn bundled(name: &str) -> Scenario {
    Scenario::load(&repo_file(&format!("scenarios/{name}.cfg"))).unwrap()
}

/// One function per bundled app over a small dataset each.
pub const ALL_APPS: &str = r#"
[[regions]]
id = 2
data = { kind = "mica", keys = 5000, nbuckets = 4096 }
[[regions]]
id = 3
data = { kind = "btree", keys = 10000 }
[[regions]]
id = 4
home = "nic"
data = { kind = "cache", slots = 1024 }
[[regions]]
id = 5
data = { kind = "zero", size = 4096 }
[[regions]]
id = 6
data = { kind = "zero", size = 4096 }

[[functions]]
name = "mica_get"
app = "mica_get"
region = 2
[[functions]]
name = "mica_put"
app = "mica_put"
region = 2
[[functions]]
name = "btree_get"
app = "btree_get"
region = 3
[[functions]]
name = "btree_get_cached"
app = "btree_get_cached"
region = 3
cache_region = 4
[[functions]]
name = "btree_put"
app = "btree_put"
region = 3
cache_region = 4
[[functions]]
name = "store16"
app = "store16"
region = 5
[[functions]]
name = "reloc_stress"
app = "reloc_stress"
region = 6
[[functions]]
name = "fixed_forwarder"
app = "fixed_forwarder"
region = 2
"#;
