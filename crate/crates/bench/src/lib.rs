// SPDX-License-Identifier: Apache-2.0
// Copyright The amrt Authors

//! Shared fixtures for the benchmarks.

use amrt_core::fabric::{Deployment, Scenario, World};

pub const KV: &str = r#"
[[regions]]
id = 2
data = { kind = "mica", keys = 20000, nbuckets = 8192 }
[[regions]]
id = 3
data = { kind = "btree", keys = 20000 }
[[regions]]
id = 5
data = { kind = "zero", size = 65536 }
[[functions]]
name = "mica_get"
app = "mica_get"
region = 2
[[functions]]
name = "btree_get"
app = "btree_get"
region = 3
[[functions]]
name = "store16"
app = "store16"
region = 5
[[loads]]
functions = ["store16"]
rate = 200000
"#;

pub fn world(text: &str) -> World {
    World::build(&Scenario::from_toml(text).expect("scenario")).expect("world")
}

/// Port and one request payload for `name`.
pub fn request(w: &World, name: &str, i: u64) -> (u16, Vec<u8>) {
    let f = &w.functions[name];
    (f.copies[0].1, f.request.payload(f.keys.key(i % f.keys.count.max(1)), i))
}

pub fn deployment(w: &World) -> Deployment {
    Deployment::new(w.switch.clone(), w.topology.clone())
}
