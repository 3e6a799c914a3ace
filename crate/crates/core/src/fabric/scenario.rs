// SPDX-License-Identifier: Apache-2.0
// Copyright The amrt Authors

//! Scenario files (TOML) and the world they describe.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::load::LoadSpec;
use super::topology::{Link, NodeSpec, Topology, CLIENT, HOST, NIC};
use super::ConfigError;
use crate::apps::{self, btree, forwarder, kv_request, llist, mica, mix64, store, stress};
use crate::control::{PolicyConfig, Side};
use crate::memory::RegionTable;
use crate::memory::UdmaTiming;
use crate::switch::{FunctionRegistry, Switch, SwitchConfig, DEFAULT_BATCH_SIZE};
use crate::verifier::VerifierConfig;
use crate::vm::asm::assemble;
use crate::vm::interp::{VmConfig, DEFAULT_STEP_BUDGET};
use crate::vm::isa::Instruction;
use crate::{NodeId, NodeRole};

/// Where requests start executing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ExecMode {
    /// Sent to the server; the NIC's steering table picks NIC or host cores.
    #[default]
    Server,
    /// Run on client cores, fetching remote memory through UDMA.
    Client,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologySpec {
    pub client_cores: u32,
    pub nic_cores: u32,
    pub host_cores: u32,
    pub nic_speed: f64,
    pub client_latency_us: f64,
    pub host_latency_us: f64,
    pub client_gbps: f64,
    pub host_gbps: f64,
    /// Full form; overrides the shorthand above when non-empty.
    pub nodes: Vec<NodeSpec>,
    pub links: Vec<Link>,
}

impl Default for TopologySpec {
    fn default() -> Self {
        Self {
            client_cores: 24,
            nic_cores: 6,
            host_cores: 2,
            nic_speed: 5.0,
            client_latency_us: 5.0,
            host_latency_us: 1.0,
            client_gbps: 100.0,
            host_gbps: 128.0,
            nodes: Vec::new(),
            links: Vec::new(),
        }
    }
}

impl TopologySpec {
    pub fn build(&self) -> Topology {
        if !self.nodes.is_empty() {
            return Topology {
                nodes: self.nodes.clone(),
                links: self.links.clone(),
                steering_node: self.nodes.iter().find(|n| n.role == NodeRole::Nic).map_or(NIC, |n| n.id),
            };
        }
        let mut t = Topology::standard(self.client_cores, self.nic_cores, self.host_cores);
        t.nodes[1].speed = self.nic_speed;
        t.links[0].latency_ns = (self.client_latency_us * 1e3) as u64;
        t.links[0].gbps = self.client_gbps;
        t.links[1].latency_ns = (self.host_latency_us * 1e3) as u64;
        t.links[1].gbps = self.host_gbps;
        t
    }
}

/// Per-stage CPU charges at speed 1.0, multiplied by the node's speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostModel {
    /// Fixed cost of one switch stage (parse, dispatch, state save/restore).
    pub stage_ns: f64,
    pub insn_ns: f64,
    /// Function images kept warm per core.
    pub image_cache: usize,
    pub image_miss_ns: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            stage_ns: 100.0,
            insn_ns: 1.0,
            image_cache: 64,
            image_miss_ns: 300.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SwitchSpec {
    pub batch_size: usize,
    pub queue_capacity: usize,
    pub atomic_dma: bool,
    pub step_budget: u64,
}

impl Default for SwitchSpec {
    fn default() -> Self {
        Self {
            batch_size: DEFAULT_BATCH_SIZE,
            queue_capacity: 4096,
            atomic_dma: false,
            step_budget: DEFAULT_STEP_BUDGET,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SteeringSpec {
    pub reconfig_delay_ms: f64,
    /// Flows (lowest ports first) with a host rule at time zero.
    pub host_flows: u32,
    /// Rule changes issued at fixed times, independent of the monitor.
    pub changes: Vec<RuleChange>,
}

/// Moves one flow's steering at `at_ms`; takes effect after the
/// reconfiguration delay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleChange {
    pub at_ms: f64,
    pub port: u16,
    pub to: Side,
}

impl Default for SteeringSpec {
    fn default() -> Self {
        Self {
            reconfig_delay_ms: 50.0,
            host_flows: 0,
            changes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorSpec {
    pub enabled: bool,
    pub window_ms: f64,
    pub threshold_us: f64,
    pub underload_us: Option<f64>,
    pub ring: usize,
    pub consecutive: usize,
    pub cooldown_windows: u32,
    pub home: Side,
    pub use_loss: bool,
    pub use_delay: bool,
    pub underload_return: bool,
    pub clock_offset_ns: i64,
}

impl Default for MonitorSpec {
    fn default() -> Self {
        let p = PolicyConfig::default();
        Self {
            enabled: false,
            window_ms: p.window_ns as f64 / 1e6,
            threshold_us: p.threshold_ns as f64 / 1e3,
            underload_us: None,
            ring: p.ring,
            consecutive: p.consecutive,
            cooldown_windows: p.cooldown_windows,
            home: p.home,
            use_loss: p.use_loss,
            use_delay: p.use_delay,
            underload_return: p.underload_return,
            clock_offset_ns: 0,
        }
    }
}

impl MonitorSpec {
    pub fn policy(&self) -> PolicyConfig {
        let threshold_ns = (self.threshold_us * 1e3) as u64;
        PolicyConfig {
            window_ns: (self.window_ms * 1e6) as u64,
            threshold_ns,
            underload_ns: self.underload_us.map_or(threshold_ns / 2, |u| (u * 1e3) as u64),
            ring: self.ring,
            consecutive: self.consecutive,
            cooldown_windows: self.cooldown_windows,
            home: self.home,
            use_loss: self.use_loss,
            use_delay: self.use_delay,
            underload_return: self.underload_return,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSpec {
    pub bin_ms: f64,
    pub latency_bin_ms: f64,
    pub trace: bool,
    pub trace_limit: usize,
}

impl Default for MetricsSpec {
    fn default() -> Self {
        Self {
            bin_ms: 1000.0,
            latency_bin_ms: 10.0,
            trace: false,
            trace_limit: 100_000,
        }
    }
}

/// Multiplies the cost of work on one core over a time window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Interference {
    #[serde(default = "host_role")]
    pub node: NodeRole,
    #[serde(default)]
    pub core: u32,
    pub start_ms: f64,
    pub duration_ms: f64,
    pub factor: f64,
}

fn host_role() -> NodeRole {
    NodeRole::Host
}

/// Region contents built by the harness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Dataset {
    Zero {
        size: u64,
    },
    Mica {
        keys: u64,
        #[serde(default = "default_nbuckets")]
        nbuckets: u64,
        #[serde(default = "default_value_len")]
        value_len: usize,
        #[serde(default = "default_max_value")]
        max_value: u32,
        /// Log space beyond the preloaded items.
        #[serde(default = "default_log_slack")]
        log_slack: u64,
    },
    Btree {
        keys: u64,
        #[serde(default = "default_fanout")]
        fanout: usize,
    },
    Llist {
        len: u32,
        slots: u32,
    },
    Cache {
        #[serde(default = "default_cache_slots")]
        slots: u64,
    },
    Image {
        path: PathBuf,
    },
}

fn default_nbuckets() -> u64 {
    1 << 16
}
fn default_value_len() -> usize {
    32
}
fn default_max_value() -> u32 {
    256
}
fn default_log_slack() -> u64 {
    1 << 20
}
fn default_fanout() -> usize {
    16
}
fn default_cache_slots() -> u64 {
    btree::DEFAULT_CACHE_SLOTS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSpec {
    pub id: u8,
    #[serde(default = "host_role")]
    pub home: NodeRole,
    pub data: Dataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionSpec {
    pub name: String,
    /// A bundled app name, or "custom" with `source`.
    pub app: String,
    pub region: u8,
    #[serde(default)]
    pub cache_region: Option<u8>,
    /// Independent registrations of the same code.
    #[serde(default = "one")]
    pub copies: u32,
    #[serde(default)]
    pub source: Option<PathBuf>,
    /// Value bytes in generated requests for custom functions.
    #[serde(default)]
    pub value_len: usize,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub horizon_ms: f64,
    pub mode: ExecMode,
    pub topology: TopologySpec,
    pub costs: CostModel,
    pub switch: SwitchSpec,
    pub udma: UdmaTiming,
    pub steering: SteeringSpec,
    pub monitor: MonitorSpec,
    pub metrics: MetricsSpec,
    pub regions: Vec<RegionSpec>,
    pub functions: Vec<FunctionSpec>,
    pub loads: Vec<LoadSpec>,
    pub interference: Vec<Interference>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: "scenario".into(),
            seed: 1,
            horizon_ms: 1000.0,
            mode: ExecMode::Server,
            topology: TopologySpec::default(),
            costs: CostModel::default(),
            switch: SwitchSpec::default(),
            udma: UdmaTiming::default(),
            steering: SteeringSpec::default(),
            monitor: MonitorSpec::default(),
            metrics: MetricsSpec::default(),
            regions: Vec::new(),
            functions: Vec::new(),
            loads: Vec::new(),
            interference: Vec::new(),
        }
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Reads a scenario file; relative data paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        let mut s = Self::from_toml(&text)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        for r in &mut s.regions {
            if let Dataset::Image { path } = &mut r.data {
                if path.is_relative() {
                    *path = dir.join(&*path);
                }
            }
        }
        for f in &mut s.functions {
            if let Some(p) = &mut f.source {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(self.horizon_ms.is_finite() && self.horizon_ms > 0.0) {
            return bad("horizon_ms must be positive".into());
        }
        self.topology.build().validate()?;
        let c = &self.costs;
        if ![c.stage_ns, c.insn_ns, c.image_miss_ns].iter().all(|v| v.is_finite() && *v >= 0.0) {
            return bad("costs must be finite and non-negative".into());
        }
        if self.switch.batch_size == 0 || self.switch.queue_capacity == 0 {
            return bad("batch_size and queue_capacity must be positive".into());
        }
        if self.monitor.window_ms <= 0.0 || self.monitor.ring == 0 || self.monitor.consecutive == 0 || self.monitor.consecutive > self.monitor.ring {
            return bad("monitor window, ring and consecutive must be positive with consecutive <= ring".into());
        }
        if !(self.steering.reconfig_delay_ms >= 0.0) {
            return bad("reconfig_delay_ms must be non-negative".into());
        }
        if !self.steering.changes.is_empty() && self.monitor.enabled {
            return bad("scheduled rule changes and the monitor cannot both steer".into());
        }
        if self.steering.changes.iter().any(|c| !(c.at_ms >= 0.0)) {
            return bad("rule change times must be non-negative".into());
        }
        let mut ids = BTreeSet::new();
        for r in &self.regions {
            if r.id == 0 || !ids.insert(r.id) {
                return bad(format!("region id {} is reserved or duplicated", r.id));
            }
        }
        let mut names = BTreeSet::new();
        for f in &self.functions {
            if !names.insert(f.name.as_str()) {
                return bad(format!("duplicate function name {}", f.name));
            }
            if !ids.contains(&f.region) {
                return bad(format!("function {} uses undeclared region {}", f.name, f.region));
            }
            if let Some(c) = f.cache_region {
                if !ids.contains(&c) {
                    return bad(format!("function {} uses undeclared cache region {c}", f.name));
                }
            }
            if f.copies == 0 {
                return bad(format!("function {} needs at least one copy", f.name));
            }
        }
        for l in &self.loads {
            l.validate()?;
            for f in &l.functions {
                if !names.contains(f.as_str()) {
                    return bad(format!("load refers to unknown function {f}"));
                }
            }
        }
        for i in &self.interference {
            if !(i.factor.is_finite() && i.factor > 0.0 && i.duration_ms >= 0.0 && i.start_ms >= 0.0) {
                return bad("interference needs a positive factor and non-negative times".into());
            }
        }
        Ok(())
    }
}

/// Keys a generated request may use: `first + stride * i` for `i < count`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeySpace {
    pub first: u64,
    pub stride: u64,
    pub count: u64,
}

impl KeySpace {
    pub fn key(&self, i: u64) -> u64 {
        self.first + self.stride * i
    }
}

/// The value the preloader stores for `key` in a hash table.
pub fn mica_value(key: u64, len: usize) -> Vec<u8> {
    let w = mix64(key ^ 0x5bd1_e995).to_le_bytes();
    (0..len).map(|i| w[i % 8] ^ (i / 8) as u8).collect()
}

/// The value the preloader stores for `key` in a tree.
pub fn btree_value(key: u64) -> u64 {
    mix64(key ^ 0xb7e1_5163)
}

/// Raw bytes, or hex text when the file ends in `.hex`. Hex files may
/// hold whitespace and `#` comments.
pub fn read_image(path: &Path) -> Result<Vec<u8>, ConfigError> {
    let io = |e: std::io::Error| ConfigError::Io(format!("{}: {e}", path.display()));
    if path.extension().is_some_and(|e| e == "hex") {
        let text = std::fs::read_to_string(path).map_err(io)?;
        let digits: String = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or(""))
            .flat_map(|l| l.chars().filter(|c| !c.is_whitespace()))
            .collect();
        return hex::decode(digits).map_err(|e| ConfigError::Invalid(format!("{}: {e}", path.display())));
    }
    std::fs::read(path).map_err(io)
}

/// Region bytes for a dataset; `seed` only affects list placement.
pub fn build_dataset(d: &Dataset, seed: u64) -> Result<(Vec<u8>, KeySpace), ConfigError> {
    let bad = |m: String| Err(ConfigError::Invalid(m));
    Ok(match d {
        Dataset::Zero { size } => {
            if *size == 0 {
                return bad("zero region needs a size".into());
            }
            (vec![0; *size as usize], KeySpace { first: 0, stride: 1, count: size / store::SLOT_LEN })
        }
        Dataset::Mica {
            keys,
            nbuckets,
            value_len,
            max_value,
            log_slack,
        } => {
            if !nbuckets.is_power_of_two() || *value_len > *max_value as usize {
                return bad("mica needs power-of-two buckets and value_len <= max_value".into());
            }
            let layout = mica::Layout {
                nbuckets: *nbuckets,
                max_value: *max_value,
            };
            let log = keys * mica::Layout::item_len(*value_len) + log_slack;
            let mut t = mica::TableImage::new(layout, log);
            if layout.log_start() + log > u32::MAX as u64 {
                return bad("mica table too large for 32-bit log offsets".into());
            }
            for k in 1..=*keys {
                let st = t.insert(k, &mica_value(k, *value_len));
                if st != mica::status::OK && st != mica::status::BUCKET_FULL {
                    return bad(format!("mica preload failed with status {st}"));
                }
            }
            (t.bytes, KeySpace { first: 1, stride: 1, count: *keys })
        }
        Dataset::Btree { keys, fanout } => {
            if *keys == 0 || !(2..=btree::MAX_FANOUT).contains(fanout) {
                return bad("btree needs keys and a fanout in 2..=16".into());
            }
            let pairs: Vec<(u64, u64)> = (0..*keys).map(|i| (3 * i + 1, btree_value(3 * i + 1))).collect();
            (btree::build(&pairs, *fanout).bytes, KeySpace { first: 1, stride: 3, count: *keys })
        }
        Dataset::Llist { len, slots } => {
            if *len == 0 || slots < len {
                return bad("llist needs 0 < len <= slots".into());
            }
            let values: Vec<u32> = (1..=*len).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (llist::layout(&values, *slots as usize, &mut rng), KeySpace { first: 0, stride: 1, count: 1 })
        }
        Dataset::Cache { slots } => {
            if !slots.is_power_of_two() {
                return bad("cache slots must be a power of two".into());
            }
            (vec![0; (slots * btree::CACHE_LINE) as usize], KeySpace { first: 0, stride: 1, count: 0 })
        }
        Dataset::Image { path } => {
            let b = read_image(path)?;
            let n = b.len() as u64 / store::SLOT_LEN;
            (b, KeySpace { first: 0, stride: 1, count: n })
        }
    })
}

/// How to build a request payload for a function.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RequestKind {
    Empty,
    KvGet,
    MicaPut { value_len: usize },
    BtreePut,
    Store16,
    Forwarder,
    Stress,
    Custom { value_len: usize },
}

impl RequestKind {
    /// Payload for key `key`; `seq` varies written values.
    pub fn payload(&self, key: u64, seq: u64) -> Vec<u8> {
        match *self {
            RequestKind::Empty => Vec::new(),
            RequestKind::KvGet => kv_request(key, &[]),
            RequestKind::MicaPut { value_len } => kv_request(key, &mica_value(key ^ seq.rotate_left(17), value_len)),
            RequestKind::BtreePut => kv_request(key, &btree_value(key ^ seq).to_le_bytes()),
            RequestKind::Store16 => {
                let mut v = [0u8; 16];
                v[..8].copy_from_slice(&seq.to_le_bytes());
                v[8..].copy_from_slice(&key.to_le_bytes());
                store::request(key, v)
            }
            RequestKind::Forwarder => {
                let table: Vec<u32> = (0..forwarder::TABLE_LEN as u64).map(|i| mix64(i ^ key) as u32).collect();
                forwarder::request((mix64(key ^ seq) % 96) as u16, &table)
            }
            RequestKind::Stress => (0..stress::PAYLOAD_LEN).map(|i| mix64(key + i as u64) as u8).collect(),
            RequestKind::Custom { value_len } => kv_request(key, &vec![0; value_len]),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FunctionEntry {
    pub name: String,
    /// (function id, port) per registered copy.
    pub copies: Vec<(u32, u16)>,
    pub request: RequestKind,
    pub keys: KeySpace,
}

/// Everything a run needs, built and validated from a scenario.
#[derive(Debug, Clone)]
pub struct World {
    pub scenario: Scenario,
    pub topology: Topology,
    pub switch: Switch,
    pub functions: BTreeMap<String, FunctionEntry>,
    pub regions: BTreeMap<u8, (Dataset, KeySpace)>,
}

fn role_node(t: &Topology, role: NodeRole) -> NodeId {
    t.first_of(role).map_or(
        match role {
            NodeRole::Client => CLIENT,
            NodeRole::Nic => NIC,
            NodeRole::Host => HOST,
        },
        |n| n.id,
    )
}

fn program_for(f: &FunctionSpec, regions: &BTreeMap<u8, (Dataset, KeySpace)>) -> Result<(Vec<Instruction>, RequestKind), ConfigError> {
    let bad = |m: String| Err(ConfigError::Invalid(m));
    let (data, _) = &regions[&f.region];
    let cache_slots = |r: Option<u8>| -> Result<u64, ConfigError> {
        match r.map(|id| &regions[&id].0) {
            Some(Dataset::Cache { slots }) => Ok(*slots),
            Some(_) => Err(ConfigError::Invalid(format!("{}: cache_region must be a cache dataset", f.name))),
            None => Ok(btree::DEFAULT_CACHE_SLOTS),
        }
    };
    let mica_layout = || match data {
        Dataset::Mica { nbuckets, max_value, value_len, .. } => Ok((
            mica::Layout {
                nbuckets: *nbuckets,
                max_value: *max_value,
            },
            *value_len,
        )),
        _ => Err(ConfigError::Invalid(format!("{}: needs a mica region", f.name))),
    };
    Ok(match f.app.as_str() {
        "llist" => (llist::program(f.region, llist::DEFAULT_MAX_LEN), RequestKind::Empty),
        "mica_get" => (mica_layout()?.0.get_program(f.region), RequestKind::KvGet),
        "mica_put" => {
            let (l, value_len) = mica_layout()?;
            (l.put_program(f.region), RequestKind::MicaPut { value_len })
        }
        "btree_get" => (btree::get_program(f.region), RequestKind::KvGet),
        "btree_get_cached" => {
            let Some(c) = f.cache_region else {
                return bad(format!("{}: btree_get_cached needs cache_region", f.name));
            };
            (btree::get_cached_program(f.region, c, cache_slots(Some(c))?), RequestKind::KvGet)
        }
        "btree_put" => (btree::put_program(f.region, f.cache_region, cache_slots(f.cache_region)?), RequestKind::BtreePut),
        "fixed_forwarder" => (forwarder::fixed_program(), RequestKind::Forwarder),
        "faulty_forwarder" => (forwarder::faulty_program(), RequestKind::Forwarder),
        "store16" => {
            let size = match data {
                Dataset::Zero { size } => *size,
                Dataset::Image { .. } => regions[&f.region].1.count * store::SLOT_LEN,
                _ => return bad(format!("{}: store16 needs a zero or image region", f.name)),
            };
            let slots = size / store::SLOT_LEN;
            if !slots.is_power_of_two() {
                return bad(format!("{}: store16 region size must be 16 x a power of two", f.name));
            }
            (store::program(f.region, slots), RequestKind::Store16)
        }
        "reloc_stress" => (stress::program(f.region, stress::DEFAULT_ROUNDS), RequestKind::Stress),
        "custom" => {
            let Some(p) = &f.source else {
                return bad(format!("{}: custom functions need a source path", f.name));
            };
            let text = std::fs::read_to_string(p).map_err(|e| ConfigError::Io(format!("{}: {e}", p.display())))?;
            let text = format!(".default REGION, {}\n{text}", f.region);
            let code = assemble(&text).map_err(|e| ConfigError::Invalid(format!("{}: {e}", f.name)))?;
            (code, RequestKind::Custom { value_len: f.value_len })
        }
        other => {
            if apps::source(other).is_some() {
                return bad(format!("{}: app {other} cannot be driven by a load", f.name));
            }
            return bad(format!("{}: unknown app {other}", f.name));
        }
    })
}

impl World {
    pub fn build(scenario: &Scenario) -> Result<World, ConfigError> {
        scenario.validate()?;
        let topology = scenario.topology.build();
        let mut table = RegionTable::new();
        let mut regions = BTreeMap::new();
        for r in &scenario.regions {
            let (bytes, keys) = build_dataset(&r.data, scenario.seed ^ r.id as u64)?;
            let home = role_node(&topology, r.home);
            table
                .create_region_with_id(r.id, bytes.len() as u64, home)
                .map_err(|e| ConfigError::Invalid(format!("region {}: {e}", r.id)))?;
            table.get(r.id).expect("just created").write(0, &bytes).expect("fits");
            regions.insert(r.id, (r.data.clone(), keys));
        }
        let mut registry = FunctionRegistry::new(VerifierConfig {
            step_budget: scenario.switch.step_budget,
            ..VerifierConfig::default()
        });
        let mut functions = BTreeMap::new();
        for f in &scenario.functions {
            let (code, request) = program_for(f, &regions)?;
            let allowed: BTreeSet<u8> = std::iter::once(f.region).chain(f.cache_region).collect();
            let mut copies = Vec::new();
            for _ in 0..f.copies {
                let (id, port) = registry
                    .register_function(&code, allowed.clone())
                    .map_err(|e| ConfigError::Invalid(format!("function {}: {e}", f.name)))?;
                copies.push((id, port));
            }
            functions.insert(
                f.name.clone(),
                FunctionEntry {
                    name: f.name.clone(),
                    copies,
                    request,
                    keys: regions[&f.region].1,
                },
            );
        }
        let cfg = SwitchConfig {
            batch_size: scenario.switch.batch_size,
            atomic_dma: scenario.switch.atomic_dma,
            vm: VmConfig {
                step_budget: scenario.switch.step_budget,
            },
            udma: scenario.udma,
        };
        let switch = Switch::new(Arc::new(registry), Arc::new(table), topology.roles(), cfg);
        Ok(World {
            scenario: scenario.clone(),
            topology,
            switch,
            functions,
            regions,
        })
    }
}
