// SPDX-License-Identifier: Apache-2.0
// Copyright The amrt Authors

//! Discrete-event simulation of a scenario.
//!
//! One global nanosecond clock. Each worker core polls its receive queue
//! in batches and runs one message at a time through the switch; a
//! message keeps the core until it leaves it (forwarded, replied,
//! dropped, or parked on an in-flight DMA). Work is charged per stage
//! from the cost model, scaled by the node's speed and any interference.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use super::load::LoadGen;
use super::metrics::{
    DecisionRecord, FlowLatency, LatencyBin, MetricsBundle, Percentiles, PlacementCost, ShareBin, ThroughputBin,
    WindowRecord,
};
use super::scenario::{ExecMode, World};
use super::steering::{flow_core, FlowRule, SteeringTable};
use crate::control::{Decision, FlowAssignment, Monitor, PolicyState, QueueWindow, Side};
use crate::memory::UdmaRoute;
use crate::switch::{buffer_base, DropReason, RoutingDecision, Trace, TraceEvent, TraceKind};
use crate::vm::buffer::MessageBuffer;
use crate::{NodeId, NodeRole};

/// Priority of rules the policy installs.
pub const POLICY_RULE_PRIORITY: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Ev {
    /// A load's next request leaves the client.
    Inject(usize),
    /// A request from the client reaches the NIC's steering stage.
    Steer(usize),
    /// A message lands in a core's receive queue.
    Deliver { core: usize, id: usize, recirc: bool },
    /// A core picks its next message.
    Run(usize),
    Window,
    Activate,
    /// A scheduled rule change from the scenario.
    Change(usize),
}

#[derive(Debug)]
struct Flight {
    msg: MessageBuffer,
    sent: u64,
    port: u16,
    first: Option<NodeRole>,
    udma_ops: u32,
    wire: u64,
}

#[derive(Debug)]
struct Core {
    node: NodeId,
    role: NodeRole,
    index: u32,
    speed: f64,
    queue: VecDeque<usize>,
    batch: VecDeque<usize>,
    busy: bool,
    images: VecDeque<u32>,
    slot: u64,
}

struct LoadState {
    gen: LoadGen,
    functions: Vec<String>,
    pending: Option<super::load::Request>,
}

/// Results of a run plus its event trace.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: MetricsBundle,
    pub trace: Trace,
}

pub struct Simulation {
    world: World,
    now: u64,
    horizon: u64,
    seq: u64,
    events: BinaryHeap<Reverse<(u64, u64, Ev)>>,
    cores: Vec<Core>,
    core_index: BTreeMap<(NodeId, u32), usize>,
    node_cores: BTreeMap<NodeId, u32>,
    flights: Vec<Option<Flight>>,
    free: Vec<usize>,
    loads: Vec<LoadState>,
    copy_cursor: BTreeMap<String, u64>,
    steering: SteeringTable,
    held: VecDeque<usize>,
    monitor: Monitor,
    policy: Option<(PolicyState, FlowAssignment)>,
    window_index: u64,
    client: NodeId,
    nic: NodeId,
    host: NodeId,
    trace: Trace,
    // Metrics accumulators.
    injected: u64,
    completed: u64,
    dropped: u64,
    late_replies: u64,
    latencies: Vec<(u16, u64, u64)>,
    drops: BTreeMap<DropReason, u64>,
    offered_bins: BTreeMap<u64, u64>,
    completed_bins: BTreeMap<u64, u64>,
    dropped_bins: BTreeMap<u64, u64>,
    share_bins: BTreeMap<u64, [u64; 3]>,
    cost: BTreeMap<NodeRole, PlacementCost>,
    windows: Vec<WindowRecord>,
    decisions: Vec<DecisionRecord>,
    violations: Vec<String>,
}

fn role_slot(r: NodeRole) -> usize {
    match r {
        NodeRole::Client => 0,
        NodeRole::Nic => 1,
        NodeRole::Host => 2,
    }
}

impl Simulation {
    pub fn new(world: World) -> Self {
        let s = &world.scenario;
        let t = &world.topology;
        let mut cores = Vec::new();
        let mut core_index = BTreeMap::new();
        let mut node_cores = BTreeMap::new();
        for n in &t.nodes {
            node_cores.insert(n.id, n.cores);
            for c in 0..n.cores {
                core_index.insert((n.id, c), cores.len());
                cores.push(Core {
                    node: n.id,
                    role: n.role,
                    index: c,
                    speed: n.speed,
                    queue: VecDeque::new(),
                    batch: VecDeque::new(),
                    busy: false,
                    images: VecDeque::new(),
                    slot: 0,
                });
            }
        }
        let id_of = |role: NodeRole| t.first_of(role).map(|n| n.id).expect("validated topology");
        let (client, nic, host) = (id_of(NodeRole::Client), id_of(NodeRole::Nic), id_of(NodeRole::Host));
        let mut steering = SteeringTable::new(nic, node_cores.clone(), (s.steering.reconfig_delay_ms * 1e6) as u64);
        let mut flows: Vec<u16> = s.loads.iter().flat_map(|l| l.ports()).collect();
        flows.sort_unstable();
        flows.dedup();
        let assignment = FlowAssignment::new(flows.iter().copied(), s.steering.host_flows as usize);
        for &p in &assignment.on_host {
            steering
                .install_now(FlowRule {
                    priority: POLICY_RULE_PRIORITY,
                    match_src_port: Some(p),
                    target: host,
                })
                .expect("distinct ports");
        }
        let policy = s.monitor.enabled.then(|| {
            (
                PolicyState::new(s.monitor.policy(), flows.len() as u32, assignment.on_host.len() as u32),
                assignment,
            )
        });
        let horizon = (s.horizon_ms * 1e6) as u64;
        let loads = s
            .loads
            .iter()
            .enumerate()
            .map(|(i, l)| {
                // Key space of the first function decides the key range.
                let keys = world.functions[&l.functions[0]].keys.count;
                LoadState {
                    gen: LoadGen::new(l.clone(), keys, s.seed.wrapping_add(i as u64 * 0x9e37_79b9), s.horizon_ms),
                    functions: l.functions.clone(),
                    pending: None,
                }
            })
            .collect();
        let monitor = Monitor::new(s.monitor.policy().window_ns, s.monitor.clock_offset_ns);
        let trace = Trace::new(s.metrics.trace, s.metrics.trace_limit);
        Self {
            now: 0,
            horizon,
            seq: 0,
            events: BinaryHeap::new(),
            cores,
            core_index,
            node_cores,
            flights: Vec::new(),
            free: Vec::new(),
            loads,
            copy_cursor: BTreeMap::new(),
            steering,
            held: VecDeque::new(),
            monitor,
            policy,
            window_index: 0,
            client,
            nic,
            host,
            trace,
            injected: 0,
            completed: 0,
            dropped: 0,
            late_replies: 0,
            latencies: Vec::new(),
            drops: BTreeMap::new(),
            offered_bins: BTreeMap::new(),
            completed_bins: BTreeMap::new(),
            dropped_bins: BTreeMap::new(),
            share_bins: BTreeMap::new(),
            cost: BTreeMap::new(),
            windows: Vec::new(),
            decisions: Vec::new(),
            violations: Vec::new(),
            world,
        }
    }

    fn push(&mut self, t: u64, ev: Ev) {
        self.seq += 1;
        self.events.push(Reverse((t, self.seq, ev)));
    }

    fn bin(&self, t: u64) -> u64 {
        (t as f64 / (self.world.scenario.metrics.bin_ms * 1e6)) as u64
    }

    fn trace(&mut self, core: Option<usize>, event: TraceKind, id: Option<usize>, reason: Option<DropReason>, detail: Option<String>) {
        if !self.trace.enabled {
            return;
        }
        let (node, c) = core.map_or((self.nic, 0), |c| (self.cores[c].node, self.cores[c].index));
        let (function_id, flow_port) = id
            .and_then(|i| self.flights[i].as_ref())
            .map_or((None, 0), |f| (Some(f.msg.function_id()), f.port));
        self.trace.push(TraceEvent {
            sim_time: self.now,
            node,
            core: c,
            event,
            function_id: function_id.filter(|&f| f != 0),
            flow_port,
            reason,
            detail,
        });
    }

    fn alloc(&mut self, f: Flight) -> usize {
        match self.free.pop() {
            Some(i) => {
                self.flights[i] = Some(f);
                i
            }
            None => {
                self.flights.push(Some(f));
                self.flights.len() - 1
            }
        }
    }

    fn release(&mut self, id: usize) -> Flight {
        let f = self.flights[id].take().expect("live flight");
        self.free.push(id);
        f
    }

    fn flight(&mut self, id: usize) -> &mut Flight {
        self.flights[id].as_mut().expect("live flight")
    }

    fn core_of(&self, node: NodeId, port: u16) -> usize {
        let n = self.node_cores.get(&node).copied().unwrap_or(1);
        self.core_index[&(node, flow_core(port, n))]
    }

    fn interference(&self, core: usize, t: u64) -> f64 {
        let c = &self.cores[core];
        self.world
            .scenario
            .interference
            .iter()
            .filter(|i| i.node == c.role && i.core == c.index)
            .filter(|i| {
                let s = (i.start_ms * 1e6) as u64;
                t >= s && t < s + (i.duration_ms * 1e6) as u64
            })
            .map(|i| i.factor)
            .product()
    }

    fn record_drop(&mut self, id: usize, core: Option<usize>, reason: DropReason) {
        self.trace(core, TraceKind::Drop, Some(id), Some(reason), None);
        let f = self.release(id);
        self.dropped += 1;
        *self.drops.entry(reason).or_default() += 1;
        *self.dropped_bins.entry(self.bin(self.now)).or_default() += 1;
        if let Some(c) = core {
            let (node, index) = (self.cores[c].node, self.cores[c].index);
            self.monitor.record_drop(node, index, self.now);
        }
        if let Some(r) = f.first {
            self.cost.entry(r).or_default().wire_bytes += f.wire;
        }
    }

    /// Runs to the horizon.
    pub fn run(mut self) -> RunOutput {
        for i in 0..self.loads.len() {
            self.schedule_next(i);
        }
        let w = self.monitor.window_ns;
        self.push(w, Ev::Window);
        for i in 0..self.world.scenario.steering.changes.len() {
            let at = (self.world.scenario.steering.changes[i].at_ms * 1e6) as u64;
            self.push(at, Ev::Change(i));
        }
        while let Some(Reverse((t, _, ev))) = self.events.pop() {
            if t > self.horizon {
                break;
            }
            self.now = t;
            match ev {
                Ev::Inject(l) => self.inject(l),
                Ev::Steer(id) => self.steer(id),
                Ev::Deliver { core, id, recirc } => self.deliver(core, id, recirc),
                Ev::Run(core) => self.run_core(core),
                Ev::Window => self.close_window(),
                Ev::Activate => self.activate(),
                Ev::Change(i) => self.change(i),
            }
        }
        self.now = self.horizon;
        self.finish()
    }

    fn schedule_next(&mut self, l: usize) {
        if let Some(r) = self.loads[l].gen.next_request() {
            self.loads[l].pending = Some(r);
            self.push(r.t_ns, Ev::Inject(l));
        }
    }

    fn inject(&mut self, l: usize) {
        let Some(r) = self.loads[l].pending.take() else { return };
        let name = self.loads[l].functions[r.function].clone();
        let entry = &self.world.functions[&name];
        let cursor = self.copy_cursor.entry(name.clone()).or_default();
        let (_, port) = entry.copies[(*cursor % entry.copies.len() as u64) as usize];
        *cursor += 1;
        let key = entry.keys.key(r.key_index % entry.keys.count.max(1));
        let payload = entry.request.payload(key, r.seq);
        let mut msg = MessageBuffer::request(r.src_port, port, &payload);
        self.injected += 1;
        *self.offered_bins.entry(self.bin(self.now)).or_default() += 1;
        let client_mode = self.world.scenario.mode == ExecMode::Client;
        if client_mode {
            msg.return_to = Some(self.client);
        }
        let wire = if client_mode { 0 } else { msg.wire_len() as u64 };
        let id = self.alloc(Flight {
            msg,
            sent: self.now,
            port: r.src_port,
            first: None,
            udma_ops: 0,
            wire,
        });
        if client_mode {
            let core = self.core_of(self.client, r.src_port);
            self.push(self.now, Ev::Deliver { core, id, recirc: false });
        } else {
            let t = self.now + self.world.topology.transit_ns(self.client, self.nic, wire as usize);
            self.push(t, Ev::Steer(id));
        }
        self.schedule_next(l);
    }

    fn steer(&mut self, id: usize) {
        let port = self.flight(id).port;
        if self.steering.is_held(port) {
            self.held.push_back(id);
            return;
        }
        let (node, c) = self.steering.steer(port);
        let core = self.core_index[&(node, c)];
        let bytes = self.flight(id).msg.wire_len();
        let t = self.now + self.world.topology.transit_ns(self.nic, node, bytes);
        self.push(t, Ev::Deliver { core, id, recirc: false });
    }

    fn change(&mut self, i: usize) {
        let c = self.world.scenario.steering.changes[i];
        let r = match c.to {
            Side::Host => self.steering.install_rule(
                FlowRule {
                    priority: POLICY_RULE_PRIORITY,
                    match_src_port: Some(c.port),
                    target: self.host,
                },
                self.now,
            ),
            Side::Nic => self.steering.remove_rule(Some(c.port), self.now),
        };
        match r {
            Ok(at) => {
                self.trace(None, TraceKind::Decision, None, None, Some(format!("scheduled: port {} to {:?}", c.port, c.to)));
                self.push(at, Ev::Activate);
            }
            Err(e) => self.violations.push(format!("t={} steering: {e}", self.now)),
        }
    }

    fn activate(&mut self) {
        let touched = self.steering.activate_due(self.now);
        if !touched.is_empty() {
            self.trace(None, TraceKind::Decision, None, None, Some(format!("rules active for ports {touched:?}")));
        }
        let held = std::mem::take(&mut self.held);
        for id in held {
            self.steer(id);
        }
    }

    fn deliver(&mut self, core: usize, id: usize, recirc: bool) {
        let cap = self.world.scenario.switch.queue_capacity;
        if !recirc && self.cores[core].queue.len() >= cap {
            self.record_drop(id, Some(core), DropReason::QueueFull);
            return;
        }
        let c = &mut self.cores[core];
        let base = buffer_base(c.node, c.index, c.slot % 4096);
        c.slot += 1;
        let ts = (self.now as i64 + self.monitor.clock_offset_ns).max(0) as u64;
        let f = self.flights[id].as_mut().expect("live flight");
        f.msg.base = base;
        f.msg.set_recv_timestamp(ts);
        self.cores[core].queue.push_back(id);
        self.trace(Some(core), TraceKind::Rx, Some(id), None, None);
        if !self.cores[core].busy {
            self.cores[core].busy = true;
            self.push(self.now, Ev::Run(core));
        }
    }

    fn image_penalty(&mut self, core: usize, function_id: u32) -> f64 {
        let cap = self.world.scenario.costs.image_cache;
        let c = &mut self.cores[core];
        if let Some(pos) = c.images.iter().position(|&f| f == function_id) {
            c.images.remove(pos);
            c.images.push_front(function_id);
            return 0.0;
        }
        c.images.push_front(function_id);
        c.images.truncate(cap);
        self.world.scenario.costs.image_miss_ns
    }

    fn run_core(&mut self, core: usize) {
        if self.cores[core].batch.is_empty() {
            let b = self.world.scenario.switch.batch_size;
            let n = b.min(self.cores[core].queue.len());
            if n == 0 {
                self.cores[core].busy = false;
                return;
            }
            let batch: Vec<usize> = self.cores[core].queue.drain(..n).collect();
            let first_ts = self.flights[batch[0]].as_ref().map(|f| f.msg.recv_timestamp());
            if self.cores[core].role != NodeRole::Client {
                let (node, index) = (self.cores[core].node, self.cores[core].index);
                self.monitor.record_batch(node, index, first_ts, self.now);
            }
            self.cores[core].batch.extend(batch);
        }
        let id = self.cores[core].batch.pop_front().expect("non-empty batch");
        let done = self.execute(core, id);
        self.push(done, Ev::Run(core));
    }

    /// Runs `id` on `core` until it leaves the core. Returns when the core
    /// is free again.
    fn execute(&mut self, core: usize, id: usize) -> u64 {
        let costs = self.world.scenario.costs;
        let udma_timing = self.world.scenario.udma;
        let node = self.cores[core].node;
        let role = self.cores[core].role;
        let mut t = self.now;
        loop {
            let rep = {
                let f = self.flights[id].as_mut().expect("live flight");
                self.world.switch.process(&mut f.msg, node)
            };
            let scale = self.cores[core].speed * self.interference(core, t);
            let mut work = costs.stage_ns + rep.insns as f64 * costs.insn_ns;
            if rep.insns > 0 {
                if let Some(fid) = rep.function_id {
                    work += self.image_penalty(core, fid);
                }
                let f = self.flight(id);
                if f.first.is_none() {
                    f.first = Some(role);
                    let bin = self.bin(t);
                    self.share_bins.entry(bin).or_default()[role_slot(role)] += 1;
                }
            }
            let mut dma_wait = 0;
            if let Some(u) = &rep.udma {
                self.flight(id).udma_ops += 1;
                // Descriptor handling on the core costs what a local copy would.
                work += udma_timing.cost(UdmaRoute::Local, &u.desc) as f64;
                if u.route == UdmaRoute::Dma {
                    dma_wait = u.cost_ns;
                }
                self.trace(Some(core), TraceKind::Udma, Some(id), None, None);
            }
            if let Some(tr) = rep.trap {
                self.violations.push(format!("t={} function {:?} trapped: {tr:?}", t, rep.function_id));
            }
            t += (work * scale).round() as u64;
            match rep.decision {
                RoutingDecision::LocalUdma => {
                    self.trace(Some(core), TraceKind::Yield, Some(id), None, None);
                }
                RoutingDecision::LocalVm => {
                    if dma_wait > 0 {
                        // The core moves on; the message comes back when the DMA lands.
                        self.push(t + dma_wait, Ev::Deliver { core, id, recirc: true });
                        return t;
                    }
                }
                RoutingDecision::RemoteNode(n) => {
                    let bytes = self.flight(id).msg.wire_len();
                    if (node == self.client) != (n == self.client) {
                        self.flight(id).wire += bytes as u64;
                    }
                    let port = self.flight(id).port;
                    let dst = self.core_of(n, port);
                    self.trace(Some(core), TraceKind::Forward, Some(id), None, Some(format!("to node {n}")));
                    let arrive = t + self.world.topology.transit_ns(node, n, bytes);
                    self.push(arrive, Ev::Deliver { core: dst, id, recirc: false });
                    return t;
                }
                RoutingDecision::ReplyToClient => {
                    let bytes = self.flight(id).msg.wire_len();
                    let arrive = t + self.world.topology.transit_ns(node, self.client, bytes);
                    self.trace(Some(core), TraceKind::Reply, Some(id), None, None);
                    let f = self.release(id);
                    if arrive > self.horizon {
                        // Still on the wire when the run ends.
                        self.late_replies += 1;
                        return t;
                    }
                    let wire = f.wire + if node != self.client { bytes as u64 } else { 0 };
                    let c = self.cost.entry(f.first.unwrap_or(role)).or_default();
                    c.requests += 1;
                    c.udma_ops += f.udma_ops as u64;
                    c.wire_bytes += wire;
                    self.completed += 1;
                    self.latencies.push((f.port, f.sent, arrive - f.sent));
                    *self.completed_bins.entry(self.bin(arrive)).or_default() += 1;
                    return t;
                }
                RoutingDecision::Drop(r) => {
                    self.record_drop(id, Some(core), r);
                    return t;
                }
            }
        }
    }

    fn side_cores(&self, role: NodeRole) -> Vec<(NodeId, u32)> {
        self.cores.iter().filter(|c| c.role == role).map(|c| (c.node, c.index)).collect()
    }

    fn close_window(&mut self) {
        let idx = self.window_index;
        self.window_index += 1;
        let nic_cores = self.side_cores(NodeRole::Nic);
        let host_cores = self.side_cores(NodeRole::Host);
        let nic: QueueWindow = self.monitor.close(idx, nic_cores);
        let host: QueueWindow = self.monitor.close(idx, host_cores);
        self.monitor.discard_before(idx + 1);
        let w = self.monitor.window_ns;
        self.windows.push(WindowRecord {
            t_ms: (idx * w) as f64 / 1e6,
            nic_delay_ns: nic.mean_queue_delay(),
            host_delay_ns: host.mean_queue_delay(),
            nic_drops: nic.drop_count,
            host_drops: host.drop_count,
        });
        if let Some((policy, assign)) = &mut self.policy {
            let d = policy.tick(nic, host);
            if d != Decision::NoOp {
                let moves = assign.apply(d);
                let mut active = self.now;
                for &(port, side) in &moves {
                    let r = match side {
                        Side::Host => self.steering.install_rule(
                            FlowRule {
                                priority: POLICY_RULE_PRIORITY,
                                match_src_port: Some(port),
                                target: self.host,
                            },
                            self.now,
                        ),
                        Side::Nic => self.steering.remove_rule(Some(port), self.now),
                    };
                    match r {
                        Ok(at) => active = active.max(at),
                        Err(e) => self.violations.push(format!("t={} steering: {e}", self.now)),
                    }
                }
                self.decisions.push(DecisionRecord {
                    t_ms: self.now as f64 / 1e6,
                    decision: d,
                    moves: moves.clone(),
                    active_ms: active as f64 / 1e6,
                });
                self.trace(None, TraceKind::Decision, None, None, Some(format!("{d:?} {moves:?}")));
                self.push(active, Ev::Activate);
            }
        }
        self.push(self.now + w, Ev::Window);
    }

    fn finish(mut self) -> RunOutput {
        let s = &self.world.scenario;
        let in_flight = self.flights.iter().filter(|f| f.is_some()).count() as u64 + self.late_replies;
        if self.injected != self.completed + self.dropped + in_flight {
            self.violations.push(format!(
                "conservation: injected {} != completed {} + dropped {} + in flight {}",
                self.injected, self.completed, self.dropped, in_flight
            ));
        }
        let bin_ms = s.metrics.bin_ms;
        let nbins = (s.horizon_ms / bin_ms).ceil() as u64;
        let throughput = (0..nbins)
            .map(|b| {
                let completed = self.completed_bins.get(&b).copied().unwrap_or(0);
                ThroughputBin {
                    t_ms: b as f64 * bin_ms,
                    offered: self.offered_bins.get(&b).copied().unwrap_or(0),
                    completed,
                    dropped: self.dropped_bins.get(&b).copied().unwrap_or(0),
                    ops_per_s: completed as f64 / (bin_ms / 1e3),
                }
            })
            .collect();
        let placement_share = (0..nbins)
            .map(|b| {
                let [client, nic, host] = self.share_bins.get(&b).copied().unwrap_or_default();
                let total = (client + nic + host).max(1) as f64;
                ShareBin {
                    t_ms: b as f64 * bin_ms,
                    client,
                    nic,
                    host,
                    host_share: host as f64 / total,
                    nic_share: nic as f64 / total,
                }
            })
            .collect();
        let lat_bin = s.metrics.latency_bin_ms * 1e6;
        let mut by_flow: BTreeMap<u16, Vec<u64>> = BTreeMap::new();
        let mut by_bin: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
        let mut all = Vec::with_capacity(self.latencies.len());
        for &(port, sent, lat) in &self.latencies {
            by_flow.entry(port).or_default().push(lat);
            by_bin.entry((sent as f64 / lat_bin) as u64).or_default().push(lat);
            all.push(lat);
        }
        let flows = by_flow
            .into_iter()
            .map(|(flow, mut v)| FlowLatency {
                flow,
                latency: Percentiles::of(&mut v),
            })
            .collect();
        let latency_series = by_bin
            .into_iter()
            .map(|(b, mut v)| LatencyBin {
                t_ms: b as f64 * s.metrics.latency_bin_ms,
                latency: Percentiles::of(&mut v),
            })
            .collect();
        let metrics = MetricsBundle {
            scenario: s.name.clone(),
            seed: s.seed,
            horizon_ms: s.horizon_ms,
            bin_ms,
            latency_bin_ms: s.metrics.latency_bin_ms,
            injected: self.injected,
            completed: self.completed,
            dropped: self.dropped,
            in_flight,
            latency: Percentiles::of(&mut all),
            flows,
            throughput,
            placement_share,
            latency_series,
            drops: self.drops,
            placement_cost: self.cost,
            windows: self.windows,
            decisions: self.decisions,
            violations: self.violations,
        };
        RunOutput {
            metrics,
            trace: self.trace,
        }
    }
}

/// Builds and runs a scenario.
pub fn run(world: World) -> RunOutput {
    Simulation::new(world).run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fabric::{Arrival, Dataset, FunctionSpec, LoadSpec, RegionSpec, Scenario};

    fn store_scenario(rate: f64, horizon_ms: f64) -> Scenario {
        let mut s = Scenario {
            horizon_ms,
            ..Scenario::default()
        };
        s.regions.push(RegionSpec {
            id: 5,
            home: NodeRole::Host,
            data: Dataset::Zero { size: 16 * 1024 },
        });
        s.functions.push(FunctionSpec {
            name: "store".into(),
            app: "store16".into(),
            region: 5,
            cache_region: None,
            copies: 1,
            source: None,
            value_len: 0,
        });
        s.loads.push(LoadSpec::constant("store", rate, 10));
        s
    }

    #[test]
    fn zero_rate_is_empty() {
        let m = run(World::build(&store_scenario(0.0, 50.0)).unwrap()).metrics;
        assert_eq!((m.injected, m.completed, m.dropped), (0, 0, 0));
        assert_eq!(m.latency.count, 0);
    }

    #[test]
    fn conserves_and_is_deterministic() {
        let s = store_scenario(200_000.0, 30.0);
        let a = run(World::build(&s).unwrap()).metrics;
        let b = run(World::build(&s).unwrap()).metrics;
        assert_eq!(a.to_json(), b.to_json());
        assert!(a.violations.is_empty(), "{:?}", a.violations);
        assert_eq!(a.injected, a.completed + a.dropped + a.in_flight);
        assert!(a.completed > 5_000);
        assert_eq!(a.dropped, 0);
        // NIC-only by default.
        assert_eq!(a.placement_cost.keys().copied().collect::<Vec<_>>(), [NodeRole::Nic]);
    }

    #[test]
    fn host_rules_shift_share() {
        let mut s = store_scenario(100_000.0, 40.0);
        s.steering.host_flows = 3;
        s.loads[0].arrival = Arrival::Fixed;
        let m = run(World::build(&s).unwrap()).metrics;
        let c = &m.placement_cost;
        let host = c[&NodeRole::Host].requests as f64;
        let total = host + c[&NodeRole::Nic].requests as f64;
        assert!((host / total - 0.3).abs() < 0.01, "{}", host / total);
    }

    #[test]
    fn client_mode_runs_on_the_client() {
        let mut s = store_scenario(50_000.0, 20.0);
        s.mode = ExecMode::Client;
        let m = run(World::build(&s).unwrap()).metrics;
        let c = m.placement_cost[&NodeRole::Client];
        assert_eq!(c.udma_ops, c.requests);
        assert!(m.latency.p50_ns > 2 * 5_000, "a UDMA round trip crosses the client link twice");
    }
}
