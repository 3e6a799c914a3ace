// SPDX-License-Identifier: Apache-2.0
// Copyright The amrt Authors

//! Per-node software switch.
//!
//! [`Switch::process`] advances one message by one stage:
//!
//! - a message on a function port gets a zeroed VM state and runs;
//! - a suspended message (migration port) with a pending descriptor is
//!   handed to this node's UDMA module;
//! - a suspended message whose descriptor was answered resumes.
//!
//! Every yielded message is readdressed to [`MIGRATION_PORT`] so it is never
//! mistaken for a fresh request again. Before that, the switch drops any
//! message the function itself addressed to the migration port.

mod registry;
mod trace;

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use registry::{FunctionRegistry, RegisterError, FUNCTION_PORT_BASE, MIGRATION_PORT};
pub use trace::{Trace, TraceEvent, TraceKind};

use crate::memory::{execute_udma, route, RegionTable, UdmaDescriptor, UdmaResult, UdmaRoute, UdmaTiming};
use crate::vm::buffer::{MessageBuffer, StateFlag, STATUS_PENDING};
use crate::vm::image::FunctionImage;
use crate::vm::interp::{execute, ExecOutcome, Trap, VmConfig};
use crate::{NodeId, NodeRole};

pub const DEFAULT_BATCH_SIZE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    UnknownPort,
    MalformedState,
    MigrationPortFromUntrusted,
    Trap,
    Loss,
    QueueFull,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RoutingDecision {
    /// Resume on this node (the UDMA just completed here).
    LocalVm,
    /// Run the pending descriptor on this node's UDMA module.
    LocalUdma,
    /// Forward to another node's switch on the migration port.
    RemoteNode(NodeId),
    ReplyToClient,
    Drop(DropReason),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwitchConfig {
    pub batch_size: usize,
    /// NIC can execute atomics on host memory over PCIe. Off by default:
    /// atomics at the NIC are forwarded to the host.
    pub atomic_dma: bool,
    pub vm: VmConfig,
    pub udma: UdmaTiming,
}

impl Default for SwitchConfig {
    fn default() -> Self {
        Self {
            batch_size: DEFAULT_BATCH_SIZE,
            atomic_dma: false,
            vm: VmConfig::default(),
            udma: UdmaTiming::default(),
        }
    }
}

/// What a UDMA stage did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UdmaEvent {
    pub desc: UdmaDescriptor,
    pub route: UdmaRoute,
    pub result: UdmaResult,
    pub cost_ns: u64,
}

/// Outcome of one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub decision: RoutingDecision,
    pub function_id: Option<u32>,
    /// Instructions interpreted in this stage.
    pub insns: u64,
    /// Set when the VM yielded in this stage.
    pub yielded: Option<UdmaDescriptor>,
    pub udma: Option<UdmaEvent>,
    pub trap: Option<Trap>,
}

impl StepReport {
    fn new(decision: RoutingDecision, function_id: Option<u32>) -> Self {
        Self {
            decision,
            function_id,
            insns: 0,
            yielded: None,
            udma: None,
            trap: None,
        }
    }
}

/// Cluster-wide state every switch reads: functions, regions and node roles.
#[derive(Debug, Clone)]
pub struct Switch {
    pub registry: Arc<FunctionRegistry>,
    pub regions: Arc<RegionTable>,
    pub roles: BTreeMap<NodeId, NodeRole>,
    pub cfg: SwitchConfig,
}

impl Switch {
    pub fn new(
        registry: Arc<FunctionRegistry>,
        regions: Arc<RegionTable>,
        roles: BTreeMap<NodeId, NodeRole>,
        cfg: SwitchConfig,
    ) -> Self {
        Self {
            registry,
            regions,
            roles,
            cfg,
        }
    }

    /// How the descriptor pending in a message would be realized at `here`.
    pub fn udma_route(&self, desc: &UdmaDescriptor, here: NodeId) -> UdmaRoute {
        route(desc, here, &self.regions, |n| self.roles.get(&n).copied(), self.cfg.atomic_dma)
    }

    /// Advances `msg` by one stage at node `here`.
    pub fn process(&self, msg: &mut MessageBuffer, here: NodeId) -> StepReport {
        let port = msg.dst_port();
        if port == MIGRATION_PORT {
            let Some(img) = self.registry.by_id(msg.function_id()) else {
                return StepReport::new(RoutingDecision::Drop(DropReason::MalformedState), None);
            };
            if msg.state() != Some(StateFlag::Suspended) {
                return StepReport::new(RoutingDecision::Drop(DropReason::MalformedState), Some(img.function_id()));
            }
            if msg.udma_status() == STATUS_PENDING {
                return self.run_udma(msg, here, img);
            }
            msg.set_dst_port(img.udp_port());
            return self.run_vm(msg, here, img);
        }
        let Some(img) = self.registry.by_port(port) else {
            return StepReport::new(RoutingDecision::Drop(DropReason::UnknownPort), None);
        };
        // Whatever state the sender put in the buffer is discarded.
        msg.reset_vm_state(img.function_id());
        self.run_vm(msg, here, img)
    }

    fn run_vm(&self, msg: &mut MessageBuffer, here: NodeId, img: &FunctionImage) -> StepReport {
        let fid = Some(img.function_id());
        let ex = execute(img, msg, &self.cfg.vm);
        let mut rep = StepReport::new(RoutingDecision::ReplyToClient, fid);
        rep.insns = ex.insns;
        match ex.outcome {
            ExecOutcome::Completed(_) => {}
            ExecOutcome::Trapped(t) => {
                let reason = match t {
                    Trap::MalformedState(_) => DropReason::MalformedState,
                    _ => DropReason::Trap,
                };
                rep.decision = RoutingDecision::Drop(reason);
                rep.trap = Some(t);
            }
            ExecOutcome::Yielded(desc) => {
                rep.yielded = Some(desc);
                if msg.dst_port() == MIGRATION_PORT {
                    rep.decision = RoutingDecision::Drop(DropReason::MigrationPortFromUntrusted);
                    return rep;
                }
                msg.set_dst_port(MIGRATION_PORT);
                rep.decision = match self.udma_route(&desc, here) {
                    UdmaRoute::Forward(home) => RoutingDecision::RemoteNode(home),
                    _ => RoutingDecision::LocalUdma,
                };
            }
        }
        rep
    }

    fn run_udma(&self, msg: &mut MessageBuffer, here: NodeId, img: &FunctionImage) -> StepReport {
        let fid = Some(img.function_id());
        let Some(desc) = msg.descriptor() else {
            return StepReport::new(RoutingDecision::Drop(DropReason::MalformedState), fid);
        };
        let route = self.udma_route(&desc, here);
        if let UdmaRoute::Forward(home) = route {
            // Not ours to serve (e.g. the message was steered elsewhere).
            return StepReport::new(RoutingDecision::RemoteNode(home), fid);
        }
        let result = execute_udma(&desc, msg, &self.regions, img.allowed_regions());
        let mut rep = StepReport::new(RoutingDecision::LocalVm, fid);
        rep.udma = Some(UdmaEvent {
            desc,
            route,
            result,
            cost_ns: self.cfg.udma.cost(route, &desc),
        });
        if let Some(back) = msg.return_to {
            if back != here {
                rep.decision = RoutingDecision::RemoteNode(back);
            }
        }
        rep
    }
}

/// Per-reason drop counters.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropCounters(pub BTreeMap<DropReason, u64>);

impl DropCounters {
    pub fn bump(&mut self, r: DropReason) {
        *self.0.entry(r).or_default() += 1;
    }

    pub fn get(&self, r: DropReason) -> u64 {
        self.0.get(&r).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.0.values().sum()
    }
}

/// One worker core's view: its FIFO receive queue and counters.
#[derive(Debug)]
pub struct NodeContext {
    pub node_id: NodeId,
    pub core_id: u32,
    pub role: NodeRole,
    pub rx_queue: VecDeque<MessageBuffer>,
    pub tx_queue: VecDeque<MessageBuffer>,
    pub drops: DropCounters,
    next_buffer: u64,
}

impl NodeContext {
    pub fn new(node_id: NodeId, core_id: u32, role: NodeRole) -> Self {
        Self {
            node_id,
            core_id,
            role,
            rx_queue: VecDeque::new(),
            tx_queue: VecDeque::new(),
            drops: DropCounters::default(),
            next_buffer: 0,
        }
    }

    /// Simulated address of a fresh receive buffer in this core's memory.
    pub fn alloc_base(&mut self) -> u64 {
        let slot = self.next_buffer % 4096;
        self.next_buffer += 1;
        buffer_base(self.node_id, self.core_id, slot)
    }

    /// Takes up to `batch` messages and the receive timestamp of the first,
    /// the only timestamp the monitor reads per batch.
    pub fn poll_batch(&mut self, batch: usize) -> (Vec<MessageBuffer>, Option<u64>) {
        let n = batch.min(self.rx_queue.len());
        let msgs: Vec<_> = self.rx_queue.drain(..n).collect();
        let ts = msgs.first().map(|m| m.recv_timestamp());
        (msgs, ts)
    }

    /// Pops one message, runs one stage and routes the result: local stages
    /// go back on the queue, replies to `tx_queue`, drops are counted.
    /// Remote forwards are returned to the caller with the message.
    pub fn process_one(&mut self, sw: &Switch) -> Option<(StepReport, Option<MessageBuffer>)> {
        let mut msg = self.rx_queue.pop_front()?;
        if msg.base == 0 {
            msg.base = self.alloc_base();
        }
        let rep = sw.process(&mut msg, self.node_id);
        let out = match rep.decision {
            RoutingDecision::LocalVm | RoutingDecision::LocalUdma => {
                self.rx_queue.push_back(msg);
                None
            }
            RoutingDecision::ReplyToClient => {
                self.tx_queue.push_back(msg);
                None
            }
            RoutingDecision::Drop(r) => {
                self.drops.bump(r);
                None
            }
            RoutingDecision::RemoteNode(_) => Some(msg),
        };
        Some((rep, out))
    }
}

/// Distinct simulated buffer addresses per (node, core, slot).
pub fn buffer_base(node: NodeId, core: u32, slot: u64) -> u64 {
    ((node as u64 + 1) << 44) | ((core as u64) << 32) | ((slot + 1) << 12)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::vm::asm::assemble;

    const HOST: NodeId = 2;
    const NIC: NodeId = 1;
    const CLIENT: NodeId = 0;

    fn roles() -> BTreeMap<NodeId, NodeRole> {
        BTreeMap::from([(CLIENT, NodeRole::Client), (NIC, NodeRole::Nic), (HOST, NodeRole::Host)])
    }

    /// Reads one u64 from region 1 offset 0 into the app region and returns it.
    const READER: &str = "
        lddw r2, 672
        lddw r3, (1 << 56)
        mov r4, 8
        call udma
        jne r0, 0, fail
        call app_region
        ldxdw r0, [r0+0]
        sth [r1+10], 8
        exit
    fail:
        mov r0, 99
        exit";

    fn setup(src: &str) -> (Switch, u16) {
        let mut regions = RegionTable::new();
        regions.create_region_with_id(1, 64, HOST).unwrap();
        regions.get(1).unwrap().write(0, &42u64.to_le_bytes()).unwrap();
        let mut reg = FunctionRegistry::default();
        let (_, port) = reg.register_function(&assemble(src).unwrap(), BTreeSet::from([1])).unwrap();
        (
            Switch::new(Arc::new(reg), Arc::new(regions), roles(), SwitchConfig::default()),
            port,
        )
    }

    fn run_at(sw: &Switch, mut msg: MessageBuffer, start: NodeId) -> (Vec<(NodeId, RoutingDecision)>, MessageBuffer) {
        let mut at = start;
        let mut seq = Vec::new();
        msg.base = buffer_base(at, 0, 0);
        for _ in 0..32 {
            let rep = sw.process(&mut msg, at);
            seq.push((at, rep.decision));
            match rep.decision {
                RoutingDecision::RemoteNode(n) => {
                    at = n;
                    msg.base = buffer_base(at, 0, seq.len() as u64);
                }
                RoutingDecision::LocalVm | RoutingDecision::LocalUdma => {}
                _ => break,
            }
        }
        (seq, msg)
    }

    #[test]
    fn host_mode_is_local_copies() {
        let (sw, port) = setup(READER);
        let (seq, msg) = run_at(&sw, MessageBuffer::request(7000, port, &[]), HOST);
        let d: Vec<_> = seq.iter().map(|s| s.1).collect();
        assert_eq!(
            d,
            [RoutingDecision::LocalUdma, RoutingDecision::LocalVm, RoutingDecision::ReplyToClient]
        );
        assert_eq!(msg.payload(), 42u64.to_le_bytes());
        assert_eq!(msg.dst_port(), port);
    }

    #[test]
    fn nic_mode_uses_dma() {
        let (sw, port) = setup(READER);
        let mut msg = MessageBuffer::request(7000, port, &[]);
        msg.base = buffer_base(NIC, 0, 0);
        sw.process(&mut msg, NIC);
        let rep = sw.process(&mut msg, NIC);
        assert_eq!(rep.udma.unwrap().route, UdmaRoute::Dma);
        assert_eq!(rep.udma.unwrap().cost_ns, 3500);
    }

    #[test]
    fn client_mode_round_trips() {
        let (sw, port) = setup(READER);
        let mut msg = MessageBuffer::request(7000, port, &[]);
        msg.return_to = Some(CLIENT);
        let (seq, msg) = run_at(&sw, msg, CLIENT);
        assert_eq!(
            seq,
            [
                (CLIENT, RoutingDecision::RemoteNode(HOST)),
                (HOST, RoutingDecision::RemoteNode(CLIENT)),
                (CLIENT, RoutingDecision::ReplyToClient)
            ]
        );
        assert_eq!(msg.payload(), 42u64.to_le_bytes());
    }

    #[test]
    fn unknown_port_dropped() {
        let (sw, _) = setup(READER);
        let mut msg = MessageBuffer::request(7000, 1234, &[]);
        assert_eq!(
            sw.process(&mut msg, HOST).decision,
            RoutingDecision::Drop(DropReason::UnknownPort)
        );
    }

    #[test]
    fn self_addressed_migration_port_dropped() {
        let src = format!(
            "sth [r1+2], {MIGRATION_PORT}\nlddw r2, 672\nlddw r3, (1 << 56)\nmov r4, 8\ncall udma\nmov r0, 0\nexit"
        );
        let (sw, port) = setup(&src);
        let mut msg = MessageBuffer::request(7000, port, &[]);
        assert_eq!(
            sw.process(&mut msg, HOST).decision,
            RoutingDecision::Drop(DropReason::MigrationPortFromUntrusted)
        );
    }

    #[test]
    fn forged_state_on_function_port_is_wiped() {
        let (sw, port) = setup(READER);
        let mut msg = MessageBuffer::request(7000, port, &[]);
        msg.as_bytes_mut()[24..672].fill(0x41);
        msg.set_state(StateFlag::Suspended);
        let (seq, out) = run_at(&sw, msg, HOST);
        assert_eq!(seq.last().unwrap().1, RoutingDecision::ReplyToClient);
        assert_eq!(out.payload(), 42u64.to_le_bytes());
    }

    #[test]
    fn garbage_on_migration_port_is_dropped_not_run() {
        let (sw, port) = setup(READER);
        let mut msg = MessageBuffer::request(7000, port, &[]);
        sw.process(&mut msg, HOST);
        msg.complete_udma(0, 0);
        msg.put_u64(crate::vm::buffer::OFF_PC, 1);
        assert_eq!(
            sw.process(&mut msg, HOST).decision,
            RoutingDecision::Drop(DropReason::MalformedState)
        );
    }

    #[test]
    fn node_context_runs_to_reply() {
        let (sw, port) = setup(READER);
        let mut ctx = NodeContext::new(HOST, 0, NodeRole::Host);
        for i in 0..3 {
            ctx.rx_queue.push_back(MessageBuffer::request(7000 + i, port, &[]));
        }
        ctx.rx_queue.push_back(MessageBuffer::request(7000, 1, &[]));
        while ctx.process_one(&sw).is_some() {}
        let order: Vec<_> = ctx.tx_queue.iter().map(|m| m.src_port()).collect();
        assert_eq!(order, [7000, 7001, 7002]);
        assert_eq!(ctx.drops.get(DropReason::UnknownPort), 1);
    }

    #[test]
    fn batch_reads_one_timestamp() {
        let mut ctx = NodeContext::new(HOST, 0, NodeRole::Host);
        for i in 0..40u64 {
            let mut m = MessageBuffer::request(7000, 9000, &[]);
            m.set_recv_timestamp(100 + i);
            ctx.rx_queue.push_back(m);
        }
        let (b, ts) = ctx.poll_batch(DEFAULT_BATCH_SIZE);
        assert_eq!((b.len(), ts), (32, Some(100)));
        let (b, ts) = ctx.poll_batch(DEFAULT_BATCH_SIZE);
        assert_eq!((b.len(), ts), (8, Some(132)));
    }

    #[test]
    fn atomics_at_nic_forward_to_host() {
        let src = "lddw r2, (1 << 56)\nmov r3, 1\ncall ufaa\nmov r0, 0\nexit";
        let (sw, port) = setup(src);
        let mut msg = MessageBuffer::request(7000, port, &[]);
        assert_eq!(sw.process(&mut msg, NIC).decision, RoutingDecision::RemoteNode(HOST));
    }
}
