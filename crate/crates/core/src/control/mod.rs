// SPDX-License-Identifier: Apache-2.0
// Copyright The amrt Authors

//! Queue-delay monitoring and the load-shifting policy.
//!
//! Workers report one sample per polled batch. Samples fold into fixed
//! windows per core; at each window close the policy sees one aggregate
//! window per side (NIC cores, host cores) and may move one flow.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::NodeId;

pub const DEFAULT_WINDOW_NS: u64 = 10_000_000;

/// The two sides flows move between.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Nic,
    Host,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    NoOp,
    ShiftToNic(u32),
    ShiftToHost(u32),
}

/// Aggregate of one window. Windows are half-open `[start, start + len)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct QueueWindow {
    pub window_index: u64,
    pub start: u64,
    pub delay_sum_ns: u64,
    pub sample_count: u64,
    pub drop_count: u64,
}

impl QueueWindow {
    pub fn mean_queue_delay(&self) -> Option<u64> {
        (self.sample_count > 0).then(|| self.delay_sum_ns / self.sample_count)
    }

    pub fn merge(&mut self, o: &QueueWindow) {
        self.delay_sum_ns += o.delay_sum_ns;
        self.sample_count += o.sample_count;
        self.drop_count += o.drop_count;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub window_ns: u64,
    pub threshold_ns: u64,
    /// Underload level; all of the last `ring` windows of the home side
    /// below it pulls one flow back home.
    pub underload_ns: u64,
    pub ring: usize,
    pub consecutive: usize,
    pub cooldown_windows: u32,
    /// Side the wildcard rule delivers to. Underload pulls flows back here.
    pub home: Side,
    pub use_loss: bool,
    pub use_delay: bool,
    pub underload_return: bool,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            window_ns: DEFAULT_WINDOW_NS,
            threshold_ns: 100_000,
            underload_ns: 50_000,
            ring: 5,
            consecutive: 3,
            cooldown_windows: 5,
            home: Side::Nic,
            use_loss: true,
            use_delay: true,
            underload_return: true,
        }
    }
}

/// Folds per-batch samples into per-core windows.
#[derive(Debug, Clone, Default)]
pub struct Monitor {
    pub window_ns: u64,
    /// NIC-vs-CPU clock offset subtracted from every receive timestamp.
    pub clock_offset_ns: i64,
    current: BTreeMap<(u64, NodeId, u32), QueueWindow>,
}

impl Monitor {
    pub fn new(window_ns: u64, clock_offset_ns: i64) -> Self {
        Self {
            window_ns,
            clock_offset_ns,
            current: BTreeMap::new(),
        }
    }

    pub fn window_of(&self, t: u64) -> u64 {
        t / self.window_ns
    }

    /// One sample per batch: `dequeue - (recv - offset)`. An empty batch
    /// (no receive timestamp) records nothing. The sample lands in the
    /// window containing `dequeue_time`.
    pub fn record_batch(&mut self, node: NodeId, core: u32, first_recv_ts: Option<u64>, dequeue_time: u64) {
        let Some(ts) = first_recv_ts else { return };
        let recv = (ts as i64 - self.clock_offset_ns).max(0) as u64;
        let w = self.slot(node, core, dequeue_time);
        w.delay_sum_ns += dequeue_time.saturating_sub(recv);
        w.sample_count += 1;
    }

    pub fn record_drop(&mut self, node: NodeId, core: u32, t: u64) {
        self.slot(node, core, t).drop_count += 1;
    }

    fn slot(&mut self, node: NodeId, core: u32, t: u64) -> &mut QueueWindow {
        let idx = t / self.window_ns;
        self.current.entry((idx, node, core)).or_insert(QueueWindow {
            window_index: idx,
            start: idx * self.window_ns,
            ..Default::default()
        })
    }

    /// Closes window `idx` for the cores in `cores`, returning their merged
    /// aggregate. Cores with no activity contribute nothing.
    pub fn close(&mut self, idx: u64, cores: impl IntoIterator<Item = (NodeId, u32)>) -> QueueWindow {
        let mut out = QueueWindow {
            window_index: idx,
            start: idx * self.window_ns,
            ..Default::default()
        };
        for (node, core) in cores {
            if let Some(w) = self.current.remove(&(idx, node, core)) {
                out.merge(&w);
            }
        }
        out
    }

    /// Forgets windows before `idx` nobody closed.
    pub fn discard_before(&mut self, idx: u64) {
        self.current = self.current.split_off(&(idx, 0, 0));
    }
}

/// Load-shifting policy state.
#[derive(Debug, Clone)]
pub struct PolicyState {
    pub cfg: PolicyConfig,
    pub recent: BTreeMap<Side, VecDeque<QueueWindow>>,
    pub host_rule_count: u32,
    pub flow_count: u32,
    pub cooldown: u32,
}

impl PolicyState {
    pub fn new(cfg: PolicyConfig, flow_count: u32, host_rule_count: u32) -> Self {
        Self {
            cfg,
            recent: BTreeMap::from([(Side::Nic, VecDeque::new()), (Side::Host, VecDeque::new())]),
            host_rule_count: host_rule_count.min(flow_count),
            flow_count,
            cooldown: 0,
        }
    }

    pub fn push(&mut self, side: Side, w: QueueWindow) {
        let ring = self.recent.get_mut(&side).expect("both sides present");
        if ring.len() == self.cfg.ring {
            ring.pop_front();
        }
        ring.push_back(w);
    }

    fn above(&self, w: &QueueWindow) -> bool {
        w.mean_queue_delay().is_some_and(|d| d > self.cfg.threshold_ns)
    }

    /// A run of `consecutive` above-threshold windows within the ring.
    pub fn overloaded(&self, side: Side) -> bool {
        let mut run = 0;
        for w in &self.recent[&side] {
            run = if self.above(w) { run + 1 } else { 0 };
            if run >= self.cfg.consecutive {
                return true;
            }
        }
        false
    }

    /// Every window of a full ring has samples below the underload level.
    fn underloaded(&self, side: Side) -> bool {
        let ring = &self.recent[&side];
        ring.len() == self.cfg.ring
            && ring
                .iter()
                .all(|w| w.mean_queue_delay().is_some_and(|d| d < self.cfg.underload_ns))
    }

    fn latest_above(&self, side: Side) -> bool {
        self.recent[&side].back().is_some_and(|w| self.above(w))
    }

    fn can_shift(&self, d: Decision) -> bool {
        match d {
            Decision::ShiftToHost(n) => self.host_rule_count + n <= self.flow_count,
            Decision::ShiftToNic(n) => self.host_rule_count >= n,
            Decision::NoOp => true,
        }
    }

    fn commit(&mut self, d: Decision) -> Decision {
        if d == Decision::NoOp || !self.can_shift(d) {
            return Decision::NoOp;
        }
        match d {
            Decision::ShiftToHost(n) => self.host_rule_count += n,
            Decision::ShiftToNic(n) => self.host_rule_count -= n,
            Decision::NoOp => {}
        }
        self.cooldown = self.cfg.cooldown_windows;
        d
    }

    /// Called once per window close, after [`Self::push`].
    pub fn evaluate(&mut self) -> Decision {
        if self.cooldown > 0 {
            self.cooldown -= 1;
            return Decision::NoOp;
        }
        if !self.cfg.use_delay {
            return Decision::NoOp;
        }
        let host_over = self.overloaded(Side::Host);
        let nic_over = self.overloaded(Side::Nic);
        // Never push load onto a side that is itself above threshold.
        let d = if host_over && !self.latest_above(Side::Nic) && self.host_rule_count > 0 {
            Decision::ShiftToNic(1)
        } else if nic_over && !self.latest_above(Side::Host) && self.host_rule_count < self.flow_count {
            Decision::ShiftToHost(1)
        } else if self.cfg.underload_return && self.underloaded(self.cfg.home) {
            match self.cfg.home {
                Side::Nic if self.host_rule_count > 0 => Decision::ShiftToNic(1),
                Side::Host if self.host_rule_count < self.flow_count => Decision::ShiftToHost(1),
                _ => Decision::NoOp,
            }
        } else {
            Decision::NoOp
        };
        self.commit(d)
    }

    /// Loss at one side moves a flow to the other. Respects the cooldown
    /// without consuming it.
    pub fn on_loss(&mut self, side: Side, drops_in_window: u64) -> Decision {
        if self.cooldown > 0 || drops_in_window == 0 || !self.cfg.use_loss {
            return Decision::NoOp;
        }
        self.commit(match side {
            Side::Nic => Decision::ShiftToHost(1),
            Side::Host => Decision::ShiftToNic(1),
        })
    }

    /// One window close: both sides' windows, loss first, then delay.
    /// Loss on one side moves a flow only if the other side is neither
    /// losing packets nor above threshold in this window.
    pub fn tick(&mut self, nic: QueueWindow, host: QueueWindow) -> Decision {
        self.push(Side::Nic, nic);
        self.push(Side::Host, host);
        let strained = |w: &QueueWindow| w.drop_count > 0 || self.above(w);
        let (nic_strained, host_strained) = (strained(&nic), strained(&host));
        let d = if !host_strained {
            self.on_loss(Side::Nic, nic.drop_count)
        } else if !nic_strained {
            self.on_loss(Side::Host, host.drop_count)
        } else {
            Decision::NoOp
        };
        if d != Decision::NoOp {
            return d;
        }
        self.evaluate()
    }
}

/// Maps decisions to concrete flows: lowest source port first.
#[derive(Debug, Clone, Default)]
pub struct FlowAssignment {
    pub flows: BTreeSet<u16>,
    pub on_host: BTreeSet<u16>,
}

impl FlowAssignment {
    pub fn new(flows: impl IntoIterator<Item = u16>, initial_host: usize) -> Self {
        let flows: BTreeSet<u16> = flows.into_iter().collect();
        let on_host = flows.iter().copied().take(initial_host).collect();
        Self { flows, on_host }
    }

    /// The flows to move for `d`, already recorded as moved.
    pub fn apply(&mut self, d: Decision) -> Vec<(u16, Side)> {
        let mut out = Vec::new();
        match d {
            Decision::ShiftToHost(n) => {
                let pick: Vec<u16> = self
                    .flows
                    .iter()
                    .filter(|f| !self.on_host.contains(f))
                    .take(n as usize)
                    .copied()
                    .collect();
                for f in pick {
                    self.on_host.insert(f);
                    out.push((f, Side::Host));
                }
            }
            Decision::ShiftToNic(n) => {
                let pick: Vec<u16> = self.on_host.iter().take(n as usize).copied().collect();
                for f in pick {
                    self.on_host.remove(&f);
                    out.push((f, Side::Nic));
                }
            }
            Decision::NoOp => {}
        }
        out
    }

    pub fn nic_flows(&self) -> usize {
        self.flows.len() - self.on_host.len()
    }
}
