// SPDX-License-Identifier: Apache-2.0
// Copyright The amrt Authors

//! The NIC's hardware flow-steering table.
//!
//! Rules match the UDP source port (or anything) and deliver to a node;
//! the core is picked by hashing the port over that node's cores. Changes
//! take effect after a reconfiguration delay. While a change is being
//! written, packets of the flows it matches are held at the switch and
//! released, in order, once it is active.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::apps::mix64;
use crate::NodeId;

pub const DEFAULT_RECONFIG_DELAY_NS: u64 = 50_000_000;
/// Priority of the catch-all rule.
pub const DEFAULT_PRIORITY: u32 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowRule {
    pub priority: u32,
    /// `None` matches every port.
    pub match_src_port: Option<u16>,
    pub target: NodeId,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SteeringError {
    #[error("a rule for {port:?} at priority {priority} already exists")]
    DuplicateRule { port: Option<u16>, priority: u32 },
    #[error("no rule matches {port:?}")]
    NotFound { port: Option<u16> },
    #[error("the default rule cannot be removed")]
    DefaultRule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Change {
    Install(FlowRule),
    Remove(Option<u16>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Pending {
    at: u64,
    change: Change,
}

/// Core for a flow on a node with `cores` receive queues.
pub fn flow_core(src_port: u16, cores: u32) -> u32 {
    (mix64(src_port as u64) % cores.max(1) as u64) as u32
}

/// Highest-priority match; ties go to the exact-port rule.
pub fn best_match(rules: &[FlowRule], src_port: u16) -> Option<&FlowRule> {
    rules
        .iter()
        .filter(|r| r.match_src_port.is_none_or(|p| p == src_port))
        .max_by_key(|r| (r.priority, r.match_src_port.is_some()))
}

/// Where a packet from `src_port` lands: node and core.
pub fn steer(rules: &[FlowRule], src_port: u16, cores: &BTreeMap<NodeId, u32>) -> Option<(NodeId, u32)> {
    let r = best_match(rules, src_port)?;
    Some((r.target, flow_core(src_port, cores.get(&r.target).copied().unwrap_or(1))))
}

#[derive(Debug, Clone)]
pub struct SteeringTable {
    rules: Vec<FlowRule>,
    pending: Vec<Pending>,
    cores: BTreeMap<NodeId, u32>,
    pub delay_ns: u64,
}

impl SteeringTable {
    /// A table holding only the catch-all rule to `default_target`.
    pub fn new(default_target: NodeId, cores: BTreeMap<NodeId, u32>, delay_ns: u64) -> Self {
        Self {
            rules: vec![FlowRule {
                priority: DEFAULT_PRIORITY,
                match_src_port: None,
                target: default_target,
            }],
            pending: Vec::new(),
            cores,
            delay_ns,
        }
    }

    pub fn rules(&self) -> &[FlowRule] {
        &self.rules
    }

    pub fn steer(&self, src_port: u16) -> (NodeId, u32) {
        steer(&self.rules, src_port, &self.cores).expect("default rule always matches")
    }

    /// Installs immediately (initial configuration).
    pub fn install_now(&mut self, rule: FlowRule) -> Result<(), SteeringError> {
        self.check_install(&rule)?;
        self.rules.push(rule);
        Ok(())
    }

    fn check_install(&self, rule: &FlowRule) -> Result<(), SteeringError> {
        let clash = |r: &FlowRule| r.match_src_port == rule.match_src_port && r.priority == rule.priority;
        let pending_clash = self.pending.iter().any(|p| matches!(p.change, Change::Install(r) if clash(&r)));
        if self.rules.iter().any(clash) || pending_clash {
            return Err(SteeringError::DuplicateRule {
                port: rule.match_src_port,
                priority: rule.priority,
            });
        }
        Ok(())
    }

    /// Schedules `rule` to take effect at `now + delay`.
    pub fn install_rule(&mut self, rule: FlowRule, now: u64) -> Result<u64, SteeringError> {
        self.check_install(&rule)?;
        let at = now + self.delay_ns;
        self.pending.push(Pending {
            at,
            change: Change::Install(rule),
        });
        Ok(at)
    }

    /// Schedules removal of every non-default rule matching `port`.
    pub fn remove_rule(&mut self, port: Option<u16>, now: u64) -> Result<u64, SteeringError> {
        if port.is_none() {
            return Err(SteeringError::DefaultRule);
        }
        if !self.rules.iter().any(|r| r.match_src_port == port) {
            return Err(SteeringError::NotFound { port });
        }
        let at = now + self.delay_ns;
        self.pending.push(Pending {
            at,
            change: Change::Remove(port),
        });
        Ok(at)
    }

    /// Ports whose steering is being rewritten.
    pub fn held_ports(&self) -> BTreeSet<u16> {
        self.pending
            .iter()
            .filter_map(|p| match p.change {
                Change::Install(r) => r.match_src_port,
                Change::Remove(port) => port,
            })
            .collect()
    }

    pub fn is_held(&self, port: u16) -> bool {
        self.pending.iter().any(|p| match p.change {
            Change::Install(r) => r.match_src_port == Some(port),
            Change::Remove(q) => q == Some(port),
        })
    }

    pub fn next_activation(&self) -> Option<u64> {
        self.pending.iter().map(|p| p.at).min()
    }

    /// Applies every change due by `now`; returns the ports they touched.
    pub fn activate_due(&mut self, now: u64) -> Vec<u16> {
        let (due, rest): (Vec<_>, Vec<_>) = self.pending.iter().partition(|p| p.at <= now);
        self.pending = rest;
        let mut touched = Vec::new();
        for p in due {
            match p.change {
                Change::Install(r) => {
                    self.rules.push(r);
                    touched.extend(r.match_src_port);
                }
                Change::Remove(port) => {
                    self.rules.retain(|r| r.match_src_port != port);
                    touched.extend(port);
                }
            }
        }
        touched
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const NIC: NodeId = 1;
    const HOST: NodeId = 2;

    fn table() -> SteeringTable {
        SteeringTable::new(NIC, BTreeMap::from([(NIC, 6), (HOST, 2)]), DEFAULT_RECONFIG_DELAY_NS)
    }

    #[test]
    fn default_goes_to_nic() {
        let t = table();
        for p in 7000..7010 {
            assert_eq!(t.steer(p).0, NIC);
        }
    }

    #[test]
    fn rule_takes_effect_after_delay() {
        let mut t = table();
        let r = FlowRule {
            priority: 10,
            match_src_port: Some(7003),
            target: HOST,
        };
        let at = t.install_rule(r, 1_000).unwrap();
        assert_eq!(at, 1_000 + DEFAULT_RECONFIG_DELAY_NS);
        assert!(t.is_held(7003) && !t.is_held(7004));
        assert_eq!(t.install_rule(r, 2_000), Err(SteeringError::DuplicateRule { port: Some(7003), priority: 10 }));
        assert!(t.activate_due(at - 1).is_empty());
        assert_eq!(t.steer(7003).0, NIC);
        assert_eq!(t.activate_due(at), [7003]);
        assert_eq!(t.steer(7003).0, HOST);
        assert_eq!(t.steer(7004).0, NIC);
        let at = t.remove_rule(Some(7003), at).unwrap();
        t.activate_due(at);
        assert_eq!(t.steer(7003).0, NIC);
    }

    #[test]
    fn remove_errors() {
        let mut t = table();
        assert_eq!(t.remove_rule(Some(7000), 0), Err(SteeringError::NotFound { port: Some(7000) }));
        assert_eq!(t.remove_rule(None, 0), Err(SteeringError::DefaultRule));
    }

    #[test]
    fn priority_order() {
        let rules = [
            FlowRule { priority: 0, match_src_port: None, target: NIC },
            FlowRule { priority: 5, match_src_port: Some(1), target: HOST },
            FlowRule { priority: 9, match_src_port: Some(1), target: 7 },
        ];
        assert_eq!(best_match(&rules, 1).unwrap().target, 7);
        assert_eq!(best_match(&rules, 2).unwrap().target, NIC);
    }

    #[test]
    fn core_hash_is_in_range_and_spreads() {
        let hit: BTreeSet<u32> = (7000..7100).map(|p| flow_core(p, 6)).collect();
        assert_eq!(hit.len(), 6);
    }
}
