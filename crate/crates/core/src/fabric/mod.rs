// SPDX-License-Identifier: Apache-2.0
// Copyright The amrt Authors

//! The simulated deployment: topology, flow steering, open-loop load and
//! a deterministic discrete-event run of it all.

mod deploy;
mod load;
mod metrics;
mod scenario;
mod sim;
mod steering;
mod topology;

use thiserror::Error;

pub use deploy::{DeployStats, Deployment, Placement};
pub use load::{Arrival, KeyDist, LoadGen, LoadSpec, Request, FIRST_FLOW_PORT};
pub use metrics::{
    nearest_rank, DecisionRecord, FlowLatency, LatencyBin, MetricsBundle, Percentiles, PlacementCost, ShareBin,
    ThroughputBin, WindowRecord,
};
pub use scenario::{
    btree_value, build_dataset, mica_value, read_image, CostModel, Dataset, ExecMode, FunctionEntry, FunctionSpec,
    Interference, KeySpace, MetricsSpec, MonitorSpec, RegionSpec, RequestKind, RuleChange, Scenario, SteeringSpec,
    SwitchSpec, TopologySpec, World,
};
pub use sim::{run, RunOutput, Simulation, POLICY_RULE_PRIORITY};
pub use steering::{
    best_match, flow_core, steer, FlowRule, SteeringError, SteeringTable, DEFAULT_PRIORITY, DEFAULT_RECONFIG_DELAY_NS,
};
pub use topology::{Link, NodeSpec, Topology, CLIENT, HOST, NIC};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("cannot parse scenario: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("cannot read input: {0}")]
    Io(String),
}

/// Validates, builds and runs a scenario.
pub fn run_scenario(s: &Scenario) -> Result<RunOutput, ConfigError> {
    Ok(run(World::build(s)?))
}
