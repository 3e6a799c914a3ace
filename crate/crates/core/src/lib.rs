// SPDX-License-Identifier: Apache-2.0
// Copyright The amrt Authors

//! Active-message runtime.
//!
//! Functions travel inside messages as bytecode references plus suspended
//! VM state. They yield on every remote-memory access and resume wherever
//! the message lands next: the client, a SmartNIC or the host.

pub mod apps;
pub mod control;
pub mod fabric;
pub mod memory;
pub mod switch;
pub mod verifier;
pub mod vm;

pub use control::{Decision, Side};
pub use fabric::Placement;
pub use memory::{UdmaDescriptor, UdmaRoute};
pub use switch::{DropReason, RoutingDecision};
pub use verifier::{RejectKind, VerifierReport};
pub use vm::{Instruction, MessageBuffer, StateFlag};

/// Simulated node identifier.
pub type NodeId = u32;

/// What kind of machine a node is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeRole {
    Client,
    Nic,
    Host,
}
