// SPDX-License-Identifier: Apache-2.0
// Copyright The amrt Authors

//! Per-node event trace, serialized as JSON lines.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::DropReason;
use crate::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceKind {
    Rx,
    Exec,
    Yield,
    Udma,
    Forward,
    Reply,
    Drop,
    /// Policy decision or steering change.
    Decision,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub sim_time: u64,
    pub node: NodeId,
    pub core: u32,
    pub event: TraceKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub function_id: Option<u32>,
    pub flow_port: u16,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reason: Option<DropReason>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub detail: Option<String>,
}

/// Bounded in-memory trace. Disabled traces record nothing; past the
/// limit only decisions are recorded.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    pub enabled: bool,
    pub limit: usize,
    pub events: Vec<TraceEvent>,
    pub truncated: u64,
}

impl Trace {
    pub fn new(enabled: bool, limit: usize) -> Self {
        Self {
            enabled,
            limit,
            events: Vec::new(),
            truncated: 0,
        }
    }

    pub fn push(&mut self, ev: TraceEvent) {
        if !self.enabled {
            return;
        }
        // Decisions are rare and always kept.
        if self.events.len() >= self.limit && ev.event != TraceKind::Decision {
            self.truncated += 1;
            return;
        }
        self.events.push(ev);
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        for ev in &self.events {
            serde_json::to_writer(&mut w, ev)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}
