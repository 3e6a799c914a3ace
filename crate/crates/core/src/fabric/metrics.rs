// SPDX-License-Identifier: Apache-2.0
// Copyright The amrt Authors

//! Run results: latency percentiles, time series, drops and placement costs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::control::{Decision, Side};
use crate::switch::DropReason;
use crate::NodeRole;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Percentiles {
    pub count: u64,
    pub p50_ns: u64,
    pub p99_ns: u64,
    pub p999_ns: u64,
    pub max_ns: u64,
    pub mean_ns: u64,
}

/// Nearest-rank percentile of a sorted slice.
pub fn nearest_rank(sorted: &[u64], q: f64) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

impl Percentiles {
    /// Sorts `samples` in place.
    pub fn of(samples: &mut [u64]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        samples.sort_unstable();
        let sum: u128 = samples.iter().map(|&v| v as u128).sum();
        Self {
            count: samples.len() as u64,
            p50_ns: nearest_rank(samples, 0.5),
            p99_ns: nearest_rank(samples, 0.99),
            p999_ns: nearest_rank(samples, 0.999),
            max_ns: *samples.last().unwrap(),
            mean_ns: (sum / samples.len() as u128) as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowLatency {
    pub flow: u16,
    #[serde(flatten)]
    pub latency: Percentiles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputBin {
    pub t_ms: f64,
    pub offered: u64,
    pub completed: u64,
    pub dropped: u64,
    pub ops_per_s: f64,
}

/// Where requests first executed, by bin of first execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShareBin {
    pub t_ms: f64,
    pub client: u64,
    pub nic: u64,
    pub host: u64,
    pub host_share: f64,
    pub nic_share: f64,
}

/// Latency of requests by send time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyBin {
    pub t_ms: f64,
    #[serde(flatten)]
    pub latency: Percentiles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub t_ms: f64,
    pub nic_delay_ns: Option<u64>,
    pub host_delay_ns: Option<u64>,
    pub nic_drops: u64,
    pub host_drops: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub t_ms: f64,
    pub decision: Decision,
    pub moves: Vec<(u16, Side)>,
    pub active_ms: f64,
}

/// Per-placement cost of the requests that first executed there.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PlacementCost {
    pub requests: u64,
    pub udma_ops: u64,
    /// Bytes crossing the client link.
    pub wire_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsBundle {
    pub scenario: String,
    pub seed: u64,
    pub horizon_ms: f64,
    pub bin_ms: f64,
    pub latency_bin_ms: f64,
    pub injected: u64,
    pub completed: u64,
    pub dropped: u64,
    pub in_flight: u64,
    pub latency: Percentiles,
    pub flows: Vec<FlowLatency>,
    pub throughput: Vec<ThroughputBin>,
    pub placement_share: Vec<ShareBin>,
    pub latency_series: Vec<LatencyBin>,
    pub drops: BTreeMap<DropReason, u64>,
    pub placement_cost: BTreeMap<NodeRole, PlacementCost>,
    pub windows: Vec<WindowRecord>,
    pub decisions: Vec<DecisionRecord>,
    pub violations: Vec<String>,
}

fn opt(v: Option<u64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl MetricsBundle {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }

    /// CSV tables keyed by file name.
    pub fn csv_tables(&self) -> BTreeMap<&'static str, String> {
        let mut t = BTreeMap::new();
        let mut s = String::from("flow,count,p50_ns,p99_ns,p999_ns,max_ns,mean_ns\n");
        for f in &self.flows {
            let l = f.latency;
            writeln!(s, "{},{},{},{},{},{},{}", f.flow, l.count, l.p50_ns, l.p99_ns, l.p999_ns, l.max_ns, l.mean_ns).unwrap();
        }
        t.insert("latency.csv", s);
        let mut s = String::from("t_ms,offered,completed,dropped,ops_per_s\n");
        for b in &self.throughput {
            writeln!(s, "{},{},{},{},{}", b.t_ms, b.offered, b.completed, b.dropped, b.ops_per_s).unwrap();
        }
        t.insert("throughput.csv", s);
        let mut s = String::from("t_ms,client,nic,host,nic_share,host_share\n");
        for b in &self.placement_share {
            writeln!(s, "{},{},{},{},{},{}", b.t_ms, b.client, b.nic, b.host, b.nic_share, b.host_share).unwrap();
        }
        t.insert("placement.csv", s);
        let mut s = String::from("t_ms,count,p50_ns,p99_ns,p999_ns,max_ns\n");
        for b in &self.latency_series {
            let l = b.latency;
            writeln!(s, "{},{},{},{},{},{}", b.t_ms, l.count, l.p50_ns, l.p99_ns, l.p999_ns, l.max_ns).unwrap();
        }
        t.insert("latency_series.csv", s);
        let mut s = String::from("reason,count\n");
        for (r, n) in &self.drops {
            writeln!(s, "{},{n}", serde_json::to_value(r).unwrap().as_str().unwrap_or("?")).unwrap();
        }
        t.insert("drops.csv", s);
        let mut s = String::from("t_ms,nic_delay_ns,host_delay_ns,nic_drops,host_drops\n");
        for w in &self.windows {
            writeln!(s, "{},{},{},{},{}", w.t_ms, opt(w.nic_delay_ns), opt(w.host_delay_ns), w.nic_drops, w.host_drops).unwrap();
        }
        t.insert("windows.csv", s);
        t
    }

    /// Writes `metrics.json` and the CSV tables into `dir`.
    pub fn write_dir(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("metrics.json"), self.to_json())?;
        for (name, body) in self.csv_tables() {
            std::fs::write(dir.join(name), body)?;
        }
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> std::io::Result<Self> {
        let s = std::fs::read_to_string(dir.join("metrics.json"))?;
        Self::from_json(&s).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    /// Plain-text summary.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let l = self.latency;
        writeln!(s, "scenario  {} (seed {}, {} ms)", self.scenario, self.seed, self.horizon_ms).unwrap();
        writeln!(s, "messages  injected {}  completed {}  dropped {}  in flight {}", self.injected, self.completed, self.dropped, self.in_flight).unwrap();
        writeln!(s, "latency   p50 {:.1} us  p99 {:.1} us  p99.9 {:.1} us  max {:.1} us", l.p50_ns as f64 / 1e3, l.p99_ns as f64 / 1e3, l.p999_ns as f64 / 1e3, l.max_ns as f64 / 1e3).unwrap();
        for (r, n) in &self.drops {
            writeln!(s, "drop      {r:?}: {n}").unwrap();
        }
        for (p, c) in &self.placement_cost {
            writeln!(s, "placement {p:?}: {} requests, {} UDMA ops, {} wire bytes", c.requests, c.udma_ops, c.wire_bytes).unwrap();
        }
        writeln!(s, "decisions {}", self.decisions.len()).unwrap();
        if !self.throughput.is_empty() {
            writeln!(s, "{:>10} {:>12} {:>10} {:>10}", "t_ms", "ops/s", "nic", "host").unwrap();
            for (b, p) in self.throughput.iter().zip(&self.placement_share) {
                writeln!(s, "{:>10} {:>12.0} {:>10.3} {:>10.3}", b.t_ms, b.ops_per_s, p.nic_share, p.host_share).unwrap();
            }
        }
        for v in &self.violations {
            writeln!(s, "VIOLATION {v}").unwrap();
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_percentiles() {
        let mut v: Vec<u64> = (1..=1000).rev().collect();
        let p = Percentiles::of(&mut v);
        assert_eq!((p.p50_ns, p.p99_ns, p.p999_ns, p.max_ns, p.mean_ns), (500, 990, 999, 1000, 500));
        assert_eq!(Percentiles::of(&mut []), Percentiles::default());
        assert_eq!(nearest_rank(&[7], 0.999), 7);
    }

    #[test]
    fn json_round_trip() {
        let mut m = MetricsBundle {
            scenario: "x".into(),
            ..Default::default()
        };
        m.drops.insert(DropReason::QueueFull, 3);
        m.placement_cost.insert(NodeRole::Host, PlacementCost { requests: 1, udma_ops: 2, wire_bytes: 3 });
        let dir = tempfile::tempdir().unwrap();
        m.write_dir(dir.path()).unwrap();
        assert_eq!(MetricsBundle::read_dir(dir.path()).unwrap(), m);
        assert!(std::fs::read_to_string(dir.path().join("drops.csv")).unwrap().contains("queue_full,3"));
    }
}
