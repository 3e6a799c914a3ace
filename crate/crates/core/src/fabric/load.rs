// SPDX-License-Identifier: Apache-2.0
// Copyright The amrt Authors

//! Open-loop load: send times never depend on replies.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Zipf};
use serde::{Deserialize, Serialize};

use super::ConfigError;

pub const FIRST_FLOW_PORT: u16 = 7000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "dist", rename_all = "lowercase")]
pub enum KeyDist {
    #[default]
    Uniform,
    Zipf {
        theta: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Arrival {
    #[default]
    Poisson,
    Fixed,
}

/// One open-loop source. `rate` messages/s spread round-robin over `flows`
/// source ports starting at `first_port`. With `steps`, the rate instead
/// changes every `step_ms` through the listed values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadSpec {
    /// Function names, cycled per message unless `weights` is given.
    pub functions: Vec<String>,
    #[serde(default)]
    pub weights: Vec<f64>,
    #[serde(default)]
    pub rate: f64,
    #[serde(default)]
    pub steps: Vec<f64>,
    #[serde(default)]
    pub step_ms: f64,
    #[serde(default)]
    pub start_ms: f64,
    /// Defaults to the scenario horizon (or the end of `steps`).
    #[serde(default)]
    pub duration_ms: Option<f64>,
    #[serde(default = "default_flows")]
    pub flows: u16,
    #[serde(default = "default_first_port")]
    pub first_port: u16,
    #[serde(default)]
    pub keys: KeyDist,
    #[serde(default)]
    pub arrival: Arrival,
    #[serde(default)]
    pub seed: u64,
}

fn default_flows() -> u16 {
    10
}

fn default_first_port() -> u16 {
    FIRST_FLOW_PORT
}

impl LoadSpec {
    pub fn constant(function: &str, rate: f64, flows: u16) -> Self {
        Self {
            functions: vec![function.to_string()],
            weights: Vec::new(),
            rate,
            steps: Vec::new(),
            step_ms: 0.0,
            start_ms: 0.0,
            duration_ms: None,
            flows,
            first_port: FIRST_FLOW_PORT,
            keys: KeyDist::Uniform,
            arrival: Arrival::Poisson,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.functions.is_empty() {
            return bad("load names no functions");
        }
        if !self.weights.is_empty() && (self.weights.len() != self.functions.len() || self.weights.iter().any(|w| !(*w >= 0.0)) || self.weights.iter().sum::<f64>() <= 0.0) {
            return bad("load weights must be non-negative, one per function, not all zero");
        }
        let rates_ok = |r: f64| r.is_finite() && r >= 0.0;
        if !rates_ok(self.rate) || !self.steps.iter().all(|&r| rates_ok(r)) {
            return bad("load rates must be finite and non-negative");
        }
        if !self.steps.is_empty() && !(self.step_ms > 0.0) {
            return bad("stepped load needs step_ms > 0");
        }
        if self.flows == 0 || self.first_port as u32 + self.flows as u32 > 65_536 {
            return bad("load flow ports out of range");
        }
        if let KeyDist::Zipf { theta } = self.keys {
            if !(theta.is_finite() && theta > 0.0) {
                return bad("zipf theta must be positive");
            }
        }
        Ok(())
    }

    pub fn ports(&self) -> impl Iterator<Item = u16> {
        self.first_port..self.first_port + self.flows
    }

    fn rate_at(&self, t_ms: f64) -> f64 {
        if self.steps.is_empty() {
            return self.rate;
        }
        let i = ((t_ms - self.start_ms) / self.step_ms).floor().max(0.0) as usize;
        self.steps.get(i).copied().unwrap_or(0.0)
    }

    fn end_ms(&self, horizon_ms: f64) -> f64 {
        let natural = if self.steps.is_empty() {
            horizon_ms
        } else {
            self.start_ms + self.step_ms * self.steps.len() as f64
        };
        match self.duration_ms {
            Some(d) => (self.start_ms + d).min(horizon_ms),
            None => natural.min(horizon_ms),
        }
    }
}

/// One generated request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Request {
    pub t_ns: u64,
    pub src_port: u16,
    /// Index into the load's function list.
    pub function: usize,
    /// Rank in `[0, key_count)`; zipf rank 0 is the hottest key.
    pub key_index: u64,
    pub seq: u64,
}

#[derive(Debug, Clone)]
pub struct LoadGen {
    spec: LoadSpec,
    rng: ChaCha8Rng,
    key_count: u64,
    zipf: Option<Zipf<f64>>,
    t_ns: f64,
    end_ns: f64,
    seq: u64,
}

impl LoadGen {
    /// `key_count` sizes the key space; `seed` is mixed with the spec's own.
    pub fn new(spec: LoadSpec, key_count: u64, seed: u64, horizon_ms: f64) -> Self {
        let key_count = key_count.max(1);
        let zipf = match spec.keys {
            KeyDist::Zipf { theta } => Zipf::new(key_count as f64, theta).ok(),
            KeyDist::Uniform => None,
        };
        let end_ns = spec.end_ms(horizon_ms) * 1e6;
        let t_ns = spec.start_ms * 1e6;
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed ^ spec.seed.rotate_left(32)),
            spec,
            key_count,
            zipf,
            t_ns,
            end_ns,
            seq: 0,
        }
    }

    pub fn spec(&self) -> &LoadSpec {
        &self.spec
    }

    fn gap_ns(&mut self, rate: f64) -> f64 {
        match self.spec.arrival {
            Arrival::Fixed => 1e9 / rate,
            Arrival::Poisson => Exp::new(rate / 1e9).expect("positive rate").sample(&mut self.rng),
        }
    }

    fn step_end(&self, t_ns: f64) -> Option<f64> {
        if self.spec.steps.is_empty() {
            return None;
        }
        let step_ns = self.spec.step_ms * 1e6;
        let start_ns = self.spec.start_ms * 1e6;
        Some(start_ns + (((t_ns - start_ns) / step_ns).floor() + 1.0) * step_ns)
    }

    fn pick_function(&mut self) -> usize {
        if self.spec.weights.is_empty() {
            return (self.seq % self.spec.functions.len() as u64) as usize;
        }
        let total: f64 = self.spec.weights.iter().sum();
        let mut x = self.rng.random::<f64>() * total;
        for (i, w) in self.spec.weights.iter().enumerate() {
            if x < *w {
                return i;
            }
            x -= w;
        }
        self.spec.weights.len() - 1
    }

    /// Next request, or `None` once the load has ended.
    pub fn next_request(&mut self) -> Option<Request> {
        loop {
            if self.t_ns >= self.end_ns {
                return None;
            }
            let rate = self.spec.rate_at(self.t_ns / 1e6);
            if rate <= 0.0 {
                // Idle step: skip to the next step boundary.
                match self.step_end(self.t_ns) {
                    Some(b) => self.t_ns = b,
                    None => return None,
                }
                continue;
            }
            let next = self.t_ns + self.gap_ns(rate);
            if let Some(boundary) = self.step_end(self.t_ns).filter(|&b| next >= b) {
                // The next step's rate applies from its start.
                self.t_ns = boundary;
                continue;
            }
            self.t_ns = next;
            if self.t_ns >= self.end_ns {
                return None;
            }
            let key_index = match &self.zipf {
                Some(z) => z.sample(&mut self.rng) as u64 - 1,
                None => self.rng.random_range(0..self.key_count),
            };
            let function = self.pick_function();
            let r = Request {
                t_ns: self.t_ns as u64,
                src_port: self.spec.first_port + (self.seq % self.spec.flows as u64) as u16,
                function,
                key_index: key_index.min(self.key_count - 1),
                seq: self.seq,
            };
            self.seq += 1;
            return Some(r);
        }
    }
}
