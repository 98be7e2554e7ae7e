use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TransportMode {
    Tcp,
    Udp,
    /// Timed discrete-event simulation.
    #[default]
    Sim,
    /// UDP retransmission logic over an in-memory lossy channel.
    SimUdp,
}

impl fmt::Display for TransportMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TransportMode::Tcp => "tcp",
            TransportMode::Udp => "udp",
            TransportMode::Sim => "sim",
            TransportMode::SimUdp => "sim-udp",
        })
    }
}

impl FromStr for TransportMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tcp" => Ok(TransportMode::Tcp),
            "udp" => Ok(TransportMode::Udp),
            "sim" => Ok(TransportMode::Sim),
            "sim-udp" => Ok(TransportMode::SimUdp),
            other => Err(Error::validation(format!("unknown transport mode `{other}`"))),
        }
    }
}

/// How simulated transfers share the network when the bus constraint is on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MediaLayout {
    /// One shared medium for the whole cluster.
    #[default]
    Shared,
    /// One medium per child of the root, carrying every link of that
    /// child's subtree plus its link to the root.
    Subnets,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryConfig {
    pub timeout_ms: u64,
    pub max_attempts: u32,
    pub backoff: f64,
}

impl Default for RetryConfig {
    fn default() -> Self {
        Self { timeout_ms: 50, max_attempts: 12, backoff: 2.0 }
    }
}

impl RetryConfig {
    /// Wait before attempt `attempt + 1`, counting from 1.
    pub fn timeout_for(&self, attempt: u32) -> Duration {
        let factor = self.backoff.powi(attempt.saturating_sub(1).min(30) as i32);
        Duration::from_secs_f64((self.timeout_ms as f64 * factor / 1000.0).min(60.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransportConfig {
    pub mode: TransportMode,
    /// `host:port` per node id.
    pub endpoints: Vec<String>,
    /// Virtual minutes per message.
    pub sim_latency: f64,
    /// Virtual minutes per evaluated scenario.
    pub sim_per_scenario_time: f64,
    pub bus_constraint: bool,
    pub media: MediaLayout,
    pub udp_retry: RetryConfig,
    /// Drop every k-th outgoing datagram (UDP modes only).
    pub drop_every: Option<u32>,
    /// RESULT wait; defaults to ten times the master's own compute time.
    pub result_timeout_ms: Option<u64>,
    pub connect_timeout_ms: u64,
}

impl Default for TransportConfig {
    fn default() -> Self {
        Self {
            mode: TransportMode::Sim,
            endpoints: Vec::new(),
            sim_latency: 1.0,
            sim_per_scenario_time: 0.0,
            bus_constraint: false,
            media: MediaLayout::Shared,
            udp_retry: RetryConfig::default(),
            drop_every: None,
            result_timeout_ms: None,
            connect_timeout_ms: 10_000,
        }
    }
}

impl TransportConfig {
    pub fn sim(sim_latency: f64, sim_per_scenario_time: f64) -> Self {
        Self { sim_latency, sim_per_scenario_time, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sim_latency >= 0.0) || !self.sim_latency.is_finite() {
            return Err(Error::validation("sim_latency must be non-negative"));
        }
        if !(self.sim_per_scenario_time >= 0.0) || !self.sim_per_scenario_time.is_finite() {
            return Err(Error::validation("sim_per_scenario_time must be non-negative"));
        }
        if self.udp_retry.max_attempts == 0 {
            return Err(Error::validation("udp_retry.max_attempts must be at least 1"));
        }
        if !(self.udp_retry.backoff >= 1.0) {
            return Err(Error::validation("udp_retry.backoff must be at least 1"));
        }
        if self.drop_every.is_some_and(|k| k < 2) {
            return Err(Error::validation("drop_every must be at least 2"));
        }
        Ok(())
    }

    pub fn endpoint(&self, node: usize) -> Result<&str> {
        self.endpoints
            .get(node)
            .map(String::as_str)
            .ok_or_else(|| Error::validation(format!("no endpoint configured for node {node}")))
    }
}
