//! Master/worker execution over TCP, UDP or a simulated network.
//!
//! [`NodeCore`] holds the protocol logic; the drivers only move messages.
//! The master is node 0 of a rooted topology and runs the search loop, each
//! objective evaluation being one EVAL/RESULT round over the tree.

mod arq;
mod config;
mod master;
mod node;
mod sim;
mod tcp;
mod udp;
pub mod wire;

use std::net::{TcpListener, UdpSocket};
use std::time::Duration;

use serde::Serialize;

pub use arq::{ArqReceiver, ArqSender, DropInjector, LossyNetwork};
pub use config::{MediaLayout, RetryConfig, TransportConfig, TransportMode};
pub use master::{run_master, run_worker, DistributedEvaluator, MasterOutcome, ScenarioSource, TimingReport, WorkerReport};
pub use node::{Effect, NodeCore};
pub use sim::SimNetwork;
pub use tcp::TcpLink;
pub use udp::{UdpLink, MAX_DATAGRAM};
pub use wire::{Assign, AssignSource, Message, Payload};

use crate::error::Result;

/// A node's connections to its tree neighbours.
pub trait Link {
    fn send(&mut self, to: usize, msg: Message) -> Result<()>;
    /// `Ok(None)` when the timeout passes without a message.
    fn recv(&mut self, timeout: Option<Duration>) -> Result<Option<Message>>;
    fn retransmissions(&self) -> u64 {
        0
    }
}

/// Messages by kind. Simulated modes count every transfer in the cluster;
/// socket modes count what the reporting node sent and received.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct TransferCounts {
    pub assign: u64,
    pub eval: u64,
    pub result: u64,
    pub shutdown: u64,
    pub ack: u64,
    pub retransmissions: u64,
    pub dropped: u64,
}

impl TransferCounts {
    pub fn data_messages(&self) -> u64 {
        self.assign + self.eval + self.result + self.shutdown
    }
}

/// `n` loopback endpoints whose ports were free for both TCP and UDP a
/// moment ago.
pub fn free_loopback_endpoints(n: usize) -> Result<Vec<String>> {
    let mut held = Vec::with_capacity(n);
    while held.len() < n {
        let tcp = TcpListener::bind("127.0.0.1:0")?;
        let port = tcp.local_addr()?.port();
        if let Ok(udp) = UdpSocket::bind(("127.0.0.1", port)) {
            held.push((tcp, udp));
        }
    }
    Ok(held.iter().map(|(t, _)| t.local_addr().map(|a| a.to_string())).collect::<std::io::Result<_>>()?)
}
