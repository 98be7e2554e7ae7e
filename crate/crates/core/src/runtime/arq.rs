//! Stop-and-wait retransmission: one unacknowledged frame per peer, resent
//! with exponential backoff until acknowledged or out of attempts.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, VecDeque};

use super::config::{RetryConfig, TransportConfig};
use super::node::{Effect, NodeCore};
use super::wire::{Assign, Message, Payload};
use super::TransferCounts;
use crate::error::{Error, Result};
use crate::scenario::StrategyParams;
use crate::stats::ReductionSummary;
use crate::topology::Topology;

#[derive(Debug)]
struct Outstanding {
    seq: u32,
    frame: Vec<u8>,
    attempts: u32,
    deadline: f64,
}

/// Sender half for one peer. Times are seconds on any monotonic clock.
#[derive(Debug)]
pub struct ArqSender {
    peer: usize,
    retry: RetryConfig,
    next_seq: u32,
    queue: VecDeque<Message>,
    outstanding: Option<Outstanding>,
    pub retransmissions: u64,
}

impl ArqSender {
    pub fn new(peer: usize, retry: RetryConfig) -> Self {
        Self { peer, retry, next_seq: 1, queue: VecDeque::new(), outstanding: None, retransmissions: 0 }
    }

    pub fn push(&mut self, msg: Message) {
        self.queue.push_back(msg);
    }

    pub fn is_idle(&self) -> bool {
        self.outstanding.is_none() && self.queue.is_empty()
    }

    pub fn deadline(&self) -> Option<f64> {
        self.outstanding.as_ref().map(|o| o.deadline)
    }

    /// The datagram to put on the wire now, if any: the next queued frame
    /// when nothing is outstanding, or a retransmission once the deadline
    /// has passed.
    pub fn poll(&mut self, now: f64) -> Result<Option<Vec<u8>>> {
        if let Some(o) = &mut self.outstanding {
            if now < o.deadline {
                return Ok(None);
            }
            if o.attempts >= self.retry.max_attempts {
                return Err(Error::DeliveryFailed { node: self.peer, attempts: o.attempts });
            }
            o.attempts += 1;
            o.deadline = now + self.retry.timeout_for(o.attempts).as_secs_f64();
            self.retransmissions += 1;
            log::debug!("retransmitting seq {} to node {} (attempt {})", o.seq, self.peer, o.attempts);
            return Ok(Some(o.frame.clone()));
        }
        let Some(mut msg) = self.queue.pop_front() else { return Ok(None) };
        msg.seq = self.next_seq;
        self.next_seq = self.next_seq.wrapping_add(1).max(1);
        let frame = msg.encode();
        self.outstanding = Some(Outstanding {
            seq: msg.seq,
            frame: frame.clone(),
            attempts: 1,
            deadline: now + self.retry.timeout_for(1).as_secs_f64(),
        });
        Ok(Some(frame))
    }

    /// Clears the outstanding frame if `seq` acknowledges it.
    pub fn on_ack(&mut self, seq: u32) -> bool {
        if self.outstanding.as_ref().is_some_and(|o| o.seq == seq) {
            self.outstanding = None;
            true
        } else {
            false
        }
    }
}

/// Receiver half: drops frames already delivered from the same peer.
#[derive(Debug, Default)]
pub struct ArqReceiver {
    last: HashMap<usize, u32>,
}

impl ArqReceiver {
    /// True when the frame is new and should be handed to the node.
    pub fn accept(&mut self, from: usize, seq: u32) -> bool {
        let last = self.last.entry(from).or_insert(0);
        if seq > *last {
            *last = seq;
            true
        } else {
            false
        }
    }
}

/// Drops every k-th datagram offered to it.
#[derive(Debug, Clone, Copy, Default)]
pub struct DropInjector {
    every: Option<u32>,
    seen: u64,
    pub dropped: u64,
}

impl DropInjector {
    pub fn new(every: Option<u32>) -> Self {
        Self { every, seen: 0, dropped: 0 }
    }

    pub fn should_drop(&mut self) -> bool {
        self.seen += 1;
        let drop = self.every.is_some_and(|k| self.seen.is_multiple_of(k as u64));
        if drop {
            self.dropped += 1;
        }
        drop
    }
}

const DATAGRAM_DELAY: f64 = 1e-3;

/// `(arrival tick, send order, destination, datagram)`.
type InFlight = (u64, u64, usize, Vec<u8>);

/// Whole cluster in one process, exchanging datagrams through a lossy
/// in-memory channel with the same ARQ logic as the socket transport.
pub struct LossyNetwork {
    cores: Vec<NodeCore>,
    root: usize,
    retry: RetryConfig,
    senders: HashMap<(usize, usize), ArqSender>,
    receivers: Vec<ArqReceiver>,
    in_flight: BinaryHeap<Reverse<InFlight>>,
    injector: DropInjector,
    now_ticks: u64,
    order: u64,
    completed: Option<(u32, ReductionSummary)>,
    counts: TransferCounts,
}

impl LossyNetwork {
    pub fn new(topology: &Topology, cfg: &TransportConfig) -> Result<Self> {
        cfg.validate()?;
        let root = topology
            .root()
            .ok_or_else(|| Error::UnsupportedSchedule(format!("{} topology has no root", topology.kind())))?;
        let n = topology.node_count();
        Ok(Self {
            cores: (0..n).map(|i| NodeCore::new(i, topology)).collect::<Result<_>>()?,
            root,
            retry: cfg.udp_retry,
            senders: HashMap::new(),
            receivers: (0..n).map(|_| ArqReceiver::default()).collect(),
            in_flight: BinaryHeap::new(),
            injector: DropInjector::new(cfg.drop_every),
            now_ticks: 0,
            order: 0,
            completed: None,
            counts: TransferCounts::default(),
        })
    }

    pub fn counts(&self) -> TransferCounts {
        let mut c = self.counts;
        c.retransmissions = self.senders.values().map(|s| s.retransmissions).sum();
        c.dropped = self.injector.dropped;
        c
    }

    fn now(&self) -> f64 {
        self.now_ticks as f64 * DATAGRAM_DELAY
    }

    pub fn assign(&mut self, a: Assign) -> Result<()> {
        let fx = self.cores[self.root].assign(a)?;
        self.apply(self.root, fx)?;
        self.run()
    }

    pub fn evaluate(&mut self, iteration: u32, params: &StrategyParams, risk_aversion: f64) -> Result<ReductionSummary> {
        self.completed = None;
        let fx = self.cores[self.root].begin_eval(iteration, params.clone(), risk_aversion)?;
        self.apply(self.root, fx)?;
        self.run()?;
        match self.completed.take() {
            Some((it, s)) if it == iteration => Ok(s),
            _ => Err(Error::ResultTimeout {
                iteration,
                node: self.cores[self.root].missing_children().first().copied().unwrap_or(self.root),
            }),
        }
    }

    pub fn shutdown(&mut self) -> Result<()> {
        let fx = self.cores[self.root].shutdown();
        self.apply(self.root, fx)?;
        self.run()
    }

    fn apply(&mut self, node: usize, effects: Vec<Effect>) -> Result<()> {
        let mut work: VecDeque<Effect> = effects.into();
        while let Some(e) = work.pop_front() {
            match e {
                Effect::Send { to, msg } => {
                    let retry = self.retry;
                    self.senders.entry((node, to)).or_insert_with(|| ArqSender::new(to, retry)).push(msg);
                    self.pump(node, to)?;
                }
                Effect::Compute { iteration, .. } => work.extend(self.cores[node].compute(iteration)?),
                Effect::Completed { iteration, summary } => self.completed = Some((iteration, summary)),
                Effect::Stop => {}
            }
        }
        Ok(())
    }

    fn transmit(&mut self, to: usize, frame: Vec<u8>) {
        if self.injector.should_drop() {
            return;
        }
        self.order += 1;
        self.in_flight.push(Reverse((self.now_ticks + 1, self.order, to, frame)));
    }

    fn pump(&mut self, from: usize, to: usize) -> Result<()> {
        let now = self.now();
        if let Some(frame) = self.senders.get_mut(&(from, to)).unwrap().poll(now)? {
            self.transmit(to, frame);
        }
        Ok(())
    }

    fn deliver(&mut self, to: usize, frame: Vec<u8>) -> Result<()> {
        let msg = Message::decode(&frame)?;
        if let Payload::Ack { seq } = msg.payload {
            if let Some(s) = self.senders.get_mut(&(to, msg.from)) {
                if s.on_ack(seq) {
                    self.pump(to, msg.from)?;
                }
            }
            return Ok(());
        }
        let ack = Message::new(to, 0, Payload::Ack { seq: msg.seq }).encode();
        self.counts.ack += 1;
        self.transmit(msg.from, ack);
        if self.receivers[to].accept(msg.from, msg.seq) {
            self.counts.record(msg.kind());
            let fx = self.cores[to].handle(msg)?;
            self.apply(to, fx)?;
        }
        Ok(())
    }

    fn run(&mut self) -> Result<()> {
        loop {
            let next_arrival = self.in_flight.peek().map(|Reverse((t, ..))| *t);
            let next_timeout = self
                .senders
                .values()
                .filter_map(ArqSender::deadline)
                .map(|d| (d / DATAGRAM_DELAY).ceil() as u64 + 1)
                .min();
            let next = match (next_arrival, next_timeout) {
                (None, None) => return Ok(()),
                (Some(a), Some(t)) => a.min(t),
                (a, t) => a.or(t).unwrap(),
            };
            self.now_ticks = self.now_ticks.max(next);
            while self.in_flight.peek().is_some_and(|Reverse((t, ..))| *t <= self.now_ticks) {
                let Reverse((_, _, to, frame)) = self.in_flight.pop().unwrap();
                self.deliver(to, frame)?;
            }
            let mut keys: Vec<_> = self.senders.keys().copied().collect();
            keys.sort_unstable();
            for (from, to) in keys {
                self.pump(from, to)?;
            }
        }
    }
}
