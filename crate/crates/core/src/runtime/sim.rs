//! Deterministic discrete-event network.
//!
//! Every transfer takes `sim_latency` virtual minutes and every compute step
//! `sim_per_scenario_time` per scenario. Without the bus constraint each node
//! has a single port: it performs one transfer or one compute at a time and
//! accepts an incoming transfer only while idle. With the bus constraint a
//! node may send on several media at once, but each medium carries one
//! transfer at a time. Ties are broken by (ready time, sender id, issue order).

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use super::config::{MediaLayout, TransportConfig};
use super::node::{Effect, NodeCore};
use super::wire::{Assign, Kind, Message};
use super::TransferCounts;
use crate::error::{Error, Result};
use crate::scenario::StrategyParams;
use crate::stats::ReductionSummary;
use crate::topology::Topology;

#[derive(Debug)]
enum Work {
    Send { to: usize, msg: Message },
    Compute { iteration: u32, scenarios: usize },
}

#[derive(Debug)]
struct Action {
    work: Work,
    ready: f64,
    order: u64,
}

#[derive(Debug)]
struct Event {
    time: f64,
    order: u64,
    node: usize,
    action: Action,
    medium: Option<usize>,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    // Min-heap on (time, order).
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then(other.order.cmp(&self.order))
    }
}

pub struct SimNetwork {
    cores: Vec<NodeCore>,
    latency: f64,
    per_scenario: f64,
    bus: bool,
    /// Medium index per node for bus mode; the root uses its peer's medium.
    medium_of: Vec<usize>,
    root: usize,
    pending: Vec<VecDeque<Action>>,
    running: Vec<usize>,
    medium_busy: Vec<bool>,
    events: BinaryHeap<Event>,
    now: f64,
    order: u64,
    completed: Option<(u32, ReductionSummary, f64)>,
    counts: TransferCounts,
}

impl SimNetwork {
    pub fn new(topology: &Topology, cfg: &TransportConfig) -> Result<Self> {
        cfg.validate()?;
        let root = topology
            .root()
            .ok_or_else(|| Error::UnsupportedSchedule(format!("{} topology has no root", topology.kind())))?;
        let n = topology.node_count();
        let cores = (0..n).map(|i| NodeCore::new(i, topology)).collect::<Result<Vec<_>>>()?;
        let mut medium_of = vec![0; n];
        let mut media = 1;
        if cfg.media == MediaLayout::Subnets {
            media = topology.children(root).len().max(1);
            for (k, &c) in topology.children(root).iter().enumerate() {
                for m in topology.subtree(c) {
                    medium_of[m] = k;
                }
            }
        }
        Ok(Self {
            cores,
            latency: cfg.sim_latency,
            per_scenario: cfg.sim_per_scenario_time,
            bus: cfg.bus_constraint,
            medium_of,
            root,
            pending: (0..n).map(|_| VecDeque::new()).collect(),
            running: vec![0; n],
            medium_busy: vec![false; media],
            events: BinaryHeap::new(),
            now: 0.0,
            order: 0,
            completed: None,
            counts: TransferCounts::default(),
        })
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn counts(&self) -> TransferCounts {
        self.counts
    }

    pub fn core(&self, node: usize) -> &NodeCore {
        &self.cores[node]
    }

    /// Delivers the full assignment to the root and runs until every node
    /// holds its range. Returns the elapsed virtual time.
    pub fn assign(&mut self, a: Assign) -> Result<f64> {
        let start = self.now;
        let fx = self.cores[self.root].assign(a)?;
        self.enqueue(self.root, fx);
        self.run()?;
        Ok(self.now - start)
    }

    /// One evaluation round. Returns the merged summary and its virtual duration.
    pub fn evaluate(&mut self, iteration: u32, params: &StrategyParams, risk_aversion: f64) -> Result<(ReductionSummary, f64)> {
        let start = self.now;
        self.completed = None;
        let fx = self.cores[self.root].begin_eval(iteration, params.clone(), risk_aversion)?;
        self.enqueue(self.root, fx);
        self.run()?;
        match self.completed.take() {
            Some((it, s, at)) if it == iteration => Ok((s, at - start)),
            _ => Err(Error::Protocol(format!("round {iteration} ended without a merged result"))),
        }
    }

    pub fn shutdown(&mut self) -> Result<f64> {
        let start = self.now;
        let fx = self.cores[self.root].shutdown();
        self.enqueue(self.root, fx);
        self.run()?;
        Ok(self.now - start)
    }

    fn enqueue(&mut self, node: usize, effects: Vec<Effect>) {
        for e in effects {
            let work = match e {
                Effect::Send { to, msg } => Work::Send { to, msg },
                Effect::Compute { iteration, scenarios } => Work::Compute { iteration, scenarios },
                Effect::Completed { iteration, summary } => {
                    self.completed = Some((iteration, summary, self.now));
                    continue;
                }
                Effect::Stop => continue,
            };
            self.order += 1;
            self.pending[node].push_back(Action { work, ready: self.now, order: self.order });
        }
    }

    fn medium(&self, a: usize, b: usize) -> usize {
        if a == self.root {
            self.medium_of[b]
        } else {
            self.medium_of[a]
        }
    }

    /// Startable actions as (ready, sender, order, index in the node queue).
    fn candidates(&self) -> Vec<(f64, usize, u64, usize)> {
        let mut out = Vec::new();
        for (node, queue) in self.pending.iter().enumerate() {
            if !self.bus {
                if let Some(a) = queue.front() {
                    out.push((a.ready, node, a.order, 0));
                }
                continue;
            }
            let mut media_seen = Vec::new();
            for (i, a) in queue.iter().enumerate() {
                match a.work {
                    Work::Compute { .. } => {
                        if i == 0 {
                            out.push((a.ready, node, a.order, 0));
                        }
                        break;
                    }
                    Work::Send { to, .. } => {
                        let m = self.medium(node, to);
                        if !media_seen.contains(&m) {
                            media_seen.push(m);
                            out.push((a.ready, node, a.order, i));
                        }
                    }
                }
            }
        }
        out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        out
    }

    fn start_ready(&mut self) {
        // Starting one action can block another, so rescan after each start.
        loop {
            let mut started = false;
            for (_, node, order, _) in self.candidates() {
                let Some(idx) = self.pending[node].iter().position(|a| a.order == order) else { continue };
                let action = &self.pending[node][idx];
                let (ok, medium, duration) = match action.work {
                    Work::Compute { scenarios, .. } => {
                        (self.running[node] == 0, None, self.per_scenario * scenarios as f64)
                    }
                    Work::Send { to, .. } => {
                        if self.bus {
                            let m = self.medium(node, to);
                            (!self.medium_busy[m], Some(m), self.latency)
                        } else {
                            (self.running[node] == 0 && self.running[to] == 0, None, self.latency)
                        }
                    }
                };
                if !ok {
                    continue;
                }
                let action = self.pending[node].remove(idx).unwrap();
                self.running[node] += 1;
                if let Work::Send { to, .. } = action.work {
                    if !self.bus {
                        self.running[to] += 1;
                    }
                }
                if let Some(m) = medium {
                    self.medium_busy[m] = true;
                }
                self.order += 1;
                self.events.push(Event { time: self.now + duration, order: self.order, node, action, medium });
                started = true;
                break;
            }
            if !started {
                return;
            }
        }
    }

    fn finish(&mut self, ev: Event) -> Result<()> {
        self.running[ev.node] -= 1;
        if let Some(m) = ev.medium {
            self.medium_busy[m] = false;
        }
        match ev.action.work {
            Work::Send { to, msg } => {
                if !self.bus {
                    self.running[to] -= 1;
                }
                self.counts.record(msg.kind());
                let fx = self.cores[to].handle(msg)?;
                self.enqueue(to, fx);
            }
            Work::Compute { iteration, .. } => {
                let fx = self.cores[ev.node].compute(iteration)?;
                self.enqueue(ev.node, fx);
            }
        }
        Ok(())
    }

    fn run(&mut self) -> Result<()> {
        loop {
            self.start_ready();
            let Some(ev) = self.events.pop() else { break };
            self.now = ev.time;
            self.finish(ev)?;
            while self.events.peek().is_some_and(|e| e.time == self.now) {
                let ev = self.events.pop().unwrap();
                self.finish(ev)?;
            }
        }
        if let Some(node) = self.pending.iter().position(|q| !q.is_empty()) {
            return Err(Error::Protocol(format!("simulation stalled with work queued at node {node}")));
        }
        Ok(())
    }
}

impl TransferCounts {
    pub(crate) fn record(&mut self, kind: Kind) {
        match kind {
            Kind::Assign => self.assign += 1,
            Kind::Eval => self.eval += 1,
            Kind::Result => self.result += 1,
            Kind::Shutdown => self.shutdown += 1,
            Kind::Ack => self.ack += 1,
        }
    }
}
