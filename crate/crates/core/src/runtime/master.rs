use std::collections::VecDeque;
use std::time::{Duration, Instant};

use serde::Serialize;

use super::arq::LossyNetwork;
use super::config::{TransportConfig, TransportMode};
use super::node::{Effect, NodeCore};
use super::sim::SimNetwork;
use super::tcp::TcpLink;
use super::udp::UdpLink;
use super::wire::{Assign, AssignSource};
use super::{Link, TransferCounts};
use crate::error::{Error, Result};
use crate::partition::balance;
use crate::scenario::{EconomicModelConfig, ScenarioSet, StrategyParams};
use crate::stats::{objective, ObjectiveValue, ReductionSummary};
use crate::tabu::{optimize, Evaluator, OptimizeResult, TabuConfig};
use crate::topology::Topology;

/// Scenarios to distribute: a model every node can regenerate from, or an
/// explicit set shipped as raw blocks.
#[derive(Debug, Clone)]
pub enum ScenarioSource {
    Recipe { config: EconomicModelConfig, count: usize },
    Set(ScenarioSet),
}

impl ScenarioSource {
    pub fn len(&self) -> usize {
        match self {
            ScenarioSource::Recipe { count, .. } => *count,
            ScenarioSource::Set(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The root's ASSIGN: a balanced plan over `nodes`, node `i` taking
    /// block `i` (the master keeps the first).
    pub fn assignment(&self, nodes: usize) -> Result<Assign> {
        let plan = balance(self.len(), nodes)?;
        match self {
            ScenarioSource::Recipe { config, count } => {
                config.validate()?;
                Ok(Assign {
                    config_digest: config.digest(),
                    total: *count,
                    plan: plan.assignments.into_iter().enumerate().collect(),
                    source: AssignSource::Recipe(config.clone()),
                })
            }
            ScenarioSource::Set(set) => {
                let offset = set.start();
                let blocks = plan
                    .assignments
                    .iter()
                    .enumerate()
                    .map(|(n, r)| set.slice(r.clone()).map(|b| (n, b)))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Assign {
                    config_digest: set.config_digest(),
                    total: offset + set.len(),
                    plan: plan
                        .assignments
                        .into_iter()
                        .map(|r| r.start + offset..r.end + offset)
                        .enumerate()
                        .collect(),
                    source: AssignSource::Raw(blocks),
                })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingReport {
    pub mode: TransportMode,
    pub nodes: usize,
    pub evaluations: u32,
    pub wall_clock_secs: f64,
    pub counts: TransferCounts,
    /// Simulated modes: virtual minutes for the ASSIGN phase.
    pub assign_virtual_time: Option<f64>,
    /// Timed simulation: virtual minutes per evaluation round.
    pub eval_virtual_times: Vec<f64>,
    /// Time one machine would need for the same evaluation: virtual in the
    /// timed simulation, an extrapolation of the master's own compute time
    /// over sockets.
    pub single_machine_time: Option<f64>,
    /// Some round took longer than a single machine would have.
    pub slower_than_single: bool,
}

enum Backend {
    Sim(Box<SimNetwork>),
    SimUdp(Box<LossyNetwork>),
    Socket { core: Box<NodeCore>, link: Box<dyn Link>, result_timeout: Option<Duration> },
}

/// Evaluates strategies across the cluster; one call is one round.
pub struct DistributedEvaluator {
    backend: Backend,
    mode: TransportMode,
    nodes: usize,
    total: usize,
    iteration: u32,
    counts: TransferCounts,
    started: Instant,
    assign_time: Option<f64>,
    eval_times: Vec<f64>,
    per_scenario_time: f64,
    own_scenarios: usize,
    own_compute: Duration,
    round_wall: Duration,
    shut_down: bool,
}

/// Runs effects in order. Returns the merged result when the root completes.
fn drive(
    core: &mut NodeCore,
    link: &mut dyn Link,
    effects: Vec<Effect>,
    counts: &mut TransferCounts,
    compute_time: &mut Duration,
) -> Result<Option<(u32, ReductionSummary)>> {
    let mut queue: VecDeque<Effect> = effects.into();
    let mut done = None;
    while let Some(e) = queue.pop_front() {
        match e {
            Effect::Send { to, msg } => {
                counts.record(msg.kind());
                link.send(to, msg)?;
            }
            Effect::Compute { iteration, .. } => {
                let t = Instant::now();
                let more = core.compute(iteration)?;
                *compute_time += t.elapsed();
                queue.extend(more);
            }
            Effect::Completed { iteration, summary } => done = Some((iteration, summary)),
            Effect::Stop => {}
        }
    }
    Ok(done)
}

fn open_link(id: usize, topology: &Topology, transport: &TransportConfig) -> Result<Box<dyn Link>> {
    match transport.mode {
        TransportMode::Tcp => Ok(Box::new(TcpLink::open(id, topology, transport)?)),
        TransportMode::Udp => Ok(Box::new(UdpLink::open(id, transport)?)),
        m => Err(Error::validation(format!("{m} transport runs in-process and has no socket link"))),
    }
}

impl DistributedEvaluator {
    /// Connects (socket modes) and distributes the scenarios.
    pub fn start(source: &ScenarioSource, topology: &Topology, transport: &TransportConfig) -> Result<Self> {
        transport.validate()?;
        let nodes = topology.node_count();
        if topology.root() != Some(0) {
            return Err(Error::validation("the master must be node 0 and the root of the topology"));
        }
        let assign = source.assignment(nodes)?;
        let own_scenarios = assign.plan[0].1.len();
        let started = Instant::now();
        let mut counts = TransferCounts::default();
        let mut assign_time = None;
        let backend = match transport.mode {
            TransportMode::Sim => {
                let mut sim = SimNetwork::new(topology, transport)?;
                assign_time = Some(sim.assign(assign)?);
                Backend::Sim(Box::new(sim))
            }
            TransportMode::SimUdp => {
                let mut net = LossyNetwork::new(topology, transport)?;
                net.assign(assign)?;
                assign_time = Some(0.0);
                Backend::SimUdp(Box::new(net))
            }
            TransportMode::Tcp | TransportMode::Udp => {
                if transport.endpoints.len() != nodes {
                    return Err(Error::validation(format!(
                        "{} endpoints for {nodes} nodes",
                        transport.endpoints.len()
                    )));
                }
                let mut link = open_link(0, topology, transport)?;
                let mut core = Box::new(NodeCore::new(0, topology)?);
                let fx = core.assign(assign)?;
                let mut unused = Duration::ZERO;
                drive(&mut core, link.as_mut(), fx, &mut counts, &mut unused).map_err(|e| match e {
                    Error::DeliveryFailed { node, attempts } => Error::Unreachable {
                        endpoint: transport.endpoints[node].clone(),
                        reason: format!("no acknowledgement after {attempts} attempts"),
                    },
                    e => e,
                })?;
                Backend::Socket {
                    core,
                    link,
                    result_timeout: transport.result_timeout_ms.map(Duration::from_millis),
                }
            }
        };
        Ok(Self {
            backend,
            mode: transport.mode,
            nodes,
            total: source.len(),
            iteration: 0,
            counts,
            started,
            assign_time,
            eval_times: Vec::new(),
            per_scenario_time: transport.sim_per_scenario_time,
            own_scenarios,
            own_compute: Duration::ZERO,
            round_wall: Duration::ZERO,
            shut_down: false,
        })
    }

    pub fn iterations(&self) -> u32 {
        self.iteration
    }

    /// One round: EVAL down the tree, RESULT back up, merged at the root.
    pub fn evaluate_summary(&mut self, params: &StrategyParams, risk_aversion: f64) -> Result<ReductionSummary> {
        if self.shut_down {
            return Err(Error::Protocol("cluster already shut down".into()));
        }
        self.iteration += 1;
        let iteration = self.iteration;
        let t0 = Instant::now();
        let summary = match &mut self.backend {
            Backend::Sim(sim) => {
                let (s, dt) = sim.evaluate(iteration, params, risk_aversion)?;
                self.eval_times.push(dt);
                s
            }
            Backend::SimUdp(net) => net.evaluate(iteration, params, risk_aversion)?,
            Backend::Socket { core, link, result_timeout } => {
                let fx = core.begin_eval(iteration, params.clone(), risk_aversion)?;
                let mut compute = Duration::ZERO;
                let mut done = drive(core, link.as_mut(), fx, &mut self.counts, &mut compute)?;
                self.own_compute += compute;
                let wait = result_timeout.unwrap_or_else(|| (compute * 10).max(Duration::from_secs(2)));
                let deadline = Instant::now() + wait;
                while done.is_none() {
                    let left = deadline.saturating_duration_since(Instant::now());
                    let Some(msg) = link.recv(Some(left))? else {
                        let node = core.missing_children().first().copied().unwrap_or(0);
                        return Err(Error::ResultTimeout { iteration, node });
                    };
                    self.counts.record(msg.kind());
                    let fx = core.handle(msg)?;
                    done = drive(core, link.as_mut(), fx, &mut self.counts, &mut compute)?;
                }
                let (it, s) = done.unwrap();
                if it != iteration {
                    return Err(Error::Protocol(format!("merged result for {it} during iteration {iteration}")));
                }
                s
            }
        };
        self.round_wall += t0.elapsed();
        Ok(summary)
    }

    /// Sends SHUTDOWN down the tree. Delivery problems are logged, not fatal.
    pub fn shutdown(&mut self) -> Result<()> {
        if self.shut_down {
            return Ok(());
        }
        self.shut_down = true;
        match &mut self.backend {
            Backend::Sim(sim) => {
                sim.shutdown()?;
            }
            Backend::SimUdp(net) => net.shutdown()?,
            Backend::Socket { core, link, .. } => {
                let fx = core.shutdown();
                let mut unused = Duration::ZERO;
                if let Err(e) = drive(core, link.as_mut(), fx, &mut self.counts, &mut unused) {
                    log::warn!("shutdown not fully delivered: {e}");
                }
            }
        }
        Ok(())
    }

    pub fn report(&self) -> TimingReport {
        let mut counts = match &self.backend {
            Backend::Sim(sim) => sim.counts(),
            Backend::SimUdp(net) => net.counts(),
            Backend::Socket { .. } => self.counts,
        };
        let single_machine_time = match &self.backend {
            Backend::Sim(_) => Some(self.per_scenario_time * self.total as f64),
            Backend::SimUdp(_) => None,
            Backend::Socket { link, .. } => {
                counts.retransmissions = link.retransmissions();
                (self.iteration > 0 && self.own_scenarios > 0).then(|| {
                    self.own_compute.as_secs_f64() / self.iteration as f64 * self.total as f64 / self.own_scenarios as f64
                })
            }
        };
        let slower_than_single = match (&self.backend, single_machine_time) {
            (Backend::Sim(_), Some(single)) => self.eval_times.iter().any(|&t| t > single),
            (Backend::Socket { .. }, Some(single)) => {
                self.round_wall.as_secs_f64() / self.iteration as f64 > single
            }
            _ => false,
        };
        TimingReport {
            mode: self.mode,
            nodes: self.nodes,
            evaluations: self.iteration,
            wall_clock_secs: self.started.elapsed().as_secs_f64(),
            counts,
            assign_virtual_time: self.assign_time.filter(|_| self.mode != TransportMode::SimUdp),
            eval_virtual_times: self.eval_times.clone(),
            single_machine_time,
            slower_than_single,
        }
    }
}

impl Evaluator for DistributedEvaluator {
    fn evaluate(&mut self, params: &StrategyParams, risk_aversion: f64) -> Result<ObjectiveValue> {
        let s = self.evaluate_summary(params, risk_aversion)?;
        objective(s, risk_aversion)
    }
}

impl Drop for DistributedEvaluator {
    fn drop(&mut self) {
        if !self.shut_down {
            let _ = self.shutdown();
        }
    }
}

#[derive(Debug, Clone)]
pub struct MasterOutcome {
    pub result: OptimizeResult,
    pub report: TimingReport,
}

/// Distributes the scenarios, runs the search with every objective evaluated
/// across the cluster, then shuts the workers down.
pub fn run_master(
    source: &ScenarioSource,
    topology: &Topology,
    tabu: &TabuConfig,
    initial: StrategyParams,
    transport: &TransportConfig,
) -> Result<MasterOutcome> {
    tabu.validate()?;
    let mut evaluator = DistributedEvaluator::start(source, topology, transport)?;
    let result = optimize(&mut evaluator, tabu, initial);
    evaluator.shutdown()?;
    let report = evaluator.report();
    Ok(MasterOutcome { result: result?, report })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorkerReport {
    pub node: usize,
    pub evaluations: u32,
    pub scenarios: usize,
    pub counts: TransferCounts,
}

/// Serves one node until SHUTDOWN arrives.
pub fn run_worker(topology: &Topology, transport: &TransportConfig, node_id: usize) -> Result<WorkerReport> {
    transport.validate()?;
    if node_id == 0 || node_id >= topology.node_count() {
        return Err(Error::validation(format!(
            "worker id {node_id} must be in 1..{}",
            topology.node_count()
        )));
    }
    let mut core = NodeCore::new(node_id, topology)?;
    let mut link = open_link(node_id, topology, transport)?;
    let mut counts = TransferCounts::default();
    let mut evaluations = 0;
    let mut compute = Duration::ZERO;
    while !core.is_stopped() {
        let Some(msg) = link.recv(None)? else { continue };
        counts.record(msg.kind());
        if matches!(msg.payload, super::wire::Payload::Eval { .. }) {
            evaluations += 1;
        }
        let fx = core.handle(msg)?;
        drive(&mut core, link.as_mut(), fx, &mut counts, &mut compute)?;
    }
    counts.retransmissions = link.retransmissions();
    log::info!("node {node_id} stopped after {evaluations} evaluations");
    Ok(WorkerReport { node: node_id, evaluations, scenarios: core.range().len(), counts })
}
