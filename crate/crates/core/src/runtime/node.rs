//! Per-node protocol logic, independent of how bytes move.
//!
//! A driver feeds messages in and carries out the returned [`Effect`]s in
//! order. Partial results are merged in a fixed order (own range first, then
//! children in schedule order) so every transport produces bit-identical
//! summaries.

use std::ops::Range;

use super::wire::{Assign, AssignSource, Message, Payload};
use crate::error::{Error, Result};
use crate::scenario::{evaluate_set, generate_scenario_range, ScenarioSet, StrategyParams};
use crate::stats::{merge, summarize, ReductionSummary};
use crate::topology::Topology;

#[derive(Debug, Clone, PartialEq)]
pub enum Effect {
    Send { to: usize, msg: Message },
    /// Evaluate the own range; the driver calls [`NodeCore::compute`].
    Compute { iteration: u32, scenarios: usize },
    /// Root only: the merged summary of the whole cluster.
    Completed { iteration: u32, summary: ReductionSummary },
    Stop,
}

#[derive(Debug)]
struct Round {
    iteration: u32,
    params: StrategyParams,
    own: Option<ReductionSummary>,
    from_children: Vec<Option<ReductionSummary>>,
}

#[derive(Debug)]
pub struct NodeCore {
    id: usize,
    parent: Option<usize>,
    children: Vec<usize>,
    /// For every node id, the index of the child whose subtree holds it.
    via_child: Vec<Option<usize>>,
    data: Option<ScenarioSet>,
    range: Range<usize>,
    round: Option<Round>,
    stopped: bool,
}

impl NodeCore {
    pub fn new(id: usize, topology: &Topology) -> Result<Self> {
        if id >= topology.node_count() {
            return Err(Error::validation(format!("node {id} not in a topology of {}", topology.node_count())));
        }
        if topology.root().is_none() {
            return Err(Error::UnsupportedSchedule(format!("{} topology has no root", topology.kind())));
        }
        let children = topology.children(id).to_vec();
        let mut via_child = vec![None; topology.node_count()];
        for (k, &c) in children.iter().enumerate() {
            for n in topology.subtree(c) {
                via_child[n] = Some(k);
            }
        }
        Ok(Self {
            id,
            parent: topology.parent(id),
            children,
            via_child,
            data: None,
            range: 0..0,
            round: None,
            stopped: false,
        })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn parent(&self) -> Option<usize> {
        self.parent
    }

    pub fn children(&self) -> &[usize] {
        &self.children
    }

    pub fn range(&self) -> Range<usize> {
        self.range.clone()
    }

    pub fn is_assigned(&self) -> bool {
        self.data.is_some()
    }

    pub fn is_stopped(&self) -> bool {
        self.stopped
    }

    /// Children whose RESULT for the current round has not arrived.
    pub fn missing_children(&self) -> Vec<usize> {
        match &self.round {
            None => Vec::new(),
            Some(r) => self
                .children
                .iter()
                .zip(&r.from_children)
                .filter(|(_, s)| s.is_none())
                .map(|(&c, _)| c)
                .collect(),
        }
    }

    fn send(&self, to: usize, iteration: u32, payload: Payload) -> Effect {
        Effect::Send { to, msg: Message::new(self.id, iteration, payload) }
    }

    pub fn handle(&mut self, msg: Message) -> Result<Vec<Effect>> {
        if self.stopped {
            return Err(Error::Protocol(format!("node {} got {:?} after SHUTDOWN", self.id, msg.kind())));
        }
        let from_parent = Some(msg.from) == self.parent;
        match msg.payload {
            Payload::Assign(a) if from_parent => self.assign(*a),
            Payload::Eval { params, risk_aversion } if from_parent => self.begin_eval(msg.iteration, params, risk_aversion),
            Payload::Shutdown if from_parent => Ok(self.shutdown()),
            Payload::Result(s) => self.child_result(msg.from, msg.iteration, s),
            Payload::Ack { .. } => Err(Error::Protocol("ACK reached the node logic".into())),
            other => Err(Error::Protocol(format!(
                "node {} got {:?} from {}, which is not its parent",
                self.id,
                other.kind(),
                msg.from
            ))),
        }
    }

    /// Takes this node's scenarios and forwards each child its subtree's share.
    pub fn assign(&mut self, a: Assign) -> Result<Vec<Effect>> {
        let range = a
            .plan
            .iter()
            .find(|(n, _)| *n == self.id)
            .map(|(_, r)| r.clone())
            .ok_or_else(|| Error::Protocol(format!("ASSIGN plan has no entry for node {}", self.id)))?;
        let data = match &a.source {
            AssignSource::Recipe(cfg) => {
                if cfg.digest() != a.config_digest {
                    return Err(Error::Protocol("ASSIGN recipe does not match its config digest".into()));
                }
                generate_scenario_range(cfg, range.clone())?
            }
            AssignSource::Raw(blocks) => {
                let set = blocks
                    .iter()
                    .find(|(n, _)| *n == self.id)
                    .map(|(_, s)| s.clone())
                    .ok_or_else(|| Error::Protocol(format!("ASSIGN carries no block for node {}", self.id)))?;
                if set.start() != range.start || set.len() != range.len() {
                    return Err(Error::Protocol(format!(
                        "block {}..{} does not match planned range {range:?}",
                        set.start(),
                        set.start() + set.len()
                    )));
                }
                if set.config_digest() != a.config_digest {
                    return Err(Error::Protocol("scenario block from a different model".into()));
                }
                set
            }
        };
        self.data = Some(data);
        self.range = range;

        let mut effects = Vec::with_capacity(self.children.len());
        for (k, &child) in self.children.iter().enumerate() {
            let mine = |n: &usize| self.via_child.get(*n).copied().flatten() == Some(k);
            let plan: Vec<_> = a.plan.iter().filter(|(n, _)| mine(n)).cloned().collect();
            let source = match &a.source {
                AssignSource::Recipe(cfg) => AssignSource::Recipe(cfg.clone()),
                AssignSource::Raw(blocks) => AssignSource::Raw(blocks.iter().filter(|(n, _)| mine(n)).cloned().collect()),
            };
            let sub = Assign { config_digest: a.config_digest, total: a.total, plan, source };
            effects.push(self.send(child, 0, Payload::Assign(Box::new(sub))));
        }
        Ok(effects)
    }

    /// Starts an evaluation round: EVAL to every child, then the own range.
    pub fn begin_eval(&mut self, iteration: u32, params: StrategyParams, risk_aversion: f64) -> Result<Vec<Effect>> {
        if self.data.is_none() {
            return Err(Error::Protocol(format!("node {} got EVAL before ASSIGN", self.id)));
        }
        if let Some(r) = &self.round {
            return Err(Error::Protocol(format!(
                "node {} got EVAL {iteration} while round {} is open",
                self.id, r.iteration
            )));
        }
        let mut effects: Vec<Effect> = self
            .children
            .iter()
            .map(|&c| self.send(c, iteration, Payload::Eval { params: params.clone(), risk_aversion }))
            .collect();
        effects.push(Effect::Compute { iteration, scenarios: self.range.len() });
        self.round = Some(Round { iteration, params, own: None, from_children: vec![None; self.children.len()] });
        Ok(effects)
    }

    /// Evaluates the own range for the open round.
    pub fn compute(&mut self, iteration: u32) -> Result<Vec<Effect>> {
        let data = self.data.as_ref().ok_or_else(|| Error::Protocol("compute before ASSIGN".into()))?;
        let round = match &mut self.round {
            Some(r) if r.iteration == iteration && r.own.is_none() => r,
            _ => return Err(Error::Protocol(format!("no pending compute for iteration {iteration}"))),
        };
        let values = evaluate_set(&round.params, data, None)?.values;
        round.own = Some(summarize(&values));
        Ok(self.try_finish())
    }

    fn child_result(&mut self, from: usize, iteration: u32, s: ReductionSummary) -> Result<Vec<Effect>> {
        let idx = self
            .children
            .iter()
            .position(|&c| c == from)
            .ok_or_else(|| Error::Protocol(format!("node {} got RESULT from non-child {from}", self.id)))?;
        let round = self
            .round
            .as_mut()
            .ok_or_else(|| Error::Protocol(format!("RESULT {iteration} from {from} with no open round")))?;
        if round.iteration != iteration {
            return Err(Error::Protocol(format!(
                "RESULT for iteration {iteration} from {from} during iteration {}",
                round.iteration
            )));
        }
        if round.from_children[idx].is_some() {
            return Err(Error::Protocol(format!("duplicate RESULT from {from} in iteration {iteration}")));
        }
        round.from_children[idx] = Some(s);
        Ok(self.try_finish())
    }

    fn try_finish(&mut self) -> Vec<Effect> {
        let ready = self.round.as_ref().is_some_and(|r| r.own.is_some() && r.from_children.iter().all(Option::is_some));
        if !ready {
            return Vec::new();
        }
        let r = self.round.take().unwrap();
        let summary = r.from_children.iter().flatten().fold(r.own.unwrap(), |acc, s| merge(acc, *s));
        match self.parent {
            Some(p) => vec![self.send(p, r.iteration, Payload::Result(summary))],
            None => vec![Effect::Completed { iteration: r.iteration, summary }],
        }
    }

    /// Forwards SHUTDOWN to the children and stops.
    pub fn shutdown(&mut self) -> Vec<Effect> {
        self.stopped = true;
        let mut effects: Vec<_> = self.children.iter().map(|&c| self.send(c, 0, Payload::Shutdown)).collect();
        effects.push(Effect::Stop);
        effects
    }
}
