//! Tabu search over [`StrategyParams`].
//!
//! Moves transfer one grid step of weight between two assets or nudge the
//! contribution rate. The reverse of every accepted move becomes tabu for
//! `tabu_tenure` iterations; a tabu move is still taken when it strictly beats
//! the best objective seen so far.

use std::cmp::Ordering;
use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{evaluate_set, ScenarioSet, StrategyParams};
use crate::stats::{objective, summarize, ObjectiveValue};

const WEIGHT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TabuConfig {
    pub max_iterations: usize,
    pub tabu_tenure: usize,
    pub step_size: f64,
    pub seed: u64,
    pub risk_aversion: f64,
    /// Include the two contribution-rate moves in the neighborhood.
    pub vary_contribution: bool,
    /// Evaluate at most this many neighbors per iteration, sampled with `seed`.
    pub candidate_limit: Option<usize>,
}

impl Default for TabuConfig {
    fn default() -> Self {
        Self {
            max_iterations: 5000,
            tabu_tenure: 7,
            step_size: 0.05,
            seed: 0,
            risk_aversion: 0.0,
            vary_contribution: true,
            candidate_limit: None,
        }
    }
}

impl TabuConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tabu_tenure == 0 {
            return Err(Error::validation("tabu_tenure must be positive"));
        }
        grid_size(self.step_size)?;
        if !(self.risk_aversion >= 0.0) {
            return Err(Error::validation("risk_aversion must be non-negative"));
        }
        if self.candidate_limit == Some(0) {
            return Err(Error::validation("candidate_limit must be positive"));
        }
        Ok(())
    }

    pub fn grid(&self) -> usize {
        grid_size(self.step_size).unwrap_or(1)
    }
}

/// Number of grid steps in one unit of weight.
fn grid_size(step: f64) -> Result<usize> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::validation(format!("step_size {step} must lie in (0, 1]")));
    }
    let n = (1.0 / step).round();
    if (1.0 / step - n).abs() > 1e-9 {
        return Err(Error::validation(format!("step_size {step} does not divide 1")));
    }
    Ok(n as usize)
}

fn snap(v: f64, n: usize) -> f64 {
    let k = (v * n as f64).round();
    if (v * n as f64 - k).abs() < 1e-6 {
        k / n as f64
    } else {
        v
    }
}

/// Nearest grid point on the simplex (largest-remainder rounding).
pub fn snap_to_grid(p: &StrategyParams, step: f64) -> Result<StrategyParams> {
    p.validate()?;
    let n = grid_size(step)?;
    let scaled: Vec<f64> = p.weights.iter().map(|w| w * n as f64).collect();
    let mut units: Vec<usize> = scaled.iter().map(|s| s.floor() as usize).collect();
    let missing = n.saturating_sub(units.iter().sum());
    let mut order: Vec<usize> = (0..units.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = scaled[a] - scaled[a].floor();
        let rb = scaled[b] - scaled[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(missing) {
        units[i] += 1;
    }
    let weights = units.iter().map(|&u| u as f64 / n as f64).collect();
    let contribution_rate = snap((p.contribution_rate * n as f64).round() / n as f64, n).clamp(0.0, 1.0);
    StrategyParams::new(weights, contribution_rate, p.rebalance)
}

/// Move signature. The derived order is the tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Move {
    Transfer { from: usize, to: usize },
    ContribDown,
    ContribUp,
}

impl Move {
    pub fn reverse(self) -> Move {
        match self {
            Move::Transfer { from, to } => Move::Transfer { from: to, to: from },
            Move::ContribDown => Move::ContribUp,
            Move::ContribUp => Move::ContribDown,
        }
    }

    pub fn apply(self, p: &StrategyParams, step: f64) -> Option<StrategyParams> {
        let n = grid_size(step).ok()?;
        let mut q = p.clone();
        match self {
            Move::Transfer { from, to } => {
                if from == to || from >= q.weights.len() || to >= q.weights.len() {
                    return None;
                }
                if q.weights[from] < step - WEIGHT_EPS {
                    return None;
                }
                q.weights[from] = snap(q.weights[from] - step, n).max(0.0);
                q.weights[to] = snap(q.weights[to] + step, n).min(1.0);
            }
            Move::ContribDown | Move::ContribUp => {
                let delta = if self == Move::ContribUp { step } else { -step };
                let c = snap(q.contribution_rate + delta, n).clamp(0.0, 1.0);
                if (c - q.contribution_rate).abs() < WEIGHT_EPS {
                    return None;
                }
                q.contribution_rate = c;
            }
        }
        q.validate().ok().map(|_| q)
    }
}

/// All valid moves from `p`, in signature order.
pub fn neighborhood_moves(p: &StrategyParams, step: f64, vary_contribution: bool) -> Vec<(Move, StrategyParams)> {
    let k = p.weights.len();
    let mut out = Vec::new();
    for from in 0..k {
        for to in 0..k {
            let m = Move::Transfer { from, to };
            if let Some(q) = m.apply(p, step) {
                out.push((m, q));
            }
        }
    }
    if vary_contribution {
        for m in [Move::ContribDown, Move::ContribUp] {
            if let Some(q) = m.apply(p, step) {
                out.push((m, q));
            }
        }
    }
    out
}

pub fn neighborhood(p: &StrategyParams, step: f64) -> Vec<StrategyParams> {
    neighborhood_moves(p, step, true).into_iter().map(|(_, q)| q).collect()
}

/// Objective source for the search.
pub trait Evaluator {
    fn evaluate(&mut self, params: &StrategyParams, risk_aversion: f64) -> Result<ObjectiveValue>;
}

impl<F> Evaluator for F
where
    F: FnMut(&StrategyParams, f64) -> Result<ObjectiveValue>,
{
    fn evaluate(&mut self, params: &StrategyParams, risk_aversion: f64) -> Result<ObjectiveValue> {
        self(params, risk_aversion)
    }
}

/// Evaluates every scenario of a set in this process.
pub struct LocalEvaluator<'a> {
    set: &'a ScenarioSet,
    pub evaluations: usize,
}

impl<'a> LocalEvaluator<'a> {
    pub fn new(set: &'a ScenarioSet) -> Self {
        Self { set, evaluations: 0 }
    }
}

impl Evaluator for LocalEvaluator<'_> {
    fn evaluate(&mut self, params: &StrategyParams, risk_aversion: f64) -> Result<ObjectiveValue> {
        self.evaluations += 1;
        let out = evaluate_set(params, self.set, None)?;
        objective(summarize(&out.values), risk_aversion)
    }
}

/// `a < b` beyond a relative tolerance, so evaluators that differ only in
/// summation order make the same decisions.
fn clearly_less(a: f64, b: f64) -> bool {
    a < b - 1e-12 * a.abs().max(b.abs()).max(1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabuState {
    pub current: StrategyParams,
    pub current_objective: f64,
    pub best: StrategyParams,
    pub best_objective: f64,
    pub tabu_list: VecDeque<Move>,
    pub iteration: usize,
}

impl TabuState {
    pub fn new<E: Evaluator + ?Sized>(initial: StrategyParams, evaluator: &mut E, cfg: &TabuConfig) -> Result<Self> {
        initial.validate()?;
        let v = evaluator
            .evaluate(&initial, cfg.risk_aversion)
            .map_err(|e| Error::Evaluation { iteration: 0, source: Box::new(e) })?;
        Ok(Self {
            current: initial.clone(),
            current_objective: v.objective,
            best: initial,
            best_objective: v.objective,
            tabu_list: VecDeque::new(),
            iteration: 0,
        })
    }

    pub fn is_tabu(&self, m: Move) -> bool {
        self.tabu_list.contains(&m)
    }
}

/// Advances one iteration. Returns the accepted move, or `None` when no
/// admissible neighbor exists (the state then only counts the iteration).
pub fn step<E: Evaluator + ?Sized>(state: &mut TabuState, evaluator: &mut E, cfg: &TabuConfig) -> Result<Option<Move>> {
    state.iteration += 1;
    let mut candidates = neighborhood_moves(&state.current, cfg.step_size, cfg.vary_contribution);
    if let Some(limit) = cfg.candidate_limit {
        if candidates.len() > limit {
            let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
            rng.set_stream(state.iteration as u64);
            let mut keep = sample(&mut rng, candidates.len(), limit).into_vec();
            keep.sort_unstable();
            candidates = keep.into_iter().map(|i| candidates[i].clone()).collect();
        }
    }

    let mut chosen: Option<(Move, StrategyParams, f64)> = None;
    for (m, q) in candidates {
        let v = evaluator
            .evaluate(&q, cfg.risk_aversion)
            .map_err(|e| Error::Evaluation { iteration: state.iteration, source: Box::new(e) })?;
        let obj = v.objective;
        if state.is_tabu(m) && !clearly_less(obj, state.best_objective) {
            continue;
        }
        let better = match &chosen {
            None => true,
            Some((cm, _, cobj)) => match (clearly_less(obj, *cobj), clearly_less(*cobj, obj)) {
                (true, _) => true,
                (false, false) => m.cmp(cm) == Ordering::Less,
                _ => false,
            },
        };
        if better {
            chosen = Some((m, q, obj));
        }
    }

    let Some((m, q, obj)) = chosen else {
        return Ok(None);
    };
    state.current = q;
    state.current_objective = obj;
    state.tabu_list.push_back(m.reverse());
    while state.tabu_list.len() > cfg.tabu_tenure {
        state.tabu_list.pop_front();
    }
    if clearly_less(obj, state.best_objective) {
        state.best = state.current.clone();
        state.best_objective = obj;
    }
    Ok(Some(m))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub objective: f64,
    pub best_objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeResult {
    pub best: StrategyParams,
    pub best_objective: f64,
    pub trace: Vec<TraceRow>,
    /// Initial point followed by every accepted point.
    pub visited: Vec<StrategyParams>,
    pub exhausted: bool,
}

impl OptimizeResult {
    pub fn iterations(&self) -> usize {
        self.trace.len()
    }
}

pub fn optimize<E: Evaluator + ?Sized>(evaluator: &mut E, cfg: &TabuConfig, initial: StrategyParams) -> Result<OptimizeResult> {
    cfg.validate()?;
    let mut state = TabuState::new(initial, evaluator, cfg)?;
    let mut trace = Vec::new();
    let mut visited = vec![state.current.clone()];
    let mut exhausted = false;
    while state.iteration < cfg.max_iterations {
        if step(&mut state, evaluator, cfg)?.is_none() {
            exhausted = true;
            break;
        }
        log::trace!("iteration {} objective {}", state.iteration, state.current_objective);
        visited.push(state.current.clone());
        trace.push(TraceRow {
            iteration: state.iteration,
            objective: state.current_objective,
            best_objective: state.best_objective,
        });
    }
    Ok(OptimizeResult { best: state.best, best_objective: state.best_objective, trace, visited, exhausted })
}

pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut s = String::from("iteration,objective,best_objective\n");
    for r in trace {
        let _ = writeln!(s, "{},{:e},{:e}", r.iteration, r.objective, r.best_objective);
    }
    s
}
