//! Mergeable (count, sum, sum of squares) summaries and the objective built
//! from them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::{ring_order, Topology};

/// Partial sums over a block of outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ReductionSummary {
    pub count: u64,
    pub sum: f64,
    pub sum_sq: f64,
}

pub const SUMMARY_WIRE_LEN: usize = 24;

impl ReductionSummary {
    pub const EMPTY: ReductionSummary = ReductionSummary { count: 0, sum: 0.0, sum_sq: 0.0 };

    /// Little-endian `count: u64`, `sum: f64`, `sum_sq: f64`.
    pub fn to_bytes(&self) -> [u8; SUMMARY_WIRE_LEN] {
        let mut out = [0u8; SUMMARY_WIRE_LEN];
        out[..8].copy_from_slice(&self.count.to_le_bytes());
        out[8..16].copy_from_slice(&self.sum.to_le_bytes());
        out[16..].copy_from_slice(&self.sum_sq.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != SUMMARY_WIRE_LEN {
            return Err(Error::Frame(format!("summary needs 24 bytes, got {}", bytes.len())));
        }
        Ok(Self {
            count: u64::from_le_bytes(bytes[..8].try_into().unwrap()),
            sum: f64::from_le_bytes(bytes[8..16].try_into().unwrap()),
            sum_sq: f64::from_le_bytes(bytes[16..].try_into().unwrap()),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveValue {
    pub mean: f64,
    pub stdev: f64,
    /// `-(mean - risk_aversion * stdev)`; smaller is better.
    pub objective: f64,
}

pub fn summarize(values: &[f64]) -> ReductionSummary {
    let mut s = ReductionSummary::EMPTY;
    for v in values {
        s.count += 1;
        s.sum += v;
        s.sum_sq += v * v;
    }
    s
}

pub fn merge(a: ReductionSummary, b: ReductionSummary) -> ReductionSummary {
    ReductionSummary { count: a.count + b.count, sum: a.sum + b.sum, sum_sq: a.sum_sq + b.sum_sq }
}

/// Population mean and stdev from the partial sums. The objective field is
/// left at `-mean` (zero risk aversion).
pub fn finalize(s: ReductionSummary) -> Result<ObjectiveValue> {
    if s.count == 0 {
        return Err(Error::EmptySummary);
    }
    let n = s.count as f64;
    let mean = s.sum / n;
    let var = (s.sum_sq / n - mean * mean).max(0.0);
    Ok(ObjectiveValue { mean, stdev: var.sqrt(), objective: -mean })
}

pub fn objective(s: ReductionSummary, risk_aversion: f64) -> Result<ObjectiveValue> {
    if !(risk_aversion >= 0.0) {
        return Err(Error::validation(format!("risk aversion {risk_aversion} must be non-negative")));
    }
    let mut v = finalize(s)?;
    v.objective = -(v.mean - risk_aversion * v.stdev);
    Ok(v)
}

/// Ring all-reduce by circulation: in each of `Q` steps every node passes
/// the value it last received from its right neighbour on to its left
/// neighbour and folds it into its accumulator. The value a node receives in
/// step `Q` is its own and is not folded again.
pub fn ring_allreduce(per_node: &[ReductionSummary], ring: &Topology) -> Result<Vec<ReductionSummary>> {
    let q = ring.node_count();
    if per_node.len() != q {
        return Err(Error::validation(format!(
            "{} summaries for a ring of {q} nodes",
            per_node.len()
        )));
    }
    let order = ring_order(ring)?;
    // Position p's left neighbour is p-1, right neighbour is p+1.
    let mut acc: Vec<ReductionSummary> = order.iter().map(|&n| per_node[n]).collect();
    let mut carried: Vec<(usize, ReductionSummary)> = (0..q).map(|p| (p, acc[p])).collect();
    for _step in 0..q {
        let incoming: Vec<(usize, ReductionSummary)> = (0..q).map(|p| carried[(p + 1) % q]).collect();
        for p in 0..q {
            let (origin, value) = incoming[p];
            if origin != p {
                acc[p] = merge(acc[p], value);
            }
        }
        carried = incoming;
    }
    let mut out = vec![ReductionSummary::EMPTY; q];
    for (p, &node) in order.iter().enumerate() {
        out[node] = acc[p];
    }
    Ok(out)
}
