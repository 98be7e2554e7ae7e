use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::set::{Scenario, ScenarioSet};
use crate::error::{Error, Result};
use crate::par;

pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

/// A point of the optimization domain: a fixed-mix allocation plus a
/// contribution stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyParams {
    pub weights: Vec<f64>,
    pub contribution_rate: f64,
    pub rebalance: bool,
}

impl StrategyParams {
    pub fn new(weights: Vec<f64>, contribution_rate: f64, rebalance: bool) -> Result<Self> {
        let p = Self { weights, contribution_rate, rebalance };
        p.validate()?;
        Ok(p)
    }

    /// Equal weights over `k` assets, no contribution, rebalancing on.
    pub fn equal_weight(k: usize) -> Self {
        Self { weights: vec![1.0 / k as f64; k], contribution_rate: 0.0, rebalance: true }
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.is_empty() {
            return Err(Error::validation("strategy needs at least one weight"));
        }
        if let Some(w) = self.weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(Error::validation(format!("weight {w} outside [0, 1]")));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(Error::validation(format!("weights sum to {sum}, expected 1")));
        }
        if !(0.0..=1.0).contains(&self.contribution_rate) {
            return Err(Error::validation(format!(
                "contribution_rate {} outside [0, 1]",
                self.contribution_rate
            )));
        }
        Ok(())
    }
}

/// Per-scenario outcomes, in scenario order.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationOutcome {
    pub values: Vec<f64>,
}

/// Runs the fixed-mix strategy through one scenario and returns terminal
/// wealth (initial wealth 1.0).
///
/// Each period every holding grows by its indicator's level ratio, then
/// `contribution_rate` (in units of initial wealth) is added at the target
/// weights, and with `rebalance` on the portfolio is reset to the targets.
pub fn evaluate_strategy(params: &StrategyParams, scenario: Scenario<'_>) -> Result<f64> {
    let k = params.weights.len();
    if k != scenario.indicators() {
        return Err(Error::validation(format!(
            "strategy has {k} weights but scenario has {} indicators",
            scenario.indicators()
        )));
    }
    if scenario.periods() < 2 {
        return Err(Error::validation("scenario needs at least two periods"));
    }
    let mut holdings = params.weights.clone();
    let mut prev = scenario.row(0);
    for t in 1..scenario.periods() {
        let row = scenario.row(t);
        for j in 0..k {
            holdings[j] *= row[j] / prev[j];
            holdings[j] += params.contribution_rate * params.weights[j];
        }
        if params.rebalance {
            let wealth: f64 = holdings.iter().sum();
            for (h, w) in holdings.iter_mut().zip(&params.weights) {
                *h = w * wealth;
            }
        }
        prev = row;
    }
    Ok(holdings.iter().sum())
}

fn check_subset(params: &StrategyParams, set: &ScenarioSet, subset: Option<Range<usize>>) -> Result<Range<usize>> {
    params.validate()?;
    let range = subset.unwrap_or(0..set.len());
    if range.is_empty() {
        return Err(Error::validation("evaluation subset is empty"));
    }
    if range.end > set.len() {
        return Err(Error::validation(format!(
            "subset {range:?} outside scenario set of {}",
            set.len()
        )));
    }
    if params.weights.len() != set.indicators() {
        return Err(Error::validation(format!(
            "strategy has {} weights but scenarios have {} indicators",
            params.weights.len(),
            set.indicators()
        )));
    }
    if set.periods() < 2 {
        return Err(Error::validation("scenarios need at least two periods"));
    }
    Ok(range)
}

/// Evaluates the strategy on every scenario of `subset` (local indices),
/// spreading scenarios across threads when the `parallel` feature is on.
pub fn evaluate_set(params: &StrategyParams, set: &ScenarioSet, subset: Option<Range<usize>>) -> Result<EvaluationOutcome> {
    let range = check_subset(params, set, subset)?;
    let values = par::map_indices(range, |i| {
        evaluate_strategy(params, set.scenario(i)).expect("dimensions checked")
    });
    Ok(EvaluationOutcome { values })
}

pub fn evaluate_set_sequential(
    params: &StrategyParams,
    set: &ScenarioSet,
    subset: Option<Range<usize>>,
) -> Result<EvaluationOutcome> {
    let range = check_subset(params, set, subset)?;
    let values = par::map_indices_sequential(range, |i| {
        evaluate_strategy(params, set.scenario(i)).expect("dimensions checked")
    });
    Ok(EvaluationOutcome { values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{generate_scenarios, EconomicModelConfig};
    use proptest::prelude::*;

    fn market(seed: u64) -> ScenarioSet {
        let cfg = EconomicModelConfig {
            indicator_count: 2,
            period_count: 10,
            drift: vec![0.006, 0.003],
            covariance: vec![vec![0.0025, 0.0004], vec![0.0004, 0.0009]],
            initial_levels: vec![1.0, 2.0],
            seed,
        };
        generate_scenarios(&cfg, 64).unwrap()
    }

    #[test]
    fn compound_growth_identity() {
        let levels = [1.0, 1.05, 1.05 * 1.05, 1.05 * 1.05 * 1.05];
        let sc = Scenario::new(&levels, 4, 1).unwrap();
        let p = StrategyParams::new(vec![1.0], 0.0, true).unwrap();
        let v = evaluate_strategy(&p, sc).unwrap();
        assert!((v - 1.157625).abs() < 1e-12, "{v}");
    }

    #[test]
    fn degenerate_allocation_matches_single_asset() {
        let set = market(3);
        let p2 = StrategyParams::new(vec![1.0, 0.0], 0.02, true).unwrap();
        let p1 = StrategyParams::new(vec![1.0], 0.02, true).unwrap();
        for i in 0..set.len() {
            let sc = set.scenario(i);
            let first: Vec<f64> = (0..sc.periods()).map(|t| sc.row(t)[0]).collect();
            let single = Scenario::new(&first, sc.periods(), 1).unwrap();
            assert_eq!(evaluate_strategy(&p2, sc).unwrap(), evaluate_strategy(&p1, single).unwrap());
        }
    }

    #[test]
    fn rebalanced_mix_matches_direct_recurrence() {
        // Spreadsheet-style oracle: W_t = W_{t-1} * sum_j w_j R_j + c.
        let set = market(11);
        let w = [0.6, 0.4];
        let c = 0.01;
        let p = StrategyParams::new(w.to_vec(), c, true).unwrap();
        for i in 0..set.len() {
            let sc = set.scenario(i);
            let mut wealth = 1.0;
            for t in 1..sc.periods() {
                let r0 = sc.row(t)[0] / sc.row(t - 1)[0];
                let r1 = sc.row(t)[1] / sc.row(t - 1)[1];
                wealth = wealth * (w[0] * r0 + w[1] * r1) + c;
            }
            let got = evaluate_strategy(&p, sc).unwrap();
            assert!((got - wealth).abs() <= 1e-12 * wealth, "{got} vs {wealth}");
        }
    }

    #[test]
    fn buy_and_hold_matches_per_asset_growth() {
        let set = market(5);
        let p = StrategyParams::new(vec![0.3, 0.7], 0.0, false).unwrap();
        let sc = set.scenario(0);
        let last = sc.periods() - 1;
        let expected = 0.3 * sc.row(last)[0] / sc.row(0)[0] + 0.7 * sc.row(last)[1] / sc.row(0)[1];
        assert!((evaluate_strategy(&p, sc).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let set = market(1);
        let p = StrategyParams::new(vec![0.5, 0.25, 0.25], 0.0, true).unwrap();
        assert!(evaluate_strategy(&p, set.scenario(0)).is_err());
        assert!(evaluate_set(&p, &set, None).is_err());
    }

    #[test]
    fn invalid_params_are_rejected() {
        assert!(StrategyParams::new(vec![0.5, 0.6], 0.0, true).is_err());
        assert!(StrategyParams::new(vec![1.2, -0.2], 0.0, true).is_err());
        assert!(StrategyParams::new(vec![1.0], 1.5, true).is_err());
    }

    #[test]
    fn singleton_subset_matches_direct_evaluation() {
        let set = market(2);
        let p = StrategyParams::new(vec![0.5, 0.5], 0.0, true).unwrap();
        let out = evaluate_set(&p, &set, Some(9..10)).unwrap();
        assert_eq!(out.values, vec![evaluate_strategy(&p, set.scenario(9)).unwrap()]);
    }

    #[test]
    fn empty_subset_is_rejected() {
        let set = market(2);
        let p = StrategyParams::equal_weight(2);
        assert!(evaluate_set(&p, &set, Some(4..4)).is_err());
        assert!(evaluate_set(&p, &set, Some(60..70)).is_err());
    }

    #[test]
    fn forward_and_reverse_order_agree() {
        let set = market(8);
        let p = StrategyParams::new(vec![0.2, 0.8], 0.05, true).unwrap();
        let forward = evaluate_set(&p, &set, None).unwrap().values;
        let mut reverse: Vec<f64> =
            (0..set.len()).rev().map(|i| evaluate_strategy(&p, set.scenario(i)).unwrap()).collect();
        reverse.reverse();
        assert_eq!(forward, reverse);
        assert_eq!(forward, evaluate_set_sequential(&p, &set, None).unwrap().values);
    }

    proptest! {
        #[test]
        fn partition_concatenation_matches_full(cuts in proptest::collection::vec(1usize..64, 0..6), w0 in 0.0f64..=1.0) {
            let set = market(21);
            let p = StrategyParams::new(vec![w0, 1.0 - w0], 0.0, true).unwrap();
            let full = evaluate_set(&p, &set, None).unwrap().values;
            let mut bounds: Vec<usize> = cuts;
            bounds.push(0);
            bounds.push(set.len());
            bounds.sort_unstable();
            bounds.dedup();
            let mut joined = Vec::new();
            for w in bounds.windows(2) {
                joined.extend(evaluate_set(&p, &set, Some(w[0]..w[1])).unwrap().values);
            }
            prop_assert_eq!(joined, full);
        }

        #[test]
        fn terminal_wealth_is_positive(w0 in 0.0f64..=1.0, c in 0.0f64..=1.0, rebalance: bool) {
            let set = market(4);
            let p = StrategyParams::new(vec![w0, 1.0 - w0], c, rebalance).unwrap();
            for v in evaluate_set(&p, &set, None).unwrap().values {
                prop_assert!(v > 0.0);
            }
        }
    }
}
