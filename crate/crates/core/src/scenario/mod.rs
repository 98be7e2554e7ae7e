//! Economic scenario generation and strategy evaluation.

mod model;
mod set;
mod strategy;

pub use model::{CovarianceFactor, EconomicModelConfig};
pub use set::{generate_scenarios, generate_scenario_range, Scenario, ScenarioSet, SCENARIO_MAGIC, SCENARIO_VERSION};
pub use strategy::{
    evaluate_set, evaluate_set_sequential, evaluate_strategy, EvaluationOutcome, StrategyParams,
    WEIGHT_SUM_TOLERANCE,
};
