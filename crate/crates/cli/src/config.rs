//! Experiment configuration: one TOML file with `model`, `tabu`, `transport`
//! and `run` sections, every one optional.

use std::path::Path;

use scenopt::runtime::TransportConfig;
use scenopt::scenario::EconomicModelConfig;
use scenopt::tabu::TabuConfig;
use serde::Deserialize;

use crate::CliError;

/// Iteration budget of the reproduction runs when the config leaves it open.
pub const CLI_DEFAULT_ITERATIONS: usize = 6000;

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub scenarios: Option<usize>,
    pub rebalance: bool,
    pub initial_weights: Option<Vec<f64>>,
    pub initial_contribution: f64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { scenarios: None, rebalance: true, initial_weights: None, initial_contribution: 0.0 }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub model: Option<EconomicModelConfig>,
    pub tabu: TabuConfig,
    pub transport: TransportConfig,
    pub run: RunSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: None,
            tabu: TabuConfig { max_iterations: CLI_DEFAULT_ITERATIONS, ..Default::default() },
            transport: TransportConfig::default(),
            run: RunSection::default(),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Raw {
    model: Option<EconomicModelConfig>,
    tabu: Option<toml::Table>,
    transport: Option<TransportConfig>,
    run: Option<RunSection>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let raw: Raw = toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        let mut tabu_table = raw.tabu.unwrap_or_default();
        tabu_table
            .entry("max_iterations")
            .or_insert(toml::Value::Integer(CLI_DEFAULT_ITERATIONS as i64));
        let tabu: TabuConfig = tabu_table.try_into().map_err(|e| CliError::Usage(format!("config [tabu]: {e}")))?;
        let cfg = Self {
            model: raw.model,
            tabu,
            transport: raw.transport.unwrap_or_default(),
            run: raw.run.unwrap_or_default(),
        };
        cfg.tabu.validate().map_err(|e| CliError::Usage(format!("config [tabu]: {e}")))?;
        cfg.transport.validate().map_err(|e| CliError::Usage(format!("config [transport]: {e}")))?;
        if let Some(m) = &cfg.model {
            m.validate().map_err(|e| CliError::Usage(format!("config [model]: {e}")))?;
        }
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => Self::parse(&crate::output::read_input(p)?),
        }
    }

    pub fn model(&self) -> Result<&EconomicModelConfig, CliError> {
        self.model.as_ref().ok_or_else(|| CliError::Usage("config has no [model] section".into()))
    }
}
