//! Run configuration loaded from a JSON file. Every section has defaults so
//! a minimal config only needs `prices_csv`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use solid_core::backtest::{BacktestConfig, StrategySpec};
use solid_core::consensus::ConsistencySetKind;
use solid_core::coordinator::UpdateOrdering;
use solid_core::llm::LlmEndpointConfig;
use solid_core::{Error, Result};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub prices_csv: PathBuf,
    #[serde(default)]
    pub news_dir: Option<PathBuf>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Ask the LLM side for sparse (concentrated) allocations.
    #[serde(default)]
    pub sparse: bool,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<String>,
    #[serde(default)]
    pub coordinator: CoordinatorSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub llm: LlmSection,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_strategies() -> Vec<String> {
    vec!["OPT".into(), "LLM".into(), "LLM+OPT".into(), "AVG".into()]
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoordinatorSection {
    pub rho: f64,
    pub max_iterations: usize,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub set: ConsistencySetKind,
    pub ordering: UpdateOrdering,
}

impl Default for CoordinatorSection {
    fn default() -> Self {
        CoordinatorSection {
            rho: 1.0,
            max_iterations: 100,
            eps_abs: 1e-6,
            eps_rel: 1e-4,
            set: ConsistencySetKind::default(),
            ordering: UpdateOrdering::default(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub initial_capital: f64,
    /// Target expected return `p`; defaults to the mean of the estimated
    /// per-asset means when absent.
    pub target_return: Option<f64>,
    /// Covariance ridge; defaults to a trace-scaled value when absent.
    pub ridge: Option<f64>,
    /// Monthly returns required before the first rebalance.
    pub min_history: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            initial_capital: 10_000.0,
            target_return: None,
            ridge: None,
            min_history: 2,
        }
    }
}

/// Which LLM-side agent to run.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum LlmSection {
    /// Deterministic pseudo-LLM: seeded random confidence levels per period.
    #[default]
    Mock,
    /// Fixed per-period confidence levels from the config file. Entries past
    /// the end of the schedule reuse the last one.
    Scripted {
        levels: Vec<BTreeMap<String, String>>,
    },
    /// Live chat-completion endpoint; bearer token from `SOLID_LLM_API_KEY`.
    Endpoint { endpoint: LlmEndpointConfig },
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("cannot parse config {}: {e}", path.display())))
    }

    pub fn parsed_strategies(&self) -> Result<Vec<StrategySpec>> {
        self.strategies.iter().map(|s| StrategySpec::parse(s)).collect()
    }

    pub fn backtest_config(&self) -> BacktestConfig {
        BacktestConfig {
            initial_capital: self.model.initial_capital,
            ridge: self.model.ridge,
            target_return: self.model.target_return,
            min_history: self.model.min_history,
            rho: self.coordinator.rho,
            max_iterations: self.coordinator.max_iterations,
            eps_abs: self.coordinator.eps_abs,
            eps_rel: self.coordinator.eps_rel,
            set: self.coordinator.set.clone(),
            ordering: self.coordinator.ordering,
        }
    }
}
