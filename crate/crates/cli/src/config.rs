//! Run configuration. Files are JSON and follow `schema/config.schema.json`;
//! command-line flags override file fields.

use std::path::Path;

use gampi::sim::{GraphKind, Outcome, SimConfig};
use gampi::{Method, Stage, TuningPolicy};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed for simulation and replicate seeds.
    #[serde(default)]
    pub seed: u64,
    pub simulation: Option<SimSection>,
    #[serde(default)]
    pub fit: FitSection,
    #[serde(default)]
    pub bench: BenchSection,
}

/// Simulation settings. Coefficients left out take the preset values for
/// the chosen graph and outcome.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub p: usize,
    /// Defaults to `p`.
    pub q: Option<usize>,
    pub n: usize,
    pub graph: GraphKind,
    pub outcome: Outcome,
    pub alpha0: Option<f64>,
    pub beta1: Option<f64>,
    pub alpha1: Option<f64>,
    pub confounded: Option<bool>,
    pub confounder_corr: Option<f64>,
    pub poisson_rate: Option<f64>,
    pub noise_sd: Option<f64>,
}

impl SimSection {
    pub fn to_sim_config(&self, seed: u64) -> CliResult<SimConfig> {
        let mut cfg = SimConfig::preset(self.graph, self.outcome, self.p, self.n, seed);
        cfg.q = self.q.unwrap_or(self.p);
        macro_rules! take {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { cfg.$f = v; })* };
        }
        take!(alpha0, beta1, alpha1, confounded, confounder_corr, poisson_rate, noise_sd);
        cfg.validate().map_err(|e| CliError::Config(format!("simulation: {e}")))?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSection {
    pub method: Method,
    pub stage: Stage,
    pub tuning: TuningPolicy,
    pub max_peel_retries: usize,
}

impl Default for FitSection {
    fn default() -> Self {
        Self {
            method: Method::Dri,
            stage: Stage::Full,
            tuning: TuningPolicy::default(),
            max_peel_retries: 5,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub reps: usize,
    pub methods: Vec<Method>,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            reps: 10,
            methods: vec![Method::Dri],
        }
    }
}

/// Reads a config file. Parse errors name the line, column and field.
pub fn load(path: &Path) -> CliResult<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let cfg: RunConfig =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    cfg.fit
        .tuning
        .validate()
        .map_err(|e| CliError::Config(format!("{}: fit.tuning: {e}", path.display())))?;
    if cfg.fit.method == Method::Truth {
        return Err(CliError::Config(format!("{}: fit.method: 'truth' is not an estimation method", path.display())));
    }
    Ok(cfg)
}

pub fn load_or_default(path: Option<&Path>) -> CliResult<RunConfig> {
    path.map_or_else(|| Ok(RunConfig::default()), load)
}
