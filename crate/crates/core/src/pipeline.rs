//! Fidelity fit, peeling and deconfounding composed end to end.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::deconfound::{run, DagEstimate, Method};
use crate::error::{GampiError, Result};
use crate::fidelity::{fit_fidelity, FidelityMatrix};
use crate::peel::{peel, SuperGraph};
use crate::select::TuningPolicy;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Fidelity,
    Peel,
    #[default]
    Full,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub method: Method,
    pub tuning: TuningPolicy,
    pub stage: Stage,
    /// Rounds of swapping stuck columns to their next candidate fit.
    pub max_peel_retries: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            method: Method::Dri,
            tuning: TuningPolicy::default(),
            stage: Stage::Full,
            max_peel_retries: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineOutput {
    pub fidelity: FidelityMatrix,
    pub supergraph: Option<SuperGraph>,
    pub estimate: Option<DagEstimate>,
    pub warnings: Vec<String>,
    pub peel_retries: usize,
}

/// Peels `fm`, and when peeling stalls moves every stuck column to its next
/// alternative fit and tries again.
pub fn peel_with_retries(fm: &mut FidelityMatrix, max_retries: usize) -> Result<(SuperGraph, usize)> {
    let mut retries = 0;
    loop {
        match peel(&fm.v) {
            Err(GampiError::PeelStalled { columns, rows }) => {
                if retries == max_retries {
                    return Err(GampiError::PeelStalled { columns, rows });
                }
                let mut moved = false;
                for &j in &columns {
                    moved |= fm.advance(j);
                }
                if !moved {
                    return Err(GampiError::PeelStalled { columns, rows });
                }
                retries += 1;
            }
            other => return other.map(|sg| (sg, retries)),
        }
    }
}

pub fn run_pipeline(dataset: &Dataset, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    let mut warnings = Vec::new();
    if dataset.p() > dataset.q() {
        warnings.push(format!(
            "p = {} exceeds q = {}; recovery guarantees assume at least as many instruments as primaries",
            dataset.p(),
            dataset.q()
        ));
    }
    let mut fidelity = fit_fidelity(dataset, &cfg.tuning)?;
    warnings.extend(fidelity.warnings.iter().cloned());
    let mut out = PipelineOutput {
        fidelity: fidelity.clone(),
        supergraph: None,
        estimate: None,
        warnings,
        peel_retries: 0,
    };
    if cfg.stage == Stage::Fidelity {
        return Ok(out);
    }
    let (sg, retries) = peel_with_retries(&mut fidelity, cfg.max_peel_retries)?;
    out.fidelity = fidelity;
    out.peel_retries = retries;
    if cfg.stage == Stage::Full {
        out.estimate = Some(run(dataset, &sg, cfg.method, &cfg.tuning)?);
    }
    out.supergraph = Some(sg);
    Ok(out)
}
