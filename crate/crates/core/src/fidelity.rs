//! Nodewise ℓ0-constrained GLM regressions of every primary variable on all
//! instruments. The resulting q×p matrix `V` carries the support pattern
//! that peeling reads.

use nalgebra::{DMatrix, DVector};
use serde_json::json;

use crate::data::{column_sd, with_intercept, Dataset};
use crate::error::{GampiError, Result};
use crate::glm::{DesignProblem, Family};
use crate::select::{Candidate, Selection, TuningPolicy};
use crate::tuned::{tune_and_fit, Alternative, Blocks};

#[derive(Clone, Debug, PartialEq)]
pub struct FidelityColumn {
    pub coef: DVector<f64>,
    pub support: Vec<usize>,
    pub candidate: Candidate,
    pub selection: Selection,
    /// Fallback fits in order of preference, used when peeling stalls.
    pub alternatives: Vec<Alternative>,
    /// Index into `alternatives` of the fit currently in `coef`.
    pub current: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FidelityMatrix {
    /// q×p; column j holds the instrument coefficients for primary j.
    pub v: DMatrix<f64>,
    pub columns: Vec<FidelityColumn>,
    pub warnings: Vec<String>,
}

impl FidelityMatrix {
    pub fn supports(&self) -> Vec<Vec<usize>> {
        self.columns.iter().map(|c| c.support.clone()).collect()
    }

    /// Swaps column `j` to its next alternative fit. Returns false when none
    /// remain.
    pub fn advance(&mut self, j: usize) -> bool {
        let col = &mut self.columns[j];
        if col.current + 1 >= col.alternatives.len() {
            return false;
        }
        col.current += 1;
        let alt = &col.alternatives[col.current];
        col.coef = alt.coef.clone();
        col.support = alt.support.clone();
        col.candidate = alt.candidate;
        self.v.set_column(j, &col.coef);
        true
    }

    /// `{"v": [[...], ...], "supports": {...}}` with rows as instruments and
    /// 1-based indices in the support map.
    pub fn to_json(&self) -> serde_json::Value {
        let rows: Vec<Vec<f64>> = self
            .v
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect();
        let supports: serde_json::Map<String, serde_json::Value> = self
            .columns
            .iter()
            .enumerate()
            .map(|(j, c)| {
                let s: Vec<usize> = c.support.iter().map(|l| l + 1).collect();
                ((j + 1).to_string(), json!(s))
            })
            .collect();
        let tuning: Vec<serde_json::Value> = self
            .columns
            .iter()
            .map(|c| json!({"tau": c.candidate.tau, "gamma": c.candidate.gamma, "k": c.candidate.k}))
            .collect();
        json!({"v": rows, "supports": supports, "tuning": tuning})
    }
}

fn response_scale(family: Family, y: &DVector<f64>) -> f64 {
    match family {
        Family::Gaussian => column_sd(y.as_slice()).unwrap_or(1.0),
        _ => 1.0,
    }
}

/// Fits one column of `V`.
pub fn fit_column(dataset: &Dataset, j: usize, policy: &TuningPolicy) -> Result<FidelityColumn> {
    let y = dataset.response(j);
    let family = dataset.families[j];
    let scale = response_scale(family, &y);
    let q = dataset.q();
    let problem = DesignProblem::new(with_intercept(dataset.x.clone()), y, family)?;
    let ks: Vec<usize> = policy.k_grid.iter().copied().filter(|&k| k >= 1).collect();
    let blocks = Blocks {
        free: vec![q],
        secondary: Vec::new(),
    };
    let fit = tune_and_fit(&problem, &blocks, &ks, &[0], scale, policy).map_err(|e| GampiError::NodeFailed {
        node: j,
        reason: e.to_string(),
    })?;
    let strip = |coef: &DVector<f64>, support: &[usize]| -> (DVector<f64>, Vec<usize>) {
        (coef.rows(0, q).into_owned(), support.iter().copied().filter(|&l| l < q).collect())
    };
    let (coef, support) = strip(&fit.coef, &fit.support);
    let alternatives = fit
        .alternatives
        .iter()
        .map(|a| {
            let (coef, support) = strip(&a.coef, &a.support);
            Alternative {
                candidate: a.candidate,
                support,
                coef,
            }
        })
        .collect();
    Ok(FidelityColumn {
        coef,
        support,
        candidate: fit.candidate,
        selection: fit.selection,
        alternatives,
        current: 0,
    })
}

/// Fits every column of the fidelity matrix. Columns are independent and
/// fitted in parallel when the `parallel` feature is on; the result does
/// not depend on scheduling.
pub fn fit_fidelity(dataset: &Dataset, policy: &TuningPolicy) -> Result<FidelityMatrix> {
    policy.validate()?;
    let p = dataset.p();
    #[cfg(feature = "parallel")]
    let results: Vec<Result<FidelityColumn>> = {
        use rayon::prelude::*;
        (0..p).into_par_iter().map(|j| fit_column(dataset, j, policy)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<FidelityColumn>> = (0..p).map(|j| fit_column(dataset, j, policy)).collect();

    let columns = results.into_iter().collect::<Result<Vec<_>>>()?;
    let mut v = DMatrix::zeros(dataset.q(), p);
    let mut warnings = Vec::new();
    for (j, col) in columns.iter().enumerate() {
        if col.support.is_empty() {
            return Err(GampiError::NodeFailed {
                node: j,
                reason: "no instrument selected".into(),
            });
        }
        v.set_column(j, &col.coef);
        if dataset.families[j] == Family::Gaussian && col.support.len() >= 2 {
            warnings.push(format!(
                "y{} is Gaussian with {} instruments; the majority rule for valid instruments cannot be checked from data",
                j + 1,
                col.support.len()
            ));
        }
    }
    Ok(FidelityMatrix { v, columns, warnings })
}
