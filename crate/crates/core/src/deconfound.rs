//! Top-down estimation of parent–child effects given a super-graph.
//!
//! Roots are fitted on their instruments alone. A non-root node is fitted
//! on its instruments (unpenalized), its ancestors (budget `K`) and, for
//! residual inclusion, the ancestors' residuals (budget `K'`). Predictor
//! substitution replaces ancestors by their fitted means instead.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::data::{column_sd, with_intercept, Dataset};
use crate::error::{GampiError, Result};
use crate::glm::{fit_subset, DesignProblem, Family};
use crate::peel::SuperGraph;
use crate::select::{Candidate, TuningPolicy};
use crate::tuned::{tune_and_fit, Blocks};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "dri")]
    Dri,
    #[serde(rename = "dps")]
    Dps,
    #[serde(rename = "none")]
    NoDeconf,
    /// Marks a ground-truth graph written in the estimate format.
    #[serde(rename = "truth")]
    Truth,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Dri => "dri",
            Method::Dps => "dps",
            Method::NoDeconf => "none",
            Method::Truth => "truth",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = GampiError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dri" => Ok(Method::Dri),
            "dps" => Ok(Method::Dps),
            "none" | "nodeconf" | "no-deconf" => Ok(Method::NoDeconf),
            "truth" => Ok(Method::Truth),
            other => Err(GampiError::invalid(format!("unknown method '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DagEstimate {
    pub method: Method,
    /// p×p; `u[(k, j)]` is the effect of `k` on `j`.
    pub u: DMatrix<f64>,
    /// q×p instrument effects.
    pub w: DMatrix<f64>,
    /// p×p residual loadings; zero unless the method is residual inclusion.
    pub alpha: DMatrix<f64>,
    /// n×p; empty when read back from JSON.
    pub residuals: DMatrix<f64>,
    pub failures: Vec<GampiError>,
    pub tuning: Vec<Option<Candidate>>,
}

impl DagEstimate {
    pub fn empty(method: Method, p: usize, q: usize) -> Self {
        Self {
            method,
            u: DMatrix::zeros(p, p),
            w: DMatrix::zeros(q, p),
            alpha: DMatrix::zeros(p, p),
            residuals: DMatrix::zeros(0, p),
            failures: Vec::new(),
            tuning: vec![None; p],
        }
    }

    pub fn p(&self) -> usize {
        self.u.ncols()
    }

    pub fn q(&self) -> usize {
        self.w.nrows()
    }

    /// Sorted pairs `(k, j)` with a nonzero effect.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        nonzeros(&self.u).into_iter().map(|(k, j, _)| (k, j)).collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let triples = |m: &DMatrix<f64>| -> Vec<serde_json::Value> {
            nonzeros(m)
                .into_iter()
                .map(|(a, b, v)| json!([a + 1, b + 1, v]))
                .collect()
        };
        json!({
            "method": self.method,
            "p": self.p(),
            "q": self.q(),
            "edges": triples(&self.u),
            "interventions": triples(&self.w),
            "alpha": triples(&self.alpha),
        })
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let bad = |what: &str| GampiError::invalid(format!("estimate JSON: {what}"));
        let method: Method = serde_json::from_value(value["method"].clone()).map_err(|_| bad("unknown method"))?;
        let read = |key: &str| -> Result<Vec<(usize, usize, f64)>> {
            let Some(items) = value.get(key) else {
                return Ok(Vec::new());
            };
            let items = items.as_array().ok_or_else(|| bad(key))?;
            items
                .iter()
                .map(|t| {
                    let t = t.as_array().filter(|t| t.len() == 3).ok_or_else(|| bad(key))?;
                    let a = t[0].as_u64().filter(|&a| a >= 1).ok_or_else(|| bad(key))? as usize;
                    let b = t[1].as_u64().filter(|&b| b >= 1).ok_or_else(|| bad(key))? as usize;
                    let v = t[2].as_f64().ok_or_else(|| bad(key))?;
                    Ok((a - 1, b - 1, v))
                })
                .collect()
        };
        let edges = read("edges")?;
        let interventions = read("interventions")?;
        let alpha = read("alpha")?;
        let max_node = edges
            .iter()
            .chain(&alpha)
            .flat_map(|&(a, b, _)| [a + 1, b + 1])
            .chain(interventions.iter().map(|&(_, b, _)| b + 1))
            .max()
            .unwrap_or(0);
        let max_iv = interventions.iter().map(|&(l, _, _)| l + 1).max().unwrap_or(0);
        let p = value["p"].as_u64().map_or(max_node, |v| v as usize);
        let q = value["q"].as_u64().map_or(max_iv, |v| v as usize);
        if max_node > p || max_iv > q {
            return Err(bad("index exceeds the declared dimensions"));
        }
        let mut est = DagEstimate::empty(method, p, q);
        for (k, j, v) in edges {
            if k == j {
                return Err(bad("self-loop"));
            }
            est.u[(k, j)] = v;
        }
        for (l, j, v) in interventions {
            est.w[(l, j)] = v;
        }
        for (k, j, v) in alpha {
            est.alpha[(k, j)] = v;
        }
        Ok(est)
    }
}

fn nonzeros(m: &DMatrix<f64>) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for a in 0..m.nrows() {
        for b in 0..m.ncols() {
            if m[(a, b)] != 0.0 {
                out.push((a, b, m[(a, b)]));
            }
        }
    }
    out
}

/// Output of a single node's regression.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeFit {
    /// `(ancestor, effect)` pairs with nonzero effect.
    pub parents: Vec<(usize, f64)>,
    /// `(instrument, effect)` pairs.
    pub interventions: Vec<(usize, f64)>,
    pub alpha: Vec<(usize, f64)>,
    pub residual: DVector<f64>,
    /// Fitted mean used in place of the node under predictor substitution.
    pub predicted: DVector<f64>,
    pub candidate: Option<Candidate>,
}

fn node_error(node: usize, e: GampiError) -> GampiError {
    match e {
        e @ (GampiError::NodeFailed { .. } | GampiError::AncestorFailed { .. }) => e,
        e => GampiError::NodeFailed {
            node,
            reason: e.to_string(),
        },
    }
}

/// Unpenalized GLM fit of `y_k` on its instruments.
pub fn fit_root(dataset: &Dataset, k: usize, instruments: &[usize]) -> Result<NodeFit> {
    if instruments.is_empty() {
        return Err(GampiError::NodeFailed {
            node: k,
            reason: "no instruments assigned".into(),
        });
    }
    let family = dataset.families[k];
    let z = with_intercept(dataset.x.select_columns(instruments));
    let problem = DesignProblem::new(z, dataset.response(k), family).map_err(|e| node_error(k, e))?;
    let all: Vec<usize> = (0..=instruments.len()).collect();
    let fit = fit_subset(&problem, &all).map_err(|e| node_error(k, e))?;
    let mean = problem.fitted_mean(&fit.coef);
    Ok(NodeFit {
        parents: Vec::new(),
        interventions: instruments.iter().copied().zip(fit.coef.iter().copied()).collect(),
        alpha: Vec::new(),
        residual: problem.residuals(&fit.coef),
        predicted: mean,
        candidate: None,
    })
}

/// Fits a node given the residuals and predictions of its ancestors, which
/// must already be filled in. With no ancestors this is [`fit_root`].
#[allow(clippy::too_many_arguments)]
pub fn fit_child(
    dataset: &Dataset,
    j: usize,
    ancestors: &[usize],
    instruments: &[usize],
    residuals: &DMatrix<f64>,
    predicted: &DMatrix<f64>,
    method: Method,
    policy: &TuningPolicy,
) -> Result<NodeFit> {
    if ancestors.is_empty() {
        return fit_root(dataset, j, instruments);
    }
    if instruments.is_empty() {
        return Err(GampiError::NodeFailed {
            node: j,
            reason: "no instruments assigned".into(),
        });
    }
    let n = dataset.n();
    let (m, a) = (instruments.len(), ancestors.len());
    let with_residuals = method == Method::Dri;
    let ancestor_block = match method {
        Method::Dps => predicted.select_columns(ancestors),
        _ => dataset.y.select_columns(ancestors),
    };
    let width = m + a + if with_residuals { a } else { 0 };
    let mut z = DMatrix::zeros(n, width);
    z.columns_mut(0, m).copy_from(&dataset.x.select_columns(instruments));
    z.columns_mut(m, a).copy_from(&ancestor_block);
    if with_residuals {
        z.columns_mut(m + a, a).copy_from(&residuals.select_columns(ancestors));
    }

    let family = dataset.families[j];
    let y = dataset.response(j);
    let scale = match family {
        Family::Gaussian => column_sd(y.as_slice()).unwrap_or(1.0),
        _ => 1.0,
    };
    let problem = DesignProblem::new(with_intercept(z), y, family).map_err(|e| node_error(j, e))?;
    let blocks = Blocks {
        free: (0..m).chain([width]).collect(),
        secondary: if with_residuals { (m + a..width).collect() } else { Vec::new() },
    };
    let mut ks: Vec<usize> = policy.k_grid.clone();
    ks.push(0);
    let fit = tune_and_fit(&problem, &blocks, &ks, &ks, scale, policy).map_err(|e| node_error(j, e))?;

    let coef = &fit.coef;
    let pick = |offset: usize, ids: &[usize]| -> Vec<(usize, f64)> {
        ids.iter()
            .enumerate()
            .map(|(i, &id)| (id, coef[offset + i]))
            .filter(|&(_, v)| v != 0.0)
            .collect()
    };
    let interventions: Vec<(usize, f64)> = instruments.iter().copied().zip(coef.iter().copied()).collect();
    let parents = pick(m, ancestors);
    let alpha = if with_residuals { pick(m + a, ancestors) } else { Vec::new() };
    let residual = problem.residuals(coef);
    let predicted = if method == Method::Dps {
        // Substituted predictions use the observed parents.
        let mut eta = dataset.x.select_columns(instruments) * coef.rows(0, m);
        eta.add_scalar_mut(coef[width]);
        for &(k, v) in &parents {
            eta.axpy(v, &dataset.y.column(k), 1.0);
        }
        eta.map(|t| family.mean(t))
    } else {
        problem.fitted_mean(coef)
    };
    Ok(NodeFit {
        parents,
        interventions,
        alpha,
        residual,
        predicted,
        candidate: Some(fit.candidate),
    })
}

/// Processes nodes level by level in the super-graph's depth order. A node
/// whose ancestor failed is skipped with [`GampiError::AncestorFailed`].
pub fn run(dataset: &Dataset, sg: &SuperGraph, method: Method, policy: &TuningPolicy) -> Result<DagEstimate> {
    if method == Method::Truth {
        return Err(GampiError::invalid("'truth' is not an estimation method"));
    }
    let (n, p, q) = (dataset.n(), dataset.p(), dataset.q());
    if sg.p != p {
        return Err(GampiError::invalid(format!("super-graph has {} nodes, data has {p}", sg.p)));
    }
    if sg.instruments.iter().flatten().any(|&l| l >= q) {
        return Err(GampiError::invalid("super-graph names an instrument outside the data"));
    }
    policy.validate()?;

    let mut est = DagEstimate::empty(method, p, q);
    est.residuals = DMatrix::zeros(n, p);
    let mut predicted = DMatrix::zeros(n, p);
    let mut failed = vec![false; p];
    let depth = sg.depths();
    let max_depth = depth.iter().copied().max().unwrap_or(0);

    for level in 0..=max_depth {
        let nodes: Vec<usize> = sg.order.iter().copied().filter(|&j| depth[j] == level).collect();
        let fit_node = |j: usize| -> Result<NodeFit> {
            if let Some(&k) = sg.ancestors[j].iter().find(|&&k| failed[k]) {
                return Err(GampiError::AncestorFailed { node: j, ancestor: k });
            }
            fit_child(
                dataset,
                j,
                &sg.ancestors[j],
                &sg.instruments[j],
                &est.residuals,
                &predicted,
                method,
                policy,
            )
        };
        #[cfg(feature = "parallel")]
        let results: Vec<Result<NodeFit>> = {
            use rayon::prelude::*;
            nodes.par_iter().map(|&j| fit_node(j)).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let results: Vec<Result<NodeFit>> = nodes.iter().map(|&j| fit_node(j)).collect();

        for (&j, result) in nodes.iter().zip(results) {
            match result {
                Ok(fit) => {
                    for &(k, v) in &fit.parents {
                        est.u[(k, j)] = v;
                    }
                    for &(l, v) in &fit.interventions {
                        est.w[(l, j)] = v;
                    }
                    for &(k, v) in &fit.alpha {
                        est.alpha[(k, j)] = v;
                    }
                    est.residuals.set_column(j, &fit.residual);
                    predicted.set_column(j, &fit.predicted);
                    est.tuning[j] = fit.candidate;
                }
                Err(e) => {
                    failed[j] = true;
                    est.failures.push(e);
                }
            }
        }
    }
    Ok(est)
}

pub fn run_dri(dataset: &Dataset, sg: &SuperGraph, policy: &TuningPolicy) -> Result<DagEstimate> {
    run(dataset, sg, Method::Dri, policy)
}

pub fn run_dps(dataset: &Dataset, sg: &SuperGraph, policy: &TuningPolicy) -> Result<DagEstimate> {
    run(dataset, sg, Method::Dps, policy)
}

pub fn run_no_deconf(dataset: &Dataset, sg: &SuperGraph, policy: &TuningPolicy) -> Result<DagEstimate> {
    run(dataset, sg, Method::NoDeconf, policy)
}
