//! Tuned ℓ0-constrained fits shared by the fidelity and deconfounding
//! stages.
//!
//! The DC iterations depend only on `(tau, gamma)`, so one DC solution is
//! computed per pair and then projected for every budget in the grid.
//! Refits are cached by support.

use std::cell::RefCell;
use std::collections::HashMap;

use nalgebra::DVector;

use crate::data::scale_columns;
use crate::error::{GampiError, Result};
use crate::glm::{fit_subset, nll, DesignProblem, Family, FitResult};
use crate::select::{select, Candidate, CandidateEvaluator, Scored, Selection, TuningPolicy};
use crate::tlp::{dc_fit, default_init, select_support, TlpConfig};

/// How many distinct fallback supports to keep per fit.
const MAX_ALTERNATIVES: usize = 8;

/// Regressor roles for one constrained regression. Coordinates in neither
/// list are penalized under the primary budget `k`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Blocks {
    pub free: Vec<usize>,
    /// Coordinates under the secondary budget `kprime`.
    pub secondary: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Alternative {
    pub candidate: Candidate,
    pub support: Vec<usize>,
    /// Coefficients on the caller's (unscaled) regressors.
    pub coef: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TunedFit {
    pub coef: DVector<f64>,
    pub support: Vec<usize>,
    pub candidate: Candidate,
    pub nll: f64,
    pub selection: Selection,
    /// Distinct supports in order of preference; the first is the chosen fit.
    pub alternatives: Vec<Alternative>,
}

/// The candidate grid: `tau` multipliers are scaled by `response_scale`,
/// and `gamma = c·√(log d / n) / tau` for each multiplier `c`.
pub fn candidate_grid(
    policy: &TuningPolicy,
    n: usize,
    d: usize,
    response_scale: f64,
    k_values: &[usize],
    kprime_values: &[usize],
) -> Vec<Candidate> {
    let anchor = ((d.max(2) as f64).ln() / n as f64).sqrt();
    let mut out = Vec::new();
    for &tm in &policy.tau_grid {
        let tau = tm * response_scale;
        for &c in &policy.gamma_grid {
            let gamma = c * anchor / tau;
            for &k in k_values {
                for &kprime in kprime_values {
                    out.push(Candidate { tau, gamma, k, kprime });
                }
            }
        }
    }
    out
}

struct GridEvaluator<'a> {
    problem: &'a DesignProblem,
    blocks: &'a Blocks,
    dispersion: f64,
    /// Split key 0 is the full data; fold splits are keyed by their first
    /// held-out row plus one.
    splits: RefCell<HashMap<usize, DesignProblem>>,
    dc: RefCell<HashMap<(usize, u64, u64), DVector<f64>>>,
    fits: RefCell<HashMap<(usize, Vec<usize>), FitResult>>,
}

impl<'a> GridEvaluator<'a> {
    fn config(&self, c: &Candidate) -> TlpConfig {
        let cfg = TlpConfig::new(c.tau, c.k, c.gamma).with_free_set(self.blocks.free.clone());
        if self.blocks.secondary.is_empty() {
            cfg
        } else {
            cfg.with_secondary(self.blocks.secondary.clone(), c.kprime)
        }
    }

    fn with_split<T>(&self, key: usize, rows: &[usize], f: impl FnOnce(&DesignProblem) -> T) -> T {
        if key == 0 {
            return f(self.problem);
        }
        let mut splits = self.splits.borrow_mut();
        let problem = splits
            .entry(key)
            .or_insert_with(|| self.problem.select_rows(rows));
        f(problem)
    }

    fn fit(&self, key: usize, rows: &[usize], c: &Candidate) -> Result<(Vec<usize>, FitResult)> {
        let cfg = self.config(c);
        let dc_key = (key, c.tau.to_bits(), c.gamma.to_bits());
        let cached = self.dc.borrow().get(&dc_key).cloned();
        let solution = match cached {
            Some(v) => v,
            None => {
                // The DC path does not depend on the budgets.
                let mut path_cfg = cfg.clone();
                path_cfg.k = 0;
                if let Some(g) = path_cfg.secondary.as_mut() {
                    g.k = 0;
                }
                let v = self.with_split(key, rows, |p| {
                    let init = default_init(p, &path_cfg)?;
                    dc_fit(p, &path_cfg, &init).map(|(v, _)| v)
                })?;
                self.dc.borrow_mut().insert(dc_key, v.clone());
                v
            }
        };
        cfg.validate(solution.len())?;
        let support = select_support(&solution, &cfg);
        let fit_key = (key, support.clone());
        if let Some(fit) = self.fits.borrow().get(&fit_key) {
            return Ok((support, fit.clone()));
        }
        let fit = self.with_split(key, rows, |p| fit_subset(p, &support))?;
        self.fits.borrow_mut().insert(fit_key, fit.clone());
        Ok((support, fit))
    }
}

impl CandidateEvaluator for GridEvaluator<'_> {
    fn n(&self) -> usize {
        self.problem.n()
    }

    fn d_candidates(&self) -> usize {
        self.problem.d()
    }

    fn evaluate(&self, c: &Candidate) -> Result<Scored> {
        let (support, fit) = self.fit(0, &[], c)?;
        Ok(Scored {
            nll: fit.nll / self.dispersion,
            k_nonzero: support.len() - self.blocks.free.len(),
        })
    }

    fn held_out_nll(&self, c: &Candidate, train: &[usize], test: &[usize]) -> Result<f64> {
        let key = test.first().map_or(usize::MAX, |t| t + 1);
        let (_, fit) = self.fit(key, train, c)?;
        nll(&self.problem.select_rows(test), &fit.coef)
    }
}

/// Selects `(tau, gamma, k, kprime)` by `policy` and returns the refitted
/// solution. Regressors are scaled to unit standard deviation internally;
/// returned coefficients refer to the columns of `problem` as given.
pub fn tune_and_fit(
    problem: &DesignProblem,
    blocks: &Blocks,
    k_values: &[usize],
    kprime_values: &[usize],
    response_scale: f64,
    policy: &TuningPolicy,
) -> Result<TunedFit> {
    policy.validate()?;
    let mut scaled = problem.clone();
    let scales = scale_columns(&mut scaled.z);

    let d = problem.d();
    let n_secondary = blocks.secondary.len();
    let n_primary = d - blocks.free.len() - n_secondary;
    let ks: Vec<usize> = dedup(k_values.iter().copied().filter(|&k| k <= n_primary));
    let kps: Vec<usize> = if n_secondary == 0 {
        vec![0]
    } else {
        dedup(kprime_values.iter().copied().filter(|&k| k <= n_secondary))
    };
    if ks.is_empty() || kps.is_empty() {
        return Err(GampiError::invalid("no budget in the grid fits the regressor blocks"));
    }
    let grid = candidate_grid(policy, problem.n(), d, response_scale, &ks, &kps);

    let evaluator = GridEvaluator {
        problem: &scaled,
        blocks,
        dispersion: dispersion(&scaled),
        splits: RefCell::new(HashMap::new()),
        dc: RefCell::new(HashMap::new()),
        fits: RefCell::new(HashMap::new()),
    };
    let selection = select(&evaluator, &grid, policy)?;

    let unscale = |coef: &DVector<f64>| {
        DVector::from_iterator(d, coef.iter().zip(&scales).map(|(b, s)| b / s))
    };
    let mut alternatives: Vec<Alternative> = Vec::new();
    let mut chosen = None;
    for &idx in &selection.ranking {
        if alternatives.len() == MAX_ALTERNATIVES {
            break;
        }
        let candidate = selection.rows[idx].candidate;
        let Ok((support, fit)) = evaluator.fit(0, &[], &candidate) else {
            continue;
        };
        if chosen.is_none() {
            chosen = Some(fit.nll);
        }
        if alternatives.iter().any(|a| a.support == support) {
            continue;
        }
        alternatives.push(Alternative {
            candidate,
            support,
            coef: unscale(&fit.coef),
        });
    }
    let nll = chosen.ok_or(GampiError::SelectionFailed)?;
    let first = alternatives[0].clone();
    Ok(TunedFit {
        coef: first.coef,
        support: first.support,
        candidate: first.candidate,
        nll,
        selection,
        alternatives,
    })
}

/// Pearson dispersion of the unpenalized fit on every regressor, used to
/// put the likelihood on its proper scale inside EBIC. Bernoulli responses
/// have no free dispersion; any failure falls back to 1.
pub fn dispersion(problem: &DesignProblem) -> f64 {
    let (n, d) = (problem.n(), problem.d());
    if problem.family == Family::Bernoulli || n <= d + 1 {
        return 1.0;
    }
    let all: Vec<usize> = (0..d).collect();
    let Ok(fit) = fit_subset(problem, &all) else {
        return 1.0;
    };
    let mean = problem.fitted_mean(&fit.coef);
    let pearson: f64 = problem
        .y
        .iter()
        .zip(mean.iter())
        .map(|(y, m)| (y - m) * (y - m) / problem.family.variance_at_mean(*m).max(1e-12))
        .sum();
    let phi = pearson / (n - d) as f64;
    if phi.is_finite() && phi > 0.0 {
        phi
    } else {
        1.0
    }
}

fn dedup(values: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut v: Vec<usize> = values.collect();
    v.sort_unstable();
    v.dedup();
    v
}
