//! Hyperparameter selection over `(tau, gamma, K, K')` grids by extended
//! BIC or by K-fold cross-validation with the one-standard-error rule.

use std::cmp::Ordering;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GampiError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TuningMethod {
    Ebic,
    Cv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuningPolicy {
    pub method: TuningMethod,
    pub ebic_gamma: f64,
    pub folds: usize,
    /// Multipliers applied to the response scale (1 for Bernoulli and
    /// Poisson, the sample sd for Gaussian responses).
    pub tau_grid: Vec<f64>,
    /// Multipliers `c` giving `gamma = c·√(log d / n) / tau`.
    pub gamma_grid: Vec<f64>,
    pub k_grid: Vec<usize>,
    pub seed: u64,
}

impl Default for TuningPolicy {
    fn default() -> Self {
        Self {
            method: TuningMethod::Ebic,
            ebic_gamma: 0.5,
            folds: 5,
            tau_grid: geometric_grid(0.01, 1.0, 8),
            gamma_grid: vec![0.01, 0.05, 0.1, 0.5],
            k_grid: (1..=20).collect(),
            seed: 0,
        }
    }
}

impl TuningPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.tau_grid.is_empty() || self.gamma_grid.is_empty() || self.k_grid.is_empty() {
            return Err(GampiError::invalid("tuning grids must be non-empty"));
        }
        if self.tau_grid.iter().chain(&self.gamma_grid).any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(GampiError::invalid("tau and gamma grid values must be positive"));
        }
        if !(0.0..=1.0).contains(&self.ebic_gamma) {
            return Err(GampiError::invalid("ebic_gamma must lie in [0, 1]"));
        }
        if self.folds < 2 {
            return Err(GampiError::invalid("cross-validation needs at least two folds"));
        }
        Ok(())
    }
}

/// `count` points from `lo` to `hi` inclusive, evenly spaced in log scale.
pub fn geometric_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![hi],
        _ => {
            let ratio = (hi / lo).ln() / (count - 1) as f64;
            (0..count).map(|i| lo * (ratio * i as f64).exp()).collect()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub tau: f64,
    pub gamma: f64,
    pub k: usize,
    pub kprime: usize,
}

impl Candidate {
    fn parsimony(&self, other: &Candidate) -> Ordering {
        self.k
            .cmp(&other.k)
            .then(self.kprime.cmp(&other.kprime))
            .then(other.tau.total_cmp(&self.tau))
            .then(self.gamma.total_cmp(&other.gamma))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scored {
    pub nll: f64,
    pub k_nonzero: usize,
}

/// Fits candidates on the full data or on a training split.
pub trait CandidateEvaluator {
    fn n(&self) -> usize;
    /// Number of regressors the EBIC dimension term counts.
    fn d_candidates(&self) -> usize;
    fn evaluate(&self, candidate: &Candidate) -> Result<Scored>;
    fn held_out_nll(&self, candidate: &Candidate, train: &[usize], test: &[usize]) -> Result<f64>;
}

/// `2n·nll + k·(log n + 2γ log d)`.
pub fn ebic_score(nll_mean: f64, k_nonzero: usize, n: usize, d_candidates: usize, gamma: f64) -> f64 {
    let n_f = n as f64;
    let dim_term = if d_candidates > 1 {
        2.0 * gamma * (d_candidates as f64).ln()
    } else {
        0.0
    };
    2.0 * n_f * nll_mean + k_nonzero as f64 * (n_f.ln() + dim_term)
}

/// Fold label for each of `n` rows, a deterministic function of
/// `(n, folds, seed)`.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut labels = vec![0; n];
    for (pos, &row) in order.iter().enumerate() {
        labels[row] = pos % folds;
    }
    labels
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScoreRow {
    pub candidate: Candidate,
    /// EBIC value, or mean held-out nll under CV. `None` if the fit failed.
    pub score: Option<f64>,
    /// Standard error of the fold losses (CV only).
    pub se: Option<f64>,
    pub k_nonzero: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Selection {
    pub method: TuningMethod,
    pub rows: Vec<ScoreRow>,
    /// Successful rows from most to least preferred; `ranking[0]` is chosen.
    pub ranking: Vec<usize>,
}

impl Selection {
    pub fn chosen(&self) -> &Candidate {
        &self.rows[self.ranking[0]].candidate
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("tau,gamma,k,kprime,score,se\n");
        let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x}"));
        for row in &self.rows {
            let c = &row.candidate;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                c.tau,
                c.gamma,
                c.k,
                c.kprime,
                fmt(row.score),
                fmt(row.se)
            );
        }
        out
    }
}

pub fn select(
    evaluator: &dyn CandidateEvaluator,
    candidates: &[Candidate],
    policy: &TuningPolicy,
) -> Result<Selection> {
    if candidates.is_empty() {
        return Err(GampiError::invalid("candidate grid is empty"));
    }
    match policy.method {
        TuningMethod::Ebic => select_ebic(evaluator, candidates, policy.ebic_gamma),
        TuningMethod::Cv => select_cv(evaluator, candidates, policy.folds, policy.seed),
    }
}

fn select_ebic(
    evaluator: &dyn CandidateEvaluator,
    candidates: &[Candidate],
    gamma: f64,
) -> Result<Selection> {
    let (n, d) = (evaluator.n(), evaluator.d_candidates());
    let rows: Vec<ScoreRow> = candidates
        .iter()
        .map(|c| match evaluator.evaluate(c) {
            Ok(s) => ScoreRow {
                candidate: *c,
                score: Some(ebic_score(s.nll, s.k_nonzero, n, d, gamma)),
                se: None,
                k_nonzero: Some(s.k_nonzero),
            },
            Err(_) => ScoreRow {
                candidate: *c,
                score: None,
                se: None,
                k_nonzero: None,
            },
        })
        .collect();
    let mut ranking: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].score.is_some()).collect();
    if ranking.is_empty() {
        return Err(GampiError::SelectionFailed);
    }
    ranking.sort_by(|&a, &b| {
        let (ra, rb) = (&rows[a], &rows[b]);
        ra.score
            .unwrap()
            .total_cmp(&rb.score.unwrap())
            .then(ra.candidate.parsimony(&rb.candidate))
            .then(a.cmp(&b))
    });
    Ok(Selection {
        method: TuningMethod::Ebic,
        rows,
        ranking,
    })
}

fn select_cv(
    evaluator: &dyn CandidateEvaluator,
    candidates: &[Candidate],
    folds: usize,
    seed: u64,
) -> Result<Selection> {
    let n = evaluator.n();
    if n < folds {
        return Err(GampiError::invalid("fewer observations than folds"));
    }
    let labels = fold_assignment(n, folds, seed);
    let splits: Vec<(Vec<usize>, Vec<usize>)> = (0..folds)
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| labels[i] == f);
            (train, test)
        })
        .collect();

    let rows: Vec<ScoreRow> = candidates
        .iter()
        .map(|c| {
            let losses: Result<Vec<f64>> = splits
                .iter()
                .map(|(train, test)| evaluator.held_out_nll(c, train, test))
                .collect();
            match losses {
                Ok(l) if l.iter().all(|v| v.is_finite()) => {
                    let m = l.len() as f64;
                    let mean = l.iter().sum::<f64>() / m;
                    let var = l.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1.0);
                    ScoreRow {
                        candidate: *c,
                        score: Some(mean),
                        se: Some((var / m).sqrt()),
                        k_nonzero: None,
                    }
                }
                _ => ScoreRow {
                    candidate: *c,
                    score: None,
                    se: None,
                    k_nonzero: None,
                },
            }
        })
        .collect();

    let ok: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].score.is_some()).collect();
    let best = *ok
        .iter()
        .min_by(|&&a, &&b| rows[a].score.unwrap().total_cmp(&rows[b].score.unwrap()).then(a.cmp(&b)))
        .ok_or(GampiError::SelectionFailed)?;
    let threshold = rows[best].score.unwrap() + rows[best].se.unwrap();
    let (mut eligible, mut rest): (Vec<usize>, Vec<usize>) =
        ok.into_iter().partition(|&i| rows[i].score.unwrap() <= threshold);
    eligible.sort_by(|&a, &b| {
        rows[a]
            .candidate
            .parsimony(&rows[b].candidate)
            .then(rows[a].score.unwrap().total_cmp(&rows[b].score.unwrap()))
            .then(a.cmp(&b))
    });
    rest.sort_by(|&a, &b| rows[a].score.unwrap().total_cmp(&rows[b].score.unwrap()).then(a.cmp(&b)));
    eligible.extend(rest);
    Ok(Selection {
        method: TuningMethod::Cv,
        rows,
        ranking: eligible,
    })
}
