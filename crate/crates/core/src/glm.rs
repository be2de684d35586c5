//! Canonical-link GLM families and the two fitters every other stage builds
//! on: a weighted-lasso IRLS solver and an unpenalized fit restricted to a
//! support.
//!
//! No intercept is ever added. Callers that want one append a constant
//! column to the design.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{GampiError, Result};

/// Linear predictors are clamped to this range inside IRLS for the
/// Bernoulli and Poisson families, so separated data cannot overflow the
/// working weights.
pub const ETA_CLAMP: f64 = 30.0;

/// Lower bound on IRLS working weights.
pub const WEIGHT_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gaussian,
    Bernoulli,
    Poisson,
}

fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

impl Family {
    /// Cumulant function `A(θ)`.
    pub fn cumulant(self, theta: f64) -> f64 {
        match self {
            Family::Gaussian => 0.5 * theta * theta,
            Family::Bernoulli => softplus(theta),
            Family::Poisson => theta.exp(),
        }
    }

    /// Inverse link `A'(θ)`, the conditional mean.
    pub fn mean(self, theta: f64) -> f64 {
        match self {
            Family::Gaussian => theta,
            Family::Bernoulli => sigmoid(theta),
            Family::Poisson => theta.exp(),
        }
    }

    /// Curvature `A''(θ)`, the variance function on the natural scale.
    /// Variance function expressed in terms of the mean.
    pub fn variance_at_mean(self, mu: f64) -> f64 {
        match self {
            Family::Gaussian => 1.0,
            Family::Bernoulli => mu * (1.0 - mu),
            Family::Poisson => mu,
        }
    }

    pub fn variance(self, theta: f64) -> f64 {
        match self {
            Family::Gaussian => 1.0,
            Family::Bernoulli => {
                let s = sigmoid(theta);
                s * (1.0 - s)
            }
            Family::Poisson => theta.exp(),
        }
    }

    pub fn in_support(self, y: f64) -> bool {
        match self {
            Family::Gaussian => y.is_finite(),
            Family::Bernoulli => y == 0.0 || y == 1.0,
            Family::Poisson => y >= 0.0 && y.fract() == 0.0 && y.is_finite(),
        }
    }

    fn clamp_eta(self, eta: f64) -> f64 {
        match self {
            Family::Gaussian => eta,
            _ => eta.clamp(-ETA_CLAMP, ETA_CLAMP),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::Bernoulli => "bernoulli",
            Family::Poisson => "poisson",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = GampiError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gaussian" | "normal" | "g" => Ok(Family::Gaussian),
            "bernoulli" | "binary" | "logistic" | "b" => Ok(Family::Bernoulli),
            "poisson" | "count" | "p" => Ok(Family::Poisson),
            other => Err(GampiError::invalid(format!("unknown family '{other}'"))),
        }
    }
}

/// A single GLM regression: response `y` on the columns of `z`.
#[derive(Clone, Debug)]
pub struct DesignProblem {
    pub z: DMatrix<f64>,
    pub y: DVector<f64>,
    pub family: Family,
    pub offset: DVector<f64>,
}

impl DesignProblem {
    pub fn new(z: DMatrix<f64>, y: DVector<f64>, family: Family) -> Result<Self> {
        let n = z.nrows();
        if n == 0 || z.ncols() == 0 {
            return Err(GampiError::invalid("design must have at least one row and column"));
        }
        if y.len() != n {
            return Err(GampiError::invalid(format!(
                "response length {} does not match {} design rows",
                y.len(),
                n
            )));
        }
        if let Some(bad) = y.iter().find(|v| !family.in_support(**v)) {
            return Err(GampiError::invalid(format!(
                "response value {bad} outside the {family} support"
            )));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(GampiError::invalid("design contains non-finite values"));
        }
        Ok(Self {
            z,
            y,
            family,
            offset: DVector::zeros(n),
        })
    }

    pub fn with_offset(mut self, offset: DVector<f64>) -> Result<Self> {
        if offset.len() != self.n() {
            return Err(GampiError::invalid("offset length does not match rows"));
        }
        self.offset = offset;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.z.nrows()
    }

    pub fn d(&self) -> usize {
        self.z.ncols()
    }

    pub fn linear_predictor(&self, coef: &DVector<f64>) -> DVector<f64> {
        &self.z * coef + &self.offset
    }

    /// Fitted means `φ(Zβ + offset)`.
    pub fn fitted_mean(&self, coef: &DVector<f64>) -> DVector<f64> {
        let family = self.family;
        self.linear_predictor(coef).map(|t| family.mean(t))
    }

    /// Raw-scale residuals `y − φ(Zβ + offset)`.
    pub fn residuals(&self, coef: &DVector<f64>) -> DVector<f64> {
        &self.y - self.fitted_mean(coef)
    }

    /// The same regression restricted to the given observation rows.
    pub fn select_rows(&self, rows: &[usize]) -> DesignProblem {
        DesignProblem {
            z: self.z.select_rows(rows),
            y: self.y.select_rows(rows),
            family: self.family,
            offset: self.offset.select_rows(rows),
        }
    }
}

/// Mean negative log-likelihood with data-only constants dropped.
pub fn nll(problem: &DesignProblem, coef: &DVector<f64>) -> Result<f64> {
    check_len(problem, coef)?;
    let eta = problem.linear_predictor(coef);
    nll_at(problem, &eta)
}

fn nll_at(problem: &DesignProblem, eta: &DVector<f64>) -> Result<f64> {
    let family = problem.family;
    let total: f64 = eta
        .iter()
        .zip(problem.y.iter())
        .map(|(&t, &y)| -y * t + family.cumulant(t))
        .sum();
    let value = total / problem.n() as f64;
    if value.is_finite() {
        Ok(value)
    } else {
        Err(GampiError::NumericalOverflow)
    }
}

/// Gradient of [`nll`]: `n⁻¹ Zᵀ(φ(θ) − y)`.
pub fn nll_grad(problem: &DesignProblem, coef: &DVector<f64>) -> Result<DVector<f64>> {
    check_len(problem, coef)?;
    let resid = problem.fitted_mean(coef) - &problem.y;
    let grad = problem.z.tr_mul(&resid) / problem.n() as f64;
    if grad.iter().all(|g| g.is_finite()) {
        Ok(grad)
    } else {
        Err(GampiError::NumericalOverflow)
    }
}

fn check_len(problem: &DesignProblem, coef: &DVector<f64>) -> Result<()> {
    if coef.len() != problem.d() {
        return Err(GampiError::invalid(format!(
            "coefficient length {} does not match {} design columns",
            coef.len(),
            problem.d()
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug)]
pub struct FitOptions {
    /// Stop coordinate descent when no coefficient moves more than this.
    pub cd_tol: f64,
    /// Newton stops when the restricted gradient sup-norm drops below this.
    pub newton_tol: f64,
    pub max_iter: usize,
    pub max_sweeps: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            cd_tol: 1e-7,
            newton_tol: 1e-8,
            max_iter: 200,
            max_sweeps: 10_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub coef: DVector<f64>,
    /// Mean negative log-likelihood at `coef`, without the penalty.
    pub nll: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Penalized objective after each accepted outer iteration, starting
    /// with the value at the initial point.
    pub objective_trace: Vec<f64>,
}

fn soft_threshold(z: f64, w: f64) -> f64 {
    if z > w {
        z - w
    } else if z < -w {
        z + w
    } else {
        0.0
    }
}

fn penalty(coef: &DVector<f64>, weights: &[f64]) -> f64 {
    coef.iter().zip(weights).map(|(b, w)| w * b.abs()).sum()
}

/// Cyclic coordinate descent for `½βᵀGβ − bᵀβ + Σ λ_l|β_l|`, warm-started at
/// `beta`. Returns whether the sweep tolerance was reached.
fn coordinate_descent(
    gram: &DMatrix<f64>,
    b: &DVector<f64>,
    lambda: &[f64],
    beta: &mut DVector<f64>,
    tol: f64,
    max_sweeps: usize,
) -> bool {
    let d = beta.len();
    let mut g_beta = gram * &*beta;
    for _ in 0..max_sweeps {
        let mut max_delta = 0.0f64;
        for l in 0..d {
            let gll = gram[(l, l)];
            let new = if gll > 0.0 {
                let partial = b[l] - (g_beta[l] - gll * beta[l]);
                soft_threshold(partial, lambda[l]) / gll
            } else {
                0.0
            };
            let delta = new - beta[l];
            if delta != 0.0 {
                g_beta.axpy(delta, &gram.column(l), 1.0);
                beta[l] = new;
                max_delta = max_delta.max(delta.abs());
            }
        }
        if max_delta < tol {
            return true;
        }
    }
    false
}

/// Minimizes `nll(β) + Σ_l weights[l]·|β_l|` by IRLS with coordinate
/// descent on each quadratic surrogate.
pub fn fit_weighted_l1(
    problem: &DesignProblem,
    weights: &[f64],
    warm_start: Option<&DVector<f64>>,
) -> Result<FitResult> {
    fit_weighted_l1_with(problem, weights, warm_start, &FitOptions::default())
}

pub fn fit_weighted_l1_with(
    problem: &DesignProblem,
    weights: &[f64],
    warm_start: Option<&DVector<f64>>,
    opts: &FitOptions,
) -> Result<FitResult> {
    let (n, d) = (problem.n(), problem.d());
    if weights.len() != d {
        return Err(GampiError::invalid("one l1 weight per design column is required"));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(GampiError::invalid("l1 weights must be finite and non-negative"));
    }
    let mut beta = match warm_start {
        Some(w) => {
            check_len(problem, w)?;
            w.clone()
        }
        None => DVector::zeros(d),
    };
    let family = problem.family;
    let objective = |b: &DVector<f64>| -> f64 {
        match nll(problem, b) {
            Ok(v) => v + penalty(b, weights),
            Err(_) => f64::INFINITY,
        }
    };

    let mut current = objective(&beta);
    if !current.is_finite() {
        // Warm start overflowed; fall back to the origin.
        beta.fill(0.0);
        current = objective(&beta);
        if !current.is_finite() {
            return Err(GampiError::NumericalOverflow);
        }
    }
    let mut trace = vec![current];
    let mut converged = false;
    let mut iterations = 0;
    let inv_n = 1.0 / n as f64;

    while iterations < opts.max_iter {
        iterations += 1;
        let eta = problem.linear_predictor(&beta);
        let mut work_w = DVector::zeros(n);
        let mut work_z = DVector::zeros(n);
        for i in 0..n {
            let e = family.clamp_eta(eta[i]);
            let w = family.variance(e).max(WEIGHT_FLOOR);
            work_w[i] = w;
            work_z[i] = (e - problem.offset[i]) + (problem.y[i] - family.mean(e)) / w;
        }
        let mut weighted = problem.z.clone();
        for (i, mut row) in weighted.row_iter_mut().enumerate() {
            row *= work_w[i];
        }
        let gram = weighted.tr_mul(&problem.z) * inv_n;
        let rhs = weighted.tr_mul(&work_z) * inv_n;

        let mut proposal = beta.clone();
        coordinate_descent(&gram, &rhs, weights, &mut proposal, opts.cd_tol, opts.max_sweeps);

        // Step halving keeps the true objective monotone.
        let direction = &proposal - &beta;
        let mut step = 1.0;
        let mut accepted = None;
        while step > 1e-10 {
            let candidate = &beta + &direction * step;
            let value = objective(&candidate);
            if value <= current {
                accepted = Some((candidate, value));
                break;
            }
            step *= 0.5;
        }
        let Some((next, value)) = accepted else {
            converged = true;
            break;
        };
        let max_change = (&next - &beta).amax();
        beta = next;
        current = value;
        trace.push(current);
        if max_change < opts.cd_tol {
            converged = true;
            break;
        }
    }

    let final_nll = nll(problem, &beta)?;
    Ok(FitResult {
        coef: beta,
        nll: final_nll,
        iterations: iterations.max(1),
        converged,
        objective_trace: trace,
    })
}

fn singular(support: &[usize]) -> GampiError {
    GampiError::SingularFit {
        support: support.to_vec(),
    }
}

/// Unpenalized maximum likelihood with every coordinate outside `support`
/// held at zero, by damped Newton iterations.
pub fn fit_subset(problem: &DesignProblem, support: &[usize]) -> Result<FitResult> {
    fit_subset_with(problem, support, &FitOptions::default())
}

pub fn fit_subset_with(
    problem: &DesignProblem,
    support: &[usize],
    opts: &FitOptions,
) -> Result<FitResult> {
    let (n, d) = (problem.n(), problem.d());
    if let Some(&bad) = support.iter().find(|&&s| s >= d) {
        return Err(GampiError::invalid(format!("support index {bad} out of range {d}")));
    }
    if support.is_empty() {
        let coef = DVector::zeros(d);
        let value = nll(problem, &coef)?;
        return Ok(FitResult {
            coef,
            nll: value,
            iterations: 1,
            converged: true,
            objective_trace: vec![value],
        });
    }
    let family = problem.family;
    let zs = problem.z.select_columns(support);
    let inv_n = 1.0 / n as f64;
    let restricted = DesignProblem {
        z: zs,
        y: problem.y.clone(),
        family,
        offset: problem.offset.clone(),
    };
    let mut beta = DVector::zeros(support.len());
    let mut eta = restricted.linear_predictor(&beta);
    let mut current = nll_at(&restricted, &eta)?;
    let mut trace = vec![current];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iter {
        iterations += 1;
        let mu = eta.map(|t| family.mean(t));
        let grad = restricted.z.tr_mul(&(&mu - &restricted.y)) * inv_n;
        if !grad.iter().all(|g| g.is_finite()) {
            return Err(GampiError::NumericalOverflow);
        }
        let mut weighted = restricted.z.clone();
        for (i, mut row) in weighted.row_iter_mut().enumerate() {
            row *= family.variance(family.clamp_eta(eta[i])).max(WEIGHT_FLOOR);
        }
        let hessian = weighted.tr_mul(&restricted.z) * inv_n;
        let max_diag = hessian.diagonal().amax();
        let chol = hessian.cholesky().ok_or_else(|| singular(support))?;
        let min_pivot = chol.l_dirty().diagonal().iter().fold(f64::INFINITY, |a, &b| a.min(b));
        if !(max_diag > 0.0) || min_pivot * min_pivot < 1e-12 * max_diag {
            return Err(singular(support));
        }
        if grad.amax() < opts.newton_tol {
            converged = true;
            break;
        }
        let step_dir = chol.solve(&(-&grad));
        let slope = grad.dot(&step_dir);
        let mut step = 1.0;
        let mut accepted = None;
        while step > 1e-12 {
            let candidate = &beta + &step_dir * step;
            let cand_eta = restricted.linear_predictor(&candidate);
            if let Ok(value) = nll_at(&restricted, &cand_eta) {
                if value <= current + 1e-4 * step * slope {
                    accepted = Some((candidate, cand_eta, value));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((next, next_eta, value)) = accepted else {
            // No further decrease is representable; accept the stationary point.
            converged = grad.amax() < opts.newton_tol.sqrt();
            break;
        };
        beta = next;
        eta = next_eta;
        current = value;
        trace.push(current);
    }

    let mut coef = DVector::zeros(d);
    for (slot, &s) in support.iter().enumerate() {
        coef[s] = beta[slot];
    }
    Ok(FitResult {
        coef,
        nll: current,
        iterations: iterations.max(1),
        converged,
        objective_trace: trace,
    })
}
