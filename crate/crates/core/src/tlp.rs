//! Truncated-ℓ1 penalty and the projected difference-of-convex solver for
//! ℓ0-constrained GLM regression.
//!
//! Each DC iteration solves a weighted lasso in which only the coordinates
//! whose previous magnitude is at most `tau` are penalized, at weight
//! `gamma * tau`. The loop stops once an active set repeats; the best
//! iterate is then projected onto the ℓ0 budget and refitted without
//! penalty.

use nalgebra::DVector;

use crate::error::{GampiError, Result};
use crate::glm::{fit_subset, fit_weighted_l1_with, DesignProblem, FitOptions, FitResult};

/// `min(|z|/τ, 1)`.
pub fn tlp(z: f64, tau: f64) -> f64 {
    debug_assert!(tau > 0.0);
    (z.abs() / tau).min(1.0)
}

/// Upper bound on DC iterations for a well-separated instance with true
/// sparsity `k0`: `1 + ⌈log(2k0)/log 4⌉`.
pub fn termination_bound(k0: usize) -> usize {
    if k0 == 0 {
        return 1;
    }
    1 + ((2.0 * k0 as f64).ln() / 4f64.ln()).ceil() as usize
}

/// How often [`solve_constrained`] may shrink `gamma` to fill its budgets.
pub const MAX_GAMMA_HALVINGS: usize = 30;

/// A block of coordinates carrying its own ℓ0 budget.
#[derive(Clone, Debug, PartialEq)]
pub struct BudgetGroup {
    pub members: Vec<usize>,
    pub k: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TlpConfig {
    pub tau: f64,
    /// Budget for penalized coordinates outside `secondary`.
    pub k: usize,
    pub gamma: f64,
    /// Coordinates that are never penalized and always retained.
    pub free_set: Vec<usize>,
    pub secondary: Option<BudgetGroup>,
    pub max_dc_iter: usize,
    pub tol: f64,
}

impl TlpConfig {
    pub fn new(tau: f64, k: usize, gamma: f64) -> Self {
        Self {
            tau,
            k,
            gamma,
            free_set: Vec::new(),
            secondary: None,
            max_dc_iter: 20,
            tol: 1e-7,
        }
    }

    pub fn with_free_set(mut self, free_set: Vec<usize>) -> Self {
        self.free_set = free_set;
        self
    }

    pub fn with_secondary(mut self, members: Vec<usize>, k: usize) -> Self {
        self.secondary = Some(BudgetGroup { members, k });
        self
    }

    fn roles(&self, d: usize) -> Vec<Role> {
        let mut roles = vec![Role::Primary; d];
        for &f in &self.free_set {
            roles[f] = Role::Free;
        }
        if let Some(group) = &self.secondary {
            for &m in &group.members {
                roles[m] = Role::Secondary;
            }
        }
        roles
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(GampiError::invalid("tau must be positive"));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(GampiError::invalid("gamma must be positive"));
        }
        let mut seen = vec![false; d];
        let secondary = self.secondary.as_ref().map(|g| g.members.as_slice()).unwrap_or(&[]);
        for &i in self.free_set.iter().chain(secondary) {
            if i >= d {
                return Err(GampiError::invalid(format!("index {i} out of range {d}")));
            }
            if seen[i] {
                return Err(GampiError::invalid(format!("index {i} assigned to two blocks")));
            }
            seen[i] = true;
        }
        let primary = seen.iter().filter(|s| !**s).count();
        if self.k > primary {
            return Err(GampiError::invalid(format!(
                "budget {} exceeds the {} penalized coordinates",
                self.k, primary
            )));
        }
        if let Some(g) = &self.secondary {
            if g.k > g.members.len() {
                return Err(GampiError::invalid("secondary budget exceeds its block size"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Role {
    Free,
    Primary,
    Secondary,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DcIteration {
    /// Penalized coordinates whose previous magnitude was at most `tau`.
    pub active: Vec<usize>,
    /// DC majorant at the new iterate: nll + weighted ℓ1 term with the
    /// previous weights + `γτ²` per inactive coordinate.
    pub surrogate: f64,
    /// `nll + γτ² Σ J_τ(β_l)` over penalized coordinates.
    pub tlp_objective: f64,
    pub nll: f64,
    pub inner_converged: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DcTrace {
    pub iterations: Vec<DcIteration>,
    /// Support retained by the ℓ0 projection of the returned iterate.
    pub support: Vec<usize>,
    pub converged: bool,
    /// True when the loop stopped because an active set repeated.
    pub cycled: bool,
}

/// A projected, refitted solution.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstrainedFit {
    pub fit: FitResult,
    pub support: Vec<usize>,
}

/// Runs the DC iterations from `init` and returns the iterate with the
/// lowest negative log-likelihood.
pub fn dc_fit(
    problem: &DesignProblem,
    cfg: &TlpConfig,
    init: &DVector<f64>,
) -> Result<(DVector<f64>, DcTrace)> {
    let d = problem.d();
    cfg.validate(d)?;
    if init.len() != d {
        return Err(GampiError::invalid("initial point has the wrong length"));
    }
    let roles = cfg.roles(d);
    let nonzero = |role: Role| {
        (0..d)
            .filter(|&l| roles[l] == role && init[l] != 0.0)
            .count()
    };
    let secondary_k = cfg.secondary.as_ref().map_or(0, |g| g.k);
    if nonzero(Role::Primary) > cfg.k || nonzero(Role::Secondary) > secondary_k {
        return Err(GampiError::invalid("initial point violates the l0 budget"));
    }

    let opts = FitOptions {
        cd_tol: cfg.tol,
        ..FitOptions::default()
    };
    let penalty_unit = cfg.gamma * cfg.tau;
    let jump = cfg.gamma * cfg.tau * cfg.tau;
    let mut previous = init.clone();
    let mut seen: Vec<Vec<bool>> = Vec::new();
    let mut trace = DcTrace {
        converged: true,
        ..DcTrace::default()
    };
    let mut best: Option<(f64, DVector<f64>)> = None;

    for _ in 0..cfg.max_dc_iter {
        let active: Vec<bool> = (0..d)
            .map(|l| roles[l] != Role::Free && previous[l].abs() <= cfg.tau)
            .collect();
        if seen.contains(&active) {
            trace.cycled = true;
            break;
        }
        let weights: Vec<f64> = active
            .iter()
            .map(|&a| if a { penalty_unit } else { 0.0 })
            .collect();
        let fit = fit_weighted_l1_with(problem, &weights, Some(&previous), &opts)?;
        let inactive = (0..d)
            .filter(|&l| roles[l] != Role::Free && !active[l])
            .count();
        let weighted: f64 = fit
            .coef
            .iter()
            .zip(&weights)
            .map(|(b, w)| w * b.abs())
            .sum();
        let tlp_sum: f64 = (0..d)
            .filter(|&l| roles[l] != Role::Free)
            .map(|l| tlp(fit.coef[l], cfg.tau))
            .sum();
        trace.converged &= fit.converged;
        trace.iterations.push(DcIteration {
            active: (0..d).filter(|&l| active[l]).collect(),
            surrogate: fit.nll + weighted + jump * inactive as f64,
            tlp_objective: fit.nll + jump * tlp_sum,
            nll: fit.nll,
            inner_converged: fit.converged,
        });
        seen.push(active);
        if best.as_ref().is_none_or(|(v, _)| fit.nll < *v) {
            best = Some((fit.nll, fit.coef.clone()));
        }
        previous = fit.coef;
    }

    let solution = best.map(|(_, c)| c).unwrap_or(previous);
    trace.support = select_support(&solution, cfg);
    Ok((solution, trace))
}

fn top_k(members: impl Iterator<Item = usize>, values: &DVector<f64>, k: usize) -> Vec<usize> {
    let mut ranked: Vec<usize> = members.filter(|&l| values[l] != 0.0).collect();
    ranked.sort_by(|&a, &b| {
        values[b]
            .abs()
            .partial_cmp(&values[a].abs())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    ranked.truncate(k);
    ranked
}

/// Coordinates kept by the ℓ0 projection: the free set plus, within each
/// budgeted block, the `k` largest nonzero magnitudes. Equal magnitudes are
/// ranked by lowest index.
pub fn select_support(candidate: &DVector<f64>, cfg: &TlpConfig) -> Vec<usize> {
    let d = candidate.len();
    let roles = cfg.roles(d);
    let mut support: Vec<usize> = (0..d).filter(|&l| roles[l] == Role::Free).collect();
    support.extend(top_k(
        (0..d).filter(|&l| roles[l] == Role::Primary),
        candidate,
        cfg.k,
    ));
    if let Some(group) = &cfg.secondary {
        support.extend(top_k(group.members.iter().copied(), candidate, group.k));
    }
    support.sort_unstable();
    support
}

/// Projects `candidate` onto the ℓ0 budget and refits on the kept support.
pub fn project_l0(
    problem: &DesignProblem,
    candidate: &DVector<f64>,
    cfg: &TlpConfig,
) -> Result<ConstrainedFit> {
    cfg.validate(problem.d())?;
    let support = select_support(candidate, cfg);
    let fit = fit_subset(problem, &support)?;
    Ok(ConstrainedFit { fit, support })
}

/// Initial point for the DC loop: zero on penalized coordinates, the
/// unpenalized refit on the free set.
pub fn default_init(problem: &DesignProblem, cfg: &TlpConfig) -> Result<DVector<f64>> {
    if cfg.free_set.is_empty() {
        Ok(DVector::zeros(problem.d()))
    } else {
        let mut free = cfg.free_set.clone();
        free.sort_unstable();
        Ok(fit_subset(problem, &free)?.coef)
    }
}

/// Whether every budgeted block of `candidate` has at least as many nonzeros
/// as its budget (or as members, if fewer).
fn fills_budgets(candidate: &DVector<f64>, cfg: &TlpConfig) -> bool {
    let roles = cfg.roles(candidate.len());
    let count = |role: Role| {
        let members: Vec<usize> = (0..candidate.len()).filter(|&l| roles[l] == role).collect();
        let nonzero = members.iter().filter(|&&l| candidate[l] != 0.0).count();
        (nonzero, members.len())
    };
    let (nz, m) = count(Role::Primary);
    let mut ok = nz >= cfg.k.min(m);
    if let Some(group) = &cfg.secondary {
        let (nz, m) = count(Role::Secondary);
        ok &= nz >= group.k.min(m);
    }
    ok
}

/// Solves the ℓ0-constrained regression: DC iterations, then projection.
///
/// If the DC solution leaves a budget unfilled, `gamma` is halved and the
/// DC loop rerun, up to [`MAX_GAMMA_HALVINGS`] times.
pub fn solve_constrained(
    problem: &DesignProblem,
    cfg: &TlpConfig,
) -> Result<(ConstrainedFit, DcTrace)> {
    cfg.validate(problem.d())?;
    let init = default_init(problem, cfg)?;
    let mut cfg = cfg.clone();
    let (mut candidate, mut trace) = dc_fit(problem, &cfg, &init)?;
    for _ in 0..MAX_GAMMA_HALVINGS {
        if fills_budgets(&candidate, &cfg) {
            break;
        }
        cfg.gamma *= 0.5;
        (candidate, trace) = dc_fit(problem, &cfg, &init)?;
    }
    let projected = project_l0(problem, &candidate, &cfg)?;
    trace.support = projected.support.clone();
    Ok((projected, trace))
}
