//! Synthetic generalized structural equation models: hub, chain and random
//! graphs with one instrument per node, optional equicorrelated
//! confounders, and binary, copula-count or Gaussian outcomes.
//!
//! Every random quantity is drawn from its own ChaCha stream seeded by
//! `stream_seed(seed, tag, index)`, so output does not depend on threads.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{DiscreteCDF, Poisson};

use crate::data::Dataset;
use crate::deconfound::{DagEstimate, Method};
use crate::error::{GampiError, Result};
use crate::glm::Family;
use crate::peel::transitive_closure;

const TAG_GRAPH: u64 = 1;
const TAG_X: u64 = 2;
const TAG_H: u64 = 3;
const TAG_Y: u64 = 4;
const TAG_REPLICATE: u64 = 5;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the stream for `(tag, index)` under a master seed.
pub fn stream_seed(seed: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ tag) ^ index)
}

/// Seed of replicate `rep` under a master seed.
pub fn replicate_seed(master: u64, rep: u64) -> u64 {
    stream_seed(master, TAG_REPLICATE, rep)
}

fn stream(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, tag, index))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GraphKind {
    Hub,
    Chain {
        #[serde(default = "default_segment")]
        segment_len: usize,
    },
    Random {
        expected_edges: f64,
    },
}

fn default_segment() -> usize {
    4
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Binary,
    Count,
    Gaussian,
}

impl Outcome {
    pub fn family(self) -> Family {
        match self {
            Outcome::Binary => Family::Bernoulli,
            Outcome::Count => Family::Poisson,
            Outcome::Gaussian => Family::Gaussian,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub p: usize,
    pub q: usize,
    pub n: usize,
    pub graph: GraphKind,
    pub outcome: Outcome,
    /// Instrument strength for roots.
    pub alpha0: f64,
    /// Parent effect.
    pub beta1: f64,
    /// Instrument strength for non-roots.
    pub alpha1: f64,
    #[serde(default = "default_true")]
    pub confounded: bool,
    #[serde(default = "default_corr")]
    pub confounder_corr: f64,
    #[serde(default = "default_rate")]
    pub poisson_rate: f64,
    /// Standard deviation of the latent noise for count and Gaussian outcomes.
    #[serde(default = "default_noise")]
    pub noise_sd: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_true() -> bool {
    true
}
fn default_corr() -> f64 {
    0.95
}
fn default_rate() -> f64 {
    5.0
}
fn default_noise() -> f64 {
    1.0
}

impl SimConfig {
    /// The standard coefficient settings for each graph and outcome, with
    /// `q = p` and confounders on. Gaussian outcomes reuse the binary values.
    pub fn preset(graph: GraphKind, outcome: Outcome, p: usize, n: usize, seed: u64) -> Self {
        let (alpha0, beta1, alpha1) = match (outcome, graph) {
            (Outcome::Count, GraphKind::Hub) => (5.0, 0.5, 2.0),
            (Outcome::Count, GraphKind::Chain { .. }) => (5.0, 0.5, 3.0),
            (Outcome::Count, GraphKind::Random { .. }) => (4.0, 1.0, 2.0),
            (_, GraphKind::Hub) => (5.0, 2.5, 2.0),
            (_, GraphKind::Chain { .. }) => (5.0, 2.5, 3.0),
            (_, GraphKind::Random { .. }) => (5.0, 3.0, 3.0),
        };
        Self {
            p,
            q: p,
            n,
            graph,
            outcome,
            alpha0,
            beta1,
            alpha1,
            confounded: true,
            confounder_corr: default_corr(),
            poisson_rate: default_rate(),
            noise_sd: default_noise(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p < 2 {
            return Err(GampiError::invalid("p must be at least 2"));
        }
        if self.q < self.p {
            return Err(GampiError::invalid(format!(
                "q = {} but q >= p = {} is required so every node gets its own instrument",
                self.q, self.p
            )));
        }
        if self.n < 2 {
            return Err(GampiError::invalid("n must be at least 2"));
        }
        if ![self.alpha0, self.beta1, self.alpha1, self.noise_sd].iter().all(|v| v.is_finite()) {
            return Err(GampiError::invalid("coefficients must be finite"));
        }
        if !(self.poisson_rate > 0.0 && self.poisson_rate.is_finite()) {
            return Err(GampiError::invalid("poisson_rate must be positive"));
        }
        match self.graph {
            GraphKind::Chain { segment_len } if segment_len < 2 => {
                Err(GampiError::invalid("chain segment_len must be at least 2"))
            }
            GraphKind::Random { expected_edges } if !(expected_edges >= 0.0) => {
                Err(GampiError::invalid("expected_edges must be non-negative"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    /// p×p effects; nonzero entries equal `beta1`.
    pub u0: DMatrix<f64>,
    /// q×p; diagonal, `alpha0` on roots and `alpha1` elsewhere.
    pub w0: DMatrix<f64>,
    pub edges: Vec<(usize, usize)>,
    pub ancestral: Vec<(usize, usize)>,
    /// A topological order of the nodes.
    pub order: Vec<usize>,
}

impl GroundTruth {
    pub fn parents(&self, j: usize) -> Vec<usize> {
        self.edges.iter().filter(|e| e.1 == j).map(|e| e.0).collect()
    }

    pub fn to_estimate(&self) -> DagEstimate {
        let (p, q) = (self.u0.ncols(), self.w0.nrows());
        let mut est = DagEstimate::empty(Method::Truth, p, q);
        est.u = self.u0.clone();
        est.w = self.w0.clone();
        est
    }

    pub fn to_json(&self) -> serde_json::Value {
        self.to_estimate().to_json()
    }
}

/// Draws the graph and the effect matrices.
pub fn gen_graph(cfg: &SimConfig) -> Result<GroundTruth> {
    cfg.validate()?;
    let p = cfg.p;
    let mut edges = Vec::new();
    let mut order: Vec<usize> = (0..p).collect();
    match cfg.graph {
        GraphKind::Hub => edges.extend((1..p).map(|j| (0, j))),
        GraphKind::Chain { segment_len } => {
            for start in (0..p).step_by(segment_len) {
                let end = (start + segment_len).min(p);
                edges.extend((start..end - 1).map(|k| (k, k + 1)));
            }
        }
        GraphKind::Random { expected_edges } => {
            let mut rng = stream(cfg.seed, TAG_GRAPH, 0);
            order.shuffle(&mut rng);
            let prob = (2.0 * expected_edges / (p * (p - 1)) as f64).min(1.0);
            for a in 0..p {
                for b in a + 1..p {
                    if rng.random::<f64>() < prob {
                        edges.push((order[a], order[b]));
                    }
                }
            }
            edges.sort_unstable();
        }
    }
    let mut u0 = DMatrix::zeros(p, p);
    let mut is_root = vec![true; p];
    for &(k, j) in &edges {
        u0[(k, j)] = cfg.beta1;
        is_root[j] = false;
    }
    let mut w0 = DMatrix::zeros(cfg.q, p);
    for j in 0..p {
        w0[(j, j)] = if is_root[j] { cfg.alpha0 } else { cfg.alpha1 };
    }
    let ancestral = transitive_closure(p, &edges)?;
    Ok(GroundTruth {
        u0,
        w0,
        edges,
        ancestral,
        order,
    })
}

/// Instruments (n×q, iid standard normal) and confounders (n×p).
pub fn gen_exogenous(cfg: &SimConfig) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (n, p, q) = (cfg.n, cfg.p, cfg.q);
    let mut x = DMatrix::zeros(n, q);
    for l in 0..q {
        let mut rng = stream(cfg.seed, TAG_X, l as u64);
        for i in 0..n {
            x[(i, l)] = rng.sample(StandardNormal);
        }
    }
    if !cfg.confounded {
        return Ok((x, DMatrix::zeros(n, p)));
    }
    let rho = cfg.confounder_corr;
    let lower = if p > 1 { -1.0 / (p - 1) as f64 } else { f64::NEG_INFINITY };
    if !(rho < 1.0 && rho > lower) {
        return Err(GampiError::InvalidCovariance { corr: rho, lower });
    }
    let sigma = DMatrix::from_fn(p, p, |a, b| if a == b { 1.0 } else { rho });
    let chol = sigma
        .cholesky()
        .ok_or(GampiError::InvalidCovariance { corr: rho, lower })?;
    let mut z = DMatrix::<f64>::zeros(n, p);
    for j in 0..p {
        let mut rng = stream(cfg.seed, TAG_H, j as u64);
        for i in 0..n {
            z[(i, j)] = rng.sample(StandardNormal);
        }
    }
    Ok((x, z * chol.l().transpose()))
}

/// Linear predictor of node `j` from its instrument, parents and confounder.
fn linear_part(truth: &GroundTruth, x: &DMatrix<f64>, h: &DMatrix<f64>, y: &DMatrix<f64>, j: usize) -> DVector<f64> {
    let mut eta = x.column(j) * truth.w0[(j, j)] + h.column(j);
    for k in truth.parents(j) {
        eta.axpy(truth.u0[(k, j)], &y.column(k), 1.0);
    }
    eta
}

pub fn sample_binary(cfg: &SimConfig, truth: &GroundTruth, x: &DMatrix<f64>, h: &DMatrix<f64>) -> DMatrix<f64> {
    let mut y = DMatrix::zeros(cfg.n, cfg.p);
    for &j in &truth.order {
        let eta = linear_part(truth, x, h, &y, j);
        let mut rng = stream(cfg.seed, TAG_Y, j as u64);
        for i in 0..cfg.n {
            let prob = Family::Bernoulli.mean(eta[i]);
            y[(i, j)] = if rng.random::<f64>() < prob { 1.0 } else { 0.0 };
        }
    }
    y
}

/// Ranks with ties averaged, 1-based.
fn midranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && values[idx[end]] == values[idx[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Maps a latent column to counts with a Poisson marginal through its
/// empirical CDF.
pub fn copula_counts(latent: &[f64], rate: f64) -> Result<Vec<f64>> {
    let dist = Poisson::new(rate).map_err(|e| GampiError::invalid(e.to_string()))?;
    let denom = (latent.len() + 1) as f64;
    Ok(midranks(latent)
        .into_iter()
        .map(|r| dist.inverse_cdf(r / denom) as f64)
        .collect())
}

pub fn sample_count_copula(
    cfg: &SimConfig,
    truth: &GroundTruth,
    x: &DMatrix<f64>,
    h: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let mut y = DMatrix::zeros(cfg.n, cfg.p);
    for &j in &truth.order {
        let mut latent = linear_part(truth, x, h, &y, j);
        let mut rng = stream(cfg.seed, TAG_Y, j as u64);
        for v in latent.iter_mut() {
            *v += cfg.noise_sd * rng.sample::<f64, _>(StandardNormal);
        }
        let counts = copula_counts(latent.as_slice(), cfg.poisson_rate)?;
        y.set_column(j, &DVector::from_vec(counts));
    }
    Ok(y)
}

pub fn sample_gaussian(cfg: &SimConfig, truth: &GroundTruth, x: &DMatrix<f64>, h: &DMatrix<f64>) -> DMatrix<f64> {
    let mut y = DMatrix::zeros(cfg.n, cfg.p);
    for &j in &truth.order {
        let mut col = linear_part(truth, x, h, &y, j);
        let mut rng = stream(cfg.seed, TAG_Y, j as u64);
        for v in col.iter_mut() {
            *v += cfg.noise_sd * rng.sample::<f64, _>(StandardNormal);
        }
        y.set_column(j, &col);
    }
    y
}

pub fn simulate(cfg: &SimConfig) -> Result<(Dataset, GroundTruth)> {
    let truth = gen_graph(cfg)?;
    let (x, h) = gen_exogenous(cfg)?;
    let y = match cfg.outcome {
        Outcome::Binary => sample_binary(cfg, &truth, &x, &h),
        Outcome::Count => sample_count_copula(cfg, &truth, &x, &h)?,
        Outcome::Gaussian => sample_gaussian(cfg, &truth, &x, &h),
    };
    let data = Dataset::new(y, x, vec![cfg.outcome.family(); cfg.p])?;
    Ok((data, truth))
}
