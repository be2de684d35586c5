//! Browser bindings for three small gampi demos. Each export returns a JSON
//! string; the plain-Rust functions underneath are what the tests call.

use gampi::metrics::{evaluate, frobenius_sq};
use gampi::peel::peel;
use gampi::select::geometric_grid;
use gampi::sim::{simulate, GraphKind, Outcome, SimConfig};
use gampi::tlp::tlp;
use gampi::{run_pipeline, GampiError, Method, PipelineConfig, Stage, TuningPolicy};
use nalgebra::DMatrix;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

const CURVE_POINTS: usize = 241;
const MAX_DEMO_P: usize = 10;
const MAX_DEMO_N: usize = 2000;

fn one_based(pairs: &[(usize, usize)]) -> Vec<[usize; 2]> {
    pairs.iter().map(|&(a, b)| [a + 1, b + 1]).collect()
}

/// Minimizer of `(z - b)^2 / 2 + lambda * tlp(b, tau)` over `b`. The
/// objective is smooth on each piece, so checking zero, the unpenalized
/// value and the clipped soft-threshold covers every candidate.
fn tlp_threshold(z: f64, tau: f64, lambda: f64) -> f64 {
    let soft = z.signum() * (z.abs() - lambda / tau).clamp(0.0, tau);
    let cost = |b: f64| 0.5 * (z - b) * (z - b) + lambda * tlp(b, tau);
    [0.0, soft, z]
        .into_iter()
        .min_by(|a, b| cost(*a).total_cmp(&cost(*b)))
        .unwrap()
}

pub fn penalty_curve(tau: f64, lambda: f64, range: f64) -> Result<Value, String> {
    if !(tau > 0.0 && lambda >= 0.0 && range > 0.0) || ![tau, lambda, range].iter().all(|v| v.is_finite()) {
        return Err("tau and range must be positive and lambda non-negative".into());
    }
    let z: Vec<f64> = (0..CURVE_POINTS)
        .map(|i| -range + 2.0 * range * i as f64 / (CURVE_POINTS - 1) as f64)
        .collect();
    Ok(json!({
        "z": z,
        "tlp": z.iter().map(|&v| lambda * tlp(v, tau)).collect::<Vec<_>>(),
        "l1": z.iter().map(|&v| lambda * v.abs() / tau).collect::<Vec<_>>(),
        "tlp_threshold": z.iter().map(|&v| tlp_threshold(v, tau, lambda)).collect::<Vec<_>>(),
        "lasso_threshold": z.iter().map(|&v| v.signum() * (v.abs() - lambda / tau).max(0.0)).collect::<Vec<_>>(),
    }))
}

/// Rows are instruments, columns are primaries; any nonzero number marks an
/// entry. Accepts commas, spaces or tabs between numbers.
pub fn parse_matrix(text: &str) -> Result<DMatrix<f64>, String> {
    let rows: Vec<Vec<f64>> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, line)| {
            line.split(|c: char| c == ',' || c.is_whitespace())
                .filter(|t| !t.is_empty())
                .map(|t| t.parse::<f64>().map_err(|_| format!("row {}: '{t}' is not a number", i + 1)))
                .collect()
        })
        .collect::<Result<_, _>>()?;
    let Some(p) = rows.first().map(Vec::len) else {
        return Err("matrix is empty".into());
    };
    if let Some(i) = rows.iter().position(|r| r.len() != p) {
        return Err(format!("row {} has {} entries, row 1 has {p}", i + 1, rows[i].len()));
    }
    Ok(DMatrix::from_row_iterator(rows.len(), p, rows.into_iter().flatten()))
}

pub fn peel_text(text: &str) -> Result<Value, String> {
    let v = parse_matrix(text)?;
    match peel(&v) {
        Ok(sg) => Ok(json!({
            "p": sg.p,
            "q": v.nrows(),
            "order": sg.order.iter().map(|j| j + 1).collect::<Vec<_>>(),
            "ancestral": one_based(&sg.ancestral),
            "instruments": sg.instruments.iter().map(|ivs| ivs.iter().map(|l| l + 1).collect::<Vec<_>>()).collect::<Vec<_>>(),
            "steps": sg.leaf_iv_pairs.iter().map(|step| {
                step.iter().map(|pair| json!({ "iv": pair.iv + 1, "node": pair.node + 1 })).collect::<Vec<_>>()
            }).collect::<Vec<_>>(),
        })),
        Err(GampiError::PeelStalled { columns, rows }) => Err(format!(
            "peeling stalled: no instrument row isolates a leaf among columns {:?} (rows {:?})",
            columns.iter().map(|j| j + 1).collect::<Vec<_>>(),
            rows.iter().map(|l| l + 1).collect::<Vec<_>>()
        )),
        Err(e) => Err(e.to_string()),
    }
}

fn demo_tuning(p: usize) -> TuningPolicy {
    TuningPolicy {
        tau_grid: geometric_grid(0.05, 1.0, 4),
        gamma_grid: vec![0.05, 0.5],
        k_grid: (1..=p).collect(),
        ..TuningPolicy::default()
    }
}

pub fn recover(graph: &str, outcome: &str, method: &str, p: usize, n: usize, seed: u64) -> Result<Value, String> {
    let graph = match graph {
        "hub" => GraphKind::Hub,
        "chain" => GraphKind::Chain { segment_len: 4 },
        "random" => GraphKind::Random { expected_edges: p as f64 },
        other => return Err(format!("unknown graph '{other}'")),
    };
    let outcome = match outcome {
        "binary" => Outcome::Binary,
        "count" => Outcome::Count,
        "gaussian" => Outcome::Gaussian,
        other => return Err(format!("unknown outcome '{other}'")),
    };
    let method = match method {
        "dri" => Method::Dri,
        "dps" => Method::Dps,
        "none" => Method::NoDeconf,
        other => return Err(format!("unknown method '{other}'")),
    };
    if p > MAX_DEMO_P || n > MAX_DEMO_N {
        return Err(format!("the demo is limited to p <= {MAX_DEMO_P} and n <= {MAX_DEMO_N}"));
    }
    let sim = SimConfig::preset(graph, outcome, p, n, seed);
    let (data, truth) = simulate(&sim).map_err(|e| e.to_string())?;
    let cfg = PipelineConfig {
        method,
        tuning: demo_tuning(p),
        stage: Stage::Full,
        max_peel_retries: 5,
    };
    let out = run_pipeline(&data, &cfg).map_err(|e| e.to_string())?;
    let est = out.estimate.expect("full stage estimates");
    let mut report = evaluate(&est.edges(), &truth.edges, p).map_err(|e| e.to_string())?;
    report.frobenius = frobenius_sq(&est.u, &truth.u0).ok();
    let sg = out.supergraph.expect("full stage peels");
    Ok(json!({
        "p": p,
        "truth": one_based(&truth.edges),
        "estimate": one_based(&est.edges()),
        "order": sg.order.iter().map(|j| j + 1).collect::<Vec<_>>(),
        "metrics": report,
        "warnings": out.warnings,
        "failures": est.failures.iter().map(|e| e.to_string()).collect::<Vec<_>>(),
    }))
}

fn to_js(result: Result<Value, String>) -> Result<String, JsError> {
    result.map(|v| v.to_string()).map_err(|e| JsError::new(&e))
}

/// Penalty and thresholding curves for the truncated ℓ1 penalty and the
/// lasso at the same slope near zero.
#[wasm_bindgen(js_name = penaltyCurve)]
pub fn penalty_curve_js(tau: f64, lambda: f64, range: f64) -> Result<String, JsError> {
    to_js(penalty_curve(tau, lambda, range))
}

#[wasm_bindgen(js_name = peelMatrix)]
pub fn peel_matrix_js(text: &str) -> Result<String, JsError> {
    to_js(peel_text(text))
}

#[wasm_bindgen(js_name = simulateAndRecover)]
pub fn recover_js(graph: &str, outcome: &str, method: &str, p: usize, n: usize, seed: u64) -> Result<String, JsError> {
    to_js(recover(graph, outcome, method, p, n, seed))
}

#[wasm_bindgen]
pub fn version() -> String {
    gampi::VERSION.to_string()
}
