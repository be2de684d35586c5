use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use gampi::metrics::{evaluate, frobenius_sq, mean_se, EvalReport};
use gampi::sim::{replicate_seed, simulate};
use gampi::{run_pipeline, DagEstimate, Method, PipelineConfig, Stage, TuningMethod};
use rayon::prelude::*;
use serde_json::json;

use crate::config::{self, RunConfig};
use crate::error::{CliError, CliResult};
use crate::io::{self, RunManifest};

pub struct SimulateArgs {
    pub config: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
}

pub fn simulate_cmd(args: SimulateArgs) -> CliResult<()> {
    let mut cfg = config::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let section = cfg
        .simulation
        .as_ref()
        .ok_or_else(|| CliError::Config(format!("{}: missing 'simulation' section", args.config.display())))?;
    let sim = section.to_sim_config(cfg.seed)?;

    let mut manifest = RunManifest::new("simulate", &args.out, Some(cfg.seed), json!({ "simulation": sim }))?;
    manifest.start("simulate");
    let (data, truth) = simulate(&sim)?;
    manifest.start("write");
    io::write_dataset(&manifest.artifact("data.csv"), &data)?;
    io::write_json(&manifest.artifact("truth.json"), &truth.to_json())?;
    let path = manifest.finish()?;
    println!(
        "simulated n={} p={} q={} with {} edges; manifest {}",
        data.n(),
        data.p(),
        data.q(),
        truth.edges.len(),
        path.display()
    );
    Ok(())
}

pub struct FitArgs {
    pub data: PathBuf,
    pub families: String,
    pub config: Option<PathBuf>,
    pub method: Option<Method>,
    pub tuning: Option<TuningMethod>,
    pub stage: Option<Stage>,
    pub out: PathBuf,
}

pub fn fit_cmd(args: FitArgs) -> CliResult<()> {
    let mut cfg = config::load_or_default(args.config.as_deref())?;
    if let Some(m) = args.method {
        cfg.fit.method = m;
    }
    if let Some(t) = args.tuning {
        cfg.fit.tuning.method = t;
    }
    if let Some(s) = args.stage {
        cfg.fit.stage = s;
    }
    if cfg.fit.method == Method::Truth {
        return Err(CliError::Config("--method: 'truth' is not an estimation method".into()));
    }

    let mut manifest = RunManifest::new("fit", &args.out, Some(cfg.fit.tuning.seed), json!(cfg.fit))?;
    manifest.start("read");
    let data = io::read_dataset(&args.data, &args.families)?;
    manifest.start("fit");
    let pipeline = PipelineConfig {
        method: cfg.fit.method,
        tuning: cfg.fit.tuning.clone(),
        stage: cfg.fit.stage,
        max_peel_retries: cfg.fit.max_peel_retries,
    };
    let out = run_pipeline(&data, &pipeline)?;
    manifest.start("write");
    for w in &out.warnings {
        eprintln!("warning: {w}");
        manifest.warn(w.clone());
    }
    if out.peel_retries > 0 {
        manifest.warn(format!("peeling needed {} retry rounds", out.peel_retries));
    }
    io::write_json(&manifest.artifact("fidelity.json"), &out.fidelity.to_json())?;
    if let Some(sg) = &out.supergraph {
        io::write_json(&manifest.artifact("supergraph.json"), &sg.to_json())?;
    }
    if let Some(est) = &out.estimate {
        io::write_json(&manifest.artifact("estimate.json"), &est.to_json())?;
        for f in &est.failures {
            manifest.fail(f.to_string());
        }
        println!("{} edges: {}", est.edges().len(), edge_list(&est.edges()));
    }
    let failures = manifest.failures().to_vec();
    let path = manifest.finish()?;
    println!("manifest {}", path.display());
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Fit(format!("{} node fits failed: {}", failures.len(), failures.join("; "))))
    }
}

fn edge_list(edges: &[(usize, usize)]) -> String {
    let parts: Vec<String> = edges.iter().map(|(k, j)| format!("y{}->y{}", k + 1, j + 1)).collect();
    if parts.is_empty() {
        "(none)".into()
    } else {
        parts.join(" ")
    }
}

fn load_estimate(path: &Path) -> CliResult<DagEstimate> {
    DagEstimate::from_json(&io::read_json(path)?).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| format!("{x:.4}"))
}

pub fn eval_cmd(estimate: &Path, truth: &Path, out: Option<&Path>) -> CliResult<()> {
    let est = load_estimate(estimate)?;
    let tru = load_estimate(truth)?;
    if est.p() != tru.p() {
        return Err(CliError::Config(format!("estimate has p = {}, truth has p = {}", est.p(), tru.p())));
    }
    let mut report = evaluate(&est.edges(), &tru.edges(), est.p())?;
    report.frobenius = Some(frobenius_sq(&est.u, &tru.u)?);

    println!("{:<10} {:>10}", "metric", "value");
    for (name, v) in [
        ("TP", report.tp.to_string()),
        ("FP", report.fp.to_string()),
        ("TN", report.tn.to_string()),
        ("FN", report.fn_.to_string()),
        ("FPR", fmt_opt(report.fpr)),
        ("FDR", fmt_opt(report.fdr)),
        ("F", fmt_opt(report.fscore)),
        ("MCC", fmt_opt(report.mcc)),
        ("SHD", report.shd.to_string()),
        ("Frobenius", fmt_opt(report.frobenius)),
    ] {
        println!("{name:<10} {v:>10}");
    }
    if let Some(path) = out {
        if path.extension().is_some_and(|e| e == "json") {
            io::write_json(path, &report)?;
        } else {
            let text = format!("{}\n{}\n", EvalReport::CSV_HEADER, report.csv_row());
            std::fs::write(path, text).map_err(|e| CliError::io(path, e))?;
        }
    }
    Ok(())
}

pub struct BenchArgs {
    pub config: PathBuf,
    pub reps: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// One replicate of one method, or the reason it failed.
type Cell = Result<EvalReport, String>;

fn run_replicate(cfg: &RunConfig, rep: usize) -> Vec<Cell> {
    let seed = replicate_seed(cfg.seed, rep as u64);
    let section = cfg.simulation.as_ref().expect("checked by caller");
    let sim = match section.to_sim_config(seed) {
        Ok(s) => s,
        Err(e) => return vec![Err(e.to_string()); cfg.bench.methods.len()],
    };
    let (data, truth) = match simulate(&sim) {
        Ok(d) => d,
        Err(e) => return vec![Err(e.to_string()); cfg.bench.methods.len()],
    };
    cfg.bench
        .methods
        .iter()
        .map(|&method| {
            let pipeline = PipelineConfig {
                method,
                tuning: cfg.fit.tuning.clone(),
                stage: Stage::Full,
                max_peel_retries: cfg.fit.max_peel_retries,
            };
            let out = run_pipeline(&data, &pipeline).map_err(|e| e.to_string())?;
            let est = out.estimate.expect("full stage always estimates");
            let mut r = evaluate(&est.edges(), &truth.edges, sim.p).map_err(|e| e.to_string())?;
            r.frobenius = frobenius_sq(&est.u, &truth.u0).ok();
            Ok(r)
        })
        .collect()
}

fn mean_se_cell(values: &[Option<f64>], reps: usize) -> String {
    let (mean, se, count) = mean_se(values);
    match (mean, se) {
        (Some(m), Some(s)) => {
            let mark = if count < reps { "*" } else { "" };
            format!("{m:.2} ({s:.2}){mark}")
        }
        (Some(m), None) => format!("{m:.2} (NA)"),
        _ => "NA".into(),
    }
}

/// Mean (SE) table over replicates, one row per method. Cells averaged over
/// fewer replicates than requested carry a `*`.
pub fn bench_table(methods: &[Method], results: &[Vec<Cell>]) -> String {
    let reps = results.len();
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<8} {:>14} {:>14} {:>14} {:>14} {:>14} {:>16}",
        "method", "FPR", "FDR", "F", "MCC", "SHD", "Frobenius"
    );
    let mut failed_total = 0;
    for (m, method) in methods.iter().enumerate() {
        let cells: Vec<Option<&EvalReport>> = results.iter().map(|row| row[m].as_ref().ok()).collect();
        failed_total += cells.iter().filter(|c| c.is_none()).count();
        let col = |f: &dyn Fn(&EvalReport) -> Option<f64>| -> String {
            let vals: Vec<Option<f64>> = cells.iter().map(|c| c.and_then(f)).collect();
            mean_se_cell(&vals, reps)
        };
        let _ = writeln!(
            out,
            "{:<8} {:>14} {:>14} {:>14} {:>14} {:>14} {:>16}",
            method.name(),
            col(&|r| r.fpr),
            col(&|r| r.fdr),
            col(&|r| r.fscore),
            col(&|r| r.mcc),
            col(&|r| Some(r.shd as f64)),
            col(&|r| r.frobenius),
        );
    }
    let _ = writeln!(out, "{reps} replicates; mean (SE)");
    if failed_total > 0 {
        let _ = writeln!(out, "* averaged over fewer replicates: {failed_total} method runs failed or were undefined");
    }
    out
}

pub fn bench_cmd(args: BenchArgs) -> CliResult<()> {
    let mut cfg = config::load(&args.config)?;
    if let Some(r) = args.reps {
        cfg.bench.reps = r;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if cfg.bench.reps == 0 {
        return Err(CliError::Config("bench.reps must be at least 1".into()));
    }
    if cfg.bench.methods.is_empty() || cfg.bench.methods.contains(&Method::Truth) {
        return Err(CliError::Config("bench.methods must list dri, dps or none".into()));
    }
    let section = cfg
        .simulation
        .as_ref()
        .ok_or_else(|| CliError::Config(format!("{}: missing 'simulation' section", args.config.display())))?;
    section.to_sim_config(cfg.seed)?;

    let results: Vec<Vec<Cell>> = (0..cfg.bench.reps).into_par_iter().map(|rep| run_replicate(&cfg, rep)).collect();
    for (rep, row) in results.iter().enumerate() {
        for (m, cell) in row.iter().enumerate() {
            if let Err(e) = cell {
                eprintln!("replicate {rep}, {}: {e}", cfg.bench.methods[m]);
            }
        }
    }
    print!("{}", bench_table(&cfg.bench.methods, &results));

    if let Some(path) = &args.out {
        let mut text = format!("replicate,seed,method,{}\n", EvalReport::CSV_HEADER);
        for (rep, row) in results.iter().enumerate() {
            let seed = replicate_seed(cfg.seed, rep as u64);
            for (m, cell) in row.iter().enumerate() {
                let body = match cell {
                    Ok(r) => r.csv_row(),
                    Err(_) => vec!["NA"; EvalReport::CSV_HEADER.split(',').count()].join(","),
                };
                let _ = writeln!(text, "{rep},{seed},{},{body}", cfg.bench.methods[m]);
            }
        }
        std::fs::write(path, text).map_err(|e| CliError::io(path, e))?;
    }
    Ok(())
}
