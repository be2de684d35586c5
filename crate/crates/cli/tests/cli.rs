use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn gampi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gampi"))
        .args(args)
        .env("GAMPI_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_config(dir: &Path, name: &str, value: &Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

fn tiny(dir: &Path) -> PathBuf {
    write_config(
        dir,
        "tiny.json",
        &json!({
            "seed": 3,
            "simulation": { "p": 4, "q": 4, "n": 50, "graph": { "kind": "hub" }, "outcome": "binary" },
            "fit": { "tuning": { "tau_grid": [0.1, 0.5], "gamma_grid": [0.05, 0.5], "k_grid": [1, 2, 3] } },
            "bench": { "reps": 1, "methods": ["dri", "none"] }
        }),
    )
}

fn simulate(dir: &Path, config: &Path, out: &str) -> PathBuf {
    let target = dir.join(out);
    let o = gampi(&["simulate", "--config", config.to_str().unwrap(), "--out", target.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    target
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_writes_requested_shape() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        &json!({ "simulation": { "p": 3, "q": 5, "n": 50, "graph": { "kind": "chain", "segment_len": 3 }, "outcome": "count" } }),
    );
    let out = simulate(tmp.path(), &cfg, "sim");
    let mut reader = csv::Reader::from_path(out.join("data.csv")).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, ["y1", "y2", "y3", "x1", "x2", "x3", "x4", "x5"]);
    let rows: Vec<_> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 50);
    assert!(rows.iter().all(|r| r.len() == 8));
    // Count responses are whole numbers.
    for r in &rows {
        for v in r.iter().take(3) {
            let x: f64 = v.parse().unwrap();
            assert!(x >= 0.0 && x.fract() == 0.0, "{v}");
        }
    }
    let truth: Value = serde_json::from_str(&fs::read_to_string(out.join("truth.json")).unwrap()).unwrap();
    assert_eq!(truth["method"], "truth");
    assert_eq!(truth["edges"].as_array().unwrap().len(), 2);
}

#[test]
fn simulate_is_byte_identical_on_repeat() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny(tmp.path());
    let a = simulate(tmp.path(), &cfg, "a");
    let b = simulate(tmp.path(), &cfg, "b");
    for f in ["data.csv", "truth.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny(tmp.path());
    let a = simulate(tmp.path(), &cfg, "a");
    let b = tmp.path().join("b");
    let o = gampi(&["simulate", "--config", s(&cfg), "--out", s(&b), "--seed", "99"]);
    assert_eq!(code(&o), 0);
    assert_ne!(fs::read(a.join("data.csv")).unwrap(), fs::read(b.join("data.csv")).unwrap());
    let manifest: Value = serde_json::from_str(&fs::read_to_string(b.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 99);
}

#[test]
fn too_few_instruments_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        &json!({ "simulation": { "p": 4, "q": 3, "n": 50, "graph": { "kind": "hub" }, "outcome": "binary" } }),
    );
    let out = tmp.path().join("o");
    let o = gampi(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("q >= p"), "{}", stderr(&o));
    assert!(!out.join("data.csv").exists());
}

#[test]
fn unknown_config_field_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        &json!({ "simulation": { "p": 4, "n": 50, "graph": { "kind": "hub" }, "outcome": "binary", "rho": 0.5 } }),
    );
    let o = gampi(&["simulate", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("rho"), "{}", stderr(&o));

    let bad = write_config(tmp.path(), "b.json", &json!({ "fit": { "tuning": { "folds": 1 } } }));
    let o = gampi(&["bench", "--config", s(&bad)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn missing_file_is_an_io_error() {
    let tmp = TempDir::new().unwrap();
    let o = gampi(&["simulate", "--config", s(&tmp.path().join("nope.json"))]);
    assert_eq!(code(&o), 3);
}

#[test]
fn fidelity_stage_writes_only_fidelity() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny(tmp.path());
    let sim = simulate(tmp.path(), &cfg, "sim");
    let out = tmp.path().join("fit");
    let o = gampi(&[
        "fit",
        "--data",
        s(&sim.join("data.csv")),
        "--families",
        "binary",
        "--config",
        s(&cfg),
        "--stage",
        "fidelity",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut names: Vec<String> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["fidelity.json", "manifest.json"]);
}

#[test]
fn full_fit_lists_every_artifact_and_evaluates() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny(tmp.path());
    let sim = simulate(tmp.path(), &cfg, "sim");
    let out = tmp.path().join("fit");
    let o = gampi(&[
        "fit",
        "--data",
        s(&sim.join("data.csv")),
        "--families",
        "binary,binary,binary,binary",
        "--config",
        s(&cfg),
        "--method",
        "dps",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let manifest: Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "fit");
    assert_eq!(manifest["config"]["method"], "dps");
    let artifacts = manifest["artifacts"].as_array().unwrap();
    assert_eq!(artifacts.len(), 3);
    for a in artifacts {
        assert!(out.join(a.as_str().unwrap()).is_file(), "{a}");
    }
    assert!(!out.join("manifest.json.tmp").exists());
    let estimate: Value = serde_json::from_str(&fs::read_to_string(out.join("estimate.json")).unwrap()).unwrap();
    assert_eq!(estimate["method"], "dps");

    let report = tmp.path().join("eval.json");
    let o = gampi(&["eval", "--estimate", s(&out.join("estimate.json")), "--truth", s(&sim.join("truth.json")), "--out", s(&report)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r: Value = serde_json::from_str(&fs::read_to_string(report).unwrap()).unwrap();
    let tp = r["tp"].as_u64().unwrap();
    let fp = r["fp"].as_u64().unwrap();
    let tn = r["tn"].as_u64().unwrap();
    let fn_ = r["fn"].as_u64().unwrap();
    assert_eq!(tp + fp + tn + fn_, 12);
}

#[test]
fn families_count_mismatch_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny(tmp.path());
    let sim = simulate(tmp.path(), &cfg, "sim");
    let o = gampi(&["fit", "--data", s(&sim.join("data.csv")), "--families", "binary,count", "--out", s(&tmp.path().join("f"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("2 families for 4"), "{}", stderr(&o));
}

#[test]
fn truth_against_itself_is_perfect() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny(tmp.path());
    let sim = simulate(tmp.path(), &cfg, "sim");
    let truth = sim.join("truth.json");
    let report = tmp.path().join("eval.csv");
    let o = gampi(&["eval", "--estimate", s(&truth), "--truth", s(&truth), "--out", s(&report)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut reader = csv::Reader::from_path(&report).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    let row: Vec<String> = reader.records().next().unwrap().unwrap().iter().map(String::from).collect();
    let get = |k: &str| row[header.iter().position(|h| h == k).unwrap()].clone();
    assert_eq!(get("tp"), "3");
    assert_eq!(get("fp"), "0");
    assert_eq!(get("fn"), "0");
    assert_eq!(get("shd"), "0");
    assert_eq!(get("fscore").parse::<f64>().unwrap(), 1.0);
    assert_eq!(get("mcc").parse::<f64>().unwrap(), 1.0);
    assert_eq!(get("frobenius").parse::<f64>().unwrap(), 0.0);
}

#[test]
fn empty_estimate_has_undefined_f() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny(tmp.path());
    let sim = simulate(tmp.path(), &cfg, "sim");
    let empty = write_config(tmp.path(), "empty.json", &json!({ "method": "dri", "p": 4, "q": 4, "edges": [], "interventions": [], "alpha": [] }));
    let report = tmp.path().join("eval.json");
    let o = gampi(&["eval", "--estimate", s(&empty), "--truth", s(&sim.join("truth.json")), "--out", s(&report)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r: Value = serde_json::from_str(&fs::read_to_string(report).unwrap()).unwrap();
    assert!(r["fscore"].is_null());
    assert!(r["fdr"].is_null());
    assert_eq!(r["shd"], 3);
    assert!(stdout(&o).lines().any(|l| l.starts_with('F') && l.trim_end().ends_with("NA")));
}

#[test]
fn eval_rejects_mismatched_sizes() {
    let tmp = TempDir::new().unwrap();
    let a = write_config(tmp.path(), "a.json", &json!({ "method": "dri", "p": 3, "q": 3, "edges": [] }));
    let b = write_config(tmp.path(), "b.json", &json!({ "method": "truth", "p": 4, "q": 4, "edges": [[1, 2, 1.0]] }));
    let o = gampi(&["eval", "--estimate", s(&a), "--truth", s(&b)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn bench_single_replicate_has_zero_se_and_repeats() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny(tmp.path());
    let csv_path = tmp.path().join("reps.csv");
    let a = gampi(&["bench", "--config", s(&cfg), "--out", s(&csv_path)]);
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    let table = stdout(&a);
    let dri = table.lines().find(|l| l.starts_with("dri")).expect("dri row");
    let se: Vec<&str> = dri.split_whitespace().skip(2).step_by(2).collect();
    assert_eq!(se, ["(0.00)"; 6], "{table}");
    assert!(table.contains("1 replicates"));

    let b = gampi(&["--threads", "1", "bench", "--config", s(&cfg)]);
    assert_eq!(code(&b), 0);
    assert_eq!(table, stdout(&b));

    let text = fs::read_to_string(csv_path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("replicate,seed,method,tp"));
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("0,") && lines[1].contains(",dri,"));
    assert!(lines[2].contains(",none,"));
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let tmp = TempDir::new().unwrap();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let out = tmp.path().join(path.file_stem().unwrap());
        let o = gampi(&["simulate", "--config", s(&path), "--out", s(&out)]);
        assert_eq!(code(&o), 0, "{}: {}", path.display(), stderr(&o));
    }
}
