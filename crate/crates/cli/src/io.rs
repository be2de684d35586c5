use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use gampi::glm::Family;
use gampi::Dataset;
use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{CliError, CliResult};

/// Writes `y1..yp, x1..xq`. Values use the shortest representation that
/// parses back to the same `f64`, at most 17 significant digits.
pub fn write_dataset(path: &Path, data: &Dataset) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
    let header: Vec<String> = (1..=data.p())
        .map(|j| format!("y{j}"))
        .chain((1..=data.q()).map(|l| format!("x{l}")))
        .collect();
    w.write_record(&header).map_err(|e| CliError::io(path, e))?;
    for i in 0..data.n() {
        let row = data.y.row(i).iter().chain(data.x.row(i).iter()).map(|v| format!("{v}")).collect::<Vec<_>>();
        w.write_record(&row).map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Reads a dataset written by [`write_dataset`]. `families` holds one name
/// for every response, or a comma-separated list with one entry per column.
pub fn read_dataset(path: &Path, families: &str) -> CliResult<Dataset> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::io(path, e))?;
    let header = r.headers().map_err(|e| CliError::io(path, e))?.clone();
    let mut p = 0;
    let mut q = 0;
    for (i, name) in header.iter().enumerate() {
        let (kind, index) = name.split_at(name.len().min(1));
        let expected = match kind {
            "y" if q == 0 => p + 1,
            "x" => q + 1,
            _ => 0,
        };
        if index.parse::<usize>().ok() != Some(expected) || expected == 0 {
            return Err(CliError::Config(format!(
                "{}: column {} is '{name}'; expected y1..yp followed by x1..xq",
                path.display(),
                i + 1
            )));
        }
        if kind == "y" {
            p += 1;
        } else {
            q += 1;
        }
    }
    let mut values = Vec::new();
    let mut n = 0;
    for (line, record) in r.records().enumerate() {
        let record = record.map_err(|e| CliError::io(path, e))?;
        for (col, field) in record.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                CliError::Config(format!("{}: row {}, column {}: '{field}' is not a number", path.display(), line + 2, col + 1))
            })?;
            values.push(v);
        }
        n += 1;
    }
    let all = DMatrix::from_row_slice(n, p + q, &values);
    let y = all.columns(0, p).into_owned();
    let x = all.columns(p, q).into_owned();
    let families = parse_families(families, p)?;
    Dataset::new(y, x, families).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn parse_families(spec: &str, p: usize) -> CliResult<Vec<Family>> {
    let parts: Vec<&str> = spec.split(',').collect();
    let parsed = parts
        .iter()
        .map(|s| s.parse::<Family>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Config(format!("--families: {e}")))?;
    match parsed.len() {
        1 => Ok(vec![parsed[0]; p]),
        len if len == p => Ok(parsed),
        len => Err(CliError::Config(format!("--families lists {len} families for {p} response columns"))),
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::io(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_json(path: &Path) -> CliResult<serde_json::Value> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

#[derive(Debug, Serialize)]
struct Timing {
    stage: String,
    seconds: f64,
}

/// Record of one run, written last so that its presence means every listed
/// artifact is complete.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    command: String,
    version: &'static str,
    seed: Option<u64>,
    config: serde_json::Value,
    timings: Vec<Timing>,
    artifacts: Vec<String>,
    warnings: Vec<String>,
    failures: Vec<String>,
    #[serde(skip)]
    dir: PathBuf,
    #[serde(skip)]
    clock: Option<(String, Instant)>,
}

impl RunManifest {
    pub fn new(command: &str, dir: &Path, seed: Option<u64>, config: serde_json::Value) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self {
            command: command.into(),
            version: gampi::VERSION,
            seed,
            config,
            timings: Vec::new(),
            artifacts: Vec::new(),
            warnings: Vec::new(),
            failures: Vec::new(),
            dir: dir.to_path_buf(),
            clock: None,
        })
    }

    pub fn start(&mut self, stage: &str) {
        self.stop();
        self.clock = Some((stage.to_string(), Instant::now()));
    }

    pub fn stop(&mut self) {
        if let Some((stage, t)) = self.clock.take() {
            self.timings.push(Timing {
                stage,
                seconds: t.elapsed().as_secs_f64(),
            });
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn artifact(&mut self, name: &str) -> PathBuf {
        self.artifacts.push(name.to_string());
        self.path(name)
    }

    pub fn warn(&mut self, msg: impl Into<String>) {
        self.warnings.push(msg.into());
    }

    pub fn fail(&mut self, msg: impl Into<String>) {
        self.failures.push(msg.into());
    }

    pub fn failures(&self) -> &[String] {
        &self.failures
    }

    /// Writes `manifest.json` through a temporary file and a rename.
    pub fn finish(mut self) -> CliResult<PathBuf> {
        self.stop();
        let tmp = self.path("manifest.json.tmp");
        let done = self.path("manifest.json");
        write_json(&tmp, &self)?;
        fs::rename(&tmp, &done).map_err(|e| CliError::io(&done, e))?;
        Ok(done)
    }
}
