//! Configuration-driven experiments: each one evaluates measured quantities
//! against the corresponding bound and writes a CSV table plus a JSON summary.
//!
//! Distances between laws in every table are ℓ¹ distances of marginals
//! (the `sup_{‖f‖∞ ≤ 1}` convention), which is twice the half-ℓ¹ total
//! variation used by some texts. Column names carry the convention.

pub mod config;
pub mod formulas;
mod runners;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::bounds::Provenance;
use crate::error::{Error, Result};
pub use config::ExperimentConfig;

/// One named constant used by an experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstantEntry {
    pub name: String,
    pub value: f64,
    pub provenance: Provenance,
}

/// Table of rows, some of which are inequality checks.
#[derive(Debug, Clone, Default)]
pub struct Report {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub constants: Vec<ConstantEntry>,
    pub checks: usize,
    pub failures: Vec<String>,
    pub worst_margin: Option<f64>,
    pub notes: Vec<String>,
}

pub(crate) fn fmt(v: f64) -> String {
    format!("{v}")
}

impl Report {
    fn new(columns: &[&str]) -> Self {
        Report {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            ..Default::default()
        }
    }

    fn constant(&mut self, name: &str, value: f64, provenance: Provenance) {
        self.constants.push(ConstantEntry {
            name: name.into(),
            value,
            provenance,
        });
    }

    /// Appends `labels, measured, bound, margin, pass`, where the check
    /// passes when `measured ≤ bound + slack`.
    fn check(&mut self, labels: Vec<String>, measured: f64, bound: f64, slack: f64) {
        let margin = bound - measured;
        let pass = measured <= bound + slack;
        self.record(pass, margin, &labels);
        let mut row = labels;
        row.extend([fmt(measured), fmt(bound), fmt(margin), pass.to_string()]);
        self.rows.push(row);
    }

    /// Appends a row whose pass flag and margin are computed by the caller.
    fn row(&mut self, cells: Vec<String>, pass: Option<bool>, margin: Option<f64>) {
        if let Some(p) = pass {
            self.record(p, margin.unwrap_or(f64::NAN), &cells);
        }
        self.rows.push(cells);
    }

    fn record(&mut self, pass: bool, margin: f64, labels: &[String]) {
        self.checks += 1;
        if !margin.is_nan() {
            self.worst_margin = Some(self.worst_margin.map_or(margin, |w| w.min(margin)));
        }
        if !pass {
            self.failures
                .push(format!("{} = {}", self.columns.join(","), labels.join(",")));
        }
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::CRLF)
            .from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(&self.columns).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record(r).map_err(csv_err)?;
        }
        w.into_inner()
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Counts {
    pub rows: usize,
    pub checks: usize,
    pub passed: usize,
    pub failed: usize,
}

/// Time-dependent fields, kept under one key so the rest of the summary is reproducible.
#[derive(Debug, Clone, Serialize)]
pub struct RunInfo {
    pub timestamp_unix: u64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub experiment: &'static str,
    pub seed: u64,
    pub tol: f64,
    pub distance_convention: &'static str,
    pub constants: Vec<ConstantEntry>,
    pub counts: Counts,
    pub worst_margin: Option<f64>,
    pub failures: Vec<String>,
    pub notes: Vec<String>,
    pub run_info: RunInfo,
}

#[derive(Debug)]
pub struct Outcome {
    pub report: Report,
    pub summary: Summary,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.report.failures.is_empty()
    }
}

/// Runs the experiment without touching the file system.
pub fn execute(cfg: &ExperimentConfig) -> Result<Outcome> {
    let start = Instant::now();
    let report = runners::dispatch(cfg)?;
    let failed = report.failures.len();
    let summary = Summary {
        experiment: cfg.experiment.name(),
        seed: cfg.numerics.seed,
        tol: cfg.numerics.tol,
        distance_convention: "l1 distance of marginals = sup over |f| <= 1 = 2 x half-l1 total variation",
        constants: report.constants.clone(),
        counts: Counts {
            rows: report.rows.len(),
            checks: report.checks,
            passed: report.checks - failed,
            failed,
        },
        worst_margin: report.worst_margin,
        failures: report.failures.clone(),
        notes: report.notes.clone(),
        run_info: RunInfo {
            timestamp_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            wall_time_s: start.elapsed().as_secs_f64(),
        },
    };
    Ok(Outcome { report, summary })
}

/// Writes `<stem>.csv` and `<stem>.json` under `dir`.
pub fn write_artifacts(outcome: &Outcome, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let csv_path = dir.join(format!("{stem}.csv"));
    let json_path = dir.join(format!("{stem}.json"));
    fs::write(&csv_path, outcome.report.to_csv()?)?;
    let mut json = serde_json::to_vec_pretty(&outcome.summary).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    json.push(b'\n');
    fs::write(&json_path, json)?;
    Ok((csv_path, json_path))
}

/// Runs `f` on a pool of `threads` workers (all cores when 0).
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Runs, writes the artifacts, and turns a failed check into a violation error.
pub fn run(cfg: &ExperimentConfig) -> Result<(Outcome, PathBuf, PathBuf)> {
    let outcome = execute(cfg)?;
    let (c, j) = write_artifacts(&outcome, &cfg.output.dir, &cfg.stem())?;
    if let Some(first) = outcome.report.failures.first() {
        return Err(Error::Violation(first.clone()));
    }
    Ok((outcome, c, j))
}
