//! Results, summary and timing CSVs, and run manifests.
//!
//! The results file holds only deterministic columns, so two runs with the
//! same seed produce identical bytes. Wall-clock times go to a separate
//! `<stem>.timing.csv`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::io::data::fmt_real;
use crate::simulation::ResultsTable;

fn csv_io(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Csv {
        path: path.display().to_string(),
        row: 0,
        column: String::new(),
        message: e.to_string(),
    }
}

fn fmt_set(set: &Option<std::collections::BTreeSet<usize>>) -> String {
    set.as_ref()
        .map(|s| {
            s.iter()
                .map(|k| k.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        })
        .unwrap_or_default()
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

/// Sibling path `<stem>.<suffix>.csv`.
pub fn sidecar_path(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}.csv"))
}

/// Per-cell rows, then one FAILED row per failed cell.
pub fn write_results(path: &Path, table: &ResultsTable) -> Result<()> {
    ensure_parent(path)?;
    let io = csv_io(path);
    let mut w = csv::Writer::from_path(path).map_err(&io)?;
    w.write_record([
        "scenario",
        "replication",
        "method",
        "tau",
        "error",
        "converged",
        "detected",
        "status",
    ])
    .map_err(&io)?;
    for r in &table.rows {
        w.write_record([
            r.scenario.clone(),
            r.replication.to_string(),
            r.method.to_string(),
            fmt_real(r.tau),
            fmt_real(r.error),
            r.converged.to_string(),
            fmt_set(&r.detected),
            "ok".into(),
        ])
        .map_err(&io)?;
    }
    for f in &table.failures {
        w.write_record([
            f.scenario.clone(),
            f.replication.to_string(),
            f.method.to_string(),
            fmt_real(f.tau),
            String::new(),
            "false".into(),
            String::new(),
            format!("FAILED: {}", f.message),
        ])
        .map_err(&io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary(path: &Path, table: &ResultsTable) -> Result<()> {
    ensure_parent(path)?;
    let io = csv_io(path);
    let mut w = csv::Writer::from_path(path).map_err(&io)?;
    w.write_record([
        "scenario",
        "method",
        "tau",
        "replications",
        "mean_error",
        "sd_error",
    ])
    .map_err(&io)?;
    for s in table.summary() {
        w.write_record([
            s.scenario,
            s.method.to_string(),
            fmt_real(s.tau),
            s.replications.to_string(),
            fmt_real(s.mean),
            fmt_real(s.sd),
        ])
        .map_err(&io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_timing(path: &Path, table: &ResultsTable) -> Result<()> {
    ensure_parent(path)?;
    let io = csv_io(path);
    let mut w = csv::Writer::from_path(path).map_err(&io)?;
    w.write_record(["scenario", "replication", "method", "seconds"])
        .map_err(&io)?;
    for r in &table.rows {
        w.write_record([
            r.scenario.clone(),
            r.replication.to_string(),
            r.method.to_string(),
            format!("{:.6}", r.seconds),
        ])
        .map_err(&io)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-cell estimates: one row per cell, intercept then slopes.
pub fn write_estimates(path: &Path, table: &ResultsTable) -> Result<()> {
    ensure_parent(path)?;
    let io = csv_io(path);
    let mut w = csv::Writer::from_path(path).map_err(&io)?;
    let p = table.rows.first().map_or(0, |r| r.estimate.p());
    let mut header = vec![
        "scenario".to_string(),
        "replication".into(),
        "method".into(),
        "intercept".into(),
    ];
    header.extend((1..=p).map(|j| format!("x{j}")));
    w.write_record(&header).map_err(&io)?;
    for r in &table.rows {
        let mut rec = vec![
            r.scenario.clone(),
            r.replication.to_string(),
            r.method.to_string(),
        ];
        rec.extend(r.estimate.to_vec().into_iter().map(fmt_real));
        w.write_record(&rec).map_err(&io)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the results file plus its summary, timing and estimate sidecars.
pub fn write_experiment_outputs(path: &Path, table: &ResultsTable) -> Result<()> {
    write_results(path, table)?;
    write_summary(&sidecar_path(path, "summary"), table)?;
    write_timing(&sidecar_path(path, "timing"), table)?;
    write_estimates(&sidecar_path(path, "estimates"), table)
}

/// Plain-text run record: ordered `key = value` lines, then an optional
/// config echo.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    entries: Vec<(String, String)>,
    config: Option<String>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        let mut m = Self::default();
        m.push("command", command);
        m.push("version", env!("CARGO_PKG_VERSION"));
        m
    }

    pub fn push(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.entries.push((key.to_string(), value.to_string()));
        self
    }

    pub fn push_reals(&mut self, key: &str, values: &[f64]) -> &mut Self {
        let s = values
            .iter()
            .map(|&v| fmt_real(v))
            .collect::<Vec<_>>()
            .join(" ");
        self.push(key, s)
    }

    pub fn set_config(&mut self, text: String) -> &mut Self {
        self.config = Some(text);
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        if let Some(c) = &self.config {
            out.push_str("\n[config]\n");
            out.push_str(c);
            if !c.ends_with('\n') {
                out.push('\n');
            }
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        ensure_parent(path)?;
        fs::write(path, self.render())?;
        Ok(())
    }
}

/// Manifest path for a results file: `<stem>.manifest.txt`.
pub fn manifest_path(results: &Path) -> PathBuf {
    let stem = results
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    results.with_file_name(format!("{stem}.manifest.txt"))
}
