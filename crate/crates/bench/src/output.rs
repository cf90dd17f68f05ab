//! Files written by a benchmark.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{BenchConfig, FilterSpec};
use crate::error::BenchError;
use crate::run::{BenchmarkResult, FilterRunRecord, MseRow};

pub const PLOT_SCRIPT: &str = r#"#!/usr/bin/env python3
"""Plot per-step MSE (log scale) for every filter in mse.csv."""
import csv
import sys
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else "mse.csv"
out = sys.argv[2] if len(sys.argv) > 2 else "mse.png"
series = defaultdict(list)
with open(path, newline="") as fh:
    for row in csv.DictReader(fh):
        mse = float(row["mse"])
        if mse > 0:
            series[row["filter"]].append((int(row["step"]), mse))

fig, ax = plt.subplots(figsize=(8, 5))
for name, points in series.items():
    steps, values = zip(*sorted(points))
    style = "--" if name.endswith("-3n") else "-"
    ax.plot(steps, values, style, marker="o", markersize=3, label=name)
ax.set_yscale("log")
ax.set_xlabel("step")
ax.set_ylabel("MSE of filter mean")
ax.legend()
fig.tight_layout()
fig.savefig(out, dpi=150)
print(out)
"#;

/// Paths written by [`emit_outputs`], in write order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub files: Vec<PathBuf>,
}

impl Manifest {
    pub fn file_names(&self) -> Vec<String> {
        self.files
            .iter()
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect()
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BenchError + '_ {
    move |source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> BenchError + '_ {
    move |e| BenchError::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, BenchError> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn write_rows<I, R>(path: &Path, header: &[&str], rows: I) -> Result<(), BenchError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(create(path)?);
    let err = csv_err(path);
    w.write_record(header).map_err(&err)?;
    for row in rows {
        w.write_record(row).map_err(&err)?;
    }
    w.flush().map_err(io_err(path))
}

fn opt(v: Option<f64>) -> String {
    v.map(|t| t.to_string()).unwrap_or_default()
}

pub fn write_mse_csv(path: &Path, rows: &[MseRow]) -> Result<(), BenchError> {
    write_rows(
        path,
        &["step", "filter", "mse", "runs"],
        rows.iter()
            .map(|r| [r.step.to_string(), r.filter.label().to_string(), r.mse.to_string(), r.runs.to_string()]),
    )
}

pub fn read_mse_csv(path: &Path) -> Result<Vec<MseRow>, BenchError> {
    let err = csv_err(path);
    let bad = |m: String| BenchError::Csv {
        path: path.to_path_buf(),
        message: m,
    };
    let mut r = csv::Reader::from_path(path).map_err(&err)?;
    if r.headers().map_err(&err)? != vec!["step", "filter", "mse", "runs"] {
        return Err(bad("expected header step,filter,mse,runs".into()));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(&err)?;
        let field = |j: usize| rec.get(j).ok_or_else(|| bad(format!("row {i}: missing column {j}")));
        rows.push(MseRow {
            step: field(0)?.parse().map_err(|_| bad(format!("row {i}: bad step")))?,
            filter: field(1)?.parse().map_err(|_| bad(format!("row {i}: bad filter")))?,
            mse: field(2)?.parse().map_err(|_| bad(format!("row {i}: bad mse")))?,
            runs: field(3)?.parse().map_err(|_| bad(format!("row {i}: bad runs")))?,
        });
    }
    Ok(rows)
}

pub fn write_trace_csv<'a>(path: &Path, records: impl IntoIterator<Item = &'a FilterRunRecord>) -> Result<(), BenchError> {
    let rows = records.into_iter().flat_map(|r| {
        r.steps.iter().map(move |s| {
            [
                s.k.to_string(),
                r.run.to_string(),
                s.mean.to_string(),
                s.cv2.to_string(),
                s.entropy.to_string(),
                opt(s.theta),
            ]
        })
    });
    write_rows(path, &["k", "run", "mean", "cv2", "entropy", "theta"], rows)
}

pub fn write_adapt_csv<'a>(path: &Path, records: impl IntoIterator<Item = &'a FilterRunRecord>) -> Result<(), BenchError> {
    let rows = records.into_iter().flat_map(|r| {
        r.adapt_rows.iter().map(move |a| {
            [
                a.k.to_string(),
                r.run.to_string(),
                a.iter.to_string(),
                a.theta.clone(),
                a.objective.to_string(),
                a.sample_size.to_string(),
            ]
        })
    });
    write_rows(path, &["k", "run", "iter", "theta", "objective", "M"], rows)
}

#[derive(Serialize)]
struct Timings {
    reference_seconds: f64,
    filters: Vec<FilterTiming>,
}

#[derive(Serialize)]
struct FilterTiming {
    filter: String,
    particles: usize,
    total_seconds: f64,
    mean_run_seconds: f64,
}

fn write_config_echo(config: &BenchConfig, dir: &Path, manifest: &mut Manifest) -> Result<(), BenchError> {
    let path = dir.join("config.toml");
    let mut f = create(&path)?;
    f.write_all(config.to_toml_string().as_bytes()).map_err(io_err(&path))?;
    f.flush().map_err(io_err(&path))?;
    manifest.files.push(path);
    Ok(())
}

/// Writes every artifact of `result` into `dir` (created if missing).
///
/// With no filters configured only the configuration echo is written.
pub fn emit_outputs(config: &BenchConfig, result: &BenchmarkResult, dir: &Path) -> Result<Manifest, BenchError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut manifest = Manifest::default();
    write_config_echo(config, dir, &mut manifest)?;
    if config.filters.is_empty() {
        return Ok(manifest);
    }

    let path = dir.join("observations.csv");
    result
        .observations
        .save_csv(&path)
        .map_err(|e| BenchError::Csv {
            path: path.clone(),
            message: e.to_string(),
        })?;
    manifest.files.push(path);

    let path = dir.join("mse.csv");
    write_mse_csv(&path, &result.report.rows)?;
    manifest.files.push(path);

    let path = dir.join("summary.csv");
    let (lo, hi) = result.report.window;
    write_rows(
        &path,
        &["filter", "window_start", "window_end", "aggregate_mse", "ratio_vs_bootstrap", "failed_runs", "failures"],
        result.report.summaries.iter().map(|s| {
            let failures = s
                .failures
                .iter()
                .map(|(run, step)| format!("{run}@{step}"))
                .collect::<Vec<_>>()
                .join(";");
            [
                s.filter.label().to_string(),
                lo.to_string(),
                hi.to_string(),
                s.aggregate_mse.to_string(),
                opt(s.ratio_vs_bootstrap),
                s.failed_runs.to_string(),
                failures,
            ]
        }),
    )?;
    manifest.files.push(path);

    for &filter in &config.filters {
        let path = dir.join(format!("trace_{}.csv", filter.label()));
        write_trace_csv(&path, result.records_for(filter))?;
        manifest.files.push(path);
        if filter.is_adaptive() {
            let path = dir.join(format!("adapt_{}.csv", filter.label()));
            write_adapt_csv(&path, result.records_for(filter))?;
            manifest.files.push(path);
        }
    }

    let path = dir.join("plot_mse.py");
    std::fs::write(&path, PLOT_SCRIPT).map_err(io_err(&path))?;
    manifest.files.push(path);

    let path = dir.join("timings.json");
    let timings = Timings {
        reference_seconds: result.reference_duration.as_secs_f64(),
        filters: result
            .filter_durations(&config.filters)
            .into_iter()
            .map(|(f, d)| FilterTiming {
                filter: f.label().to_string(),
                particles: if f == FilterSpec::Bootstrap3n { 3 * config.particles } else { config.particles },
                total_seconds: d.as_secs_f64(),
                mean_run_seconds: d.as_secs_f64() / config.runs as f64,
            })
            .collect(),
    };
    let mut f = create(&path)?;
    serde_json::to_writer_pretty(&mut f, &timings).map_err(|e| BenchError::Csv {
        path: path.clone(),
        message: e.to_string(),
    })?;
    f.flush().map_err(io_err(&path))?;
    manifest.files.push(path);
    Ok(manifest)
}
