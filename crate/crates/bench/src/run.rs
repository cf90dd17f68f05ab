//! Replicate runs, reference means and the MSE reduction.

use std::time::{Duration, Instant};

use adaptive_apf::{initial_sample, outlier_sequence, ArchModel, ObservationSequence, RngStream, StepObservation};
use rayon::prelude::*;

use crate::config::{BenchConfig, FilterSpec};
use crate::error::BenchError;
use crate::filters::{build_filter, build_reference, AdaptRow, FilterStep};

/// Per-step summary of one filter run.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub mean: f64,
    pub cv2: f64,
    pub entropy: f64,
    pub theta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunFailure {
    pub step: usize,
    pub message: String,
}

#[derive(Clone, Debug)]
pub struct FilterRunRecord {
    pub filter: FilterSpec,
    pub run: usize,
    /// One entry per completed step; stops at the failing step.
    pub steps: Vec<StepRecord>,
    pub adapt_rows: Vec<AdaptRow>,
    pub failure: Option<RunFailure>,
    pub duration: Duration,
}

/// The shared observation record of a benchmark.
pub fn benchmark_observations(config: &BenchConfig) -> Result<ObservationSequence<f64>, BenchError> {
    let mut rng = RngStream::derived(config.seed, "data", 0);
    Ok(outlier_sequence(
        config.arch.into(),
        config.burn_in,
        config.onset,
        config.horizon,
        config.outlier_multiplier,
        &mut rng,
    )?)
}

/// Runs `filter` over the whole record. Numerical failures end the run and
/// are reported in the record rather than as an error.
pub fn run_filter(
    mut filter: Box<dyn FilterStep>,
    config: &BenchConfig,
    obs: &ObservationSequence<f64>,
    rng: &mut RngStream,
    run: usize,
) -> Result<FilterRunRecord, BenchError> {
    let started = Instant::now();
    let model: ArchModel<f64> = ArchModel::new(config.arch.into())?;
    let mut record = FilterRunRecord {
        filter: filter.spec(),
        run,
        steps: Vec::with_capacity(obs.len()),
        adapt_rows: Vec::new(),
        failure: None,
        duration: Duration::ZERO,
    };
    let mut steps = obs.steps();
    let Some((k0, y0)) = steps.next() else {
        return Ok(record);
    };
    let mut sample = match initial_sample(&model, filter.particles(), y0, rng) {
        Ok(s) => s,
        Err(e) => {
            record.failure = Some(RunFailure {
                step: k0,
                message: e.to_string(),
            });
            record.duration = started.elapsed();
            return Ok(record);
        }
    };
    let diag = sample.diagnostics();
    record.steps.push(StepRecord {
        k: k0,
        mean: sample.mean(),
        cv2: diag.cv2,
        entropy: diag.entropy,
        theta: None,
    });
    for (k, y) in steps {
        match filter.step(&sample, StepObservation::new(k, y), rng) {
            Ok(res) => {
                let out = res.output;
                record.steps.push(StepRecord {
                    k,
                    mean: out.sample.mean(),
                    cv2: out.diagnostics.cv2,
                    entropy: out.diagnostics.entropy,
                    theta: res.theta,
                });
                record.adapt_rows.extend(res.adapt_rows);
                sample = out.sample;
            }
            Err(BenchError::Numerical(e)) => {
                record.failure = Some(RunFailure {
                    step: k,
                    message: e.to_string(),
                });
                break;
            }
            Err(e) => return Err(e),
        }
    }
    record.duration = started.elapsed();
    Ok(record)
}

/// Filter means of the reference filter, one per recorded step.
pub fn reference_means(config: &BenchConfig, obs: &ObservationSequence<f64>) -> Result<Vec<f64>, BenchError> {
    let mut rng = RngStream::derived(config.seed, "reference", 0);
    let rec = run_filter(build_reference(config)?, config, obs, &mut rng, 0)?;
    if let Some(f) = rec.failure {
        return Err(BenchError::RunFailed(format!(
            "reference filter failed at step {}: {}",
            f.step, f.message
        )));
    }
    Ok(rec.steps.iter().map(|s| s.mean).collect())
}

/// One filter, one run, with the run's derived random stream.
pub fn single_run(
    spec: FilterSpec,
    config: &BenchConfig,
    obs: &ObservationSequence<f64>,
    run: usize,
) -> Result<FilterRunRecord, BenchError> {
    let mut rng = RngStream::derived(config.seed, spec.label(), run as u64);
    run_filter(build_filter(spec, config)?, config, obs, &mut rng, run)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MseRow {
    pub step: usize,
    pub filter: FilterSpec,
    pub mse: f64,
    pub runs: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterSummary {
    pub filter: FilterSpec,
    /// Mean per-step MSE over the outlier window.
    pub aggregate_mse: f64,
    /// `aggregate_mse` over the bootstrap's, when both exist and the
    /// bootstrap's is positive.
    pub ratio_vs_bootstrap: Option<f64>,
    pub failed_runs: usize,
    /// `(run, step)` of each failure.
    pub failures: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MseReport {
    /// Rows ordered by filter (config order), then step.
    pub rows: Vec<MseRow>,
    pub summaries: Vec<FilterSummary>,
    pub reference_means: Vec<f64>,
    /// Inclusive step range of the outlier window.
    pub window: (usize, usize),
}

impl MseReport {
    pub fn mse(&self, filter: FilterSpec, step: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.filter == filter && r.step == step)
            .map(|r| r.mse)
    }

    pub fn summary(&self, filter: FilterSpec) -> Option<&FilterSummary> {
        self.summaries.iter().find(|s| s.filter == filter)
    }

    /// Per-step MSE ratio of `filter` against `baseline`, where the
    /// baseline's MSE is positive.
    pub fn step_ratio(&self, filter: FilterSpec, baseline: FilterSpec, step: usize) -> Option<f64> {
        let den = self.mse(baseline, step)?;
        (den > 0.0).then(|| self.mse(filter, step).map(|n| n / den)).flatten()
    }
}

/// Reduces run records to per-step MSE against `reference`.
pub fn compute_report(
    config: &BenchConfig,
    first_step: usize,
    reference: &[f64],
    records: &[FilterRunRecord],
) -> MseReport {
    let window = (config.onset, config.onset + config.outlier_window);
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for &filter in &config.filters {
        let mine: Vec<&FilterRunRecord> = records.iter().filter(|r| r.filter == filter).collect();
        let mut window_sum = 0.0;
        let mut window_count = 0usize;
        for (i, &truth) in reference.iter().enumerate() {
            let step = first_step + i;
            let errors: Vec<f64> = mine
                .iter()
                .filter_map(|r| r.steps.get(i))
                .map(|s| (s.mean - truth).powi(2))
                .collect();
            let runs = errors.len();
            let mse = if runs == 0 {
                f64::NAN
            } else {
                errors.iter().sum::<f64>() / runs as f64
            };
            if (window.0..=window.1).contains(&step) {
                window_sum += mse;
                window_count += 1;
            }
            rows.push(MseRow { step, filter, mse, runs });
        }
        let failures: Vec<(usize, usize)> = mine
            .iter()
            .filter_map(|r| r.failure.as_ref().map(|f| (r.run, f.step)))
            .collect();
        summaries.push(FilterSummary {
            filter,
            aggregate_mse: if window_count == 0 {
                f64::NAN
            } else {
                window_sum / window_count as f64
            },
            ratio_vs_bootstrap: None,
            failed_runs: failures.len(),
            failures,
        });
    }
    let boot = summaries
        .iter()
        .find(|s| s.filter == FilterSpec::Bootstrap)
        .map(|s| s.aggregate_mse);
    if let Some(b) = boot.filter(|&b| b > 0.0) {
        for s in &mut summaries {
            if s.aggregate_mse.is_finite() {
                s.ratio_vs_bootstrap = Some(s.aggregate_mse / b);
            }
        }
    }
    MseReport {
        rows,
        summaries,
        reference_means: reference.to_vec(),
        window,
    }
}

/// Everything a benchmark produces.
#[derive(Clone, Debug)]
pub struct BenchmarkResult {
    pub observations: ObservationSequence<f64>,
    pub report: MseReport,
    /// Ordered by filter (config order), then run.
    pub records: Vec<FilterRunRecord>,
    pub reference_duration: Duration,
}

impl BenchmarkResult {
    pub fn records_for(&self, filter: FilterSpec) -> impl Iterator<Item = &FilterRunRecord> {
        self.records.iter().filter(move |r| r.filter == filter)
    }

    /// Total wall-clock time spent in each filter's runs.
    pub fn filter_durations(&self, filters: &[FilterSpec]) -> Vec<(FilterSpec, Duration)> {
        filters
            .iter()
            .map(|&f| (f, self.records_for(f).map(|r| r.duration).sum()))
            .collect()
    }
}

/// Runs the full study: shared data, reference means, `runs` replicates of
/// every configured filter (in parallel) and the MSE reduction.
pub fn run_benchmark(config: &BenchConfig) -> Result<BenchmarkResult, BenchError> {
    config.validate()?;
    let observations = benchmark_observations(config)?;
    let started = Instant::now();
    let reference = if config.filters.is_empty() {
        Vec::new()
    } else {
        reference_means(config, &observations)?
    };
    let reference_duration = started.elapsed();
    let jobs: Vec<(FilterSpec, usize)> = config
        .filters
        .iter()
        .flat_map(|&f| (0..config.runs).map(move |r| (f, r)))
        .collect();
    let records = jobs
        .par_iter()
        .map(|&(f, r)| single_run(f, config, &observations, r))
        .collect::<Result<Vec<_>, _>>()?;
    let report = compute_report(config, observations.first_step, &reference, &records);
    Ok(BenchmarkResult {
        observations,
        report,
        records,
        reference_duration,
    })
}
