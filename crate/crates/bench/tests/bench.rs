use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;

use adaptive_apf::{arch_model, ArchParams, RngStream, StateSpaceModel, StepObservation, WeightedSample};
use apf_bench::filters::build_reference;
use apf_bench::run::{benchmark_observations, compute_report, reference_means, run_filter, FilterRunRecord, StepRecord};
use apf_bench::{
    build_filter, emit_outputs, read_mse_csv, run_benchmark, single_run, BenchConfig, BenchError, FilterSpec,
    FilterStep,
};

fn small(filters: &[FilterSpec], runs: usize, horizon: usize) -> BenchConfig {
    BenchConfig {
        particles: 100,
        reference_particles: Some(1_000),
        runs,
        burn_in: 100,
        onset: 101,
        horizon,
        filters: filters.to_vec(),
        seed: 17,
        ..BenchConfig::default()
    }
}

fn csv_table(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

#[test]
fn smoke_all_filters() {
    let c = small(&FilterSpec::ALL, 2, 3);
    let result = run_benchmark(&c).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = emit_outputs(&c, &result, dir.path()).unwrap();
    let names = manifest.file_names();
    for f in FilterSpec::ALL {
        assert!(names.contains(&format!("trace_{f}.csv")), "{names:?}");
        assert_eq!(names.contains(&format!("adapt_{f}.csv")), f.is_adaptive());
    }
    for want in ["config.toml", "mse.csv", "summary.csv", "plot_mse.py", "timings.json", "observations.csv"] {
        assert!(names.iter().any(|n| n == want), "missing {want}");
    }

    let (h, rows) = csv_table(&dir.path().join("mse.csv"));
    assert_eq!(h, ["step", "filter", "mse", "runs"]);
    assert_eq!(rows.len(), 8 * 3);
    for r in &rows {
        let mse: f64 = r[2].parse().unwrap();
        assert!(mse >= 0.0 && mse.is_finite());
        assert_eq!(r[3], "2");
    }
    for f in FilterSpec::ALL {
        let (h, rows) = csv_table(&dir.path().join(format!("trace_{f}.csv")));
        assert_eq!(h, ["k", "run", "mean", "cv2", "entropy", "theta"]);
        assert_eq!(rows.len(), 2 * 3, "{f}: one row per step per run");
        for r in &rows {
            assert_eq!(r[5].is_empty(), !f.is_adaptive() || r[0] == "100", "{f} {r:?}");
        }
        if f.is_adaptive() {
            let (h, rows) = csv_table(&dir.path().join(format!("adapt_{f}.csv")));
            assert_eq!(h, ["k", "run", "iter", "theta", "objective", "M"]);
            assert!(!rows.is_empty());
        }
    }
    let timings: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("timings.json")).unwrap()).unwrap();
    assert_eq!(timings["filters"].as_array().unwrap().len(), 8);
    let script = std::fs::read_to_string(dir.path().join("plot_mse.py")).unwrap();
    assert!(script.contains("set_yscale(\"log\")") && script.contains("mse.csv"));
    let echo = BenchConfig::load(&dir.path().join("config.toml")).unwrap();
    assert_eq!(echo, c);
}

#[test]
fn identical_config_gives_identical_files() {
    let c = small(&[FilterSpec::Bootstrap, FilterSpec::AdaptiveKld, FilterSpec::Ce], 3, 14);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = emit_outputs(&c, &run_benchmark(&c).unwrap(), a.path()).unwrap();
    emit_outputs(&c, &run_benchmark(&c).unwrap(), b.path()).unwrap();
    for name in ma.file_names() {
        if name == "timings.json" {
            continue;
        }
        let x = std::fs::read(a.path().join(&name)).unwrap();
        let y = std::fs::read(b.path().join(&name)).unwrap();
        assert!(x == y, "{name} differs");
    }
}

#[test]
fn mse_csv_round_trips() {
    let c = small(&[FilterSpec::Bootstrap, FilterSpec::ClosedFormKld, FilterSpec::Optimal], 3, 12);
    let result = run_benchmark(&c).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit_outputs(&c, &result, dir.path()).unwrap();
    let back = read_mse_csv(&dir.path().join("mse.csv")).unwrap();
    assert_eq!(back, result.report.rows);
}

#[test]
fn seven_filters_twenty_steps_give_140_rows() {
    let seven: Vec<FilterSpec> = FilterSpec::ALL
        .into_iter()
        .filter(|&f| f != FilterSpec::Bootstrap3n)
        .collect();
    let mut c = small(&seven, 2, 20);
    c.onset = 110;
    let result = run_benchmark(&c).unwrap();
    assert_eq!(result.report.rows.len(), 7 * 20);
    let dir = tempfile::tempdir().unwrap();
    emit_outputs(&c, &result, dir.path()).unwrap();
    assert_eq!(csv_table(&dir.path().join("mse.csv")).1.len(), 140);
}

#[test]
fn empty_filter_list_writes_only_config() {
    let c = small(&[], 2, 3);
    let result = run_benchmark(&c).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = emit_outputs(&c, &result, dir.path()).unwrap();
    assert_eq!(manifest.file_names(), ["config.toml"]);
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
}

#[test]
fn unwritable_directory_names_path() {
    let c = small(&[FilterSpec::Bootstrap], 2, 3);
    let result = run_benchmark(&c).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let target = blocker.join("out");
    match emit_outputs(&c, &result, &target) {
        Err(BenchError::Io { path, .. }) => assert_eq!(path, target),
        other => panic!("{other:?}"),
    }
}

fn first_step(spec: FilterSpec, c: &BenchConfig, seed: u64) -> apf_bench::filters::StepResult {
    let model = arch_model::<f64>(c.arch.into()).unwrap();
    let mut rng = RngStream::new(seed);
    let s = WeightedSample::uniform((0..c.particles).map(|_| model.sample_initial(&mut rng)).collect()).unwrap();
    build_filter(spec, c)
        .unwrap()
        .step(&s, StepObservation::new(1, 60.0), &mut rng)
        .unwrap()
}

#[test]
fn optimal_filter_weights_are_uniform() {
    let c = small(&[], 2, 3);
    let res = first_step(FilterSpec::Optimal, &c, 3);
    let w = res.output.sample.weights();
    let (lo, hi) = w.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
    assert!(hi / lo - 1.0 <= 1e-12, "{lo} {hi}");
    assert!(res.output.diagnostics.cv2 <= 1e-12, "{:?}", res.output.diagnostics);
    assert!(res.theta.is_none() && res.adapt_rows.is_empty());
}

#[test]
fn bootstrap_weights_are_likelihoods() {
    let c = small(&[], 2, 3);
    let model = arch_model::<f64>(ArchParams::new(1.0, 0.99, 10.0)).unwrap();
    let res = first_step(FilterSpec::Bootstrap, &c, 4);
    let s = &res.output.sample;
    let log_g: Vec<f64> = s.positions().iter().map(|&x| model.likelihood_log_density(x, 60.0)).collect();
    for i in 1..s.len() {
        let want = log_g[i] - log_g[0];
        let got = (s.weights()[i] / s.weights()[0]).ln();
        assert!((got - want).abs() <= 1e-9 * (1.0 + want.abs()), "{i}: {got} vs {want}");
    }
}

#[test]
fn bootstrap_3n_uses_three_times_the_particles() {
    let c = small(&[], 2, 3);
    assert_eq!(build_filter(FilterSpec::Bootstrap3n, &c).unwrap().particles(), 300);
    assert_eq!(first_step(FilterSpec::Bootstrap3n, &c, 5).output.sample.len(), 300);
}

#[test]
fn ce_trace_has_configured_iterations() {
    let mut c = small(&[], 2, 3);
    c.particles = 1_000;
    c.reference_particles = Some(10_000);
    let res = first_step(FilterSpec::Ce, &c, 6);
    let inner: Vec<_> = res.adapt_rows.iter().filter(|r| r.sample_size == 100).collect();
    assert_eq!(inner.len(), 5);
    assert_eq!(inner[0].theta, "10");
    assert_eq!(res.adapt_rows.len(), 6);
    assert_eq!(res.adapt_rows[5].sample_size, 1_000);
    assert!(res.theta.unwrap() > 0.5 && res.theta.unwrap() < 2.0);
}

#[test]
fn shared_data_and_pure_run_seeds() {
    let a = small(&[FilterSpec::Bootstrap, FilterSpec::Ce], 3, 8);
    let b = small(&[FilterSpec::Optimal], 2, 8);
    let obs = benchmark_observations(&a).unwrap();
    assert_eq!(obs, benchmark_observations(&b).unwrap());

    let result = run_benchmark(&a).unwrap();
    for spec in [FilterSpec::Bootstrap, FilterSpec::Ce] {
        let in_bench = result.records_for(spec).find(|r| r.run == 2).unwrap();
        let alone = single_run(spec, &a, &obs, 2).unwrap();
        assert_eq!(alone.steps, in_bench.steps);
    }
    let r0 = &result.records_for(FilterSpec::Bootstrap).find(|r| r.run == 0).unwrap().steps;
    let r1 = &result.records_for(FilterSpec::Bootstrap).find(|r| r.run == 1).unwrap().steps;
    assert_ne!(r0, r1);
}

#[test]
fn reference_means_settle_as_reference_grows() {
    let mut c = small(&[FilterSpec::Optimal], 20, 16);
    c.particles = 200;
    c.onset = 110;
    c.reference_particles = Some(2_000);
    let obs = benchmark_observations(&c).unwrap();
    let coarse = reference_means(&c, &obs).unwrap();
    c.reference_particles = Some(8_000);
    let result = run_benchmark(&c).unwrap();
    let fine = &result.report.reference_means;
    for (i, (a, b)) in coarse.iter().zip(fine).enumerate() {
        let step = obs.first_step + i;
        let mse = result.report.mse(FilterSpec::Optimal, step).unwrap();
        assert!((a - b).powi(2) < mse, "step {step}: shift {} vs MSE {mse}", (a - b).powi(2));
    }
}

struct FailsAt(usize);

impl FilterStep for FailsAt {
    fn spec(&self) -> FilterSpec {
        FilterSpec::Bootstrap
    }
    fn particles(&self) -> usize {
        50
    }
    fn step(
        &mut self,
        sample: &WeightedSample<f64>,
        obs: StepObservation<f64>,
        rng: &mut RngStream,
    ) -> Result<apf_bench::filters::StepResult, BenchError> {
        if obs.step == self.0 {
            return Err(adaptive_apf::Error::ParticleDeath { step: obs.step }.into());
        }
        let c = small(&[], 2, 3);
        build_filter(FilterSpec::Bootstrap, &c).unwrap().step(sample, obs, rng).map(|mut r| {
            r.theta = None;
            r
        })
    }
}

#[test]
fn failed_runs_are_recorded_with_their_step() {
    let c = small(&[FilterSpec::Bootstrap], 2, 6);
    let obs = benchmark_observations(&c).unwrap();
    let reference = reference_means(&c, &obs).unwrap();
    let ok = single_run(FilterSpec::Bootstrap, &c, &obs, 0).unwrap();
    let bad = run_filter(Box::new(FailsAt(103)), &c, &obs, &mut RngStream::new(1), 1).unwrap();
    assert_eq!(bad.failure.as_ref().unwrap().step, 103);
    assert_eq!(bad.steps.len(), 3);
    let report = compute_report(&c, obs.first_step, &reference, &[ok, bad]);
    let runs: BTreeMap<usize, usize> = report.rows.iter().map(|r| (r.step, r.runs)).collect();
    assert_eq!(runs[&102], 2);
    assert_eq!(runs[&103], 1);
    let s = report.summary(FilterSpec::Bootstrap).unwrap();
    assert_eq!(s.failed_runs, 1);
    assert_eq!(s.failures, vec![(1, 103)]);
}

#[test]
fn report_ratios_only_against_positive_bootstrap() {
    let c = BenchConfig {
        onset: 100,
        outlier_window: 1,
        ..small(&[FilterSpec::Bootstrap, FilterSpec::Optimal], 2, 2)
    };
    let rec = |filter, run, means: [f64; 2]| FilterRunRecord {
        filter,
        run,
        steps: means
            .iter()
            .enumerate()
            .map(|(i, &mean)| StepRecord { k: 100 + i, mean, cv2: 0.0, entropy: 0.0, theta: None })
            .collect(),
        adapt_rows: Vec::new(),
        failure: None,
        duration: Default::default(),
    };
    let records = [
        rec(FilterSpec::Bootstrap, 0, [1.0, 2.0]),
        rec(FilterSpec::Bootstrap, 1, [1.0, 0.0]),
        rec(FilterSpec::Optimal, 0, [1.5, 1.0]),
        rec(FilterSpec::Optimal, 1, [0.5, 1.0]),
    ];
    let report = compute_report(&c, 100, &[1.0, 1.0], &records);
    assert_eq!(report.mse(FilterSpec::Bootstrap, 101), Some(1.0));
    assert_eq!(report.mse(FilterSpec::Optimal, 100), Some(0.25));
    assert_eq!(report.summary(FilterSpec::Bootstrap).unwrap().aggregate_mse, 0.5);
    assert_eq!(report.summary(FilterSpec::Optimal).unwrap().ratio_vs_bootstrap, Some(0.25));
    assert_eq!(report.step_ratio(FilterSpec::Optimal, FilterSpec::Bootstrap, 100), None);

    let flat = compute_report(&c, 100, &[1.0, 1.0], &[rec(FilterSpec::Bootstrap, 0, [1.0, 1.0])]);
    assert_eq!(flat.summary(FilterSpec::Bootstrap).unwrap().ratio_vs_bootstrap, None);
    let _ = build_reference(&c).unwrap();
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_apf-bench")).args(args).output().unwrap()
}

#[test]
fn cli_exit_codes_and_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "particles = 100\nreference_particles = 1000\nruns = 2\nhorizon = 12\n").unwrap();
    let cfg = cfg.to_str().unwrap();

    let o = cli(&["simulate", "--config", cfg, "--out", out, "--seed", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let obs = std::fs::read_to_string(dir.path().join("observations.csv")).unwrap();
    assert!(obs.starts_with("k,y\n100,"));
    assert_eq!(obs.lines().count(), 13);

    let o = cli(&["run", "--config", cfg, "--out", out, "--filters", "adaptive-csd"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(csv_table(&dir.path().join("trace_adaptive-csd.csv")).1.len(), 12);
    assert!(dir.path().join("adapt_adaptive-csd.csv").exists());

    let bench_out = dir.path().join("bench");
    let o = cli(&["bench", "--config", cfg, "--out", bench_out.to_str().unwrap(), "--filters", "bootstrap,optimal", "--scale", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let (_, rows) = csv_table(&bench_out.join("mse.csv"));
    assert_eq!(rows.len(), 24);
    assert!(rows.iter().all(|r| r[3] == "4"));

    let o = cli(&["bench", "--config", cfg, "--out", out, "--filters", "bootstrap,kalman"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("closed-form-kld"));
    assert_eq!(cli(&["bench", "--config", "/nonexistent/x.toml"]).status.code(), Some(2));
    assert_eq!(cli(&["run", "--config", cfg, "--filters", "ce,optimal"]).status.code(), Some(2));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "particles = 10\nreference_particles = 100\nruns = 2\n[arch]\nbeta0 = 1.0\nbeta1 = 0.99\nsigma_v2 = 1e-320\n").unwrap();
    let o = cli(&["run", "--config", bad.to_str().unwrap(), "--out", out, "--filters", "bootstrap"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}
