use std::path::{Path, PathBuf};
use std::process::ExitCode;

use apf_bench::output::{write_adapt_csv, write_trace_csv};
use apf_bench::run::benchmark_observations;
use apf_bench::{convergence_study, emit_outputs, parse_filter_list, run_benchmark, single_run, BenchConfig, BenchError};
use clap::{Args, Parser, Subcommand};

/// Adaptive auxiliary particle filter benchmarks on ARCH(1) observed in noise.
#[derive(Parser)]
#[command(name = "apf-bench", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the shared observation record to observations.csv.
    Simulate(Common),
    /// One run of one filter with its full per-step trace.
    Run {
        #[command(flatten)]
        common: Common,
        /// Replicate index; selects the derived random stream.
        #[arg(long, default_value_t = 0)]
        run: usize,
    },
    /// Full MSE study over every configured filter.
    Bench(Common),
    /// Entropy and CV² convergence to their limits as the sample size grows.
    Converge(Common),
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated filter names.
    #[arg(long)]
    filters: Option<String>,
    /// Multiplies particle counts and the number of runs.
    #[arg(long)]
    scale: Option<f64>,
}

impl Common {
    fn resolve(&self) -> Result<BenchConfig, BenchError> {
        let mut c = match &self.config {
            Some(p) => BenchConfig::load(p)?,
            None => BenchConfig::default(),
        };
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(o) = &self.out {
            c.output_dir = o.clone();
        }
        if let Some(f) = &self.filters {
            c.filters = parse_filter_list(f)?;
        }
        if let Some(s) = self.scale {
            c = c.scaled(s)?;
        }
        c.validate()?;
        Ok(c)
    }
}

fn mkdir(dir: &Path) -> Result<(), BenchError> {
    std::fs::create_dir_all(dir).map_err(|source| BenchError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn execute(cmd: Command) -> Result<(), BenchError> {
    match cmd {
        Command::Simulate(common) => {
            let c = common.resolve()?;
            mkdir(&c.output_dir)?;
            let path = c.output_dir.join("observations.csv");
            benchmark_observations(&c)?
                .save_csv(&path)
                .map_err(|e| BenchError::Csv {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
            println!("{}", path.display());
        }
        Command::Run { common, run } => {
            let c = common.resolve()?;
            let [spec] = c.filters[..] else {
                return Err(BenchError::Config(format!(
                    "run needs exactly one filter, got {}",
                    c.filters.len()
                )));
            };
            let obs = benchmark_observations(&c)?;
            let record = single_run(spec, &c, &obs, run)?;
            mkdir(&c.output_dir)?;
            let trace = c.output_dir.join(format!("trace_{spec}.csv"));
            write_trace_csv(&trace, [&record])?;
            println!("{}", trace.display());
            if spec.is_adaptive() {
                let adapt = c.output_dir.join(format!("adapt_{spec}.csv"));
                write_adapt_csv(&adapt, [&record])?;
                println!("{}", adapt.display());
            }
            if let Some(f) = record.failure {
                return Err(BenchError::RunFailed(format!("{spec} failed at step {}: {}", f.step, f.message)));
            }
            eprintln!("{spec}: {} steps in {:.3}s", record.steps.len(), record.duration.as_secs_f64());
        }
        Command::Bench(common) => {
            let c = common.resolve()?;
            let result = run_benchmark(&c)?;
            let manifest = emit_outputs(&c, &result, &c.output_dir)?;
            for f in &manifest.files {
                println!("{}", f.display());
            }
            for s in &result.report.summaries {
                let ratio = s.ratio_vs_bootstrap.map(|r| format!("{r:.4}")).unwrap_or_else(|| "-".into());
                eprintln!(
                    "{:<16} window MSE {:.6e}  vs bootstrap {}  failed runs {}",
                    s.filter.label(),
                    s.aggregate_mse,
                    ratio,
                    s.failed_runs
                );
            }
        }
        Command::Converge(common) => {
            let c = common.resolve()?;
            let study = convergence_study(&c)?;
            mkdir(&c.output_dir)?;
            let path = c.output_dir.join("converge.csv");
            let mut w = csv::Writer::from_path(&path).map_err(|e| BenchError::Csv {
                path: path.clone(),
                message: e.to_string(),
            })?;
            let csv_err = |e: csv::Error| BenchError::Csv {
                path: path.clone(),
                message: e.to_string(),
            };
            w.write_record(["N", "seed", "entropy", "cv2", "limit_kld", "limit_csd"])
                .map_err(csv_err)?;
            for s in &study.samples {
                w.write_record([
                    s.particles.to_string(),
                    s.seed.to_string(),
                    s.entropy.to_string(),
                    s.cv2.to_string(),
                    study.limit_kld.to_string(),
                    study.limit_csd.to_string(),
                ])
                .map_err(csv_err)?;
            }
            w.flush().map_err(|source| BenchError::Io {
                path: path.clone(),
                source,
            })?;
            println!("{}", path.display());
            eprintln!("y = {}  limit KLD {:.6}  limit CSD {:.6}", study.y, study.limit_kld, study.limit_csd);
            for l in &study.levels {
                eprintln!(
                    "N = {:>8}  mean entropy {:.6}  mean cv2 {:.6}  median |entropy err| {:.4}  median cv2 rel err {:.4}",
                    l.particles, l.mean_entropy, l.mean_cv2, l.median_entropy_error, l.median_cv2_error
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
