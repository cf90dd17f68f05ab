//! Benchmark harness for the noisy ARCH(1) outlier experiment: shared
//! observation record, a large-sample reference filter, replicate runs of
//! each compared filter and per-step MSE of the filter means.

pub mod config;
pub mod converge;
pub mod error;
pub mod filters;
pub mod output;
pub mod run;

pub use config::{parse_filter_list, BenchConfig, FilterSpec};
pub use converge::{convergence_study, ConvergeStudy};
pub use error::BenchError;
pub use filters::{build_filter, FilterStep};
pub use output::{emit_outputs, read_mse_csv, Manifest};
pub use run::{run_benchmark, single_run, BenchmarkResult, FilterRunRecord, MseReport, MseRow};
