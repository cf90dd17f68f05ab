//! Benchmark configuration, read from TOML.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use adaptive_apf::{AdaptOptions, ArchParams, CeOptions, Criterion, Optimizer};
use serde::{Deserialize, Serialize};

use crate::error::BenchError;

/// The filter variants of the outlier experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum FilterSpec {
    /// Unit adjustment weights, prior kernel.
    Bootstrap,
    /// Chi-square optimal adjustment weights for the prior kernel.
    Chi2Prior,
    /// Scale family adapted by minimizing the weight CV².
    AdaptiveCsd,
    /// Scale family adapted by minimizing the weight entropy.
    AdaptiveKld,
    /// Scale family adapted by minimizing the closed-form KL divergence.
    ClosedFormKld,
    /// Scale family adapted by cross-entropy iterations.
    Ce,
    /// Optimal adjustment weights and kernel.
    Optimal,
    /// Bootstrap with three times the particles.
    Bootstrap3n,
}

impl FilterSpec {
    pub const ALL: [FilterSpec; 8] = [
        FilterSpec::Bootstrap,
        FilterSpec::Chi2Prior,
        FilterSpec::AdaptiveCsd,
        FilterSpec::AdaptiveKld,
        FilterSpec::ClosedFormKld,
        FilterSpec::Ce,
        FilterSpec::Optimal,
        FilterSpec::Bootstrap3n,
    ];

    pub fn label(self) -> &'static str {
        match self {
            FilterSpec::Bootstrap => "bootstrap",
            FilterSpec::Chi2Prior => "chi2-prior",
            FilterSpec::AdaptiveCsd => "adaptive-csd",
            FilterSpec::AdaptiveKld => "adaptive-kld",
            FilterSpec::ClosedFormKld => "closed-form-kld",
            FilterSpec::Ce => "ce",
            FilterSpec::Optimal => "optimal",
            FilterSpec::Bootstrap3n => "bootstrap-3n",
        }
    }

    /// Whether the filter tunes its kernel at every step.
    pub fn is_adaptive(self) -> bool {
        matches!(
            self,
            FilterSpec::AdaptiveCsd | FilterSpec::AdaptiveKld | FilterSpec::ClosedFormKld | FilterSpec::Ce
        )
    }

    pub fn valid_labels() -> String {
        Self::ALL.iter().map(|f| f.label()).collect::<Vec<_>>().join(", ")
    }
}

impl fmt::Display for FilterSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for FilterSpec {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|f| f.label() == s.trim())
            .ok_or_else(|| {
                BenchError::Config(format!("unknown filter '{s}'; valid filters: {}", Self::valid_labels()))
            })
    }
}

impl TryFrom<String> for FilterSpec {
    type Error = BenchError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<FilterSpec> for String {
    fn from(f: FilterSpec) -> String {
        f.label().to_string()
    }
}

/// Parses a comma-separated filter list.
pub fn parse_filter_list(list: &str) -> Result<Vec<FilterSpec>, BenchError> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(FilterSpec::from_str)
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub beta0: f64,
    pub beta1: f64,
    pub sigma_v2: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            beta0: 1.0,
            beta1: 0.99,
            sigma_v2: 10.0,
        }
    }
}

impl From<ArchConfig> for ArchParams {
    fn from(a: ArchConfig) -> Self {
        ArchParams::new(a.beta0, a.beta1, a.sigma_v2)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CeConfig {
    pub iterations: usize,
    /// Explicit per-iteration particle counts; when empty every iteration
    /// uses `size_fraction · N`.
    pub sizes: Vec<usize>,
    pub size_fraction: f64,
    pub theta0: f64,
}

impl Default for CeConfig {
    fn default() -> Self {
        Self {
            iterations: 5,
            sizes: Vec::new(),
            size_fraction: 0.1,
            theta0: 10.0,
        }
    }
}

impl CeConfig {
    pub fn options(&self, particles: usize) -> CeOptions<f64> {
        let sizes = if self.sizes.is_empty() {
            let m = ((particles as f64) * self.size_fraction).round().max(1.0) as usize;
            vec![m; self.iterations]
        } else {
            self.sizes.clone()
        };
        CeOptions {
            iterations: self.iterations,
            sizes,
            theta0: vec![self.theta0],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerConfig {
    GoldenSection,
    FiniteDifferenceDescent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptConfig {
    pub trigger_threshold: f64,
    pub optimizer: OptimizerConfig,
    pub max_evals: usize,
    pub tolerance: f64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        let d = AdaptOptions::default();
        Self {
            trigger_threshold: d.trigger_threshold,
            optimizer: OptimizerConfig::GoldenSection,
            max_evals: d.max_evals,
            tolerance: d.tolerance,
        }
    }
}

impl AdaptConfig {
    pub fn options(&self, criterion: Criterion) -> AdaptOptions {
        AdaptOptions {
            criterion,
            trigger_threshold: self.trigger_threshold,
            optimizer: match self.optimizer {
                OptimizerConfig::GoldenSection => Optimizer::GoldenSection,
                OptimizerConfig::FiniteDifferenceDescent => Optimizer::FiniteDifferenceDescent,
            },
            max_evals: self.max_evals,
            tolerance: self.tolerance,
        }
    }
}

/// Setup of the convergence study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergeConfig {
    pub sizes: Vec<usize>,
    pub seeds: usize,
    /// Next observation; defaults to the outlier level.
    pub y: Option<f64>,
}

impl Default for ConvergeConfig {
    fn default() -> Self {
        Self {
            sizes: vec![1_000, 10_000, 100_000],
            seeds: 20,
            y: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub arch: ArchConfig,
    /// Particles per filter.
    pub particles: usize,
    /// Reference-filter particles; `50 · particles` when absent.
    pub reference_particles: Option<usize>,
    pub runs: usize,
    /// First recorded step; the state process is simulated from step 0.
    pub burn_in: usize,
    /// First step whose observation is replaced by the outlier level.
    pub onset: usize,
    /// Number of recorded steps, starting at `burn_in`.
    pub horizon: usize,
    /// Outlier level in units of the stationary standard deviation.
    pub outlier_multiplier: f64,
    /// Steps after onset included in the aggregate MSE.
    pub outlier_window: usize,
    pub filters: Vec<FilterSpec>,
    pub seed: u64,
    pub ce: CeConfig,
    pub adapt: AdaptConfig,
    pub converge: ConvergeConfig,
    pub output_dir: PathBuf,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            arch: ArchConfig::default(),
            particles: 1_000,
            reference_particles: None,
            runs: 50,
            burn_in: 100,
            onset: 110,
            horizon: 26,
            outlier_multiplier: 6.0,
            outlier_window: 10,
            filters: FilterSpec::ALL.to_vec(),
            seed: 1,
            ce: CeConfig::default(),
            adapt: AdaptConfig::default(),
            converge: ConvergeConfig::default(),
            output_dir: PathBuf::from("bench-out"),
        }
    }
}

impl BenchConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, BenchError> {
        toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BenchError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            BenchError::Config(m) => BenchError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn reference_particles(&self) -> usize {
        self.reference_particles.unwrap_or(50 * self.particles)
    }

    pub fn last_step(&self) -> usize {
        self.burn_in + self.horizon - 1
    }

    /// Multiplies particle counts and runs by `factor`.
    pub fn scaled(mut self, factor: f64) -> Result<Self, BenchError> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(BenchError::Config(format!("scale must be positive, got {factor}")));
        }
        let scale = |n: usize| ((n as f64) * factor).round().max(1.0) as usize;
        self.reference_particles = Some(scale(self.reference_particles()));
        self.particles = scale(self.particles);
        self.runs = scale(self.runs);
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let err = |m: String| Err(BenchError::Config(m));
        let params: ArchParams = self.arch.into();
        params.validate().map_err(|e| BenchError::Config(e.to_string()))?;
        if params.stationary_variance().is_none() {
            return err("arch.beta1 must be below 1 for a stationary outlier level".into());
        }
        if self.particles == 0 {
            return err("particles must be positive".into());
        }
        if self.reference_particles() < 10 * self.particles {
            return err(format!(
                "reference_particles ({}) must be at least 10 x particles ({})",
                self.reference_particles(),
                self.particles
            ));
        }
        if self.runs < 2 {
            return err(format!("runs must be at least 2, got {}", self.runs));
        }
        if self.horizon == 0 {
            return err("horizon must be positive".into());
        }
        if self.onset < self.burn_in {
            return err(format!("onset {} precedes burn_in {}", self.onset, self.burn_in));
        }
        if !(self.outlier_multiplier.is_finite()) {
            return err("outlier_multiplier must be finite".into());
        }
        self.ce
            .options(self.particles)
            .validate(1)
            .map_err(|e| BenchError::Config(format!("ce: {e}")))?;
        if !(self.ce.theta0 > 0.0) {
            return err("ce.theta0 must be positive".into());
        }
        self.adapt
            .options(Criterion::Kld)
            .validate()
            .map_err(|e| BenchError::Config(format!("adapt: {e}")))?;
        if self.converge.sizes.contains(&0) || self.converge.seeds == 0 {
            return err("converge sizes and seeds must be positive".into());
        }
        let mut seen = std::collections::HashSet::new();
        for f in &self.filters {
            if !seen.insert(*f) {
                return err(format!("filter '{f}' listed twice"));
            }
        }
        Ok(())
    }
}
