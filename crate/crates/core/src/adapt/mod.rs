//! Adaptive choice of the proposal kernel within a parametric family.
//!
//! [`adaptive_apf_step`] tunes `θ` on frozen ancestor and noise draws by
//! minimizing the empirical entropy or CV² of the second-stage weights.
//! [`ce_adapt_step`] runs a short cross-entropy iteration with fresh draws at
//! each stage.

mod ce;
mod objective;
mod optimize;

pub use ce::{ce_adapt_step, CeOptions, CeOutcome};
pub use objective::{
    adaptive_apf_step, empirical_objective, grad_csd_estimate, grad_kld_estimate, FrozenDraws,
};
pub use optimize::{minimize_box, minimize_scalar, ParamScale, ScalarMinimum};

use std::io;

use crate::apf::ProposalKernel;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Which divergence the adaptation targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Criterion {
    /// KL divergence, estimated by the weight entropy.
    Kld,
    /// Chi-square divergence, estimated by the weight CV².
    Csd,
}

impl Criterion {
    pub fn label(self) -> &'static str {
        match self {
            Criterion::Kld => "kld",
            Criterion::Csd => "csd",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Optimizer {
    /// Golden-section search; scalar `θ` only.
    GoldenSection,
    /// Projected descent along central finite-difference gradients.
    FiniteDifferenceDescent,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdaptOptions {
    pub criterion: Criterion,
    /// Adaptation runs only when the pilot objective exceeds this value.
    pub trigger_threshold: f64,
    pub optimizer: Optimizer,
    /// Upper bound on objective evaluations per step, at least 3.
    pub max_evals: usize,
    /// Target accuracy of the returned `θ`.
    pub tolerance: f64,
}

impl Default for AdaptOptions {
    fn default() -> Self {
        Self {
            criterion: Criterion::Kld,
            trigger_threshold: 0.0,
            optimizer: Optimizer::GoldenSection,
            max_evals: 60,
            tolerance: 1e-3,
        }
    }
}

impl AdaptOptions {
    pub fn new(criterion: Criterion) -> Self {
        Self {
            criterion,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_evals < 3 {
            return Err(Error::InvalidArgument(format!(
                "max_evals must be at least 3, got {}",
                self.max_evals
            )));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if self.trigger_threshold.is_nan() {
            return Err(Error::InvalidArgument("trigger threshold is NaN".into()));
        }
        Ok(())
    }
}

/// Axis-aligned box of admissible parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ThetaDomain<T> {
    pub lower: Vec<T>,
    pub upper: Vec<T>,
}

impl<T: Real> ThetaDomain<T> {
    pub fn new(lower: Vec<T>, upper: Vec<T>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::InvalidArgument("domain bounds must be non-empty and of equal length".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u) || !l.is_finite() || !u.is_finite()) {
            return Err(Error::InvalidArgument("domain needs finite lower < upper in every coordinate".into()));
        }
        Ok(Self { lower, upper })
    }

    pub fn scalar(lower: T, upper: T) -> Result<Self> {
        Self::new(vec![lower], vec![upper])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, theta: &[T]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(t, (l, u))| t >= l && t <= u)
    }

    pub fn clamp(&self, theta: &[T]) -> Vec<T> {
        theta
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&t, (&l, &u))| if t.is_nan() { l } else { t.max(l).min(u) })
            .collect()
    }

    /// Geometric midpoint when both bounds are positive, arithmetic otherwise.
    pub fn midpoint(&self) -> Vec<T> {
        let two = T::lit(2.0);
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(&l, &u)| {
                if l > T::zero() {
                    (l * u).sqrt()
                } else {
                    (l + u) / two
                }
            })
            .collect()
    }
}

/// Parametric family `{r_θ}` of proposal kernels with reparameterized
/// sampling `x' = F_θ(x, ε)`.
///
/// The derivative hooks are optional; gradient estimates need all three and
/// the cross-entropy step needs [`ProposalFamily::ce_update`].
pub trait ProposalFamily<T: Real>: Send + Sync {
    type Kernel: ProposalKernel<T>;

    fn kernel(&self, theta: &[T]) -> Self::Kernel;

    fn domain(&self) -> &ThetaDomain<T>;

    fn theta_dim(&self) -> usize {
        self.domain().dim()
    }

    fn label(&self) -> String;

    /// `∂θ log r_θ(x, x')` at fixed `x'`.
    fn log_density_grad_theta(&self, _theta: &[T], _x: T, _x_next: T, _y_next: T) -> Option<Vec<T>> {
        None
    }

    /// `∂x' log r_θ(x, x')`.
    fn log_density_grad_next(&self, _theta: &[T], _x: T, _x_next: T, _y_next: T) -> Option<T> {
        None
    }

    /// `∂θ F_θ(x, ε)`.
    fn noise_map_grad_theta(&self, _theta: &[T], _x: T, _noise: T, _y_next: T) -> Option<Vec<T>> {
        None
    }

    /// Maximizer of `Σ ω̃_i log r_θ(ξ_i, ξ̃_i)` over the domain.
    fn ce_update(&self, _outcomes: &[CeOutcome<T>], _y_next: T) -> Option<Vec<T>> {
        None
    }
}

/// One recorded iteration of an adaptation.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptIteration<T> {
    pub iter: usize,
    pub theta: Vec<T>,
    pub objective: T,
    pub sample_size: usize,
}

/// History of one adapted step.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptTrace<T> {
    pub criterion: Criterion,
    pub iterations: Vec<AdaptIteration<T>>,
    pub final_theta: Vec<T>,
    /// Whether the optimizer ran at all.
    pub adapted: bool,
}

impl<T: Real> AdaptTrace<T> {
    pub(crate) fn new(criterion: Criterion) -> Self {
        Self {
            criterion,
            iterations: Vec::new(),
            final_theta: Vec::new(),
            adapted: false,
        }
    }

    pub(crate) fn push(&mut self, theta: &[T], objective: T, sample_size: usize) {
        self.iterations.push(AdaptIteration {
            iter: self.iterations.len(),
            theta: theta.to_vec(),
            objective,
            sample_size,
        });
    }

    /// `θ` rendered for a CSV cell; vector components are `;`-separated.
    pub fn format_theta(theta: &[T]) -> String {
        theta.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(";")
    }

    /// Writes the rows `iter,theta,objective,M`.
    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let csv_err = |e: csv::Error| Error::Csv(e.to_string());
        w.write_record(["iter", "theta", "objective", "M"]).map_err(csv_err)?;
        for it in &self.iterations {
            w.write_record([
                it.iter.to_string(),
                Self::format_theta(&it.theta),
                it.objective.to_string(),
                it.sample_size.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Csv(e.to_string()))?;
        Ok(())
    }
}
