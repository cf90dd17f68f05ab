//! One step of the auxiliary particle filter.
//!
//! Ancestors are selected with probability proportional to `w_i Ψ(ξ_i)`,
//! moved through a proposal kernel `r`, and reweighted by
//! `Φ(ξ, ξ̃) = Ψ(ξ)⁻¹ l(ξ, ξ̃) / r(ξ, ξ̃)` with `l(ξ, ξ̃) = g(ξ̃, y) q(ξ, ξ̃)`.
//! There is no second resampling stage. Everything is computed in log space
//! and exponentiated after subtracting the largest log-weight of the step.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::models::StateSpaceModel;
use crate::rng::RngStream;
use crate::sample::{multinomial_resample, WeightDiagnostics, WeightedSample};
use crate::scalar::Real;

/// Below this many particles the per-particle maps run sequentially.
const PAR_THRESHOLD: usize = 4096;

/// Adjustment multiplier function `Ψ`, evaluated in log space.
pub trait AdjustmentFunction<T: Real>: Send + Sync {
    /// `log Ψ(x)` given the next observation.
    fn log_value(&self, x: T, y_next: T) -> T;

    fn evaluate(&self, x: T, y_next: T) -> T {
        self.log_value(x, y_next).exp()
    }

    fn label(&self) -> String;
}

/// `Ψ ≡ 1`.
#[derive(Clone, Copy, Debug, Default)]
pub struct UnitAdjustment;

impl<T: Real> AdjustmentFunction<T> for UnitAdjustment {
    fn log_value(&self, _x: T, _y_next: T) -> T {
        T::zero()
    }
    fn label(&self) -> String {
        "unit".into()
    }
}

/// `c · Ψ` for a constant `c > 0`.
#[derive(Clone, Copy, Debug)]
pub struct ScaledAdjustment<A, T> {
    pub inner: A,
    pub factor: T,
}

impl<T: Real, A: AdjustmentFunction<T>> AdjustmentFunction<T> for ScaledAdjustment<A, T> {
    fn log_value(&self, x: T, y_next: T) -> T {
        self.factor.ln() + self.inner.log_value(x, y_next)
    }
    fn label(&self) -> String {
        format!("{}*{}", self.factor, self.inner.label())
    }
}

/// Adjustment function given by a closure returning `log Ψ`.
pub struct FnAdjustment<F> {
    log_fn: F,
    label: String,
}

impl<F> FnAdjustment<F> {
    pub fn new(label: impl Into<String>, log_fn: F) -> Self {
        Self {
            log_fn,
            label: label.into(),
        }
    }
}

impl<T: Real, F: Fn(T, T) -> T + Send + Sync> AdjustmentFunction<T> for FnAdjustment<F> {
    fn log_value(&self, x: T, y_next: T) -> T {
        (self.log_fn)(x, y_next)
    }
    fn label(&self) -> String {
        self.label.clone()
    }
}

/// Markov proposal kernel `r(x, ·)` simulated through a noise map
/// `x' = F(x, ε)` with `ε` standard normal.
pub trait ProposalKernel<T: Real>: Send + Sync {
    /// `log r(x, x')`
    fn log_density(&self, x: T, x_next: T, y_next: T) -> T;

    /// `F(x, ε)`
    fn sample_via_noise(&self, x: T, noise: T, y_next: T) -> T;

    fn label(&self) -> String;
}

/// The prior transition `r = q`.
#[derive(Clone, Copy, Debug)]
pub struct PriorKernel<M> {
    pub model: M,
}

impl<M> PriorKernel<M> {
    pub fn new(model: M) -> Self {
        Self { model }
    }
}

impl<T: Real, M: StateSpaceModel<T>> ProposalKernel<T> for PriorKernel<M> {
    fn log_density(&self, x: T, x_next: T, _y_next: T) -> T {
        self.model.transition_log_density(x, x_next)
    }
    fn sample_via_noise(&self, x: T, noise: T, _y_next: T) -> T {
        self.model.transition_mean(x) + self.model.transition_std(x) * noise
    }
    fn label(&self) -> String {
        "prior".into()
    }
}

/// The next observation together with its absolute step index.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepObservation<T> {
    pub step: usize,
    pub y: T,
}

impl<T> StepObservation<T> {
    pub fn new(step: usize, y: T) -> Self {
        Self { step, y }
    }
}

/// Result of one filter step.
#[derive(Clone, Debug)]
pub struct ApfStepOutput<T> {
    /// `{ξ̃_i, ω̃_i}` with weights rescaled by `exp(-log_weight_shift)`.
    pub sample: WeightedSample<T>,
    pub ancestor_indices: Vec<usize>,
    /// Exact `log Φ(ξ_{I_i}, ξ̃_i)` before max-stabilization.
    pub log_weights: Vec<T>,
    pub log_weight_shift: T,
    pub diagnostics: WeightDiagnostics<T>,
    /// Fewer than two distinct ancestors were selected.
    pub degenerate: bool,
}

/// `log l(x, x') = log g(x', y) + log q(x, x')`.
#[inline]
pub fn log_l<T: Real, M: StateSpaceModel<T>>(model: &M, x: T, x_next: T, y_next: T) -> T {
    model.likelihood_log_density(x_next, y_next) + model.transition_log_density(x, x_next)
}

/// Closure form of [`log_l`] with the observation bound.
pub fn unnormalized_kernel_log_density<T: Real, M: StateSpaceModel<T>>(
    model: &M,
    y_next: T,
) -> impl Fn(T, T) -> T + '_ {
    move |x, x_next| log_l(model, x, x_next, y_next)
}

/// `log Φ(x, x')`, possibly `-inf` or `NaN` on degenerate inputs.
#[inline]
pub fn log_phi<T, A, M, K>(psi: &A, model: &M, kernel: &K, x: T, x_next: T, y_next: T) -> T
where
    T: Real,
    A: AdjustmentFunction<T> + ?Sized,
    M: StateSpaceModel<T>,
    K: ProposalKernel<T> + ?Sized,
{
    log_l(model, x, x_next, y_next) - kernel.log_density(x, x_next, y_next) - psi.log_value(x, y_next)
}

/// `Φ(x, x') = Ψ(x)⁻¹ l(x, x') / r(x, x')`.
pub fn phi_weight<T, A, M, K>(psi: &A, model: &M, kernel: &K, x: T, x_next: T, y_next: T) -> Result<T>
where
    T: Real,
    A: AdjustmentFunction<T> + ?Sized,
    M: StateSpaceModel<T>,
    K: ProposalKernel<T> + ?Sized,
{
    let log_psi = psi.log_value(x, y_next);
    if log_psi == T::neg_infinity() || log_psi.is_nan() {
        return Err(Error::DegenerateProposal(format!("adjustment weight vanishes at x = {x}")));
    }
    let log_r = kernel.log_density(x, x_next, y_next);
    if log_r == T::neg_infinity() || log_r.is_nan() {
        return Err(Error::DegenerateProposal(format!(
            "proposal density vanishes at ({x}, {x_next})"
        )));
    }
    Ok((log_l(model, x, x_next, y_next) - log_r - log_psi).exp())
}

/// First-stage log-weights `log w_i + log Ψ(ξ_i)`.
pub fn first_stage_log_weights<T: Real, A: AdjustmentFunction<T> + ?Sized>(
    sample: &WeightedSample<T>,
    psi: &A,
    y_next: T,
) -> Vec<T> {
    sample
        .positions()
        .iter()
        .zip(sample.weights())
        .map(|(&x, &w)| w.ln() + psi.log_value(x, y_next))
        .collect()
}

/// Draws `m` ancestor indices with probabilities `∝ w_i Ψ(ξ_i)`.
pub fn select_ancestors<T: Real, A: AdjustmentFunction<T> + ?Sized>(
    sample: &WeightedSample<T>,
    psi: &A,
    obs: StepObservation<T>,
    m: usize,
    rng: &mut RngStream,
) -> Result<Vec<usize>> {
    let log_w = first_stage_log_weights(sample, psi, obs.y);
    first_stage_draw(&log_w, obs.step, m, rng)
}

pub(crate) fn first_stage_draw<T: Real>(
    first_stage: &[T],
    step: usize,
    m: usize,
    rng: &mut RngStream,
) -> Result<Vec<usize>> {
    if m == 0 {
        return Err(Error::InvalidArgument("output particle count must be positive".into()));
    }
    let max = first_stage
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .fold(T::neg_infinity(), T::max);
    if !max.is_finite() {
        return Err(Error::ParticleDeath { step });
    }
    let weights: Vec<T> = first_stage
        .iter()
        .map(|&v| if v.is_nan() { T::zero() } else { (v - max).exp() })
        .collect();
    multinomial_resample(&weights, m, rng)
}

/// Proposes `ξ̃_i = F(ξ_{I_i}, ε_i)` and returns positions and `log Φ`.
pub(crate) fn propose<T, A, M, K>(
    ancestors: &[T],
    noises: &[T],
    psi: &A,
    model: &M,
    kernel: &K,
    y_next: T,
) -> (Vec<T>, Vec<T>)
where
    T: Real,
    A: AdjustmentFunction<T> + ?Sized,
    M: StateSpaceModel<T>,
    K: ProposalKernel<T> + ?Sized,
{
    let one = |(&x, &eps): (&T, &T)| {
        let x_next = kernel.sample_via_noise(x, eps, y_next);
        (x_next, log_phi(psi, model, kernel, x, x_next, y_next))
    };
    if ancestors.len() >= PAR_THRESHOLD {
        ancestors.par_iter().zip(noises.par_iter()).map(one).unzip()
    } else {
        ancestors.iter().zip(noises.iter()).map(one).unzip()
    }
}

pub(crate) fn assemble<T: Real>(
    positions: Vec<T>,
    ancestor_indices: Vec<usize>,
    log_weights: Vec<T>,
) -> Result<ApfStepOutput<T>> {
    let (sample, shift) = WeightedSample::from_log_weights(positions, &log_weights)
        .map_err(|_| Error::DegenerateProposal("every second-stage weight vanished".into()))?;
    let diagnostics = sample.diagnostics();
    let degenerate = {
        let mut seen = ancestor_indices.iter();
        let first = seen.next().copied();
        !seen.any(|&i| Some(i) != first)
    };
    Ok(ApfStepOutput {
        sample,
        ancestor_indices,
        log_weights,
        log_weight_shift: shift,
        diagnostics,
        degenerate,
    })
}

/// Nonadaptive auxiliary particle filter step producing `m_out` particles.
///
/// Draws all `m_out` ancestor uniforms first, then `m_out` standard normal
/// proposal noises, in that order.
pub fn apf_step<T, A, M, K>(
    sample: &WeightedSample<T>,
    model: &M,
    psi: &A,
    kernel: &K,
    obs: StepObservation<T>,
    m_out: usize,
    rng: &mut RngStream,
) -> Result<ApfStepOutput<T>>
where
    T: Real,
    A: AdjustmentFunction<T> + ?Sized,
    M: StateSpaceModel<T>,
    K: ProposalKernel<T> + ?Sized,
{
    let indices = select_ancestors(sample, psi, obs, m_out, rng)?;
    let noises = rng.standard_normals(m_out);
    let ancestors: Vec<T> = indices.iter().map(|&i| sample.positions()[i]).collect();
    let (positions, log_w) = propose(&ancestors, &noises, psi, model, kernel, obs.y);
    assemble(positions, indices, log_w)
}

/// Initial weighted sample: `n` draws from the model's initial density,
/// weighted by the likelihood of `y0`.
pub fn initial_sample<T: Real, M: StateSpaceModel<T>>(
    model: &M,
    n: usize,
    y0: T,
    rng: &mut RngStream,
) -> Result<WeightedSample<T>> {
    if n == 0 {
        return Err(Error::InvalidArgument("particle count must be positive".into()));
    }
    let positions: Vec<T> = (0..n).map(|_| model.sample_initial(rng)).collect();
    let log_w: Vec<T> = positions
        .iter()
        .map(|&x| model.likelihood_log_density(x, y0))
        .collect();
    WeightedSample::from_log_weights(positions, &log_w)
        .map(|(s, _)| s)
        .map_err(|_| Error::ParticleDeath { step: 0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{arch_model, ArchModel, ArchParams};
    use crate::scalar::normal_log_density;
    use approx::assert_relative_eq;

    fn model() -> ArchModel<f64> {
        arch_model(ArchParams::new(1.0, 0.99, 10.0)).unwrap()
    }

    #[test]
    fn kernel_log_density_at_origin() {
        let m = model();
        let l = unnormalized_kernel_log_density(&m, 0.0);
        let expected = normal_log_density(0.0, 0.0, 1.0) + normal_log_density(0.0, 0.0, 10f64.sqrt());
        assert_relative_eq!(l(0.0, 0.0), expected, epsilon = 1e-14);
        assert_relative_eq!(expected, -0.918_939 - 2.070_232, epsilon = 1e-5);
    }

    #[test]
    fn kernel_log_density_tail_and_symmetry() {
        let m = model();
        let l = unnormalized_kernel_log_density(&m, 0.0);
        assert!(l(0.0, 1e3) < l(0.0, 1e2));
        assert!(l(0.0, 1e200) == f64::NEG_INFINITY || l(0.0, 1e200) < -1e300);
        assert_relative_eq!(l(1.0, 0.5), l(-1.0, 0.5), epsilon = 1e-15);
    }

    #[test]
    fn bootstrap_weight_is_likelihood() {
        let m = model();
        let k = PriorKernel::new(m);
        for (x, xn, y) in [(0.0, 1.0, 2.0), (3.0, -4.0, 60.0), (-10.0, 2.5, 0.0)] {
            let phi = phi_weight(&UnitAdjustment, &m, &k, x, xn, y).unwrap();
            assert_relative_eq!(phi, m.likelihood_log_density(xn, y).exp(), max_relative = 1e-12);
        }
    }

    #[test]
    fn doubling_psi_halves_phi() {
        let m = model();
        let k = PriorKernel::new(m);
        let doubled = ScaledAdjustment {
            inner: UnitAdjustment,
            factor: 2.0,
        };
        let a = phi_weight(&UnitAdjustment, &m, &k, 1.0, 2.0, 3.0).unwrap();
        let b = phi_weight(&doubled, &m, &k, 1.0, 2.0, 3.0).unwrap();
        assert_relative_eq!(b, a / 2.0, max_relative = 1e-14);
    }

    #[test]
    fn vanishing_psi_is_degenerate() {
        let m = model();
        let k = PriorKernel::new(m);
        let zero = FnAdjustment::new("zero", |_x: f64, _y: f64| f64::NEG_INFINITY);
        assert!(matches!(
            phi_weight(&zero, &m, &k, 0.0, 0.0, 0.0),
            Err(Error::DegenerateProposal(_))
        ));
    }

    #[test]
    fn all_zero_first_stage_is_particle_death() {
        let m = model();
        let k = PriorKernel::new(m);
        let zero = FnAdjustment::new("zero", |_x: f64, _y: f64| f64::NEG_INFINITY);
        let s = WeightedSample::uniform(vec![0.0, 1.0]).unwrap();
        let err = apf_step(&s, &m, &zero, &k, StepObservation::new(17, 0.0), 2, &mut RngStream::new(1))
            .unwrap_err();
        assert!(matches!(err, Error::ParticleDeath { step: 17 }));
    }

    #[test]
    fn bootstrap_step_weights_equal_likelihood() {
        let m = model();
        let k = PriorKernel::new(m);
        let mut rng = RngStream::new(4);
        let s = WeightedSample::uniform((0..200).map(|_| rng.normal(0.0, 10.0)).collect()).unwrap();
        let out = apf_step(&s, &m, &UnitAdjustment, &k, StepObservation::new(1, 60.0), 200, &mut rng).unwrap();
        assert_eq!(out.sample.len(), 200);
        for (x, lw) in out.sample.positions().iter().zip(&out.log_weights) {
            assert_relative_eq!(*lw, m.likelihood_log_density(*x, 60.0), max_relative = 1e-12);
        }
        for (w, lw) in out.sample.weights().iter().zip(&out.log_weights) {
            assert_relative_eq!(*w, (lw - out.log_weight_shift).exp(), max_relative = 1e-12);
        }
    }

    #[test]
    fn rescaled_psi_keeps_positions_and_scales_weights() {
        let m = model();
        let k = PriorKernel::new(m);
        let mut rng = RngStream::new(21);
        let s = WeightedSample::new(
            (0..300).map(|_| rng.normal(0.0, 10.0)).collect(),
            (0..300).map(|_| rng.uniform::<f64>() + 0.1).collect(),
        )
        .unwrap();
        let c = 8.0;
        let scaled = ScaledAdjustment {
            inner: UnitAdjustment,
            factor: c,
        };
        let obs = StepObservation::new(3, 5.0);
        let a = apf_step(&s, &m, &UnitAdjustment, &k, obs, 300, &mut RngStream::new(99)).unwrap();
        let b = apf_step(&s, &m, &scaled, &k, obs, 300, &mut RngStream::new(99)).unwrap();
        assert_eq!(a.sample.positions(), b.sample.positions());
        assert_eq!(a.ancestor_indices, b.ancestor_indices);
        for (la, lb) in a.log_weights.iter().zip(&b.log_weights) {
            assert_relative_eq!(*lb, la - c.ln(), epsilon = 1e-12);
        }
        assert_relative_eq!(a.diagnostics.cv2, b.diagnostics.cv2, max_relative = 1e-12);
        assert_relative_eq!(a.sample.mean(), b.sample.mean(), max_relative = 1e-12);
    }

    #[test]
    fn single_output_particle_is_flagged_degenerate() {
        let m = model();
        let k = PriorKernel::new(m);
        let s = WeightedSample::uniform(vec![0.0, 1.0, 2.0]).unwrap();
        let out = apf_step(&s, &m, &UnitAdjustment, &k, StepObservation::new(1, 0.0), 1, &mut RngStream::new(2))
            .unwrap();
        assert!(out.degenerate);
        assert_eq!(out.sample.len(), 1);
    }

    #[test]
    fn initial_sample_weights_by_likelihood() {
        let m = model();
        let s = initial_sample(&m, 1000, 5.0, &mut RngStream::new(6)).unwrap();
        assert_eq!(s.len(), 1000);
        let mean = s.mean();
        // posterior mean of N(0,100) prior and N(x,10) likelihood at y=5
        assert!((mean - 5.0 * 100.0 / 110.0).abs() < 0.5, "{mean}");
    }
}
