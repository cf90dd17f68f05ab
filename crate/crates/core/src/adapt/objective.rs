//! Frozen-draw objective, its pathwise gradients, and the adaptive step.

use rayon::prelude::*;

use crate::apf::{assemble, log_l, select_ancestors, AdjustmentFunction, ApfStepOutput, ProposalKernel, StepObservation};
use crate::error::{Error, Result};
use crate::models::StateSpaceModel;
use crate::rng::RngStream;
use crate::sample::{cv2, entropy, WeightedSample};
use crate::scalar::Real;

use super::optimize::{minimize_box, minimize_scalar, ParamScale};
use super::{AdaptOptions, AdaptTrace, Criterion, Optimizer, ProposalFamily};

const PAR_THRESHOLD: usize = 4096;

/// Ancestors and proposal noises held fixed while `θ` varies.
#[derive(Clone, Debug)]
pub struct FrozenDraws<T> {
    ancestors: Vec<T>,
    noises: Vec<T>,
    log_psi: Vec<T>,
}

impl<T: Real> FrozenDraws<T> {
    pub fn new<A: AdjustmentFunction<T> + ?Sized>(ancestors: Vec<T>, noises: Vec<T>, psi: &A, y_next: T) -> Result<Self> {
        if ancestors.len() != noises.len() {
            return Err(Error::InvalidArgument(format!(
                "{} ancestors but {} noises",
                ancestors.len(),
                noises.len()
            )));
        }
        if ancestors.is_empty() {
            return Err(Error::InvalidArgument("no frozen draws".into()));
        }
        let log_psi = ancestors.iter().map(|&x| psi.log_value(x, y_next)).collect();
        Ok(Self {
            ancestors,
            noises,
            log_psi,
        })
    }

    pub fn len(&self) -> usize {
        self.ancestors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ancestors.is_empty()
    }

    pub fn ancestors(&self) -> &[T] {
        &self.ancestors
    }

    pub fn noises(&self) -> &[T] {
        &self.noises
    }

    fn map<R: Send, F: Fn(usize) -> R + Sync + Send>(&self, f: F) -> Vec<R> {
        if self.len() >= PAR_THRESHOLD {
            (0..self.len()).into_par_iter().map(f).collect()
        } else {
            (0..self.len()).map(f).collect()
        }
    }

    /// Positions `F_θ(ξ_i, ε_i)` and `log Φ_θ` at them.
    pub fn propose<M, K>(&self, model: &M, kernel: &K, y_next: T) -> (Vec<T>, Vec<T>)
    where
        M: StateSpaceModel<T>,
        K: ProposalKernel<T> + ?Sized,
    {
        self.map(|i| {
            let x = self.ancestors[i];
            let x_next = kernel.sample_via_noise(x, self.noises[i], y_next);
            let lw = log_l(model, x, x_next, y_next) - kernel.log_density(x, x_next, y_next) - self.log_psi[i];
            (x_next, lw)
        })
        .into_iter()
        .unzip()
    }

    /// Entropy or CV² of the weights produced at `θ`.
    pub fn objective<M, F>(&self, criterion: Criterion, theta: &[T], model: &M, family: &F, y_next: T) -> Result<T>
    where
        M: StateSpaceModel<T>,
        F: ProposalFamily<T> + ?Sized,
    {
        let (_, log_w) = self.propose(model, &family.kernel(theta), y_next);
        criterion_from_log_weights(criterion, &log_w)
    }

    /// `d/dθ log Φ_θ(ξ_i, F_θ(ξ_i, ε_i))` for every draw, with the
    /// self-normalized weights.
    fn log_weight_gradients<M, F>(&self, theta: &[T], model: &M, family: &F, y_next: T) -> Result<(Vec<T>, Vec<Vec<T>>)>
    where
        M: StateSpaceModel<T>,
        F: ProposalFamily<T> + ?Sized,
    {
        let kernel = family.kernel(theta);
        let rows: Vec<Option<(T, Vec<T>)>> = self.map(|i| {
            let x = self.ancestors[i];
            let eps = self.noises[i];
            let x_next = kernel.sample_via_noise(x, eps, y_next);
            let lw = log_l(model, x, x_next, y_next) - kernel.log_density(x, x_next, y_next) - self.log_psi[i];
            let d_next = model.grad_next_log_l(x, x_next, y_next) - family.log_density_grad_next(theta, x, x_next, y_next)?;
            let d_map = family.noise_map_grad_theta(theta, x, eps, y_next)?;
            let d_theta = family.log_density_grad_theta(theta, x, x_next, y_next)?;
            let g = d_map.iter().zip(&d_theta).map(|(&dm, &dt)| d_next * dm - dt).collect();
            Some((lw, g))
        });
        let mut log_w = Vec::with_capacity(rows.len());
        let mut grads = Vec::with_capacity(rows.len());
        for row in rows {
            let (lw, g) = row.ok_or_else(|| {
                Error::Unsupported(format!("family '{}' has no pathwise derivatives", family.label()))
            })?;
            log_w.push(lw);
            grads.push(g);
        }
        let probs = normalized_from_log_weights(&log_w)?;
        Ok((probs, grads))
    }
}

pub(crate) fn normalized_from_log_weights<T: Real>(log_w: &[T]) -> Result<Vec<T>> {
    let max = log_w
        .iter()
        .copied()
        .filter(|v| !v.is_nan())
        .fold(T::neg_infinity(), T::max);
    if !max.is_finite() {
        return Err(Error::DegenerateProposal(if max == T::infinity() {
            "infinite second-stage weight".into()
        } else {
            "every second-stage weight vanished".into()
        }));
    }
    let w: Vec<T> = log_w
        .iter()
        .map(|&v| if v.is_nan() { T::zero() } else { (v - max).exp() })
        .collect();
    let total: T = w.iter().copied().sum();
    Ok(w.into_iter().map(|v| v / total).collect())
}

fn criterion_from_log_weights<T: Real>(criterion: Criterion, log_w: &[T]) -> Result<T> {
    let p = normalized_from_log_weights(log_w)?;
    match criterion {
        Criterion::Kld => entropy(&p),
        Criterion::Csd => cv2(&p),
    }
}

/// Entropy or CV² of the second-stage weights obtained by pushing the frozen
/// `ancestors` and `noises` through `F_θ`.
#[allow(clippy::too_many_arguments)]
pub fn empirical_objective<T, A, M, F>(
    criterion: Criterion,
    theta: &[T],
    ancestors: &[T],
    noises: &[T],
    psi: &A,
    model: &M,
    family: &F,
    y_next: T,
) -> Result<T>
where
    T: Real,
    A: AdjustmentFunction<T> + ?Sized,
    M: StateSpaceModel<T>,
    F: ProposalFamily<T> + ?Sized,
{
    let frozen = FrozenDraws::new(ancestors.to_vec(), noises.to_vec(), psi, y_next)?;
    frozen.objective(criterion, theta, model, family, y_next)
}

/// Pathwise gradient of the entropy objective in `θ`.
///
/// With mean-normalized weights `W_i` this is `M⁻¹ Σ (∇W_i log W_i + ∇W_i)`,
/// the exact derivative of [`empirical_objective`] under [`Criterion::Kld`].
#[allow(clippy::too_many_arguments)]
pub fn grad_kld_estimate<T, A, M, F>(
    theta: &[T],
    ancestors: &[T],
    noises: &[T],
    psi: &A,
    model: &M,
    family: &F,
    y_next: T,
) -> Result<Vec<T>>
where
    T: Real,
    A: AdjustmentFunction<T> + ?Sized,
    M: StateSpaceModel<T>,
    F: ProposalFamily<T> + ?Sized,
{
    let frozen = FrozenDraws::new(ancestors.to_vec(), noises.to_vec(), psi, y_next)?;
    let (p, g) = frozen.log_weight_gradients(theta, model, family, y_next)?;
    let n = T::from_usize_lossy(p.len());
    let mean = weighted_mean(&p, &g);
    let mut out = vec![T::zero(); mean.len()];
    for (pi, gi) in p.iter().zip(&g) {
        if *pi > T::zero() {
            let log_w = (n * *pi).ln();
            for (o, (gij, mj)) in out.iter_mut().zip(gi.iter().zip(&mean)) {
                *o = *o + *pi * (*gij - *mj) * log_w;
            }
        }
    }
    Ok(out)
}

/// Pathwise gradient of the CV² objective in `θ`.
#[allow(clippy::too_many_arguments)]
pub fn grad_csd_estimate<T, A, M, F>(
    theta: &[T],
    ancestors: &[T],
    noises: &[T],
    psi: &A,
    model: &M,
    family: &F,
    y_next: T,
) -> Result<Vec<T>>
where
    T: Real,
    A: AdjustmentFunction<T> + ?Sized,
    M: StateSpaceModel<T>,
    F: ProposalFamily<T> + ?Sized,
{
    let frozen = FrozenDraws::new(ancestors.to_vec(), noises.to_vec(), psi, y_next)?;
    let (p, g) = frozen.log_weight_gradients(theta, model, family, y_next)?;
    let two_n = T::lit(2.0) * T::from_usize_lossy(p.len());
    let mean = weighted_mean(&p, &g);
    let mut out = vec![T::zero(); mean.len()];
    for (pi, gi) in p.iter().zip(&g) {
        for (o, (gij, mj)) in out.iter_mut().zip(gi.iter().zip(&mean)) {
            *o = *o + two_n * *pi * *pi * (*gij - *mj);
        }
    }
    Ok(out)
}

fn weighted_mean<T: Real>(p: &[T], g: &[Vec<T>]) -> Vec<T> {
    let dim = g.first().map_or(0, Vec::len);
    let mut mean = vec![T::zero(); dim];
    for (pi, gi) in p.iter().zip(g) {
        if *pi > T::zero() {
            for (m, gij) in mean.iter_mut().zip(gi) {
                *m = *m + *pi * *gij;
            }
        }
    }
    mean
}

/// Adaptive auxiliary particle filter step.
///
/// Ancestors and noises are drawn exactly as in [`crate::apf::apf_step`]. The
/// objective is first evaluated at `pilot` (the domain midpoint when `None`);
/// only if it exceeds the trigger threshold is `θ` optimized over the frozen
/// draws. A candidate replaces the pilot only if it is strictly better.
#[allow(clippy::too_many_arguments)]
pub fn adaptive_apf_step<T, A, M, F>(
    sample: &WeightedSample<T>,
    model: &M,
    psi: &A,
    family: &F,
    obs: StepObservation<T>,
    m_out: usize,
    opts: &AdaptOptions,
    pilot: Option<&[T]>,
    rng: &mut RngStream,
) -> Result<(ApfStepOutput<T>, AdaptTrace<T>)>
where
    T: Real,
    A: AdjustmentFunction<T> + ?Sized,
    M: StateSpaceModel<T>,
    F: ProposalFamily<T> + ?Sized,
{
    opts.validate()?;
    let domain = family.domain();
    let pilot = match pilot {
        Some(p) if p.len() == domain.dim() => domain.clamp(p),
        Some(p) => {
            return Err(Error::InvalidArgument(format!(
                "pilot has {} components, family expects {}",
                p.len(),
                domain.dim()
            )))
        }
        None => domain.midpoint(),
    };

    let indices = select_ancestors(sample, psi, obs, m_out, rng)?;
    let noises = rng.standard_normals(m_out);
    let ancestors: Vec<T> = indices.iter().map(|&i| sample.positions()[i]).collect();
    let frozen = FrozenDraws::new(ancestors, noises, psi, obs.y)?;

    let mut trace = AdaptTrace::new(opts.criterion);
    let (pilot_pos, pilot_lw) = frozen.propose(model, &family.kernel(&pilot), obs.y);
    let pilot_value = criterion_from_log_weights(opts.criterion, &pilot_lw).unwrap_or(T::infinity());
    trace.push(&pilot, pilot_value, m_out);

    let threshold = T::lit(opts.trigger_threshold);
    let mut best = (pilot.clone(), pilot_value);
    if pilot_value > threshold {
        trace.adapted = true;
        let budget = opts.max_evals - 1;
        let eval = |theta: &[T]| -> T {
            frozen
                .objective(opts.criterion, theta, model, family, obs.y)
                .unwrap_or(T::infinity())
        };
        let evaluations: Vec<(Vec<T>, T)> = match opts.optimizer {
            Optimizer::GoldenSection => {
                if domain.dim() != 1 {
                    return Err(Error::Unsupported(
                        "golden-section search needs a scalar parameter".into(),
                    ));
                }
                minimize_scalar(
                    |t| Ok(eval(&[t])),
                    domain.lower[0],
                    domain.upper[0],
                    ParamScale::for_domain(domain),
                    opts.tolerance,
                    budget,
                )?
                .evaluations
                .into_iter()
                .map(|(t, v)| (vec![t], v))
                .collect()
            }
            Optimizer::FiniteDifferenceDescent => {
                minimize_box(|t| Ok(eval(t)), domain, &pilot, opts.tolerance, budget)?.evaluations
            }
        };
        for (theta, value) in evaluations {
            trace.push(&theta, value, m_out);
            if value < best.1 {
                best = (theta, value);
            }
        }
    }

    let (theta_star, value) = best;
    let (positions, log_w) = if theta_star == pilot {
        (pilot_pos, pilot_lw)
    } else {
        frozen.propose(model, &family.kernel(&theta_star), obs.y)
    };
    if trace.adapted {
        trace.push(&theta_star, value, m_out);
    }
    trace.final_theta = theta_star;
    let out = assemble(positions, indices, log_w)?;
    Ok((out, trace))
}
