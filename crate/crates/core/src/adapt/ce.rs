//! Cross-entropy adaptation of the proposal kernel.

use crate::apf::{apf_step, first_stage_draw, first_stage_log_weights, propose, AdjustmentFunction, ApfStepOutput, StepObservation};
use crate::error::{Error, Result};
use crate::models::StateSpaceModel;
use crate::rng::RngStream;
use crate::sample::{entropy, WeightedSample};
use crate::scalar::Real;

use super::objective::normalized_from_log_weights;
use super::{AdaptTrace, Criterion, ProposalFamily};

/// One weighted proposal outcome `(ξ, ξ̃, ω̃)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CeOutcome<T> {
    pub ancestor: T,
    pub proposed: T,
    pub weight: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CeOptions<T> {
    pub iterations: usize,
    /// Particle count for each inner iteration.
    pub sizes: Vec<usize>,
    pub theta0: Vec<T>,
}

impl<T: Real> CeOptions<T> {
    pub fn constant(iterations: usize, size: usize, theta0: Vec<T>) -> Self {
        Self {
            iterations,
            sizes: vec![size; iterations],
            theta0,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("at least one cross-entropy iteration is needed".into()));
        }
        if self.sizes.len() != self.iterations {
            return Err(Error::InvalidArgument(format!(
                "{} iteration sizes for {} iterations",
                self.sizes.len(),
                self.iterations
            )));
        }
        if self.sizes.contains(&0) {
            return Err(Error::InvalidArgument("iteration sizes must be positive".into()));
        }
        if self.theta0.len() != dim {
            return Err(Error::InvalidArgument(format!(
                "initial parameter has {} components, family expects {dim}",
                self.theta0.len()
            )));
        }
        Ok(())
    }
}

/// Cross-entropy adapted auxiliary particle filter step.
///
/// Each inner iteration draws fresh ancestors and noises. The adjustment
/// weights stay fixed. If an iteration's weights all vanish, or the update is
/// not finite, it is retried once with twice the particles from the last
/// finite `θ`. The step ends with a plain filter step at the final `θ`.
#[allow(clippy::too_many_arguments)]
pub fn ce_adapt_step<T, A, M, F>(
    sample: &WeightedSample<T>,
    model: &M,
    psi: &A,
    family: &F,
    obs: StepObservation<T>,
    m_out: usize,
    opts: &CeOptions<T>,
    rng: &mut RngStream,
) -> Result<(ApfStepOutput<T>, AdaptTrace<T>)>
where
    T: Real,
    A: AdjustmentFunction<T> + ?Sized,
    M: StateSpaceModel<T>,
    F: ProposalFamily<T> + ?Sized,
{
    let domain = family.domain();
    opts.validate(domain.dim())?;
    let first_stage = first_stage_log_weights(sample, psi, obs.y);
    let mut theta = domain.clamp(&opts.theta0);
    let mut trace = AdaptTrace::new(Criterion::Kld);
    trace.adapted = true;

    for (iteration, &size) in opts.sizes.iter().enumerate() {
        let mut m = size;
        let mut retried = false;
        loop {
            let indices = first_stage_draw(&first_stage, obs.step, m, rng)?;
            let noises = rng.standard_normals(m);
            let ancestors: Vec<T> = indices.iter().map(|&i| sample.positions()[i]).collect();
            let (positions, log_w) = propose(&ancestors, &noises, psi, model, &family.kernel(&theta), obs.y);
            let update = normalized_from_log_weights(&log_w).ok().map(|weights| {
                let outcomes: Vec<CeOutcome<T>> = ancestors
                    .iter()
                    .zip(&positions)
                    .zip(&weights)
                    .map(|((&a, &p), &w)| CeOutcome {
                        ancestor: a,
                        proposed: p,
                        weight: w,
                    })
                    .collect();
                (weights, family.ce_update(&outcomes, obs.y))
            });
            match update {
                Some((_, None)) => {
                    return Err(Error::Unsupported(format!(
                        "family '{}' has no cross-entropy update",
                        family.label()
                    )))
                }
                Some((weights, Some(next))) if next.iter().all(|t| t.is_finite()) => {
                    trace.push(&theta, entropy(&weights)?, m);
                    theta = domain.clamp(&next);
                    break;
                }
                _ if !retried => {
                    retried = true;
                    m *= 2;
                }
                _ => return Err(Error::CeDegeneracy { iteration }),
            }
        }
    }

    let out = apf_step(sample, model, psi, &family.kernel(&theta), obs, m_out, rng)?;
    trace.push(&theta, out.diagnostics.entropy, m_out);
    trace.final_theta = theta;
    Ok((out, trace))
}
