//! Step functions of the compared filters.

use adaptive_apf::adapt::ParamScale;
use adaptive_apf::gaussian::{log_psi_star, SCALE_DOMAIN};
use adaptive_apf::{
    adaptive_apf_step, apf_step, ce_adapt_step, kld_closed_form, minimize_scalar, r_star_kernel, AdaptOptions,
    AdaptTrace, ApfStepOutput, ArchModel, CeOptions, ChiSquarePriorAdjustment, Criterion, OptimalAdjustment,
    PriorKernel, RngStream, ScaleFamily, ScaleKernel, StepObservation, UnitAdjustment, WeightedSample,
};

use crate::config::{BenchConfig, FilterSpec};
use crate::error::BenchError;

/// One row of an adaptation trace, tagged with its step.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptRow {
    pub k: usize,
    pub iter: usize,
    pub theta: String,
    pub objective: f64,
    pub sample_size: usize,
}

/// What a filter step hands back besides the new sample.
#[derive(Clone, Debug)]
pub struct StepResult {
    pub output: ApfStepOutput<f64>,
    /// Kernel parameter used for the move, if the filter has one.
    pub theta: Option<f64>,
    pub adapt_rows: Vec<AdaptRow>,
}

/// A filter advanced one observation at a time. Implementations may carry
/// state between steps, so build a fresh one per run.
pub trait FilterStep: Send {
    fn spec(&self) -> FilterSpec;
    fn particles(&self) -> usize;
    fn step(
        &mut self,
        sample: &WeightedSample<f64>,
        obs: StepObservation<f64>,
        rng: &mut RngStream,
    ) -> Result<StepResult, BenchError>;
}

type Model = ArchModel<f64>;

fn trace_rows(k: usize, trace: &AdaptTrace<f64>) -> Vec<AdaptRow> {
    trace
        .iterations
        .iter()
        .map(|it| AdaptRow {
            k,
            iter: it.iter,
            theta: AdaptTrace::format_theta(&it.theta),
            objective: it.objective,
            sample_size: it.sample_size,
        })
        .collect()
}

struct Fixed {
    spec: FilterSpec,
    model: Model,
    n: usize,
}

impl FilterStep for Fixed {
    fn spec(&self) -> FilterSpec {
        self.spec
    }
    fn particles(&self) -> usize {
        self.n
    }
    fn step(
        &mut self,
        sample: &WeightedSample<f64>,
        obs: StepObservation<f64>,
        rng: &mut RngStream,
    ) -> Result<StepResult, BenchError> {
        let m = &self.model;
        let output = match self.spec {
            FilterSpec::Bootstrap | FilterSpec::Bootstrap3n => {
                apf_step(sample, m, &UnitAdjustment, &PriorKernel::new(*m), obs, self.n, rng)?
            }
            FilterSpec::Chi2Prior => apf_step(
                sample,
                m,
                &ChiSquarePriorAdjustment::new(*m),
                &PriorKernel::new(*m),
                obs,
                self.n,
                rng,
            )?,
            FilterSpec::Optimal => {
                apf_step(sample, m, &OptimalAdjustment::new(*m), &r_star_kernel(*m), obs, self.n, rng)?
            }
            other => unreachable!("{other} is adaptive"),
        };
        Ok(StepResult {
            output,
            theta: None,
            adapt_rows: Vec::new(),
        })
    }
}

struct Empirical {
    spec: FilterSpec,
    family: ScaleFamily<Model, f64>,
    opts: AdaptOptions,
    n: usize,
    pilot: Option<Vec<f64>>,
}

impl FilterStep for Empirical {
    fn spec(&self) -> FilterSpec {
        self.spec
    }
    fn particles(&self) -> usize {
        self.n
    }
    fn step(
        &mut self,
        sample: &WeightedSample<f64>,
        obs: StepObservation<f64>,
        rng: &mut RngStream,
    ) -> Result<StepResult, BenchError> {
        let (output, trace) = adaptive_apf_step(
            sample,
            &self.family.model,
            &UnitAdjustment,
            &self.family,
            obs,
            self.n,
            &self.opts,
            self.pilot.as_deref(),
            rng,
        )?;
        self.pilot = Some(trace.final_theta.clone());
        Ok(StepResult {
            output,
            theta: trace.final_theta.first().copied(),
            adapt_rows: trace_rows(obs.step, &trace),
        })
    }
}

struct ClosedForm {
    model: Model,
    tolerance: f64,
    max_evals: usize,
    n: usize,
}

impl FilterStep for ClosedForm {
    fn spec(&self) -> FilterSpec {
        FilterSpec::ClosedFormKld
    }
    fn particles(&self) -> usize {
        self.n
    }
    fn step(
        &mut self,
        sample: &WeightedSample<f64>,
        obs: StepObservation<f64>,
        rng: &mut RngStream,
    ) -> Result<StepResult, BenchError> {
        let lps: Vec<f64> = sample
            .positions()
            .iter()
            .map(|&x| log_psi_star(&self.model, x, obs.y))
            .collect();
        let min = minimize_scalar(
            |t| kld_closed_form(t, sample, &lps),
            SCALE_DOMAIN.0,
            SCALE_DOMAIN.1,
            ParamScale::Log,
            self.tolerance,
            self.max_evals,
        )?;
        let kernel = ScaleKernel {
            model: self.model,
            theta: min.theta,
        };
        let output = apf_step(sample, &self.model, &UnitAdjustment, &kernel, obs, self.n, rng)?;
        let mut adapt_rows: Vec<AdaptRow> = min
            .evaluations
            .iter()
            .enumerate()
            .map(|(iter, &(t, v))| AdaptRow {
                k: obs.step,
                iter,
                theta: t.to_string(),
                objective: v,
                sample_size: sample.len(),
            })
            .collect();
        adapt_rows.push(AdaptRow {
            k: obs.step,
            iter: adapt_rows.len(),
            theta: min.theta.to_string(),
            objective: min.value,
            sample_size: sample.len(),
        });
        Ok(StepResult {
            output,
            theta: Some(min.theta),
            adapt_rows,
        })
    }
}

struct CrossEntropy {
    family: ScaleFamily<Model, f64>,
    opts: CeOptions<f64>,
    n: usize,
}

impl FilterStep for CrossEntropy {
    fn spec(&self) -> FilterSpec {
        FilterSpec::Ce
    }
    fn particles(&self) -> usize {
        self.n
    }
    fn step(
        &mut self,
        sample: &WeightedSample<f64>,
        obs: StepObservation<f64>,
        rng: &mut RngStream,
    ) -> Result<StepResult, BenchError> {
        let (output, trace) = ce_adapt_step(
            sample,
            &self.family.model,
            &UnitAdjustment,
            &self.family,
            obs,
            self.n,
            &self.opts,
            rng,
        )?;
        Ok(StepResult {
            output,
            theta: trace.final_theta.first().copied(),
            adapt_rows: trace_rows(obs.step, &trace),
        })
    }
}

/// Builds a fresh step function for `spec` under `config`.
pub fn build_filter(spec: FilterSpec, config: &BenchConfig) -> Result<Box<dyn FilterStep>, BenchError> {
    let model: Model = ArchModel::new(config.arch.into()).map_err(|e| BenchError::Config(e.to_string()))?;
    let n = config.particles;
    let filter: Box<dyn FilterStep> = match spec {
        FilterSpec::Bootstrap | FilterSpec::Chi2Prior | FilterSpec::Optimal => Box::new(Fixed { spec, model, n }),
        FilterSpec::Bootstrap3n => Box::new(Fixed { spec, model, n: 3 * n }),
        FilterSpec::AdaptiveCsd | FilterSpec::AdaptiveKld => {
            let criterion = if spec == FilterSpec::AdaptiveCsd { Criterion::Csd } else { Criterion::Kld };
            let opts = config.adapt.options(criterion);
            opts.validate().map_err(|e| BenchError::Config(e.to_string()))?;
            Box::new(Empirical {
                spec,
                family: ScaleFamily::new(model),
                opts,
                n,
                pilot: None,
            })
        }
        FilterSpec::ClosedFormKld => Box::new(ClosedForm {
            model,
            tolerance: config.adapt.tolerance,
            max_evals: config.adapt.max_evals,
            n,
        }),
        FilterSpec::Ce => {
            let opts = config.ce.options(n);
            opts.validate(1).map_err(|e| BenchError::Config(e.to_string()))?;
            Box::new(CrossEntropy {
                family: ScaleFamily::new(model),
                opts,
                n,
            })
        }
    };
    Ok(filter)
}

/// Step function of the reference filter: optimal adjustment and kernel
/// with the reference particle count.
pub fn build_reference(config: &BenchConfig) -> Result<Box<dyn FilterStep>, BenchError> {
    let model: Model = ArchModel::new(config.arch.into()).map_err(|e| BenchError::Config(e.to_string()))?;
    Ok(Box::new(Fixed {
        spec: FilterSpec::Optimal,
        model,
        n: config.reference_particles(),
    }))
}
