//! Auxiliary particle filtering with adaptive proposal kernels.
//!
//! The filter step ([`apf_step`]) resamples ancestors by adjustment weights,
//! moves them through a proposal kernel and reweights. The adaptive variants
//! ([`adaptive_apf_step`], [`ce_adapt_step`]) tune a parametric kernel at each
//! step by minimizing an estimate of the KL or chi-square divergence between
//! target and instrumental laws, read off the weight entropy and CV².
//!
//! All numerics are generic over [`Real`] (`f32` or `f64`); the aliases below
//! fix the precision.

pub mod adapt;
pub mod apf;
pub mod error;
pub mod gaussian;
pub mod models;
pub mod quadrature;
pub mod rng;
pub mod sample;
pub mod scalar;

pub use adapt::{
    adaptive_apf_step, ce_adapt_step, empirical_objective, grad_csd_estimate, grad_kld_estimate, minimize_scalar,
    AdaptOptions, AdaptTrace, CeOptions, Criterion, Optimizer, ProposalFamily, ThetaDomain,
};
pub use apf::{
    apf_step, initial_sample, phi_weight, unnormalized_kernel_log_density, AdjustmentFunction, ApfStepOutput,
    PriorKernel, ProposalKernel, StepObservation, UnitAdjustment,
};
pub use error::{Error, Result};
pub use gaussian::{
    kld_closed_form, limit_csd_quadrature, limit_kld_quadrature, psi_chi2_prior, psi_star, r_star_kernel,
    scale_family, ChiSquarePriorAdjustment, OptimalAdjustment, ScaleFamily, ScaleKernel,
};
pub use models::{
    arch_model, kalman_oracle, outlier_sequence, simulate, ArchModel, ArchParams, LinearGaussianModel,
    ObservationSequence, StateSpaceModel,
};
pub use rng::RngStream;
pub use sample::{cv2, entropy, ess, multinomial_resample, self_normalized_estimate, WeightDiagnostics, WeightedSample};
pub use scalar::Real;

pub type WeightedSample64 = WeightedSample<f64>;
pub type WeightedSample32 = WeightedSample<f32>;
pub type ArchModel64 = ArchModel<f64>;
pub type ArchModel32 = ArchModel<f32>;
pub type ScaleFamily64 = ScaleFamily<ArchModel64, f64>;
pub type ScaleFamily32 = ScaleFamily<ArchModel32, f32>;
pub type ApfStepOutput64 = ApfStepOutput<f64>;
pub type AdaptTrace64 = AdaptTrace<f64>;
