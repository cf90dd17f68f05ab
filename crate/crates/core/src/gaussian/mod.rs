//! Closed forms for conditionally Gaussian models with Gaussian observation
//! noise: the optimal adjustment weight and kernel, the chi-square optimal
//! weight for the prior kernel, the scale proposal family, and the
//! closed-form KL divergence over that family.

mod limits;

pub use limits::{limit_csd_quadrature, limit_kld_quadrature, NormalDensity, ScalarDensity};

use crate::adapt::{CeOutcome, ProposalFamily, ThetaDomain};
use crate::apf::{AdjustmentFunction, ProposalKernel};
use crate::error::{Error, Result};
use crate::models::StateSpaceModel;
use crate::sample::WeightedSample;
use crate::scalar::{log_sum_exp, normal_log_density, Real};

/// `τ(x, y) = (σ_w²(x) y + σ_v² m(x)) / (σ_w²(x) + σ_v²)`
pub fn tau<T: Real, M: StateSpaceModel<T>>(model: &M, x: T, y_next: T) -> T {
    let sw2 = model.transition_std(x).powi(2);
    let sv2 = model.obs_std().powi(2);
    (sw2 * y_next + sv2 * model.transition_mean(x)) / (sw2 + sv2)
}

/// `η²(x) = σ_w²(x) σ_v² / (σ_w²(x) + σ_v²)`
pub fn eta2<T: Real, M: StateSpaceModel<T>>(model: &M, x: T) -> T {
    let sw2 = model.transition_std(x).powi(2);
    let sv2 = model.obs_std().powi(2);
    sw2 * sv2 / (sw2 + sv2)
}

/// `log Ψ*(x)`: log predictive density of `y` given the current state `x`.
pub fn log_psi_star<T: Real, M: StateSpaceModel<T>>(model: &M, x: T, y_next: T) -> T {
    let sw2 = model.transition_std(x).powi(2);
    let sv2 = model.obs_std().powi(2);
    normal_log_density(y_next, model.transition_mean(x), (sw2 + sv2).sqrt())
}

pub fn psi_star<T: Real, M: StateSpaceModel<T>>(model: &M, x: T, y_next: T) -> T {
    log_psi_star(model, x, y_next).exp()
}

/// Unnormalized `log` of the chi-square optimal adjustment weight for the
/// prior kernel, `Ψ(x) ∝ (∫ g(x', y)² q(x, x') dx')^{1/2}`.
///
/// Evaluates to `-(y - m)² / (2(2σ_w² + σ_v²)) - log(2σ_w² + σ_v²) / 4`;
/// factors free of `x` are dropped.
pub fn log_psi_chi2_prior<T: Real, M: StateSpaceModel<T>>(model: &M, x: T, y_next: T) -> T {
    let sw2 = model.transition_std(x).powi(2);
    let sv2 = model.obs_std().powi(2);
    let s = T::lit(2.0) * sw2 + sv2;
    let d = y_next - model.transition_mean(x);
    -d * d / (T::lit(2.0) * s) - s.ln() / T::lit(4.0)
}

pub fn psi_chi2_prior<T: Real, M: StateSpaceModel<T>>(model: &M, x: T, y_next: T) -> T {
    log_psi_chi2_prior(model, x, y_next).exp()
}

/// Per-state quantities of the one-step Gaussian update.
#[derive(Clone, Copy, Debug)]
pub struct GaussianStepGeometry<M> {
    pub model: M,
}

impl<M> GaussianStepGeometry<M> {
    pub fn new(model: M) -> Self {
        Self { model }
    }

    pub fn tau<T: Real>(&self, x: T, y_next: T) -> T
    where
        M: StateSpaceModel<T>,
    {
        tau(&self.model, x, y_next)
    }

    pub fn eta2<T: Real>(&self, x: T) -> T
    where
        M: StateSpaceModel<T>,
    {
        eta2(&self.model, x)
    }

    pub fn psi_star<T: Real>(&self, x: T, y_next: T) -> T
    where
        M: StateSpaceModel<T>,
    {
        psi_star(&self.model, x, y_next)
    }
}

/// `Ψ*`, the adjustment weight that pairs with [`r_star_kernel`].
#[derive(Clone, Copy, Debug)]
pub struct OptimalAdjustment<M> {
    pub model: M,
}

impl<M> OptimalAdjustment<M> {
    pub fn new(model: M) -> Self {
        Self { model }
    }
}

impl<T: Real, M: StateSpaceModel<T>> AdjustmentFunction<T> for OptimalAdjustment<M> {
    fn log_value(&self, x: T, y_next: T) -> T {
        log_psi_star(&self.model, x, y_next)
    }
    fn label(&self) -> String {
        "optimal".into()
    }
}

/// Chi-square optimal adjustment weight for the prior kernel.
#[derive(Clone, Copy, Debug)]
pub struct ChiSquarePriorAdjustment<M> {
    pub model: M,
}

impl<M> ChiSquarePriorAdjustment<M> {
    pub fn new(model: M) -> Self {
        Self { model }
    }
}

impl<T: Real, M: StateSpaceModel<T>> AdjustmentFunction<T> for ChiSquarePriorAdjustment<M> {
    fn log_value(&self, x: T, y_next: T) -> T {
        log_psi_chi2_prior(&self.model, x, y_next)
    }
    fn label(&self) -> String {
        "chi2-prior".into()
    }
}

/// `r_θ(x, ·) = N(τ(x, y), θ η(x))`.
#[derive(Clone, Copy, Debug)]
pub struct ScaleKernel<M, T> {
    pub model: M,
    pub theta: T,
}

impl<T: Real, M: StateSpaceModel<T>> ProposalKernel<T> for ScaleKernel<M, T> {
    fn log_density(&self, x: T, x_next: T, y_next: T) -> T {
        let std = self.theta * eta2(&self.model, x).sqrt();
        normal_log_density(x_next, tau(&self.model, x, y_next), std)
    }
    fn sample_via_noise(&self, x: T, noise: T, y_next: T) -> T {
        tau(&self.model, x, y_next) + self.theta * eta2(&self.model, x).sqrt() * noise
    }
    fn label(&self) -> String {
        format!("scale({})", self.theta)
    }
}

/// The optimal kernel `r*(x, ·) = N(τ(x, y), η(x))`.
pub fn r_star_kernel<T: Real, M: StateSpaceModel<T>>(model: M) -> ScaleKernel<M, T> {
    ScaleKernel {
        model,
        theta: T::one(),
    }
}

/// Default parameter range of [`ScaleFamily`].
pub const SCALE_DOMAIN: (f64, f64) = (1e-2, 1e2);

/// Scale family `{r_θ : θ > 0}` with `F_θ(x, ε) = τ(x, y) + θ η(x) ε`.
#[derive(Clone, Debug)]
pub struct ScaleFamily<M, T> {
    pub model: M,
    domain: ThetaDomain<T>,
}

impl<T: Real, M: StateSpaceModel<T>> ScaleFamily<M, T> {
    pub fn new(model: M) -> Self {
        Self::with_domain(model, T::lit(SCALE_DOMAIN.0), T::lit(SCALE_DOMAIN.1)).expect("default domain is valid")
    }

    pub fn with_domain(model: M, lower: T, upper: T) -> Result<Self> {
        if !(lower > T::zero()) {
            return Err(Error::InvalidArgument(format!("scale must stay positive, lower bound {lower}")));
        }
        Ok(Self {
            model,
            domain: ThetaDomain::scalar(lower, upper)?,
        })
    }
}

pub fn scale_family<T: Real, M: StateSpaceModel<T>>(model: M) -> ScaleFamily<M, T> {
    ScaleFamily::new(model)
}

impl<T: Real, M: StateSpaceModel<T> + Clone> ProposalFamily<T> for ScaleFamily<M, T> {
    type Kernel = ScaleKernel<M, T>;

    fn kernel(&self, theta: &[T]) -> Self::Kernel {
        ScaleKernel {
            model: self.model.clone(),
            theta: theta[0],
        }
    }

    fn domain(&self) -> &ThetaDomain<T> {
        &self.domain
    }

    fn label(&self) -> String {
        "scale".into()
    }

    fn log_density_grad_theta(&self, theta: &[T], x: T, x_next: T, y_next: T) -> Option<Vec<T>> {
        let t = theta[0];
        let z2 = (x_next - tau(&self.model, x, y_next)).powi(2) / eta2(&self.model, x);
        Some(vec![-t.recip() + z2 / (t * t * t)])
    }

    fn log_density_grad_next(&self, theta: &[T], x: T, x_next: T, y_next: T) -> Option<T> {
        let t = theta[0];
        Some(-(x_next - tau(&self.model, x, y_next)) / (t * t * eta2(&self.model, x)))
    }

    fn noise_map_grad_theta(&self, _theta: &[T], x: T, noise: T, _y_next: T) -> Option<Vec<T>> {
        Some(vec![eta2(&self.model, x).sqrt() * noise])
    }

    /// `θ = (Σ ω̃ (ξ̃ - τ(ξ))² / η²(ξ) / Σ ω̃)^{1/2}`, NaN when every weight is zero.
    fn ce_update(&self, outcomes: &[CeOutcome<T>], y_next: T) -> Option<Vec<T>> {
        let mut num = T::zero();
        let mut den = T::zero();
        for o in outcomes {
            if o.weight > T::zero() {
                let z2 = (o.proposed - tau(&self.model, o.ancestor, y_next)).powi(2) / eta2(&self.model, o.ancestor);
                num = num + o.weight * z2;
                den = den + o.weight;
            }
        }
        Some(vec![if den > T::zero() { (num / den).sqrt() } else { T::nan() }])
    }
}

/// KL divergence between the target and the instrumental law obtained with
/// unit adjustment weights and the scale kernel at `theta`, given `log Ψ*` at
/// each particle of `sample`.
pub fn kld_closed_form<T: Real>(theta: T, sample: &WeightedSample<T>, log_psi_star: &[T]) -> Result<T> {
    if !(theta > T::zero()) || !theta.is_finite() {
        return Err(Error::InvalidArgument(format!("scale must be positive and finite, got {theta}")));
    }
    if log_psi_star.len() != sample.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictive values for {} particles",
            log_psi_star.len(),
            sample.len()
        )));
    }
    let log_joint: Vec<T> = sample
        .weights()
        .iter()
        .zip(log_psi_star)
        .map(|(&w, &lp)| w.ln() + lp)
        .collect();
    let log_norm = log_sum_exp(&log_joint);
    if !log_norm.is_finite() {
        return Err(Error::InvalidWeights("predictive weights vanish on the whole sample".into()));
    }
    let log_total = sample.total_weight().ln();
    let scale_term = theta.ln() + (theta.powi(-2) - T::one()) / T::lit(2.0);
    let mut acc = T::zero();
    for (&lj, &lp) in log_joint.iter().zip(log_psi_star) {
        let p = (lj - log_norm).exp();
        if p > T::zero() {
            acc = acc + p * (lp + log_total - log_norm);
        }
    }
    Ok(acc + scale_term)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{arch_model, ArchModel, ArchParams};
    use crate::quadrature::Quadrature;
    use approx::assert_relative_eq;

    fn model() -> ArchModel<f64> {
        arch_model(ArchParams::new(1.0, 0.99, 10.0)).unwrap()
    }

    #[test]
    fn psi_star_at_origin() {
        let v = psi_star(&model(), 0.0, 0.0);
        assert_relative_eq!(v, 1.0 / (2.0 * std::f64::consts::PI * 11.0).sqrt(), max_relative = 1e-14);
        assert!((v - 0.12028).abs() < 1e-5);
        assert!(psi_star(&model(), 0.0, 1e3) < 1e-300);
    }

    #[test]
    fn psi_star_is_a_density_in_y() {
        let m = model();
        for x in [0.0, 3.0, -20.0] {
            let s = (1.0 + 0.99 * x * x + 10.0f64).sqrt();
            let mass = Quadrature::default()
                .integrate(|y| psi_star(&m, x, y), -12.0 * s, 12.0 * s)
                .unwrap()
                .value;
            assert!((mass - 1.0).abs() < 1e-6, "{mass}");
        }
    }

    #[test]
    fn posterior_moments_at_outlier() {
        let m = model();
        assert_relative_eq!(tau(&m, 0.0, 60.0), 60.0 / 11.0, max_relative = 1e-14);
        assert_relative_eq!(eta2(&m, 0.0), 10.0 / 11.0, max_relative = 1e-14);
        assert!((tau(&m, 0.0, 60.0) - 5.4545).abs() < 1e-4);
    }

    #[test]
    fn uninformative_observation_gives_prior_kernel() {
        let m: ArchModel<f64> = arch_model(ArchParams::new(1.0, 0.5, 1e12)).unwrap();
        let x = 2.0;
        assert!(tau(&m, x, 5.0).abs() < 1e-10);
        assert_relative_eq!(eta2(&m, x), 1.0 + 0.5 * 4.0, max_relative = 1e-10);
    }

    #[test]
    fn eta2_below_both_variances() {
        let m = model();
        for x in [-50.0, -1.0, 0.0, 0.3, 8.0, 1e3] {
            let sw2 = 1.0 + 0.99 * x * x;
            let e = eta2(&m, x);
            assert!(e < sw2 && e < 10.0);
        }
    }

    #[test]
    fn optimal_pair_factorizes_l_on_grid() {
        let m = model();
        let k = r_star_kernel(m);
        for i in 0..50 {
            for j in 0..50 {
                let x = -30.0 + 60.0 * i as f64 / 49.0;
                let xn = -30.0 + 60.0 * j as f64 / 49.0;
                for y in [0.0, 60.0] {
                    let lhs = crate::apf::log_l(&m, x, xn, y);
                    let rhs = log_psi_star(&m, x, y) + k.log_density(x, xn, y);
                    // relative error of l itself
                    assert!((lhs - rhs).abs() <= 1e-10, "x={x} xn={xn} y={y}: {lhs} vs {rhs}");
                }
            }
        }
    }

    #[test]
    fn chi2_prior_weight_matches_quadrature_up_to_constant() {
        let m = model();
        let y = 3.0;
        let integral = |x: f64| {
            let sw = (1.0 + 0.99 * x * x).sqrt();
            Quadrature::new(1e-300, 1e-12)
                .integrate(
                    |xn: f64| {
                        let g = m.likelihood_log_density(xn, y);
                        (2.0 * g + m.transition_log_density(x, xn)).exp()
                    },
                    -12.0 * sw - 12.0,
                    12.0 * sw + 12.0,
                )
                .unwrap()
                .value
                .sqrt()
        };
        let base = integral(0.0) / psi_chi2_prior(&m, 0.0, y);
        for x in [1.0, -1.0, 5.0, -5.0] {
            let ratio = integral(x) / psi_chi2_prior(&m, x, y);
            assert!((ratio / base - 1.0).abs() < 1e-4, "x={x}");
        }
    }

    #[test]
    fn chi2_prior_weight_is_flat_for_constant_transition_scale() {
        let m: ArchModel<f64> = arch_model(ArchParams::new(2.0, 0.0, 10.0)).unwrap();
        let a = log_psi_chi2_prior(&m, 0.0, 4.0);
        for x in [-3.0, 1.0, 50.0] {
            assert_relative_eq!(log_psi_chi2_prior(&m, x, 4.0), a, epsilon = 1e-14);
        }
    }

    #[test]
    fn scale_family_unit_member_is_r_star() {
        let m = model();
        let fam = scale_family(m);
        let k1 = fam.kernel(&[1.0]);
        let ks = r_star_kernel(m);
        for x in [-5.0, 0.0, 2.0] {
            for xn in [-3.0, 0.5, 7.0] {
                assert!((k1.log_density(x, xn, 60.0) - ks.log_density(x, xn, 60.0)).abs() < 1e-12);
            }
            for theta in [0.1, 1.0, 30.0] {
                assert_eq!(fam.kernel(&[theta]).sample_via_noise(x, 0.0, 60.0), tau(&m, x, 60.0));
            }
        }
    }

    #[test]
    fn scale_family_transition_integrates_to_one() {
        let m = model();
        let fam = scale_family(m);
        for theta in [0.5, 2.0] {
            let k = fam.kernel(&[theta]);
            for x in [0.0, -4.0] {
                let c = tau(&m, x, 60.0);
                let s = theta * eta2(&m, x).sqrt();
                let mass = Quadrature::default()
                    .integrate(|xn| k.log_density(x, xn, 60.0).exp(), c - 12.0 * s, c + 12.0 * s)
                    .unwrap()
                    .value;
                assert!((mass - 1.0).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn ce_update_examples() {
        let m = model();
        let fam = scale_family(m);
        let y = 60.0;
        let t = tau(&m, 0.0, y);
        let e = eta2(&m, 0.0).sqrt();
        let single = [CeOutcome {
            ancestor: 0.0,
            proposed: t + e,
            weight: 1.0,
        }];
        assert_relative_eq!(fam.ce_update(&single, y).unwrap()[0], 1.0, max_relative = 1e-12);
        let pm = [t - e, t + e].map(|p| CeOutcome {
            ancestor: 0.0,
            proposed: p,
            weight: 0.5,
        });
        assert_relative_eq!(fam.ce_update(&pm, y).unwrap()[0], 1.0, max_relative = 1e-12);
        let none = [CeOutcome {
            ancestor: 0.0,
            proposed: t,
            weight: 0.0,
        }];
        assert!(fam.ce_update(&none, y).unwrap()[0].is_nan());
    }

    #[test]
    fn ce_update_symmetric_offsets_with_unit_eta() {
        // σ_w² = σ_v² = 2 gives η = 1 everywhere
        let m: ArchModel<f64> = arch_model(ArchParams::new(2.0, 0.0, 2.0)).unwrap();
        let fam = scale_family(m);
        let y = 1.5;
        let t = tau(&m, 0.7, y);
        for delta in [0.3, 1.0, 4.0] {
            let pm = [t - delta, t + delta].map(|p| CeOutcome {
                ancestor: 0.7,
                proposed: p,
                weight: 2.0,
            });
            assert_relative_eq!(fam.ce_update(&pm, y).unwrap()[0], delta, max_relative = 1e-12);
        }
    }

    #[test]
    fn kld_closed_form_examples() {
        let s = WeightedSample::new(vec![0.0, 1.0, 2.0], vec![0.2, 0.5, 0.3]).unwrap();
        let lp = [-1.5f64; 3];
        assert!(kld_closed_form(1.0, &s, &lp).unwrap().abs() < 1e-15);
        assert_relative_eq!(kld_closed_form(2.0, &s, &lp).unwrap(), 2f64.ln() - 0.375, max_relative = 1e-12);
        assert!((kld_closed_form(2.0, &s, &lp).unwrap() - 0.318147).abs() < 1e-6);
        assert!(kld_closed_form(0.0, &s, &lp).is_err());
        assert!(kld_closed_form(-1.0, &s, &lp).is_err());
    }

    #[test]
    fn kld_closed_form_is_nonnegative_part_plus_scale_term() {
        let s = WeightedSample::new(vec![0.0; 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let lp = [-700.0, -701.0, -699.5, -702.0];
        let base = kld_closed_form(1.0, &s, &lp).unwrap();
        assert!(base > 0.0);
        let at2 = kld_closed_form(2.0, &s, &lp).unwrap();
        assert_relative_eq!(at2 - base, 2f64.ln() - 0.375, max_relative = 1e-10);
    }
}
