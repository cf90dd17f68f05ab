//! Limiting KL and chi-square divergences between the target
//! `μ*(dξ, dξ̃) ∝ ν(dξ) l(ξ, ξ̃)` and the instrumental law
//! `π(dξ, dξ̃) ∝ ν(dξ) Ψ(ξ) r(ξ, ξ̃)`, by nested adaptive quadrature.
//!
//! With `ρ = Φ ν(Ψ) / νL` the density ratio `dμ*/dπ`, the divergences are
//! `E_{μ*}[log ρ]` and `E_{μ*}[ρ] - 1`.

use crate::apf::{log_l, AdjustmentFunction, ProposalKernel};
use crate::error::Result;
use crate::models::StateSpaceModel;
use crate::quadrature::Quadrature;
use crate::scalar::{normal_log_density, Real};

use super::{eta2, tau};

/// Scalar probability density with a window holding essentially all of its
/// mass.
pub trait ScalarDensity<T: Real>: Sync {
    fn log_density(&self, x: T) -> T;
    fn window(&self) -> (T, T);
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalDensity<T> {
    pub mean: T,
    pub std: T,
}

impl<T: Real> NormalDensity<T> {
    pub fn new(mean: T, std: T) -> Self {
        Self { mean, std }
    }
}

impl<T: Real> ScalarDensity<T> for NormalDensity<T> {
    fn log_density(&self, x: T) -> T {
        normal_log_density(x, self.mean, self.std)
    }
    fn window(&self) -> (T, T) {
        let half = T::lit(12.0) * self.std;
        (self.mean - half, self.mean + half)
    }
}

const SHIFT_GRID: usize = 2001;
const INNER_HALF_WIDTH: f64 = 14.0;

struct Setup<'a, T, D: ?Sized, M, A: ?Sized, K: ?Sized> {
    nu: &'a D,
    model: &'a M,
    psi: &'a A,
    kernel: &'a K,
    y: T,
    lo: T,
    hi: T,
}

impl<T, D, M, A, K> Setup<'_, T, D, M, A, K>
where
    T: Real,
    D: ScalarDensity<T> + ?Sized,
    M: StateSpaceModel<T>,
    A: AdjustmentFunction<T> + ?Sized,
    K: ProposalKernel<T> + ?Sized,
{
    fn outer() -> Quadrature {
        Quadrature {
            abs_tol: 1e-9,
            rel_tol: 1e-10,
            max_intervals: 4000,
            initial_segments: 32,
        }
    }

    fn inner() -> Quadrature {
        Quadrature {
            abs_tol: 1e-14,
            rel_tol: 1e-11,
            max_intervals: 2000,
            initial_segments: 8,
        }
    }

    fn grid_max<F: Fn(T) -> T>(&self, f: F) -> T {
        (0..SHIFT_GRID)
            .map(|i| {
                let t = T::from_usize_lossy(i) / T::from_usize_lossy(SHIFT_GRID - 1);
                f(self.lo + (self.hi - self.lo) * t)
            })
            .filter(|v| v.is_finite())
            .fold(T::neg_infinity(), T::max)
    }

    fn inner_window(&self, x: T) -> (T, T) {
        let c = tau(self.model, x, self.y);
        let h = T::lit(INNER_HALF_WIDTH) * eta2(self.model, x).sqrt();
        (c - h, c + h)
    }

    /// `log ν(Ψ)`
    fn log_nu_psi(&self) -> Result<T> {
        let f = |x: T| self.nu.log_density(x) + self.psi.log_value(x, self.y);
        let shift = self.grid_max(f);
        let est = Self::outer().integrate(|x| (f(x) - shift).exp(), self.lo, self.hi)?;
        Ok(est.value.ln() + shift)
    }

    /// `log νL`
    fn log_nu_l(&self) -> Result<T> {
        let peak = |x: T| self.nu.log_density(x) + log_l(self.model, x, tau(self.model, x, self.y), self.y);
        let shift = self.grid_max(peak);
        let est = Self::outer().try_integrate(
            |x| {
                let base = self.nu.log_density(x) - shift;
                let (a, b) = self.inner_window(x);
                Ok(Self::inner()
                    .integrate(|xn| (base + log_l(self.model, x, xn, self.y)).exp(), a, b)?
                    .value)
            },
            self.lo,
            self.hi,
        )?;
        Ok(est.value.ln() + shift)
    }

    /// `E_{μ*}[h(log ρ)]`
    fn expectation<H: Fn(T) -> T>(&self, h: H) -> Result<T> {
        let log_nu_psi = self.log_nu_psi()?;
        let log_nu_l = self.log_nu_l()?;
        let est = Self::outer().try_integrate(
            |x| {
                let log_nu = self.nu.log_density(x);
                let log_psi = self.psi.log_value(x, self.y);
                let (a, b) = self.inner_window(x);
                Ok(Self::inner()
                    .integrate(
                        |xn| {
                            let ll = log_l(self.model, x, xn, self.y);
                            let log_mu = log_nu + ll - log_nu_l;
                            if log_mu == T::neg_infinity() {
                                return T::zero();
                            }
                            let log_rho = ll - self.kernel.log_density(x, xn, self.y) - log_psi + log_nu_psi - log_nu_l;
                            log_mu.exp() * h(log_rho)
                        },
                        a,
                        b,
                    )?
                    .value)
            },
            self.lo,
            self.hi,
        )?;
        Ok(est.value)
    }
}

/// Limiting KL divergence between target and instrumental laws for initial
/// density `nu`.
pub fn limit_kld_quadrature<T, D, M, A, K>(nu: &D, model: &M, psi: &A, kernel: &K, y_next: T) -> Result<T>
where
    T: Real,
    D: ScalarDensity<T> + ?Sized,
    M: StateSpaceModel<T>,
    A: AdjustmentFunction<T> + ?Sized,
    K: ProposalKernel<T> + ?Sized,
{
    let (lo, hi) = nu.window();
    Setup {
        nu,
        model,
        psi,
        kernel,
        y: y_next,
        lo,
        hi,
    }
    .expectation(|lr| lr)
}

/// Limiting chi-square divergence between target and instrumental laws for
/// initial density `nu`.
pub fn limit_csd_quadrature<T, D, M, A, K>(nu: &D, model: &M, psi: &A, kernel: &K, y_next: T) -> Result<T>
where
    T: Real,
    D: ScalarDensity<T> + ?Sized,
    M: StateSpaceModel<T>,
    A: AdjustmentFunction<T> + ?Sized,
    K: ProposalKernel<T> + ?Sized,
{
    let (lo, hi) = nu.window();
    let setup = Setup {
        nu,
        model,
        psi,
        kernel,
        y: y_next,
        lo,
        hi,
    };
    Ok(setup.expectation(|lr| lr.exp())? - T::one())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::apf::{ScaledAdjustment, UnitAdjustment};
    use crate::gaussian::{r_star_kernel, OptimalAdjustment};
    use crate::models::{arch_model, ArchModel, ArchParams};

    fn model() -> ArchModel<f64> {
        arch_model(ArchParams::new(1.0, 0.99, 10.0)).unwrap()
    }

    #[test]
    fn optimal_pair_has_zero_divergence() {
        let m = model();
        let nu = NormalDensity::new(0.0, 10.0);
        for y in [0.0, 60.0] {
            let kld = limit_kld_quadrature(&nu, &m, &OptimalAdjustment::new(m), &r_star_kernel(m), y).unwrap();
            let csd = limit_csd_quadrature(&nu, &m, &OptimalAdjustment::new(m), &r_star_kernel(m), y).unwrap();
            assert!(kld.abs() < 1e-5, "y={y} kld={kld}");
            assert!(csd.abs() < 1e-5, "y={y} csd={csd}");
        }
    }

    #[test]
    fn rescaled_psi_leaves_limits_unchanged() {
        let m = model();
        let nu = NormalDensity::new(0.0, 10.0);
        let k = r_star_kernel(m);
        let scaled = ScaledAdjustment {
            inner: UnitAdjustment,
            factor: 1e-3,
        };
        let a = limit_kld_quadrature(&nu, &m, &UnitAdjustment, &k, 60.0).unwrap();
        let b = limit_kld_quadrature(&nu, &m, &scaled, &k, 60.0).unwrap();
        assert!((a - b).abs() < 1e-6, "{a} {b}");
        let a = limit_csd_quadrature(&nu, &m, &UnitAdjustment, &k, 60.0).unwrap();
        let b = limit_csd_quadrature(&nu, &m, &scaled, &k, 60.0).unwrap();
        assert!((a - b).abs() < 1e-6 * a.abs().max(1.0), "{a} {b}");
    }
}
