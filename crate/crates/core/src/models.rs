//! Scalar state-space models of the form
//!
//! ```text
//! X_{k+1} = m(X_k) + σ_w(X_k) W_{k+1}
//! Y_k     = X_k + σ_v V_k
//! ```
//!
//! with independent standard normal `W`, `V`, plus an exact Kalman filter for
//! the linear-Gaussian special case.

use std::io;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::scalar::{normal_log_density, Real};

/// Conditionally Gaussian scalar state-space model.
///
/// Implementors supply the transition mean and standard deviation, the
/// observation noise level and the initial distribution; densities and
/// samplers follow.
pub trait StateSpaceModel<T: Real>: Send + Sync {
    /// `m(x)`
    fn transition_mean(&self, x: T) -> T;
    /// `σ_w(x) > 0`
    fn transition_std(&self, x: T) -> T;
    /// `σ_v > 0`
    fn obs_std(&self) -> T;
    fn initial_mean(&self) -> T;
    fn initial_std(&self) -> T;

    /// `log q(x, x')`
    fn transition_log_density(&self, x: T, x_next: T) -> T {
        normal_log_density(x_next, self.transition_mean(x), self.transition_std(x))
    }

    /// `log g(x, y)`
    fn likelihood_log_density(&self, x: T, y: T) -> T {
        normal_log_density(y, x, self.obs_std())
    }

    fn initial_log_density(&self, x: T) -> T {
        normal_log_density(x, self.initial_mean(), self.initial_std())
    }

    fn sample_initial(&self, rng: &mut RngStream) -> T {
        rng.normal(self.initial_mean(), self.initial_std())
    }

    fn sample_transition(&self, x: T, rng: &mut RngStream) -> T {
        rng.normal(self.transition_mean(x), self.transition_std(x))
    }

    fn sample_observation(&self, x: T, rng: &mut RngStream) -> T {
        rng.normal(x, self.obs_std())
    }

    /// `∂/∂x' [log g(x', y) + log q(x, x')]`
    fn grad_next_log_l(&self, x: T, x_next: T, y: T) -> T {
        let sw = self.transition_std(x);
        let sv = self.obs_std();
        (y - x_next) / (sv * sv) - (x_next - self.transition_mean(x)) / (sw * sw)
    }
}

/// Parameters of ARCH(1) observed in Gaussian noise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArchParams {
    pub beta0: f64,
    pub beta1: f64,
    pub sigma_v2: f64,
}

impl ArchParams {
    pub fn new(beta0: f64, beta1: f64, sigma_v2: f64) -> Self {
        Self {
            beta0,
            beta1,
            sigma_v2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta0 > 0.0 && self.beta0.is_finite()) {
            return Err(Error::InvalidParams(format!("beta0 must be positive, got {}", self.beta0)));
        }
        if !(self.beta1 >= 0.0 && self.beta1.is_finite()) {
            return Err(Error::InvalidParams(format!("beta1 must be nonnegative, got {}", self.beta1)));
        }
        if !(self.sigma_v2 > 0.0 && self.sigma_v2.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "sigma_v2 must be positive, got {}",
                self.sigma_v2
            )));
        }
        Ok(())
    }

    /// `β₀ / (1 − β₁)`, defined only for `β₁ < 1`.
    pub fn stationary_variance(&self) -> Option<f64> {
        (self.beta1 < 1.0).then(|| self.beta0 / (1.0 - self.beta1))
    }
}

/// ARCH(1) state with `m ≡ 0`, `σ_w(x) = √(β₀ + β₁x²)`.
///
/// The initial density is `N(0, β₀/(1 − β₁))` when `β₁ < 1` and `N(0, β₀)`
/// otherwise.
#[derive(Clone, Copy, Debug)]
pub struct ArchModel<T> {
    params: ArchParams,
    beta0: T,
    beta1: T,
    sigma_v: T,
    initial_std: T,
}

impl<T: Real> ArchModel<T> {
    pub fn new(params: ArchParams) -> Result<Self> {
        params.validate()?;
        let initial_var = params.stationary_variance().unwrap_or(params.beta0);
        Ok(Self {
            params,
            beta0: T::lit(params.beta0),
            beta1: T::lit(params.beta1),
            sigma_v: T::lit(params.sigma_v2.sqrt()),
            initial_std: T::lit(initial_var.sqrt()),
        })
    }

    pub fn params(&self) -> ArchParams {
        self.params
    }
}

/// Builds the ARCH(1)-in-noise model.
pub fn arch_model<T: Real>(params: ArchParams) -> Result<ArchModel<T>> {
    ArchModel::new(params)
}

impl<T: Real> StateSpaceModel<T> for ArchModel<T> {
    fn transition_mean(&self, _x: T) -> T {
        T::zero()
    }
    fn transition_std(&self, x: T) -> T {
        (self.beta0 + self.beta1 * x * x).sqrt()
    }
    fn obs_std(&self) -> T {
        self.sigma_v
    }
    fn initial_mean(&self) -> T {
        T::zero()
    }
    fn initial_std(&self) -> T {
        self.initial_std
    }
}

/// `X_{k+1} = φ X_k + σ_w W`, `Y_k = X_k + σ_v V`, `X_0 ~ N(μ₀, s₀²)`.
#[derive(Clone, Copy, Debug)]
pub struct LinearGaussianModel<T> {
    pub phi: T,
    pub sigma_w: T,
    pub sigma_v: T,
    pub prior_mean: T,
    pub prior_std: T,
}

impl<T: Real> LinearGaussianModel<T> {
    pub fn new(phi: T, sigma_w: T, sigma_v: T, prior_mean: T, prior_std: T) -> Result<Self> {
        if !(sigma_w > T::zero() && sigma_v > T::zero() && prior_std > T::zero()) {
            return Err(Error::InvalidParams("standard deviations must be positive".into()));
        }
        Ok(Self {
            phi,
            sigma_w,
            sigma_v,
            prior_mean,
            prior_std,
        })
    }
}

impl<T: Real> StateSpaceModel<T> for LinearGaussianModel<T> {
    fn transition_mean(&self, x: T) -> T {
        self.phi * x
    }
    fn transition_std(&self, _x: T) -> T {
        self.sigma_w
    }
    fn obs_std(&self) -> T {
        self.sigma_v
    }
    fn initial_mean(&self) -> T {
        self.prior_mean
    }
    fn initial_std(&self) -> T {
        self.prior_std
    }
}

/// Annotation attached to an absolute step index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegimeMark {
    pub step: usize,
    pub label: String,
}

/// Observations `y_k` for consecutive absolute steps starting at `first_step`.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationSequence<T> {
    pub first_step: usize,
    pub values: Vec<T>,
    pub regime_marks: Vec<RegimeMark>,
}

impl<T: Real> ObservationSequence<T> {
    pub fn new(first_step: usize, values: Vec<T>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite observation".into()));
        }
        Ok(Self {
            first_step,
            values,
            regime_marks: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `(k, y_k)` pairs with absolute step indices.
    pub fn steps(&self) -> impl Iterator<Item = (usize, T)> + '_ {
        self.values
            .iter()
            .enumerate()
            .map(move |(i, &y)| (self.first_step + i, y))
    }

    /// Writes `k,y` CSV.
    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["k", "y"]).map_err(csv_err)?;
        for (k, y) in self.steps() {
            w.write_record([k.to_string(), y.to_string()]).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Io {
            path: "<writer>".into(),
            source: e,
        })
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        self.write_csv(io::BufWriter::new(file))
    }

    /// Reads `k,y` CSV; steps must be consecutive.
    pub fn read_csv<R: io::Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers().map_err(csv_err)?;
        if headers != vec!["k", "y"] {
            return Err(Error::Csv(format!("expected header k,y, found {:?}", headers)));
        }
        let mut first_step = None;
        let mut values = Vec::new();
        for (row, rec) in r.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let k: usize = rec[0]
                .parse()
                .map_err(|_| Error::Csv(format!("row {row}: bad step {:?}", &rec[0])))?;
            let y: f64 = rec[1]
                .parse()
                .map_err(|_| Error::Csv(format!("row {row}: bad value {:?}", &rec[1])))?;
            let start = *first_step.get_or_insert(k);
            if k != start + row {
                return Err(Error::Csv(format!("row {row}: step {k} is not consecutive")));
            }
            values.push(T::lit(y));
        }
        Self::new(first_step.unwrap_or(0), values)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Csv(e.to_string())
}

/// Draws `(x_0..x_{T-1}, y_0..y_{T-1})` from the generative model.
pub fn simulate<T: Real, M: StateSpaceModel<T>>(
    model: &M,
    steps: usize,
    rng: &mut RngStream,
) -> Result<(Vec<T>, ObservationSequence<T>)> {
    if steps == 0 {
        return Err(Error::InvalidArgument("simulation length must be positive".into()));
    }
    let mut states = Vec::with_capacity(steps);
    let mut obs = Vec::with_capacity(steps);
    let mut x = model.sample_initial(rng);
    for k in 0..steps {
        if k > 0 {
            x = model.sample_transition(x, rng);
        }
        states.push(x);
        obs.push(model.sample_observation(x, rng));
    }
    Ok((states, ObservationSequence::new(0, obs)?))
}

/// Simulates ARCH for `burn_in + horizon` steps, keeps steps
/// `[burn_in, burn_in + horizon)` and overwrites every observation at absolute
/// step `>= onset` with `level_multiplier · σ_s`.
pub fn outlier_sequence<T: Real>(
    params: ArchParams,
    burn_in: usize,
    onset: usize,
    horizon: usize,
    level_multiplier: f64,
    rng: &mut RngStream,
) -> Result<ObservationSequence<T>> {
    if onset < burn_in {
        return Err(Error::InvalidArgument(format!(
            "outlier onset {onset} precedes end of burn-in {burn_in}"
        )));
    }
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be positive".into()));
    }
    let sigma_s = params
        .stationary_variance()
        .ok_or_else(|| Error::InvalidParams("outlier level needs beta1 < 1".into()))?
        .sqrt();
    let model = ArchModel::<T>::new(params)?;
    let (_, full) = simulate(&model, burn_in + horizon, rng)?;
    let level = T::lit(level_multiplier * sigma_s);
    let mut values = full.values[burn_in..].to_vec();
    for (i, v) in values.iter_mut().enumerate() {
        if burn_in + i >= onset {
            *v = level;
        }
    }
    let mut seq = ObservationSequence::new(burn_in, values)?;
    if onset < burn_in + horizon {
        seq.regime_marks.push(RegimeMark {
            step: onset,
            label: "outlier".into(),
        });
    }
    Ok(seq)
}

/// Filtering mean and variance of one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianMoments<T> {
    pub mean: T,
    pub variance: T,
}

/// Exact filter for `X_{k+1} = φX_k + σ_w W`, `Y = X + σ_v V` with prior
/// `N(prior_mean, prior_var)` on the first state.
pub fn kalman_oracle<T: Real>(
    phi: T,
    sigma_w: T,
    sigma_v: T,
    prior_mean: T,
    prior_var: T,
    obs: &ObservationSequence<T>,
) -> Result<Vec<GaussianMoments<T>>> {
    if !(sigma_w > T::zero() && sigma_v > T::zero()) {
        return Err(Error::InvalidParams("noise standard deviations must be positive".into()));
    }
    if !(prior_var >= T::zero()) {
        return Err(Error::InvalidParams("prior variance must be nonnegative".into()));
    }
    let r = sigma_v * sigma_v;
    let q = sigma_w * sigma_w;
    let mut mean = prior_mean;
    let mut var = prior_var;
    let mut out = Vec::with_capacity(obs.len());
    for (i, &y) in obs.values.iter().enumerate() {
        if i > 0 {
            mean = phi * mean;
            var = phi * phi * var + q;
        }
        let gain = var / (var + r);
        mean = mean + gain * (y - mean);
        var = (T::one() - gain) * var;
        out.push(GaussianMoments {
            mean,
            variance: var,
        });
    }
    Ok(out)
}
