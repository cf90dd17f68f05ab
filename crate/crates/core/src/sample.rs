//! Weighted particle samples and weight-degeneracy diagnostics.
//!
//! Weights are kept unnormalized; every diagnostic normalizes internally and
//! is invariant to a positive rescaling of the weight vector. Individual zero
//! weights are allowed (with `0 log 0 = 0`), an all-zero vector is not.

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::scalar::{compensated_sum, Real};

/// Particle positions paired with nonnegative, unnormalized importance weights.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedSample<T> {
    positions: Vec<T>,
    weights: Vec<T>,
}

impl<T: Real> WeightedSample<T> {
    pub fn new(positions: Vec<T>, weights: Vec<T>) -> Result<Self> {
        if positions.len() != weights.len() {
            return Err(Error::InvalidArgument(format!(
                "{} positions but {} weights",
                positions.len(),
                weights.len()
            )));
        }
        if positions.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument("non-finite particle position".into()));
        }
        total_weight(&weights)?;
        Ok(Self { positions, weights })
    }

    /// Equally weighted sample.
    pub fn uniform(positions: Vec<T>) -> Result<Self> {
        let weights = vec![T::one(); positions.len()];
        Self::new(positions, weights)
    }

    /// Builds a sample from log-weights by subtracting their maximum before
    /// exponentiating. Returns the sample and the subtracted shift, so that
    /// `weight_i * exp(shift)` is the original weight.
    pub fn from_log_weights(positions: Vec<T>, log_weights: &[T]) -> Result<(Self, T)> {
        let shift = max_finite(log_weights).ok_or_else(|| {
            Error::InvalidWeights("every log-weight is -inf or NaN".into())
        })?;
        let weights = log_weights
            .iter()
            .map(|&lw| if lw.is_nan() { T::zero() } else { (lw - shift).exp() })
            .collect();
        Ok((Self::new(positions, weights)?, shift))
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[T] {
        &self.positions
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    /// Total weight `Ω_N`.
    pub fn total_weight(&self) -> T {
        compensated_sum(self.weights.iter().copied())
    }

    pub fn into_parts(self) -> (Vec<T>, Vec<T>) {
        (self.positions, self.weights)
    }

    /// Self-normalized estimate `Ω⁻¹ Σ w_i f(ξ_i)`.
    pub fn estimate<F: Fn(T) -> T>(&self, f: F) -> T {
        let total = self.total_weight();
        compensated_sum(
            self.positions
                .iter()
                .zip(&self.weights)
                .map(|(&x, &w)| w * f(x)),
        ) / total
    }

    pub fn mean(&self) -> T {
        self.estimate(|x| x)
    }

    pub fn diagnostics(&self) -> WeightDiagnostics<T> {
        WeightDiagnostics::compute(&self.weights).expect("sample weights validated on construction")
    }

    pub fn resample(&self, m: usize, rng: &mut RngStream) -> Result<Vec<usize>> {
        multinomial_resample(&self.weights, m, rng)
    }
}

fn max_finite<T: Real>(values: &[T]) -> Option<T> {
    values
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .fold(None, |acc, v| match acc {
            Some(a) if a >= v => Some(a),
            _ => Some(v),
        })
}

/// Validates a weight vector and returns `Ω_N`.
pub fn total_weight<T: Real>(weights: &[T]) -> Result<T> {
    if weights.is_empty() {
        return Err(Error::InvalidWeights("empty weight vector".into()));
    }
    for (i, w) in weights.iter().enumerate() {
        if !w.is_finite() {
            return Err(Error::InvalidWeights(format!("weight {i} is not finite")));
        }
        if *w < T::zero() {
            return Err(Error::InvalidWeights(format!("weight {i} is negative")));
        }
    }
    let total = compensated_sum(weights.iter().copied());
    if total <= T::zero() {
        return Err(Error::InvalidWeights("weights sum to zero".into()));
    }
    if !total.is_finite() {
        return Err(Error::InvalidWeights("weights sum overflows".into()));
    }
    Ok(total)
}

/// Weights divided by their maximum, plus the sum of the rescaled weights.
fn rescaled<T: Real>(weights: &[T]) -> Result<(Vec<T>, T)> {
    total_weight(weights)?;
    let max = weights.iter().copied().fold(T::zero(), T::max);
    let scaled: Vec<T> = weights.iter().map(|&w| w / max).collect();
    let total = compensated_sum(scaled.iter().copied());
    Ok((scaled, total))
}

/// Squared coefficient of variation `N Σ w² / Ω² − 1`, in `[0, N − 1]`.
pub fn cv2<T: Real>(weights: &[T]) -> Result<T> {
    let (scaled, total) = rescaled(weights)?;
    let n = T::from_usize_lossy(weights.len());
    let sum_sq = compensated_sum(scaled.iter().map(|&w| w * w));
    let raw = n * sum_sq / (total * total) - T::one();
    Ok(raw.max(T::zero()).min(n - T::one()))
}

/// Negated Shannon entropy `Σ (w/Ω) log(N w/Ω)`, in `[0, log N]`.
pub fn entropy<T: Real>(weights: &[T]) -> Result<T> {
    let (scaled, total) = rescaled(weights)?;
    let n = T::from_usize_lossy(weights.len());
    let raw = compensated_sum(scaled.iter().filter(|&&w| w > T::zero()).map(|&w| {
        let p = w / total;
        p * (n * p).ln()
    }));
    Ok(raw.max(T::zero()).min(n.ln()))
}

/// Effective sample size `N / (1 + CV²)`.
pub fn ess<T: Real>(weights: &[T]) -> Result<T> {
    let c = cv2(weights)?;
    Ok(T::from_usize_lossy(weights.len()) / (T::one() + c))
}

/// Self-normalized importance sampling estimate of `f` under the sample.
pub fn self_normalized_estimate<T: Real, F: Fn(T) -> T>(
    sample: &WeightedSample<T>,
    f: F,
) -> Result<T> {
    let est = sample.estimate(f);
    if est.is_finite() {
        Ok(est)
    } else {
        Err(Error::InvalidArgument("test function not finite on the sample".into()))
    }
}

/// `M` i.i.d. categorical draws with `P(i) = w_i / Ω`.
pub fn multinomial_resample<T: Real>(
    weights: &[T],
    m: usize,
    rng: &mut RngStream,
) -> Result<Vec<usize>> {
    if m == 0 {
        return Err(Error::InvalidArgument("resample size must be positive".into()));
    }
    total_weight(weights)?;
    let mut cumulative = Vec::with_capacity(weights.len());
    let mut acc = T::zero();
    for &w in weights {
        acc = acc + w;
        cumulative.push(acc);
    }
    let last_positive = weights
        .iter()
        .rposition(|&w| w > T::zero())
        .expect("positive total implies a positive weight");

    let draws = (0..m)
        .map(|_| {
            let u = rng.uniform::<T>() * acc;
            let idx = cumulative.partition_point(|&c| c <= u);
            idx.min(last_positive)
        })
        .collect();
    Ok(draws)
}

/// CV², entropy and ESS of one weight vector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightDiagnostics<T> {
    pub cv2: T,
    pub entropy: T,
    pub ess: T,
}

impl<T: Real> WeightDiagnostics<T> {
    pub fn compute(weights: &[T]) -> Result<Self> {
        let cv2 = cv2(weights)?;
        Ok(Self {
            cv2,
            entropy: entropy(weights)?,
            ess: T::from_usize_lossy(weights.len()) / (T::one() + cv2),
        })
    }
}
