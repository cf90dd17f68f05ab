//! Derivative-free minimizers for the frozen-draw objective.

use crate::error::{Error, Result};
use crate::scalar::Real;

use super::ThetaDomain;

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Coordinate in which the search proceeds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamScale {
    Linear,
    /// Search over `log θ`; bounds must be positive.
    Log,
}

impl ParamScale {
    fn to_search<T: Real>(self, theta: T) -> T {
        match self {
            ParamScale::Linear => theta,
            ParamScale::Log => theta.ln(),
        }
    }

    fn from_search<T: Real>(self, u: T) -> T {
        match self {
            ParamScale::Linear => u,
            ParamScale::Log => u.exp(),
        }
    }

    /// Log scale when every lower bound is positive.
    pub fn for_domain<T: Real>(domain: &ThetaDomain<T>) -> Self {
        if domain.lower.iter().all(|&l| l > T::zero()) {
            ParamScale::Log
        } else {
            ParamScale::Linear
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalarMinimum<T> {
    pub theta: T,
    pub value: T,
    /// Every `(θ, objective)` pair in evaluation order.
    pub evaluations: Vec<(T, T)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoxMinimum<T> {
    pub theta: Vec<T>,
    pub value: T,
    pub evaluations: Vec<(Vec<T>, T)>,
}

fn sanitize<T: Real>(v: T) -> T {
    if v.is_nan() {
        T::infinity()
    } else {
        v
    }
}

/// Golden-section search on `[lower, upper]`.
///
/// Stops once the bracket is at most `tolerance` wide in `θ` or after
/// `max_evals` evaluations, and returns the best point evaluated. On ties the
/// earlier evaluation wins. NaN objective values count as `+inf`.
pub fn minimize_scalar<T: Real, F: FnMut(T) -> Result<T>>(
    mut objective: F,
    lower: T,
    upper: T,
    scale: ParamScale,
    tolerance: f64,
    max_evals: usize,
) -> Result<ScalarMinimum<T>> {
    if !(lower < upper) {
        return Err(Error::InvalidArgument(format!("empty search interval [{lower}, {upper}]")));
    }
    if scale == ParamScale::Log && !(lower > T::zero()) {
        return Err(Error::InvalidArgument("log-scale search needs a positive lower bound".into()));
    }
    if max_evals < 2 {
        return Err(Error::InvalidArgument("golden-section search needs at least 2 evaluations".into()));
    }
    let tol = T::lit(tolerance);
    let ratio = T::lit(INV_PHI);
    let mut evaluations = Vec::new();
    let mut eval = |u: T, evaluations: &mut Vec<(T, T)>| -> Result<T> {
        let theta = scale.from_search(u);
        let v = sanitize(objective(theta)?);
        evaluations.push((theta, v));
        Ok(v)
    };

    let (mut a, mut b) = (scale.to_search(lower), scale.to_search(upper));
    let mut c = b - (b - a) * ratio;
    let mut d = a + (b - a) * ratio;
    let mut fc = eval(c, &mut evaluations)?;
    let mut fd = eval(d, &mut evaluations)?;
    while evaluations.len() < max_evals && scale.from_search(b) - scale.from_search(a) > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - (b - a) * ratio;
            fc = eval(c, &mut evaluations)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + (b - a) * ratio;
            fd = eval(d, &mut evaluations)?;
        }
    }
    let (theta, value) = evaluations
        .iter()
        .copied()
        .fold((evaluations[0].0, T::infinity()), |best, (t, v)| if v < best.1 { (t, v) } else { best });
    Ok(ScalarMinimum {
        theta,
        value,
        evaluations,
    })
}

/// Projected descent along central finite-difference gradients with
/// backtracking, inside a box.
pub fn minimize_box<T: Real, F: FnMut(&[T]) -> Result<T>>(
    mut objective: F,
    domain: &ThetaDomain<T>,
    start: &[T],
    tolerance: f64,
    max_evals: usize,
) -> Result<BoxMinimum<T>> {
    if start.len() != domain.dim() {
        return Err(Error::InvalidArgument("starting point has the wrong dimension".into()));
    }
    let scale = ParamScale::for_domain(domain);
    let dim = domain.dim();
    let lo: Vec<T> = domain.lower.iter().map(|&l| scale.to_search(l)).collect();
    let hi: Vec<T> = domain.upper.iter().map(|&u| scale.to_search(u)).collect();
    let project = |u: &mut [T]| {
        for j in 0..dim {
            u[j] = u[j].max(lo[j]).min(hi[j]);
        }
    };
    let to_theta = |u: &[T]| -> Vec<T> { u.iter().map(|&v| scale.from_search(v)).collect() };
    let mut evaluations: Vec<(Vec<T>, T)> = Vec::new();
    let mut eval = |u: &[T], evaluations: &mut Vec<(Vec<T>, T)>| -> Result<T> {
        let theta = to_theta(u);
        let v = sanitize(objective(&theta)?);
        evaluations.push((theta, v));
        Ok(v)
    };

    let mut u: Vec<T> = domain.clamp(start).iter().map(|&t| scale.to_search(t)).collect();
    let mut fu = eval(&u, &mut evaluations)?;
    let tol = T::lit(tolerance);
    let width = lo
        .iter()
        .zip(&hi)
        .map(|(&l, &h)| h - l)
        .fold(T::zero(), T::max);
    let mut step = width * T::lit(0.1);
    let h = T::lit(1e-4) * width.max(T::one());

    'outer: while evaluations.len() + 2 * dim <= max_evals {
        let mut grad = vec![T::zero(); dim];
        for j in 0..dim {
            let mut up = u.clone();
            let mut dn = u.clone();
            up[j] = (u[j] + h).min(hi[j]);
            dn[j] = (u[j] - h).max(lo[j]);
            let fp = eval(&up, &mut evaluations)?;
            let fm = eval(&dn, &mut evaluations)?;
            grad[j] = if fp.is_finite() && fm.is_finite() {
                (fp - fm) / (up[j] - dn[j])
            } else {
                T::zero()
            };
        }
        let gnorm = grad.iter().fold(T::zero(), |m, g| m.max(g.abs()));
        if gnorm == T::zero() {
            break;
        }
        loop {
            if evaluations.len() >= max_evals {
                break 'outer;
            }
            let mut cand: Vec<T> = u.iter().zip(&grad).map(|(&x, &g)| x - step * g / gnorm).collect();
            project(&mut cand);
            let moved = to_theta(&cand)
                .iter()
                .zip(to_theta(&u))
                .fold(T::zero(), |m, (a, b)| m.max((*a - b).abs()));
            if moved <= tol * T::lit(1e-3) {
                break 'outer;
            }
            let fc = eval(&cand, &mut evaluations)?;
            let decrease: T = grad.iter().zip(u.iter().zip(&cand)).map(|(&g, (&a, &b))| g * (a - b)).sum();
            if fc < fu && fu - fc >= T::lit(1e-4) * decrease {
                u = cand;
                fu = fc;
                step = (step * T::lit(2.0)).min(width);
                if moved <= tol {
                    break 'outer;
                }
                break;
            }
            step = step / T::lit(2.0);
        }
    }
    let (theta, value) = evaluations
        .iter()
        .fold((evaluations[0].0.clone(), T::infinity()), |best, (t, v)| {
            if *v < best.1 {
                (t.clone(), *v)
            } else {
                best
            }
        });
    Ok(BoxMinimum {
        theta,
        value,
        evaluations,
    })
}
