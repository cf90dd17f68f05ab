#![allow(dead_code)]

use adaptive_apf::quadrature::Quadrature;
use adaptive_apf::{arch_model, ArchModel, ArchParams, RngStream, StateSpaceModel, WeightedSample};

pub fn benchmark_model() -> ArchModel<f64> {
    arch_model(ArchParams::new(1.0, 0.99, 10.0)).unwrap()
}

/// `n` i.i.d. draws from `N(0, std²)` with unit weights.
pub fn gaussian_cloud(n: usize, std: f64, rng: &mut RngStream) -> WeightedSample<f64> {
    WeightedSample::uniform((0..n).map(|_| rng.normal(0.0, std)).collect()).unwrap()
}

pub fn normal_pdf(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    (-0.5 * z * z).exp() / (std * (2.0 * std::f64::consts::PI).sqrt())
}

/// `∫∫ ν(x) g(x', y) q(x, x') f(x') dx' dx` by brute-force nested quadrature
/// on fixed windows, using only the model's primitive densities.
pub fn joint_expectation<M: StateSpaceModel<f64>>(
    model: &M,
    nu_std: f64,
    y: f64,
    f: impl Fn(f64) -> f64,
) -> f64 {
    let outer = Quadrature::new(1e-13, 1e-10);
    let inner = Quadrature::new(1e-15, 1e-11);
    outer
        .integrate(
            |x| {
                let sw = model.transition_std(x);
                let c = model.transition_mean(x);
                let nu = normal_pdf(x, 0.0, nu_std);
                inner
                    .integrate(
                        |xn| {
                            nu * (model.likelihood_log_density(xn, y) + model.transition_log_density(x, xn)).exp()
                                * f(xn)
                        },
                        c - 12.0 * sw,
                        c + 12.0 * sw,
                    )
                    .unwrap()
                    .value
            },
            -12.0 * nu_std,
            12.0 * nu_std,
        )
        .unwrap()
        .value
}

pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Optimal-filter particle approximation of the filtering distribution at
/// `last_step` for the outlier experiment (burn-in 100, outliers from 110).
pub fn regime_sample(seed: u64, n: usize, last_step: usize) -> WeightedSample<f64> {
    use adaptive_apf::{apf_step, initial_sample, outlier_sequence, r_star_kernel, OptimalAdjustment, StepObservation};
    let m = benchmark_model();
    let seq = outlier_sequence::<f64>(m.params(), 100, 110, last_step - 100 + 1, 6.0, &mut RngStream::new(seed)).unwrap();
    let mut rng = RngStream::derived(seed, "regime", n as u64);
    let mut steps = seq.steps();
    let (_, y0) = steps.next().unwrap();
    let mut s = initial_sample(&m, n, y0, &mut rng).unwrap();
    for (k, y) in steps {
        s = apf_step(&s, &m, &OptimalAdjustment::new(m), &r_star_kernel(m), StepObservation::new(k, y), n, &mut rng)
            .unwrap()
            .sample;
    }
    s
}
