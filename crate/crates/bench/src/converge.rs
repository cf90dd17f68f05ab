//! Convergence of the weight entropy and CV² to their large-sample limits
//! for one filter step.

use adaptive_apf::gaussian::NormalDensity;
use adaptive_apf::{
    apf_step, limit_csd_quadrature, limit_kld_quadrature, r_star_kernel, ArchModel, RngStream, StepObservation,
    UnitAdjustment, WeightedSample,
};
use rayon::prelude::*;

use crate::config::BenchConfig;
use crate::error::BenchError;

/// One seeded replicate at one sample size.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvergeSample {
    pub particles: usize,
    pub seed: usize,
    pub entropy: f64,
    pub cv2: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergeLevel {
    pub particles: usize,
    pub mean_entropy: f64,
    pub mean_cv2: f64,
    pub median_entropy_error: f64,
    /// Median of `|cv2 − limit| / limit`.
    pub median_cv2_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergeStudy {
    pub y: f64,
    pub limit_kld: f64,
    pub limit_csd: f64,
    pub samples: Vec<ConvergeSample>,
    pub levels: Vec<ConvergeLevel>,
}

impl ConvergeStudy {
    pub fn level(&self, particles: usize) -> Option<&ConvergeLevel> {
        self.levels.iter().find(|l| l.particles == particles)
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Initial particles from the stationary law, unit adjustment weights and
/// the optimal kernel; one step towards `y` per seed and sample size.
pub fn convergence_study(config: &BenchConfig) -> Result<ConvergeStudy, BenchError> {
    config.validate()?;
    let params = config.arch.into();
    let model: ArchModel<f64> = ArchModel::new(params)?;
    let sigma_s = params.stationary_variance().expect("validated").sqrt();
    let y = config.converge.y.unwrap_or(config.outlier_multiplier * sigma_s);
    let nu = NormalDensity::new(0.0, sigma_s);
    let kernel = r_star_kernel(model);
    let limit_kld = limit_kld_quadrature(&nu, &model, &UnitAdjustment, &kernel, y)?;
    let limit_csd = limit_csd_quadrature(&nu, &model, &UnitAdjustment, &kernel, y)?;

    let jobs: Vec<(usize, usize)> = config
        .converge
        .sizes
        .iter()
        .flat_map(|&n| (0..config.converge.seeds).map(move |s| (n, s)))
        .collect();
    let samples = jobs
        .par_iter()
        .map(|&(n, seed)| -> Result<ConvergeSample, BenchError> {
            let mut rng = RngStream::derived(config.seed, &format!("converge-{n}"), seed as u64);
            let positions: Vec<f64> = (0..n).map(|_| rng.normal(0.0, sigma_s)).collect();
            let sample = WeightedSample::uniform(positions)?;
            let out = apf_step(&sample, &model, &UnitAdjustment, &kernel, StepObservation::new(1, y), n, &mut rng)?;
            Ok(ConvergeSample {
                particles: n,
                seed,
                entropy: out.diagnostics.entropy,
                cv2: out.diagnostics.cv2,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let levels = config
        .converge
        .sizes
        .iter()
        .map(|&n| {
            let at: Vec<&ConvergeSample> = samples.iter().filter(|s| s.particles == n).collect();
            let count = at.len() as f64;
            ConvergeLevel {
                particles: n,
                mean_entropy: at.iter().map(|s| s.entropy).sum::<f64>() / count,
                mean_cv2: at.iter().map(|s| s.cv2).sum::<f64>() / count,
                median_entropy_error: median(at.iter().map(|s| (s.entropy - limit_kld).abs()).collect()),
                median_cv2_error: median(at.iter().map(|s| (s.cv2 - limit_csd).abs() / limit_csd).collect()),
            }
        })
        .collect();
    Ok(ConvergeStudy {
        y,
        limit_kld,
        limit_csd,
        samples,
        levels,
    })
}
