//! Globally adaptive Gauss–Kronrod (7/15 point) quadrature on finite intervals.

use crate::error::{Error, Result};
use crate::scalar::Real;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

// Gauss weights for XGK[1], XGK[3], XGK[5] and the centre.
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

/// Integral estimate with its error bound.
#[derive(Clone, Copy, Debug)]
pub struct Estimate<T> {
    pub value: T,
    pub error: T,
}

#[derive(Clone, Copy, Debug)]
pub struct Quadrature {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
    /// Equal-width pieces the interval is split into before refinement.
    pub initial_segments: usize,
}

impl Default for Quadrature {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            rel_tol: 1e-10,
            max_intervals: 2000,
            initial_segments: 8,
        }
    }
}

struct Segment<T> {
    a: T,
    b: T,
    value: T,
    error: T,
}

impl Quadrature {
    pub fn new(abs_tol: f64, rel_tol: f64) -> Self {
        Self {
            abs_tol,
            rel_tol,
            ..Self::default()
        }
    }

    pub fn integrate<T: Real, F: FnMut(T) -> T>(&self, mut f: F, a: T, b: T) -> Result<Estimate<T>> {
        self.try_integrate(|x| Ok(f(x)), a, b)
    }

    /// Like [`Quadrature::integrate`] but the integrand may fail; the first
    /// failure aborts the integration.
    pub fn try_integrate<T: Real, F: FnMut(T) -> Result<T>>(
        &self,
        mut f: F,
        a: T,
        b: T,
    ) -> Result<Estimate<T>> {
        if !(a.is_finite() && b.is_finite()) {
            return Err(Error::InvalidArgument("integration bounds must be finite".into()));
        }
        if a == b {
            return Ok(Estimate {
                value: T::zero(),
                error: T::zero(),
            });
        }
        let pieces = self.initial_segments.max(1);
        let width = (b - a) / T::from_usize_lossy(pieces);
        let mut segments = Vec::with_capacity(pieces);
        for i in 0..pieces {
            let lo = a + width * T::from_usize_lossy(i);
            let hi = if i + 1 == pieces { b } else { lo + width };
            segments.push(gauss_kronrod(&mut f, lo, hi)?);
        }
        loop {
            let value: T = segments.iter().map(|s| s.value).sum();
            let error: T = segments.iter().map(|s| s.error).sum();
            let target = T::lit(self.abs_tol).max(T::lit(self.rel_tol) * value.abs());
            if !value.is_finite() {
                return Err(Error::Integration {
                    achieved: f64::NAN,
                    requested: target.to_f64_lossy(),
                });
            }
            if error <= target {
                return Ok(Estimate { value, error });
            }
            if segments.len() >= self.max_intervals {
                return Err(Error::Integration {
                    achieved: error.to_f64_lossy(),
                    requested: target.to_f64_lossy(),
                });
            }
            let (worst, _) = segments
                .iter()
                .enumerate()
                .fold((0, T::neg_infinity()), |(bi, be), (i, s)| {
                    if s.error > be {
                        (i, s.error)
                    } else {
                        (bi, be)
                    }
                });
            let seg = segments.swap_remove(worst);
            let mid = T::lit(0.5) * (seg.a + seg.b);
            if mid <= seg.a || mid >= seg.b {
                // interval can no longer be split in this precision
                return Err(Error::Integration {
                    achieved: error.to_f64_lossy(),
                    requested: target.to_f64_lossy(),
                });
            }
            segments.push(gauss_kronrod(&mut f, seg.a, mid)?);
            segments.push(gauss_kronrod(&mut f, mid, seg.b)?);
        }
    }
}

fn gauss_kronrod<T: Real, F: FnMut(T) -> Result<T>>(f: &mut F, a: T, b: T) -> Result<Segment<T>> {
    let centre = T::lit(0.5) * (a + b);
    let half = T::lit(0.5) * (b - a);
    let fc = f(centre)?;
    let mut kronrod = fc * T::lit(WGK[7]);
    let mut gauss = fc * T::lit(WG[3]);
    for (j, &node) in XGK.iter().enumerate().take(7) {
        let dx = half * T::lit(node);
        let pair = f(centre - dx)? + f(centre + dx)?;
        kronrod = kronrod + T::lit(WGK[j]) * pair;
        if j % 2 == 1 {
            gauss = gauss + T::lit(WG[j / 2]) * pair;
        }
    }
    Ok(Segment {
        a,
        b,
        value: kronrod * half,
        error: ((kronrod - gauss) * half).abs(),
    })
}
