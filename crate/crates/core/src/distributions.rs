//! CDF and quantile providers for the scalar measurement `h(x)`.
//!
//! The attacker never needs the full data distribution, only the law of one scalar. Three
//! families are supported: Normal, Laplace and an empirical law fitted from surrogate data.

use alloc::format;
use alloc::vec::Vec;

use crate::{Error, Result};

const SQRT_2: f64 = core::f64::consts::SQRT_2;

/// A continuous (or interpolated empirical) law on the real line.
#[derive(Debug, Clone, PartialEq)]
pub enum ScalarDistribution {
    Normal { mean: f64, sd: f64 },
    Laplace { location: f64, scale: f64 },
    Empirical(Empirical),
}

/// Sorted sample with type-7 interpolation between order statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Empirical {
    sorted: Vec<f64>,
}

impl Empirical {
    pub fn samples(&self) -> &[f64] {
        &self.sorted
    }
}

impl ScalarDistribution {
    pub fn normal(mean: f64, sd: f64) -> Result<Self> {
        if !(sd > 0.0) || !mean.is_finite() || !sd.is_finite() {
            return Err(Error::InvalidArgument(format!("Normal needs sd > 0, got {sd}")));
        }
        Ok(Self::Normal { mean, sd })
    }

    pub fn standard_normal() -> Self {
        Self::Normal { mean: 0.0, sd: 1.0 }
    }

    pub fn laplace(location: f64, scale: f64) -> Result<Self> {
        if !(scale > 0.0) || !location.is_finite() || !scale.is_finite() {
            return Err(Error::InvalidArgument(format!("Laplace needs scale > 0, got {scale}")));
        }
        Ok(Self::Laplace { location, scale })
    }

    /// Laplace with unit variance: location 0, scale `1/sqrt(2)`.
    pub fn unit_laplace() -> Self {
        Self::Laplace {
            location: 0.0,
            scale: core::f64::consts::FRAC_1_SQRT_2,
        }
    }

    /// `P(X <= x)`.
    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            Self::Normal { mean, sd } => normal_cdf((x - mean) / sd),
            Self::Laplace { location, scale } => {
                let z = (x - location) / scale;
                if z < 0.0 {
                    0.5 * libm::exp(z)
                } else {
                    1.0 - 0.5 * libm::exp(-z)
                }
            }
            Self::Empirical(e) => e.cdf(x),
        }
    }

    /// Inverse CDF for `p` in the open interval `(0, 1)`.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidArgument(format!("quantile needs 0 < p < 1, got {p}")));
        }
        Ok(match self {
            Self::Normal { mean, sd } => mean + sd * normal_quantile(p),
            Self::Laplace { location, scale } => {
                if p < 0.5 {
                    location + scale * libm::log(2.0 * p)
                } else {
                    location - scale * libm::log(2.0 - 2.0 * p)
                }
            }
            Self::Empirical(e) => e.quantile(p),
        })
    }
}

/// Builds the empirical law of `samples` (at least two finite values).
pub fn fit_empirical(samples: &[f64]) -> Result<ScalarDistribution> {
    if samples.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "empirical fit needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("surrogate sample {i}")));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(ScalarDistribution::Empirical(Empirical { sorted }))
}

impl Empirical {
    fn quantile(&self, p: f64) -> f64 {
        let s = &self.sorted;
        let h = (s.len() - 1) as f64 * p;
        let lo = libm::floor(h) as usize;
        if lo + 1 >= s.len() {
            return s[s.len() - 1];
        }
        s[lo] + (h - lo as f64) * (s[lo + 1] - s[lo])
    }

    fn cdf(&self, x: f64) -> f64 {
        let s = &self.sorted;
        let last = s.len() - 1;
        if x < s[0] {
            return 0.0;
        }
        if x >= s[last] {
            return 1.0;
        }
        // Largest i with s[i] <= x; ties resolve to the upper index (right-continuous).
        let i = s.partition_point(|&v| v <= x) - 1;
        let gap = s[i + 1] - s[i];
        let frac = if gap > 0.0 { (x - s[i]) / gap } else { 0.0 };
        (i as f64 + frac) / last as f64
    }
}

pub fn normal_pdf(z: f64) -> f64 {
    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
    INV_SQRT_2PI * libm::exp(-0.5 * z * z)
}

/// Standard normal CDF via `erfc`, accurate in both tails.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / SQRT_2)
}

/// Standard normal quantile: Acklam's rational approximation followed by one Newton step
/// on the erfc-based CDF.
pub fn normal_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.024_25;

    let x = if p < P_LOW {
        let q = libm::sqrt(-2.0 * libm::log(p));
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = libm::sqrt(-2.0 * libm::log(1.0 - p));
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    // Newton refinement; the residual is formed on the smaller tail to avoid cancellation.
    let resid = if x < 0.0 {
        normal_cdf(x) - p
    } else {
        (1.0 - p) - 0.5 * libm::erfc(x / SQRT_2)
    };
    x - resid / normal_pdf(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;
    use proptest::prelude::*;

    /// Adaptive Simpson quadrature; independent of the erfc route.
    fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let lm = 0.5 * (a + m);
            let rm = 0.5 * (m + b);
            let flm = f(lm);
            let frm = f(rm);
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                return left + right + (left + right - whole) / 15.0;
            }
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
        let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        rec(f, a, b, fa, fm, fb, whole, tol, 50)
    }

    fn bisect_quantile(d: &ScalarDistribution, p: f64) -> f64 {
        let (mut lo, mut hi) = (-50.0, 50.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if d.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn symmetric_medians() {
        assert_eq!(ScalarDistribution::standard_normal().cdf(0.0), 0.5);
        assert_eq!(ScalarDistribution::unit_laplace().cdf(0.0), 0.5);
        assert_eq!(ScalarDistribution::standard_normal().quantile(0.5).unwrap(), 0.0);
    }

    #[test]
    fn normal_cdf_matches_quadrature() {
        // P(X <= 1) = 1/2 + integral of the density over [0, 1].
        let integral = adaptive_simpson(&normal_pdf, 0.0, 1.0, 1e-13);
        let cdf = ScalarDistribution::standard_normal().cdf(1.0);
        assert!((cdf - (0.5 + integral)).abs() < 1e-7);
        assert!((cdf - 0.841_344_746).abs() < 1e-8);
    }

    #[test]
    fn normal_quartile_matches_bisection() {
        let d = ScalarDistribution::standard_normal();
        let q = d.quantile(0.25).unwrap();
        assert!((q - bisect_quantile(&d, 0.25)).abs() < 1e-9);
        assert!((q + 0.674_489_750_196_081_7).abs() < 1e-9);
    }

    #[test]
    fn laplace_quantile_closed_form() {
        let d = ScalarDistribution::unit_laplace();
        let q = d.quantile(0.9).unwrap();
        assert!((q - (-(1.0 / SQRT_2) * libm::log(0.2))).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_probability() {
        let d = ScalarDistribution::standard_normal();
        for p in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(d.quantile(p).is_err());
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(ScalarDistribution::normal(0.0, 0.0).is_err());
        assert!(ScalarDistribution::laplace(0.0, -1.0).is_err());
    }

    #[test]
    fn empirical_two_points() {
        let d = fit_empirical(&[1.0, 0.0]).unwrap();
        assert_eq!(d.quantile(0.5).unwrap(), 0.5);
        assert_eq!(d.cdf(0.5), 0.5);
        assert_eq!(d.cdf(-1.0), 0.0);
        assert_eq!(d.cdf(2.0), 1.0);
    }

    #[test]
    fn empirical_rejects_bad_input() {
        assert!(fit_empirical(&[1.0]).is_err());
        assert!(matches!(fit_empirical(&[1.0, f64::INFINITY]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn empirical_quartile_converges() {
        let mut s = RngStream::new(11, 0).sampler();
        let xs: Vec<f64> = (0..10_000).map(|_| s.standard_normal()).collect();
        let d = fit_empirical(&xs).unwrap();
        assert!((d.quantile(0.25).unwrap() + 0.6745).abs() < 0.05);
    }

    #[test]
    fn small_surrogate_fraction_is_close_in_ks_distance() {
        let mut s = RngStream::new(12, 0).sampler();
        let pool: Vec<f64> = (0..1_000_000).map(|_| s.standard_normal()).collect();
        let full = fit_empirical(&pool).unwrap();
        let small = fit_empirical(&pool[..1000]).unwrap();
        let ScalarDistribution::Empirical(f) = &full else { unreachable!() };
        // KS statistic evaluated on every 97th point of the full pool.
        let ks = f
            .samples()
            .iter()
            .step_by(97)
            .map(|&x| (full.cdf(x) - small.cdf(x)).abs())
            .fold(0.0, f64::max);
        assert!(ks < 0.05, "ks = {ks}");
    }

    proptest! {
        #[test]
        fn normal_round_trip(p in 1e-6f64..(1.0 - 1e-6)) {
            let d = ScalarDistribution::normal(0.3, 2.0).unwrap();
            let q = d.quantile(p).unwrap();
            prop_assert!((d.cdf(q) - p).abs() <= 1e-9);
            let back = d.quantile(d.cdf(q)).unwrap();
            prop_assert!((back - q).abs() <= 1e-7 * q.abs().max(1.0));
        }

        #[test]
        fn laplace_round_trip(p in 1e-6f64..(1.0 - 1e-6)) {
            let d = ScalarDistribution::unit_laplace();
            let q = d.quantile(p).unwrap();
            prop_assert!((d.cdf(q) - p).abs() <= 1e-9);
        }

        #[test]
        fn cdf_monotone(a in -8.0f64..8.0, b in -8.0f64..8.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            for d in [ScalarDistribution::standard_normal(), ScalarDistribution::unit_laplace()] {
                prop_assert!(d.cdf(lo) <= d.cdf(hi));
            }
        }
    }
}
