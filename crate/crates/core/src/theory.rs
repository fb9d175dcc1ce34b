//! Expected recovery under bin occupancy models, one-shot success, and parameter overhead.
//!
//! Two occupancy models coexist. The closed form weights every weak composition of `n`
//! points into `k` bins equally; the iid model drops points independently into equal-mass
//! bins. They disagree, and both are reported.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_bigint::BigInt;
use num_rational::BigRational;

use crate::numerics::RngStream;
use crate::{Error, Result};

/// Largest number of weak compositions the enumeration oracle will visit.
pub const COMPOSITION_GUARD: u128 = 10_000_000;

fn binom(a: i64, b: i64) -> BigInt {
    if a < 0 || b < 0 || b > a {
        return BigInt::from(0);
    }
    let b = b.min(a - b);
    let mut acc = BigInt::from(1);
    for i in 0..b {
        acc = acc * BigInt::from(a - i) / BigInt::from(i + 1);
    }
    acc
}

fn check_domain(n: usize, k: usize) -> Result<()> {
    if !(k > n && n > 2) {
        return Err(Error::Domain(format!("closed form needs k > n > 2, got n={n}, k={k}")));
    }
    Ok(())
}

/// The closed form as an exact rational, including the residual terms
/// `n C(k,n) / C(k+n-1,k-1) - n/k`.
pub fn prop1_closed_form_exact(n: usize, k: usize) -> Result<BigRational> {
    check_domain(n, k)?;
    let (n, k) = (n as i64, k as i64);
    let mut acc = BigInt::from(0);
    for i in 1..=n - 2 {
        let mut inner = BigInt::from(0);
        for j in 1..=(n - i) / 2 {
            inner += binom(k - i, j) * binom(n - i - j - 1, j - 1);
        }
        acc += BigInt::from(i) * binom(k, i) * inner;
    }
    acc += BigInt::from(n) * binom(k, n);
    let total = binom(k + n - 1, k - 1);
    Ok(BigRational::new(acc, total) - BigRational::new(BigInt::from(n), BigInt::from(k)))
}

pub fn prop1_closed_form(n: usize, k: usize) -> Result<f64> {
    prop1_closed_form_exact(n, k).map(|r| rational_to_f64(&r))
}

/// Exact rational to the nearest-ish f64 via a scaled integer quotient.
pub fn rational_to_f64(r: &BigRational) -> f64 {
    use num_traits::ToPrimitive;
    let scale = BigInt::from(1u64 << 62);
    let q = (r.numer() * &scale) / r.denom();
    q.to_f64().unwrap_or(f64::NAN) / (1u64 << 62) as f64
}

/// Number of weak compositions of `n` into `k` parts, `C(k+n-1, k-1)`.
pub fn composition_count(n: usize, k: usize) -> BigInt {
    binom((k + n) as i64 - 1, k as i64 - 1)
}

/// Mean number of parts equal to 1 over all weak compositions of `n` into `k` parts, by
/// exhaustive enumeration.
pub fn composition_oracle(n: usize, k: usize) -> Result<BigRational> {
    use num_traits::ToPrimitive;
    if k == 0 {
        return Err(Error::InvalidArgument("need at least one bin".into()));
    }
    let count = composition_count(n, k);
    let c = count.to_u128().unwrap_or(u128::MAX);
    if c > COMPOSITION_GUARD {
        return Err(Error::GuardExceeded {
            count: c,
            limit: COMPOSITION_GUARD,
        });
    }
    let mut parts = vec![0usize; k];
    let mut singles: u128 = 0;
    let mut visited: u128 = 0;
    enumerate(&mut parts, 0, n, &mut |p| {
        visited += 1;
        singles += p.iter().filter(|&&v| v == 1).count() as u128;
    });
    debug_assert_eq!(visited, c);
    Ok(BigRational::new(BigInt::from(singles), BigInt::from(visited)))
}

fn enumerate(parts: &mut [usize], idx: usize, left: usize, f: &mut impl FnMut(&[usize])) {
    if idx + 1 == parts.len() {
        parts[idx] = left;
        f(parts);
        return;
    }
    for v in 0..=left {
        parts[idx] = v;
        enumerate(parts, idx + 1, left - v, f);
    }
}

/// `n (1 - 1/k)^(n-1)`: expected singleton bins for iid uniform bin assignment.
pub fn iid_expectation(n: usize, k: usize) -> f64 {
    if n == 0 || k == 0 {
        return 0.0;
    }
    n as f64 * libm::pow(1.0 - 1.0 / k as f64, (n - 1) as f64)
}

/// Singleton bins in one replicate of `n` iid points dropped into `k` bins.
pub fn iid_replicate(n: usize, k: usize, stream: RngStream) -> usize {
    let mut s = stream.sampler();
    let mut counts = vec![0u32; k];
    for _ in 0..n {
        counts[s.below(k as u64) as usize] += 1;
    }
    counts.iter().filter(|&&c| c == 1).count()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarlo {
    pub mean: f64,
    pub stderr: f64,
    pub replicates: usize,
    /// Closed iid formula for comparison.
    pub iid_formula: f64,
}

/// Summarize per-replicate singleton counts (in replicate order).
pub fn summarize(n: usize, k: usize, counts: &[usize]) -> MonteCarlo {
    let r = counts.len() as f64;
    let mean = counts.iter().map(|&c| c as f64).sum::<f64>() / r;
    let var = if counts.len() > 1 {
        counts.iter().map(|&c| (c as f64 - mean) * (c as f64 - mean)).sum::<f64>() / (r - 1.0)
    } else {
        0.0
    };
    MonteCarlo {
        mean,
        stderr: libm::sqrt(var / r),
        replicates: counts.len(),
        iid_formula: iid_expectation(n, k),
    }
}

/// Replicate `r` uses stream `stream.derive(r)`, so the estimate does not depend on how
/// replicates are distributed over workers.
pub fn iid_monte_carlo(n: usize, k: usize, replicates: usize, stream: RngStream) -> Result<MonteCarlo> {
    if replicates == 0 || k == 0 {
        return Err(Error::InvalidArgument("need replicates >= 1 and k >= 1".into()));
    }
    let counts: Vec<usize> = (0..replicates).map(|r| iid_replicate(n, k, stream.derive(r as u64))).collect();
    Ok(summarize(n, k, &counts))
}

/// Probability that exactly one of `n` iid points lands in a bin of mass `p`.
pub fn one_shot_success(n: usize, p: f64) -> Result<f64> {
    if n == 0 || !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("one-shot needs n >= 1 and 0 < p < 1, got n={n}, p={p}")));
    }
    Ok(n as f64 * p * libm::pow(1.0 - p, (n - 1) as f64))
}

/// Optimal mass `1/n` and the success probability there.
pub fn one_shot_optimum(n: usize) -> (f64, f64) {
    let p = 1.0 / n as f64;
    (p, libm::pow(1.0 - p, (n as f64) - 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Overhead {
    pub weights: usize,
    pub biases: usize,
    pub bridge: usize,
    pub total: usize,
}

impl Overhead {
    /// Added parameters as a fraction of a base model size.
    pub fn relative_to(&self, base: usize) -> f64 {
        self.total as f64 / base as f64
    }
}

pub fn overhead(m: usize, k: usize, decoys: usize, bridge: usize) -> Overhead {
    let rows = k + decoys;
    Overhead {
        weights: rows * m,
        biases: rows,
        bridge,
        total: rows * (m + 1) + bridge,
    }
}

/// Both occupancy models side by side.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryExpectation {
    pub n: usize,
    pub k: usize,
    /// `None` outside `k > n > 2`.
    pub closed_form: Option<f64>,
    pub iid: f64,
    pub monte_carlo: Option<MonteCarlo>,
}

pub fn recovery_expectation(n: usize, k: usize) -> RecoveryExpectation {
    RecoveryExpectation {
        n,
        k,
        closed_form: prop1_closed_form(n, k).ok(),
        iid: iid_expectation(n, k),
        monte_carlo: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binomials() {
        assert_eq!(binom(5, 2), BigInt::from(10));
        assert_eq!(binom(5, 6), BigInt::from(0));
        assert_eq!(binom(-1, 0), BigInt::from(0));
        assert_eq!(binom(219, 155), composition_count(64, 156));
    }

    #[test]
    fn closed_form_matches_oracle_for_small_cases() {
        for k in 5..=10 {
            for n in 4..k {
                let lhs = prop1_closed_form_exact(n, k).unwrap() + BigRational::new(BigInt::from(n), BigInt::from(k));
                assert_eq!(lhs, composition_oracle(n, k).unwrap(), "n={n} k={k}");
            }
        }
        let lhs = prop1_closed_form_exact(4, 6).unwrap() + BigRational::new(4.into(), 6.into());
        assert_eq!(lhs, composition_oracle(4, 6).unwrap());
    }

    #[test]
    fn oracle_hand_cases() {
        assert_eq!(composition_oracle(2, 2).unwrap(), BigRational::new(2.into(), 3.into()));
        // n=3,k=3: 10 compositions; (1,1,1) has 3 singletons, the six permutations of
        // (2,1,0) have one each, the three of (3,0,0) none.
        assert_eq!(composition_oracle(3, 3).unwrap(), BigRational::new(9.into(), 10.into()));
        assert!(matches!(composition_oracle(64, 156), Err(Error::GuardExceeded { .. })));
    }

    #[test]
    fn domain() {
        assert!(prop1_closed_form(3, 2).is_err());
        assert!(prop1_closed_form(2, 5).is_err());
        assert!(prop1_closed_form(3, 4).is_ok());
    }

    #[test]
    fn fig2a_anchor_and_monotonicity() {
        let v156 = prop1_closed_form(64, 156).unwrap();
        assert!(v156 >= 32.0, "{v156}");
        assert!(prop1_closed_form(64, 128).unwrap() < v156);
        assert!(v156 < prop1_closed_form(64, 256).unwrap());
        let mut prev = prop1_closed_form(8, 9).unwrap();
        for k in 10..=60 {
            let v = prop1_closed_form(8, k).unwrap();
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn monte_carlo_limits() {
        let mc = iid_monte_carlo(8, 10_000, 200, RngStream::new(1, 0)).unwrap();
        assert!((mc.mean - 8.0).abs() <= 3.0 * mc.stderr + 0.05, "{mc:?}");
        let mc = iid_monte_carlo(64, 156, 4000, RngStream::new(2, 0)).unwrap();
        let target = 64.0 * libm::pow(155.0 / 156.0, 63.0);
        assert!((mc.iid_formula - target).abs() < 1e-12);
        assert!((mc.mean - target).abs() <= 3.0 * mc.stderr, "{mc:?} vs {target}");
        let again = iid_monte_carlo(64, 156, 4000, RngStream::new(2, 0)).unwrap();
        assert_eq!(mc, again);
        assert!(iid_monte_carlo(4, 4, 0, RngStream::new(0, 0)).is_err());
    }

    #[test]
    fn one_shot() {
        assert_eq!(one_shot_success(1, 0.5).unwrap(), 0.5);
        let v = one_shot_success(4096, 1.0 / 4096.0).unwrap();
        assert!((v - 0.367_924).abs() < 1e-5, "{v}");
        assert_eq!(one_shot_optimum(4096).1, libm::pow(4095.0 / 4096.0, 4095.0));
        assert!(one_shot_success(4, 0.0).is_err());
        // Grid argmax at 1/n.
        let n = 50;
        let (best, _) = (1..10_000)
            .map(|i| i as f64 / 10_000.0)
            .map(|p| (p, one_shot_success(n, p).unwrap()))
            .fold((0.0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
        assert!((best - 1.0 / n as f64).abs() <= 1e-4);
    }

    #[test]
    fn overhead_arithmetic() {
        let m = 150_528;
        assert_eq!(overhead(m, 2, 0, 0).total, 2 * (m + 1));
        let o = overhead(m, 2, 0, 0);
        assert!((o.relative_to(11_700_000) - 0.0257).abs() < 0.001);
        assert!((o.relative_to(25_600_000) - 0.0118).abs() < 0.001);
        let o = overhead(m, 128, 0, 0);
        assert_eq!(o.weights, 19_267_584);
        assert_eq!(o.biases, 128);
        assert_eq!(o.total, 19_267_712);
    }

    #[test]
    fn expectation_reports_both_models() {
        let e = recovery_expectation(3, 2);
        assert!(e.closed_form.is_none());
        assert!((e.iid - 0.75).abs() < 1e-15);
        let e = recovery_expectation(64, 156);
        assert!(e.closed_form.unwrap() >= 32.0);
    }
}
