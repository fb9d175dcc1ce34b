//! Reconstruction scoring in pixel (feature) space.

use alloc::format;
use alloc::vec::Vec;

use crate::numerics::{assignment, rel_l2, sq_dist, Real, Tensor};
use crate::{Error, Result};

/// PSNR reported for a perfect reconstruction.
pub const PSNR_CEILING: f64 = 300.0;

/// `(candidate index, truth index)` pairs.
pub type Matching = Vec<(usize, usize)>;

fn cost_matrix<T: Real>(a: &[&[T]], b: &Tensor<T>) -> Tensor<f64> {
    let mut c = Tensor::zeros(&[a.len(), b.rows()]);
    for (i, x) in a.iter().enumerate() {
        for j in 0..b.rows() {
            c.set(i, j, sq_dist(x, b.row(j)));
        }
    }
    c
}

/// Minimum total squared distance assignment of candidates to truth rows. With more
/// candidates than truth rows, the surplus candidates stay unmatched.
pub fn match_candidates<T: Real>(cands: &[Tensor<T>], truth: &Tensor<T>) -> Result<Matching> {
    if cands.is_empty() {
        return Ok(Matching::new());
    }
    if let Some(c) = cands.iter().find(|c| c.len() != truth.cols()) {
        return Err(Error::Shape(format!(
            "candidate of length {} against truth rows of length {}",
            c.len(),
            truth.cols()
        )));
    }
    let rows: Vec<&[T]> = cands.iter().map(|c| c.data()).collect();
    let cost = cost_matrix(&rows, truth);
    if cands.len() <= truth.rows() {
        let a = assignment(&cost)?;
        Ok(a.row_to_col.into_iter().enumerate().collect())
    } else {
        let a = assignment(&cost.transpose()?)?;
        let mut pairs: Matching = a.row_to_col.into_iter().enumerate().map(|(t, c)| (c, t)).collect();
        pairs.sort_unstable();
        Ok(pairs)
    }
}

/// `10 log10(peak^2 / mse)`, capped at [`PSNR_CEILING`] for identical inputs.
pub fn psnr<T: Real>(a: &[T], b: &[T], peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::InvalidArgument(format!("PSNR peak must be positive, got {peak}")));
    }
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!("PSNR of lengths {} and {}", a.len(), b.len())));
    }
    let mse = sq_dist(a, b) / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CEILING);
    }
    Ok((10.0 * libm::log10(peak * peak / mse)).min(PSNR_CEILING))
}

/// Fraction of truth rows whose matched candidate has that row as its nearest neighbour
/// among truth and distractor pool.
pub fn iip_pixel<T: Real>(
    pairs: &Matching,
    cands: &[Tensor<T>],
    truth: &Tensor<T>,
    pool: &Tensor<T>,
) -> Result<f64> {
    if pool.is_empty() {
        return Err(Error::InvalidArgument("distractor pool is empty".into()));
    }
    iip_inner(pairs, cands, truth, pool)
}

fn iip_inner<T: Real>(pairs: &Matching, cands: &[Tensor<T>], truth: &Tensor<T>, pool: &Tensor<T>) -> Result<f64> {
    if !pool.is_empty() && pool.cols() != truth.cols() {
        return Err(Error::Shape("pool and truth rows differ in length".into()));
    }
    let hits = pairs
        .iter()
        .filter(|&&(c, t)| {
            let x = cands[c].data();
            let own = sq_dist(x, truth.row(t));
            let beaten_by_truth = (0..truth.rows()).any(|j| j != t && sq_dist(x, truth.row(j)) <= own);
            let beaten_by_pool = !pool.is_empty() && (0..pool.rows()).any(|j| sq_dist(x, pool.row(j)) <= own);
            !beaten_by_truth && !beaten_by_pool
        })
        .count();
    Ok(hits as f64 / truth.rows() as f64)
}

pub fn exact_count<T: Real>(pairs: &Matching, cands: &[Tensor<T>], truth: &Tensor<T>, rel_tol: f64) -> usize {
    pairs
        .iter()
        .filter(|&&(c, t)| rel_l2(cands[c].data(), truth.row(t)) <= rel_tol)
        .count()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleScore {
    pub candidate: usize,
    pub truth: usize,
    pub psnr: f64,
    pub rel_err: f64,
    pub exact: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    /// Mean PSNR over all matched candidates.
    pub mean_psnr: f64,
    /// Mean PSNR over exactly recovered candidates (0 when there are none).
    pub mean_psnr_exact: f64,
    pub iip: f64,
    pub exact_count: usize,
    pub matching: Matching,
    pub per_sample: Vec<SampleScore>,
}

/// Match, then score. PSNR uses the truth's value range as peak, i.e. data scaled to
/// `[0, 1]`.
pub fn score<T: Real>(
    cands: &[Tensor<T>],
    truth: &Tensor<T>,
    pool: &Tensor<T>,
    rel_tol: f64,
) -> Result<ScoreReport> {
    let pairs = match_candidates(cands, truth)?;
    let (lo, hi) = truth
        .data()
        .iter()
        .map(|v| v.to_f64())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let peak = if hi > lo { hi - lo } else { 1.0 };
    let mut per_sample = pairs
        .iter()
        .map(|&(c, t)| {
            let rel_err = rel_l2(cands[c].data(), truth.row(t));
            Ok(SampleScore {
                candidate: c,
                truth: t,
                psnr: psnr(cands[c].data(), truth.row(t), peak)?,
                rel_err,
                exact: rel_err <= rel_tol,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    per_sample.sort_by_key(|s| s.truth);
    let mean = |it: &mut dyn Iterator<Item = f64>| {
        let (s, c) = it.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
        if c == 0 {
            0.0
        } else {
            s / c as f64
        }
    };
    let mean_psnr = mean(&mut per_sample.iter().map(|s| s.psnr));
    let mean_psnr_exact = mean(&mut per_sample.iter().filter(|s| s.exact).map(|s| s.psnr));
    let iip = iip_inner(&pairs, cands, truth, pool)?;
    Ok(ScoreReport {
        mean_psnr,
        mean_psnr_exact,
        iip,
        exact_count: per_sample.iter().filter(|s| s.exact).count(),
        matching: pairs,
        per_sample,
    })
}
