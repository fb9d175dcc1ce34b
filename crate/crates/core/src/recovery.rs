//! Server-side analytic inversion of imprint gradients.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::imprint::{Activation, ImprintModule};
use crate::model::{PayloadKind, UpdatePayload, IMPRINT_BIAS, IMPRINT_WEIGHT};
use crate::numerics::{sq_dist, Real, Tensor};
use crate::{Error, Result};

/// Default empty-bin threshold, relative to the largest bias gradient.
pub const DEFAULT_TAU0: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveredCandidate<T> {
    pub vector: Tensor<T>,
    /// Bin index in measurement order (unpermuted).
    pub bin: usize,
    /// Bias-gradient value (or difference) used as the divisor.
    pub denominator: f64,
    /// Mean absolute entry of the weight-gradient row (or row difference).
    pub confidence: f64,
}

/// How the payload relates to per-example gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    /// Mean over the batch (fedSGD default).
    Mean,
    /// Sum over `count` datapoints (secure-aggregation sum of per-example terms).
    Sum { count: usize },
}

/// The server's secret knowledge about the imprint it planted.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackMetadata<T> {
    pub module: ImprintModule<T>,
    pub expected_n: usize,
    pub normalization: Normalization,
    pub tau0: f64,
}

impl<T: Real> AttackMetadata<T> {
    pub fn new(module: ImprintModule<T>, expected_n: usize) -> Self {
        Self {
            module,
            expected_n,
            normalization: Normalization::Mean,
            tau0: DEFAULT_TAU0,
        }
    }
}

/// `gradW_i / gradb_i` for the row with the largest `|gradb_i|`.
pub fn recover_single_linear<T: Real>(grad_w: &Tensor<T>, grad_b: &Tensor<T>) -> Result<Tensor<T>> {
    check_rows(grad_w, grad_b)?;
    let (row, gb) = grad_b
        .data()
        .iter()
        .map(|v| v.to_f64())
        .enumerate()
        .fold((0, 0.0), |best, (i, v)| if v.abs() > best.1.abs() { (i, v) } else { best });
    if !(gb.abs() > DEFAULT_TAU0) {
        return Err(Error::NoActiveRow);
    }
    Ok(divide_row(grad_w.row(row), gb))
}

/// Per-row division over the first `labels` rows of a logistic-regression payload. Rows
/// of labels that occur once reproduce that datapoint; repeated labels give the
/// bias-gradient weighted average of their examples.
pub fn recover_unique_labels<T: Real>(
    grad_w: &Tensor<T>,
    grad_b: &Tensor<T>,
    labels: usize,
) -> Result<Vec<RecoveredCandidate<T>>> {
    check_rows(grad_w, grad_b)?;
    if labels > grad_b.len() {
        return Err(Error::Shape(format!("{labels} labels but only {} rows", grad_b.len())));
    }
    let gb: Vec<f64> = grad_b.data()[..labels].iter().map(|v| v.to_f64()).collect();
    let floor = DEFAULT_TAU0 * gb.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    Ok(gb
        .iter()
        .enumerate()
        .filter(|(_, v)| v.abs() > floor && **v != 0.0)
        .map(|(i, &den)| candidate(grad_w.row(i).iter().map(|v| v.to_f64()).collect(), den, i))
        .collect())
}

fn check_rows<T: Real>(grad_w: &Tensor<T>, grad_b: &Tensor<T>) -> Result<()> {
    if grad_w.shape().len() != 2 || grad_w.rows() != grad_b.len() {
        return Err(Error::Shape(format!(
            "weight gradient {:?} and bias gradient {:?} disagree",
            grad_w.shape(),
            grad_b.shape()
        )));
    }
    Ok(())
}

fn divide_row<T: Real>(row: &[T], den: f64) -> Tensor<T> {
    Tensor::vector(row.iter().map(|v| T::from_f64(v.to_f64() / den)).collect())
}

fn candidate<T: Real>(num: Vec<f64>, den: f64, bin: usize) -> RecoveredCandidate<T> {
    let confidence = num.iter().map(|v| v.abs()).sum::<f64>() / num.len().max(1) as f64;
    RecoveredCandidate {
        vector: Tensor::vector(num.iter().map(|v| T::from_f64(v / den)).collect()),
        bin,
        denominator: den,
        confidence,
    }
}

/// Imprint gradients as per-example-mean gradients in f64.
fn imprint_gradients<T: Real>(
    payload: &UpdatePayload<T>,
    meta: &AttackMetadata<T>,
) -> Result<(Tensor<f64>, Vec<f64>)> {
    let w = payload
        .params
        .get(IMPRINT_WEIGHT)
        .ok_or_else(|| Error::Mismatch("payload has no imprint weights".into()))?;
    let b = payload
        .params
        .get(IMPRINT_BIAS)
        .ok_or_else(|| Error::Mismatch("payload has no imprint biases".into()))?;
    let module = &meta.module;
    if w.shape() != module.weight.shape() || b.len() != module.rows() {
        return Err(Error::Mismatch(format!(
            "payload imprint shape {:?} does not match the planted module {:?}",
            w.shape(),
            module.weight.shape()
        )));
    }
    let mut scale = match meta.normalization {
        Normalization::Mean => 1.0,
        Normalization::Sum { count } if count > 0 => 1.0 / count as f64,
        Normalization::Sum { .. } => return Err(Error::InvalidArgument("sum payload with count 0".into())),
    };
    if payload.kind == PayloadKind::ParamDelta {
        let steps = payload.meta.local_steps.max(1) as f64;
        if !(payload.meta.lr > 0.0) {
            return Err(Error::InvalidArgument("parameter delta without a positive learning rate".into()));
        }
        scale /= -payload.meta.lr * steps;
    }
    let w: Tensor<f64> = w.cast::<f64>().map(|v| v * scale);
    let b = b.data().iter().map(|v| v.to_f64() * scale).collect();
    Ok((w, b))
}

fn max_genuine_abs(b: &[f64], rows: &[usize]) -> f64 {
    rows.iter().map(|&r| b[r].abs()).fold(0.0, f64::max)
}

/// Differences of successive ReLU rows in measurement order. The top bin is read from the
/// last row alone when the layout leaves it open. Decoy rows are ignored.
pub fn recover_relu_bins<T: Real>(
    payload: &UpdatePayload<T>,
    meta: &AttackMetadata<T>,
) -> Result<Vec<RecoveredCandidate<T>>> {
    if meta.module.activation != Activation::Relu {
        return Err(Error::Mismatch("metadata describes a hard-threshold imprint".into()));
    }
    let (w, b) = imprint_gradients(payload, meta)?;
    let rows = meta.module.genuine_rows();
    let k = rows.len();
    let floor = meta.tau0 * max_genuine_abs(&b, rows);
    let mut out = Vec::new();
    for l in 0..k {
        let r = rows[l];
        let (num, den) = if l + 1 < k {
            let r1 = rows[l + 1];
            let num: Vec<f64> = w.row(r).iter().zip(w.row(r1)).map(|(a, c)| a - c).collect();
            (num, b[r] - b[r1])
        } else if meta.module.layout.open_top {
            (w.row(r).to_vec(), b[r])
        } else {
            continue;
        };
        if den.abs() > floor && den != 0.0 {
            out.push(candidate(num, den, l));
        }
    }
    Ok(out)
}

/// Direct per-row division for the hard-threshold imprint, whose rows are sparse.
pub fn recover_hard_threshold<T: Real>(
    payload: &UpdatePayload<T>,
    meta: &AttackMetadata<T>,
) -> Result<Vec<RecoveredCandidate<T>>> {
    if meta.module.activation != Activation::HardThreshold {
        return Err(Error::Mismatch("metadata describes a ReLU imprint".into()));
    }
    let (w, b) = imprint_gradients(payload, meta)?;
    let rows = meta.module.genuine_rows();
    let floor = meta.tau0 * max_genuine_abs(&b, rows);
    Ok(rows
        .iter()
        .enumerate()
        .filter(|(_, &r)| b[r].abs() > floor && b[r] != 0.0)
        .map(|(l, &r)| candidate(w.row(r).to_vec(), b[r], l))
        .collect())
}

/// Dispatch on the planted activation.
pub fn recover<T: Real>(payload: &UpdatePayload<T>, meta: &AttackMetadata<T>) -> Result<Vec<RecoveredCandidate<T>>> {
    match meta.module.activation {
        Activation::Relu => recover_relu_bins(payload, meta),
        Activation::HardThreshold => recover_hard_threshold(payload, meta),
    }
}

/// The `expected_n` most confident candidates, returned in bin order. Ties in confidence
/// go to the lower bin.
pub fn select_candidates<T: Real>(
    cands: &[RecoveredCandidate<T>],
    expected_n: usize,
) -> Vec<RecoveredCandidate<T>> {
    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by(|&a, &b| {
        cands[b]
            .confidence
            .total_cmp(&cands[a].confidence)
            .then(cands[a].bin.cmp(&cands[b].bin))
    });
    order.truncate(expected_n);
    order.sort_by_key(|&i| cands[i].bin);
    order.into_iter().map(|i| cands[i].clone()).collect()
}

/// Half the smallest distance between two distinct embedding rows.
pub fn default_decoding_radius<T: Real>(table: &Tensor<T>) -> f64 {
    let v = table.rows();
    let mut best = f64::INFINITY;
    for i in 0..v {
        for j in i + 1..v {
            best = best.min(sq_dist(table.row(i), table.row(j)));
        }
    }
    0.5 * libm::sqrt(best)
}

/// Nearest-embedding decoding of each `d`-sized position of each candidate. A position
/// whose nearest embedding is not strictly inside `radius` stays undecoded (`None`).
pub fn token_lookup<T: Real>(
    cands: &[Tensor<T>],
    table: &Tensor<T>,
    seq_len: usize,
    radius: f64,
) -> Result<Vec<Vec<Option<usize>>>> {
    let d = table.cols();
    let r2 = radius * radius;
    cands
        .iter()
        .map(|c| {
            if c.len() != seq_len * d {
                return Err(Error::Shape(format!(
                    "candidate of length {} for {seq_len} positions of width {d}",
                    c.len()
                )));
            }
            Ok(c
                .data()
                .chunks(d)
                .map(|pos| {
                    let (tok, dist) = (0..table.rows())
                        .map(|t| (t, sq_dist(pos, table.row(t))))
                        .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
                    (dist < r2).then_some(tok)
                })
                .collect())
        })
        .collect()
}

/// Embed a token sequence as a flat vector.
pub fn embed_tokens<T: Real>(tokens: &[usize], table: &Tensor<T>) -> Tensor<T> {
    let mut v = vec![];
    for &t in tokens {
        v.extend_from_slice(table.row(t));
    }
    Tensor::vector(v)
}
