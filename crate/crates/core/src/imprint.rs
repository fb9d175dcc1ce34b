//! Construction of the malicious imprint layer.
//!
//! Every genuine row of the layer computes the same measurement `h(x)`; the biases place
//! one threshold per bin at equal-mass quantiles of the attacker's assumed law of `h`.
//! With a ReLU, row `i` fires for every datapoint with `h(x) > c_i`, so the difference of
//! two adjacent rows isolates the datapoints of one bin. The hard-threshold variant
//! rescales each row so that its linear region covers exactly one bin, making every row
//! sparse on its own.

use alloc::format;
use alloc::vec::Vec;

use crate::distributions::ScalarDistribution;
use crate::measurement::Measurement;
use crate::numerics::{rand_gaussian, Real, RngStream, Tensor};
use crate::{Error, Result};

/// Bin boundaries `c_0 < c_1 < ... < c_{k-1}` at probabilities `p_i = max(i/k, p_min)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinLayout {
    pub boundaries: Vec<f64>,
    pub probs: Vec<f64>,
    /// Whether `(c_{k-1}, inf)` counts as a recoverable bin (read from the last row alone).
    pub open_top: bool,
}

impl BinLayout {
    pub fn k(&self) -> usize {
        self.boundaries.len()
    }

    /// Index of the ReLU bin containing measurement value `v`: the largest `i` with
    /// `v > c_i`. `None` below `c_0`, or above `c_{k-1}` when the top is closed.
    pub fn relu_bin_of(&self, v: f64) -> Option<usize> {
        let above = self.boundaries.partition_point(|&c| c < v);
        match above {
            0 => None,
            n if n == self.k() && !self.open_top => None,
            n => Some(n - 1),
        }
    }
}

pub fn make_layout(d: &ScalarDistribution, k: usize, p_min: f64) -> Result<BinLayout> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 bins, got {k}")));
    }
    if !(p_min > 0.0 && p_min < 1.0 / k as f64) {
        return Err(Error::InvalidArgument(format!(
            "p_min must lie in (0, 1/k) = (0, {}), got {p_min}",
            1.0 / k as f64
        )));
    }
    let probs: Vec<f64> = (0..k).map(|i| (i as f64 / k as f64).max(p_min)).collect();
    let boundaries = probs.iter().map(|&p| d.quantile(p)).collect::<Result<Vec<_>>>()?;
    if boundaries.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument(
            "distribution produced non-increasing bin boundaries".into(),
        ));
    }
    Ok(BinLayout {
        boundaries,
        probs,
        open_top: true,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    /// `g(t) = clamp(t, 0, 1)`.
    HardThreshold,
}

/// Malicious layer parameters plus the server-side secrets needed to invert its gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ImprintModule<T> {
    pub activation: Activation,
    /// `rows x m`, rows in physical (permuted) order.
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub layout: BinLayout,
    pub measurement: Measurement<T>,
    /// Per-bin linear-region widths (hard-threshold only).
    pub deltas: Option<Vec<f64>>,
    /// Physical row holding bin `i`.
    pub row_of_bin: Vec<usize>,
    /// Physical rows holding decoys.
    pub decoy_rows: Vec<usize>,
}

const PERM_STREAM: u64 = 0x5045_524d;
const DECOY_STREAM: u64 = 0x4445_434f;

fn row_permutation(rows: usize, perm_seed: Option<u64>) -> Vec<usize> {
    match perm_seed {
        Some(seed) => RngStream::new(seed, PERM_STREAM).sampler().permutation(rows),
        None => (0..rows).collect(),
    }
}

fn check_dims<T: Real>(h: &Measurement<T>) -> Result<usize> {
    let m = h.dim();
    if m == 0 {
        return Err(Error::InvalidArgument("measurement has dimension 0".into()));
    }
    Ok(m)
}

impl<T: Real> ImprintModule<T> {
    pub fn rows(&self) -> usize {
        self.bias.len()
    }

    pub fn k(&self) -> usize {
        self.layout.k()
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    /// Number of added parameters (weights and biases of all rows).
    pub fn parameter_count(&self) -> usize {
        self.rows() * (self.input_dim() + 1)
    }

    /// Bin a datapoint with measurement value `v` activates (linear region for the
    /// hard-threshold variant).
    pub fn bin_of(&self, v: f64) -> Option<usize> {
        match self.activation {
            Activation::Relu => self.layout.relu_bin_of(v),
            Activation::HardThreshold => {
                let deltas = self.deltas.as_ref()?;
                let i = self.layout.relu_bin_of(v)?;
                (v < self.layout.boundaries[i] + deltas[i]).then_some(i)
            }
        }
    }

    /// Physical rows ordered by bin.
    pub fn genuine_rows(&self) -> &[usize] {
        &self.row_of_bin
    }
}

/// ReLU imprint: every genuine row is `c0 * w`, bias of bin `i` is `-c_i`. Decoy rows are
/// random directions with biases drawn uniformly from the boundary range. All rows are
/// shuffled by `perm_seed` (identity when `None`).
pub fn build_relu<T: Real>(
    layout: &BinLayout,
    h: &Measurement<T>,
    decoys: usize,
    perm_seed: Option<u64>,
) -> Result<ImprintModule<T>> {
    let m = check_dims(h)?;
    let k = layout.k();
    let rows = k + decoys;
    let perm = row_permutation(rows, perm_seed);
    let row = h.effective_row();
    let mut weight = Tensor::zeros(&[rows, m]);
    let mut bias = Tensor::zeros(&[rows]);
    for (i, &c) in layout.boundaries.iter().enumerate() {
        weight.row_mut(perm[i]).copy_from_slice(&row);
        bias.data_mut()[perm[i]] = T::from_f64(-c);
    }
    if decoys > 0 {
        let decoy_stream = RngStream::new(perm_seed.unwrap_or(0), DECOY_STREAM);
        let sd = libm::pow(m as f64, -0.25) * h.c0();
        let w: Tensor<f64> = rand_gaussian(decoy_stream.derive(0), &[decoys, m]);
        let mut s = decoy_stream.derive(1).sampler();
        let (lo, hi) = (layout.boundaries[0], layout.boundaries[k - 1]);
        for d in 0..decoys {
            let r = perm[k + d];
            for (dst, &src) in weight.row_mut(r).iter_mut().zip(w.row(d)) {
                *dst = T::from_f64(src * sd);
            }
            bias.data_mut()[r] = T::from_f64(-s.uniform_range(lo, hi));
        }
    }
    Ok(ImprintModule {
        activation: Activation::Relu,
        weight,
        bias,
        layout: layout.clone(),
        measurement: h.clone(),
        deltas: None,
        row_of_bin: perm[..k].to_vec(),
        decoy_rows: perm[k..].to_vec(),
    })
}

/// Hard-threshold imprint: row `i` is `c0 * w / delta_i` with bias `-c_i / delta_i`, where
/// `delta_i = c_{i+1} - c_i` and the last bin reuses the previous gap.
pub fn build_hard_threshold<T: Real>(
    layout: &BinLayout,
    h: &Measurement<T>,
    perm_seed: Option<u64>,
) -> Result<ImprintModule<T>> {
    let m = check_dims(h)?;
    let k = layout.k();
    if k < 2 {
        return Err(Error::InvalidArgument("hard-threshold imprint needs k >= 2".into()));
    }
    let c = &layout.boundaries;
    let mut deltas: Vec<f64> = c.windows(2).map(|w| w[1] - w[0]).collect();
    deltas.push(deltas[k - 2]);
    if let Some(i) = deltas.iter().position(|&d| !(d > 0.0)) {
        return Err(Error::InvalidArgument(format!("degenerate bin width at bin {i}")));
    }
    let perm = row_permutation(k, perm_seed);
    let base = h.effective_row();
    let mut weight = Tensor::zeros(&[k, m]);
    let mut bias = Tensor::zeros(&[k]);
    for i in 0..k {
        let inv = 1.0 / deltas[i];
        for (dst, &w) in weight.row_mut(perm[i]).iter_mut().zip(&base) {
            *dst = T::from_f64(w.to_f64() * inv);
        }
        bias.data_mut()[perm[i]] = T::from_f64(-c[i] * inv);
    }
    Ok(ImprintModule {
        activation: Activation::HardThreshold,
        weight,
        bias,
        layout: layout.clone(),
        measurement: h.clone(),
        deltas: Some(deltas),
        row_of_bin: perm,
        decoy_rows: Vec::new(),
    })
}

/// Two-row ReLU module whose row difference isolates an interval of mass `p`.
///
/// The interval starts at probability `start` (centred, `(1 - p) / 2`, when `None`). Only
/// the interval itself is recoverable; the open top is closed off.
pub fn fuse_one_shot<T: Real>(
    d: &ScalarDistribution,
    h: &Measurement<T>,
    p: f64,
    start: Option<f64>,
) -> Result<ImprintModule<T>> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!("one-shot mass must lie in (0, 1), got {p}")));
    }
    let q = start.unwrap_or((1.0 - p) / 2.0);
    if !(q > 0.0 && q + p < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "one-shot interval [{q}, {}] leaves (0, 1)",
            q + p
        )));
    }
    let layout = BinLayout {
        boundaries: alloc::vec![d.quantile(q)?, d.quantile(q + p)?],
        probs: alloc::vec![q, q + p],
        open_top: false,
    };
    build_relu(&layout, h, 0, None)
}
