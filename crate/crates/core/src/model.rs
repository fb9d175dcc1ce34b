//! The shared model: a parameter-free front chain, the imprint layer, a bridge with
//! identical row elements and a softmax cross-entropy head.
//!
//! The backward pass is written out by hand per layer. Gradients are accumulated per
//! example in a fixed sequential order and divided by the batch size at the end.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::imprint::{Activation, ImprintModule};
use crate::numerics::{dot, rand_gaussian, Real, RngStream, Tensor};
use crate::{Error, Result};

pub const IMPRINT_WEIGHT: &str = "imprint.weight";
pub const IMPRINT_BIAS: &str = "imprint.bias";
pub const BRIDGE_SCALE: &str = "bridge.scale";
pub const BRIDGE_BIAS: &str = "bridge.bias";
pub const HEAD_WEIGHT: &str = "head.weight";
pub const HEAD_BIAS: &str = "head.bias";

/// Parameter-free linear stage in front of the imprint layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrontStage {
    Identity,
    /// Means over consecutive blocks of `factor` entries.
    AvgPool(usize),
}

impl FrontStage {
    pub fn output_len(&self, len: usize) -> Result<usize> {
        match *self {
            Self::Identity => Ok(len),
            Self::AvgPool(f) if f >= 1 && len % f == 0 => Ok(len / f),
            Self::AvgPool(f) => Err(Error::Shape(format!(
                "average pool factor {f} does not divide length {len}"
            ))),
        }
    }

    pub fn apply<T: Real>(&self, x: &[T]) -> Result<Vec<T>> {
        match *self {
            Self::Identity => Ok(x.to_vec()),
            Self::AvgPool(f) => {
                self.output_len(x.len())?;
                let inv = T::ONE / T::from_usize(f);
                Ok(x.chunks(f).map(|c| c.iter().copied().sum::<T>() * inv).collect())
            }
        }
    }

    /// Transpose of [`apply`](Self::apply).
    pub fn adjoint<T: Real>(&self, y: &[T]) -> Vec<T> {
        match *self {
            Self::Identity => y.to_vec(),
            Self::AvgPool(f) => {
                let inv = T::ONE / T::from_usize(f);
                y.iter().flat_map(|&v| core::iter::repeat(v * inv).take(f)).collect()
            }
        }
    }
}

/// Trainable imprint parameters as they live inside the shared model.
#[derive(Debug, Clone, PartialEq)]
pub struct ImprintLayer<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub activation: Activation,
}

impl<T: Real> From<&ImprintModule<T>> for ImprintLayer<T> {
    fn from(m: &ImprintModule<T>) -> Self {
        Self {
            weight: m.weight.clone(),
            bias: m.bias.clone(),
            activation: m.activation,
        }
    }
}

/// Map from imprint activations to the head input. Both variants apply a matrix whose
/// rows have identical elements, so every imprint row receives the same upstream gradient.
#[derive(Debug, Clone, PartialEq)]
pub enum Bridge<T> {
    /// `s = sum_i a_i`, a single head input.
    Sum,
    /// `u_o = scale_o * sum_i a_i + bias_o`.
    IdenticalRow { scale: Tensor<T>, bias: Tensor<T> },
}

impl<T: Real> Bridge<T> {
    /// Positive random scales, so a sink head downstream still sees non-negative inputs.
    pub fn identical_row(out_dim: usize, stream: RngStream) -> Self {
        let scale = rand_gaussian::<f64>(stream, &[out_dim]).map(|v| libm::fabs(v) / libm::sqrt(out_dim as f64));
        Self::IdenticalRow {
            scale: scale.cast(),
            bias: Tensor::zeros(&[out_dim]),
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Self::Sum => 1,
            Self::IdenticalRow { scale, .. } => scale.len(),
        }
    }
}

/// Linear classifier `z = W d + b` over `classes` logits, of which the first `labels` are
/// real labels. Extra logits (the "sink") never appear as labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Head<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub labels: usize,
}

impl<T: Real> Head<T> {
    /// Random `N(0, scale^2)` weights, zero biases.
    pub fn gaussian(input: usize, labels: usize, scale: f64, stream: RngStream) -> Self {
        let w = rand_gaussian::<f64>(stream, &[labels, input]).map(|v| v * scale);
        Self {
            weight: w.cast(),
            bias: Tensor::zeros(&[labels]),
            labels,
        }
    }

    /// Real-label logits are zero; one extra sink logit `gain * sum(d) + bias` absorbs the
    /// softmax mass. For non-negative head inputs the upstream gradient then equals `gain`
    /// for every example, independent of its label.
    pub fn sink(input: usize, labels: usize, gain: f64, bias: f64) -> Self {
        let mut weight = Tensor::zeros(&[labels + 1, input]);
        for v in weight.row_mut(labels) {
            *v = T::from_f64(gain);
        }
        let mut b = Tensor::zeros(&[labels + 1]);
        b.data_mut()[labels] = T::from_f64(bias);
        Self {
            weight,
            bias: b,
            labels,
        }
    }

    pub fn classes(&self) -> usize {
        self.bias.len()
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }
}

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    entries: Vec<(String, Tensor<T>)>,
}

impl<T: Real> ParamSet<T> {
    pub fn new(entries: Vec<(String, Tensor<T>)>) -> Self {
        Self { entries }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape())))
                .collect(),
        }
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((a, x), (b, y))| a == b && x.shape() == y.shape())
    }

    fn check_layout(&self, other: &Self) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "parameter sets differ: {:?} vs {:?}",
                self.names(),
                other.names()
            )))
        }
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: T, other: &Self) -> Result<()> {
        self.check_layout(other)?;
        for ((_, a), (_, b)) in self.entries.iter_mut().zip(&other.entries) {
            for (x, &y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += s * y;
            }
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.check_layout(other)?;
        for ((_, a), (_, b)) in self.entries.iter_mut().zip(&other.entries) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_layout(other)?;
        let entries = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|((n, a), (_, b))| Ok((n.clone(), a.sub(b)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { entries })
    }

    pub fn scale(&mut self, s: T) {
        for (_, t) in &mut self.entries {
            t.scale_in_place(s);
        }
    }

    /// l2 norm over all tensors concatenated.
    pub fn global_norm(&self) -> f64 {
        libm::sqrt(
            self.entries
                .iter()
                .flat_map(|(_, t)| t.data())
                .map(|v| v.to_f64() * v.to_f64())
                .sum::<f64>(),
        )
    }

    pub fn len(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            entries: self.entries.iter().map(|(n, t)| (n.clone(), t.cast())).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayloadKind {
    Gradient,
    ParamDelta,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PayloadMeta {
    /// Datapoints behind the update.
    pub count: usize,
    /// Users summed into the payload.
    pub users: usize,
    pub local_steps: usize,
    pub lr: f64,
}

/// What a user sends to the server.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdatePayload<T> {
    pub kind: PayloadKind,
    pub params: ParamSet<T>,
    pub meta: PayloadMeta,
}

/// A batch of user data with optional labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub x: Tensor<T>,
    pub labels: Option<Vec<usize>>,
}

impl<T: Real> Batch<T> {
    pub fn new(x: Tensor<T>, labels: Option<Vec<usize>>) -> Result<Self> {
        if x.shape().len() != 2 || x.rows() == 0 {
            return Err(Error::Shape(format!("batch must be n x m with n >= 1, got {:?}", x.shape())));
        }
        if !x.all_finite() {
            return Err(Error::NonFinite("batch data".into()));
        }
        if let Some(l) = &labels {
            if l.len() != x.rows() {
                return Err(Error::Shape(format!("{} labels for {} rows", l.len(), x.rows())));
            }
        }
        Ok(Self { x, labels })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rows `range` as a new batch.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len() {
            return Err(Error::InvalidArgument(format!("empty or out-of-range slice {start}..{end}")));
        }
        let m = self.x.cols();
        let x = Tensor::new(vec![end - start, m], self.x.data()[start * m..end * m].to_vec())?;
        let labels = self.labels.as_ref().map(|l| l[start..end].to_vec());
        Self::new(x, labels)
    }

    pub fn row(&self, i: usize) -> Self {
        self.slice(i, i + 1).expect("row index in range")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph<T> {
    pub front: Vec<FrontStage>,
    pub imprint: Option<ImprintLayer<T>>,
    pub bridge: Bridge<T>,
    pub head: Head<T>,
}

/// Parameters of a standalone `m -> classes` logistic model including the sink logit.
pub fn logistic_parameter_count(m: usize, classes: usize) -> usize {
    (classes + 1) * (m + 1)
}

/// Standalone multinomial logistic regression with `classes` labels.
///
/// All label logits start at zero and a sink logit with bias 30 holds the softmax mass, so
/// `dL/dy_i` is `-1` on the label row and `~e^-30` elsewhere.
pub fn logistic_model<T: Real>(m: usize, classes: usize) -> ModelGraph<T> {
    ModelGraph {
        front: Vec::new(),
        imprint: None,
        bridge: Bridge::Sum,
        head: Head::sink(m, classes, 0.0, 30.0),
    }
}

impl<T: Real> ModelGraph<T> {
    pub fn new(
        front: Vec<FrontStage>,
        imprint: Option<ImprintLayer<T>>,
        bridge: Bridge<T>,
        head: Head<T>,
    ) -> Result<Self> {
        let model = Self {
            front,
            imprint,
            bridge,
            head,
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        let head_in = match &self.imprint {
            Some(layer) => {
                if layer.weight.shape().len() != 2 || layer.bias.len() != layer.weight.rows() {
                    return Err(Error::Shape("imprint weight/bias shapes disagree".into()));
                }
                self.bridge.out_dim()
            }
            None => self.head.input_dim(),
        };
        if self.head.input_dim() != head_in || self.head.bias.len() != self.head.weight.rows() {
            return Err(Error::Shape(format!(
                "head expects input {}, upstream provides {}",
                self.head.input_dim(),
                head_in
            )));
        }
        if self.head.labels == 0 || self.head.labels > self.head.classes() {
            return Err(Error::InvalidArgument("head label count out of range".into()));
        }
        Ok(())
    }

    /// Length of the feature vector reaching the imprint layer for raw inputs of `raw_len`.
    pub fn feature_len(&self, raw_len: usize) -> Result<usize> {
        self.front.iter().try_fold(raw_len, |len, s| s.output_len(len))
    }

    pub fn features_of(&self, x: &[T]) -> Result<Vec<T>> {
        let mut v = x.to_vec();
        for s in &self.front {
            v = s.apply(&v)?;
        }
        Ok(v)
    }

    pub fn params(&self) -> ParamSet<T> {
        let mut entries = Vec::new();
        if let Some(layer) = &self.imprint {
            entries.push((IMPRINT_WEIGHT.to_string(), layer.weight.clone()));
            entries.push((IMPRINT_BIAS.to_string(), layer.bias.clone()));
            if let Bridge::IdenticalRow { scale, bias } = &self.bridge {
                entries.push((BRIDGE_SCALE.to_string(), scale.clone()));
                entries.push((BRIDGE_BIAS.to_string(), bias.clone()));
            }
        }
        entries.push((HEAD_WEIGHT.to_string(), self.head.weight.clone()));
        entries.push((HEAD_BIAS.to_string(), self.head.bias.clone()));
        ParamSet::new(entries)
    }

    fn param_slots(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        let mut slots: Vec<(&'static str, &mut Tensor<T>)> = Vec::new();
        if let Some(layer) = &mut self.imprint {
            slots.push((IMPRINT_WEIGHT, &mut layer.weight));
            slots.push((IMPRINT_BIAS, &mut layer.bias));
            if let Bridge::IdenticalRow { scale, bias } = &mut self.bridge {
                slots.push((BRIDGE_SCALE, scale));
                slots.push((BRIDGE_BIAS, bias));
            }
        }
        slots.push((HEAD_WEIGHT, &mut self.head.weight));
        slots.push((HEAD_BIAS, &mut self.head.bias));
        slots
    }

    pub fn set_params(&mut self, params: &ParamSet<T>) -> Result<()> {
        if !self.params().same_layout(params) {
            return Err(Error::Shape("parameter layout does not match the model".into()));
        }
        for (name, slot) in self.param_slots() {
            *slot = params.get(name).expect("layout checked").clone();
        }
        Ok(())
    }

    /// `theta += s * delta`.
    pub fn apply_update(&mut self, s: T, delta: &ParamSet<T>) -> Result<()> {
        let mut p = self.params();
        p.axpy(s, delta)?;
        self.set_params(&p)
    }

    pub fn parameter_count(&self) -> usize {
        self.params().len()
    }
}

/// Inputs as seen by the imprint layer (after the front chain).
pub fn forward_features<T: Real>(model: &ModelGraph<T>, batch: &Batch<T>) -> Result<Tensor<T>> {
    let n = batch.len();
    let m = model.feature_len(batch.x.cols())?;
    let mut data = Vec::with_capacity(n * m);
    for i in 0..n {
        data.extend(model.features_of(batch.x.row(i))?);
    }
    Tensor::new(vec![n, m], data)
}

fn activate<T: Real>(act: Activation, t: T) -> (T, T) {
    match act {
        Activation::Relu => {
            if t > T::ZERO {
                (t, T::ONE)
            } else {
                (T::ZERO, T::ZERO)
            }
        }
        // Derivative 0 at both kinks.
        Activation::HardThreshold => {
            if t <= T::ZERO {
                (T::ZERO, T::ZERO)
            } else if t >= T::ONE {
                (T::ONE, T::ZERO)
            } else {
                (t, T::ONE)
            }
        }
    }
}

/// Mean cross-entropy loss and the batch-averaged gradient of every parameter.
pub fn forward_backward<T: Real>(
    model: &ModelGraph<T>,
    batch: &Batch<T>,
) -> Result<(T, UpdatePayload<T>)> {
    let labels = batch
        .labels
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("cross-entropy head needs labels".into()))?;
    if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= model.head.labels) {
        return Err(Error::InvalidArgument(format!(
            "label {l} of example {i} outside 0..{}",
            model.head.labels
        )));
    }
    let feat_len = model.feature_len(batch.x.cols())?;
    let mut grads = model.params().zeros_like();
    let head_w = &model.head.weight;
    let classes = model.head.classes();
    let head_in = model.head.input_dim();
    if let Some(layer) = &model.imprint {
        if layer.weight.cols() != feat_len {
            return Err(Error::Shape(format!(
                "imprint expects features of length {}, front chain yields {}",
                layer.weight.cols(),
                feat_len
            )));
        }
    } else if head_in != feat_len {
        return Err(Error::Shape(format!(
            "head expects input {head_in}, front chain yields {feat_len}"
        )));
    }

    let rows = model.imprint.as_ref().map_or(0, |l| l.bias.len());
    let mut pre = vec![T::ZERO; rows];
    let mut dact = vec![T::ZERO; rows];
    let mut d = vec![T::ZERO; head_in];
    let mut z = vec![T::ZERO; classes];
    let mut loss_sum = T::ZERO;

    for (t, &label) in labels.iter().enumerate() {
        let f = model.features_of(batch.x.row(t))?;
        // Forward.
        let mut s = T::ZERO;
        if let Some(layer) = &model.imprint {
            for i in 0..rows {
                pre[i] = dot(layer.weight.row(i), &f) + layer.bias.data()[i];
                let (a, da) = activate(layer.activation, pre[i]);
                dact[i] = da;
                s += a;
            }
            match &model.bridge {
                Bridge::Sum => d[0] = s,
                Bridge::IdenticalRow { scale, bias } => {
                    for o in 0..head_in {
                        d[o] = scale.data()[o] * s + bias.data()[o];
                    }
                }
            }
        } else {
            d.copy_from_slice(&f);
        }
        for c in 0..classes {
            z[c] = dot(head_w.row(c), &d) + model.head.bias.data()[c];
        }
        let zmax = z.iter().copied().fold(z[0], T::max);
        let mut denom = T::ZERO;
        for v in z.iter_mut() {
            *v = (*v - zmax).exp();
            denom += *v;
        }
        // z now holds exp(z - zmax); turn it into softmax - onehot.
        let log_denom = denom.ln();
        let label_logit = dot(head_w.row(label), &d) + model.head.bias.data()[label] - zmax;
        loss_sum += log_denom - label_logit;
        for v in z.iter_mut() {
            *v /= denom;
        }
        z[label] -= T::ONE;

        // Backward through the head.
        {
            let gw = grads.get_mut(HEAD_WEIGHT).expect("head weight");
            for c in 0..classes {
                let dz = z[c];
                for (g, &di) in gw.row_mut(c).iter_mut().zip(&d) {
                    *g += dz * di;
                }
            }
        }
        {
            let gb = grads.get_mut(HEAD_BIAS).expect("head bias");
            for (g, &dz) in gb.data_mut().iter_mut().zip(&z) {
                *g += dz;
            }
        }
        let Some(_) = &model.imprint else { continue };
        let mut dd = vec![T::ZERO; head_in];
        for c in 0..classes {
            let dz = z[c];
            for (acc, &w) in dd.iter_mut().zip(head_w.row(c)) {
                *acc += dz * w;
            }
        }
        let ds = match &model.bridge {
            Bridge::Sum => dd[0],
            Bridge::IdenticalRow { scale, .. } => {
                let gs = grads.get_mut(BRIDGE_SCALE).expect("bridge scale");
                for (g, &v) in gs.data_mut().iter_mut().zip(&dd) {
                    *g += v * s;
                }
                let gb = grads.get_mut(BRIDGE_BIAS).expect("bridge bias");
                for (g, &v) in gb.data_mut().iter_mut().zip(&dd) {
                    *g += v;
                }
                dot(scale.data(), &dd)
            }
        };
        // Every imprint row sees the same upstream gradient `ds`.
        {
            let gw = grads.get_mut(IMPRINT_WEIGHT).expect("imprint weight");
            for i in 0..rows {
                let dpre = ds * dact[i];
                if dpre != T::ZERO {
                    for (g, &fi) in gw.row_mut(i).iter_mut().zip(&f) {
                        *g += dpre * fi;
                    }
                }
            }
        }
        let gb = grads.get_mut(IMPRINT_BIAS).expect("imprint bias");
        for i in 0..rows {
            let dpre = ds * dact[i];
            if dpre != T::ZERO {
                gb.data_mut()[i] += dpre;
            }
        }
    }
    let n = T::from_usize(batch.len());
    for (_, g) in grads.iter_mut() {
        for v in g.data_mut() {
            *v /= n;
        }
    }
    Ok((
        loss_sum / n,
        UpdatePayload {
            kind: PayloadKind::Gradient,
            params: grads,
            meta: PayloadMeta {
                count: batch.len(),
                users: 1,
                local_steps: 1,
                lr: 0.0,
            },
        },
    ))
}

/// Mean loss only.
pub fn loss<T: Real>(model: &ModelGraph<T>, batch: &Batch<T>) -> Result<T> {
    forward_backward(model, batch).map(|(l, _)| l)
}

/// Largest disagreement between hand-derived gradients and central finite differences of
/// the mean loss, over every parameter entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel: f64,
    pub max_abs: f64,
    pub entries: usize,
}

/// Relative error per entry is `|g - fd| / max(|g|, |fd|, floor)`.
pub fn gradient_check(model: &ModelGraph<f64>, batch: &Batch<f64>, eps: f64, floor: f64) -> Result<GradCheck> {
    let (_, g) = forward_backward(model, batch)?;
    let base = model.params();
    let mut probe = model.clone();
    let mut out = GradCheck {
        max_rel: 0.0,
        max_abs: 0.0,
        entries: 0,
    };
    for (name, t) in base.iter() {
        let grad = g.params.get(name).expect("same layout");
        for i in 0..t.len() {
            let mut eval = |delta: f64| -> Result<f64> {
                let mut p = base.clone();
                p.get_mut(name).expect("same layout").data_mut()[i] += delta;
                probe.set_params(&p)?;
                loss(&probe, batch)
            };
            let fd = (eval(eps)? - eval(-eps)?) / (2.0 * eps);
            let a = grad.data()[i];
            let abs = (a - fd).abs();
            out.max_abs = out.max_abs.max(abs);
            out.max_rel = out.max_rel.max(abs / a.abs().max(fd.abs()).max(floor));
            out.entries += 1;
        }
    }
    Ok(out)
}
