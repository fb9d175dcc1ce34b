//! Protocol simulation: fedSGD, fedAVG local training and secure aggregation.

use alloc::format;
use alloc::vec::Vec;

use crate::model::{forward_backward, Batch, ModelGraph, PayloadKind, PayloadMeta, UpdatePayload, IMPRINT_WEIGHT};
use crate::numerics::Real;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct UserState<T> {
    pub data: Batch<T>,
    pub lr: f64,
    pub steps: usize,
}

impl<T: Real> UserState<T> {
    pub fn new(data: Batch<T>, lr: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument("local steps must be >= 1".into()));
        }
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(Error::InvalidArgument(format!("local learning rate must be positive, got {lr}")));
        }
        Ok(Self { data, lr, steps })
    }
}

/// Single gradient averaged over the user's data.
pub fn fed_sgd<T: Real>(model: &ModelGraph<T>, user: &UserState<T>) -> Result<UpdatePayload<T>> {
    if user.steps != 1 {
        return Err(Error::InvalidArgument(format!(
            "fedSGD sends one gradient, user is configured for {} steps",
            user.steps
        )));
    }
    let (_, mut payload) = forward_backward(model, &user.data)?;
    payload.meta.lr = user.lr;
    Ok(payload)
}

/// Per-step record of local training.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalStep {
    pub loss: f64,
    /// Largest l2 norm over imprint-weight gradient rows in this step (0 without an imprint).
    pub max_imprint_row_grad: f64,
}

/// Sequential SGD over consecutive sub-batches of the given sizes; the payload is
/// `theta_final - theta_initial`.
pub fn fed_avg<T: Real>(
    model: &ModelGraph<T>,
    user: &UserState<T>,
    split: &[usize],
) -> Result<UpdatePayload<T>> {
    fed_avg_traced(model, user, split).map(|(p, _)| p)
}

pub fn fed_avg_traced<T: Real>(
    model: &ModelGraph<T>,
    user: &UserState<T>,
    split: &[usize],
) -> Result<(UpdatePayload<T>, Vec<LocalStep>)> {
    if split.len() != user.steps {
        return Err(Error::InvalidArgument(format!(
            "{} sub-batches for {} local steps",
            split.len(),
            user.steps
        )));
    }
    if split.iter().any(|&s| s == 0) {
        return Err(Error::InvalidArgument("empty sub-batch".into()));
    }
    let total: usize = split.iter().sum();
    if total != user.data.len() {
        return Err(Error::InvalidArgument(format!(
            "split covers {total} points, user holds {}",
            user.data.len()
        )));
    }
    let theta0 = model.params();
    let mut local = model.clone();
    let lr = T::from_f64(user.lr);
    let mut trace = Vec::with_capacity(split.len());
    let mut start = 0;
    for &size in split {
        let sub = user.data.slice(start, start + size)?;
        start += size;
        let (loss, g) = forward_backward(&local, &sub)?;
        let max_row = g.params.get(IMPRINT_WEIGHT).map_or(0.0, |w| {
            (0..w.rows())
                .map(|i| libm::sqrt(w.row(i).iter().map(|v| v.to_f64() * v.to_f64()).sum()))
                .fold(0.0, f64::max)
        });
        trace.push(LocalStep {
            loss: loss.to_f64(),
            max_imprint_row_grad: max_row,
        });
        local.apply_update(-lr, &g.params)?;
    }
    let delta = local.params().sub(&theta0)?;
    Ok((
        UpdatePayload {
            kind: PayloadKind::ParamDelta,
            params: delta,
            meta: PayloadMeta {
                count: total,
                users: 1,
                local_steps: user.steps,
                lr: user.lr,
            },
        },
        trace,
    ))
}

/// Equal-size consecutive split of `n` points into `steps` sub-batches (the first
/// `n % steps` get one extra point).
pub fn even_split(n: usize, steps: usize) -> Vec<usize> {
    (0..steps).map(|i| n / steps + usize::from(i < n % steps)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundResult<T> {
    /// Elementwise sum of user payloads.
    pub aggregated: UpdatePayload<T>,
    /// Kept only in debug mode.
    pub per_user: Option<Vec<UpdatePayload<T>>>,
    pub total_count: usize,
}

impl<T: Real> RoundResult<T> {
    /// Sum divided by the number of users. With equal per-user counts this is the
    /// big-batch gradient over the union.
    pub fn mean_over_users(&self) -> UpdatePayload<T> {
        let mut p = self.aggregated.clone();
        p.params.scale(T::ONE / T::from_usize(p.meta.users));
        p
    }
}

/// What the server sees under secure aggregation: only the sum.
pub fn secure_aggregate<T: Real>(payloads: &[UpdatePayload<T>], debug: bool) -> Result<RoundResult<T>> {
    let first = payloads
        .first()
        .ok_or_else(|| Error::InvalidArgument("no payloads to aggregate".into()))?;
    let mut sum = first.params.clone();
    let mut meta = first.meta;
    for p in &payloads[1..] {
        if p.kind != first.kind {
            return Err(Error::Mismatch(format!("cannot aggregate {:?} with {:?}", first.kind, p.kind)));
        }
        sum.add_assign(&p.params)?;
        meta.count += p.meta.count;
        meta.users += p.meta.users;
        meta.local_steps = meta.local_steps.max(p.meta.local_steps);
    }
    Ok(RoundResult {
        aggregated: UpdatePayload {
            kind: first.kind,
            params: sum,
            meta,
        },
        per_user: debug.then(|| payloads.to_vec()),
        total_count: meta.count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::ScalarDistribution;
    use crate::imprint::{build_hard_threshold, build_relu, make_layout};
    use crate::measurement::{Measurement, MeasurementKind};
    use crate::model::{Bridge, Head, ParamSet};
    use crate::numerics::{rand_gaussian, RngStream, Tensor};
    use alloc::vec;

    fn relu_model(m: usize, k: usize) -> ModelGraph<f64> {
        let layout = make_layout(&ScalarDistribution::standard_normal(), k, 1e-6).unwrap();
        let h = Measurement::build(MeasurementKind::Mean, m, (m as f64).sqrt(), RngStream::new(0, 0)).unwrap();
        let module = build_relu(&layout, &h, 0, Some(1)).unwrap();
        ModelGraph::new(vec![], Some((&module).into()), Bridge::Sum, Head::gaussian(1, 3, 0.7, RngStream::new(1, 1)))
            .unwrap()
    }

    fn data(seed: u64, n: usize, m: usize) -> Batch<f64> {
        let x = rand_gaussian(RngStream::new(seed, 0), &[n, m]);
        let mut s = RngStream::new(seed, 1).sampler();
        Batch::new(x, Some((0..n).map(|_| s.below(3) as usize).collect())).unwrap()
    }

    fn max_abs_diff(a: &ParamSet<f64>, b: &ParamSet<f64>) -> f64 {
        a.iter()
            .zip(b.iter())
            .flat_map(|((_, x), (_, y))| x.data().iter().zip(y.data()).map(|(p, q)| (p - q).abs()))
            .fold(0.0, f64::max)
    }

    #[test]
    fn fed_sgd_single_and_pair() {
        let model = relu_model(8, 6);
        let d = data(1, 2, 8);
        let one = fed_sgd(&model, &UserState::new(d.row(0), 0.1, 1).unwrap()).unwrap();
        let (_, direct) = forward_backward(&model, &d.row(0)).unwrap();
        assert_eq!(one.params, direct.params);
        let two = fed_sgd(&model, &UserState::new(d.clone(), 0.1, 1).unwrap()).unwrap();
        let b = fed_sgd(&model, &UserState::new(d.row(1), 0.1, 1).unwrap()).unwrap();
        let mut mean = one.params.clone();
        mean.add_assign(&b.params).unwrap();
        mean.scale(0.5);
        assert!(max_abs_diff(&mean, &two.params) < 1e-6);
    }

    #[test]
    fn ten_users_equal_one_big_batch() {
        let model = relu_model(8, 16);
        let all = data(2, 1000, 8);
        let payloads: Vec<_> = (0..10)
            .map(|u| fed_sgd(&model, &UserState::new(all.slice(u * 100, (u + 1) * 100).unwrap(), 0.1, 1).unwrap()).unwrap())
            .collect();
        let round = secure_aggregate(&payloads, false).unwrap();
        assert!(round.per_user.is_none());
        assert_eq!(round.total_count, 1000);
        let big = fed_sgd(&model, &UserState::new(all, 0.1, 1).unwrap()).unwrap();
        assert!(max_abs_diff(&round.mean_over_users().params, &big.params) < 1e-5);
    }

    #[test]
    fn aggregation_identities() {
        let model = relu_model(4, 4);
        let p = fed_sgd(&model, &UserState::new(data(3, 3, 4), 0.1, 1).unwrap()).unwrap();
        let single = secure_aggregate(&[p.clone()], true).unwrap();
        assert_eq!(single.aggregated, p);
        assert_eq!(single.per_user.as_ref().unwrap().len(), 1);
        let mut neg = p.clone();
        neg.params.scale(-1.0);
        let zero = secure_aggregate(&[p.clone(), neg], false).unwrap();
        assert!(zero.aggregated.params.iter().all(|(_, t)| t.data().iter().all(|&v| v == 0.0)));
        let mut delta = p.clone();
        delta.kind = PayloadKind::ParamDelta;
        assert!(matches!(secure_aggregate(&[p, delta], false), Err(Error::Mismatch(_))));
        assert!(secure_aggregate::<f64>(&[], false).is_err());
    }

    #[test]
    fn three_payload_sum_matches_oracle() {
        let model = relu_model(4, 4);
        let ps: Vec<_> = (0..3)
            .map(|s| fed_sgd(&model, &UserState::new(data(10 + s, 2, 4), 0.1, 1).unwrap()).unwrap())
            .collect();
        let agg = secure_aggregate(&ps, false).unwrap().aggregated;
        for (name, t) in agg.params.iter() {
            for (i, &v) in t.data().iter().enumerate() {
                let oracle: f64 = ps.iter().map(|p| p.params.get(name).unwrap().data()[i]).sum();
                assert!((v - oracle).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_step_delta_is_scaled_gradient() {
        let model = relu_model(6, 5);
        let user = UserState::new(data(4, 5, 6), 0.01, 1).unwrap();
        let delta = fed_avg(&model, &user, &[5]).unwrap();
        let (_, g) = forward_backward(&model, &user.data).unwrap();
        let mut scaled = g.params.clone();
        scaled.scale(-0.01);
        assert_eq!(delta.kind, PayloadKind::ParamDelta);
        assert!(max_abs_diff(&delta.params, &scaled) < 1e-15);
    }

    #[test]
    fn small_lr_limit_approaches_fed_sgd() {
        let model = relu_model(6, 8);
        let d = data(5, 16, 6);
        let (_, g) = forward_backward(&model, &d).unwrap();
        let err = |lr: f64| {
            let user = UserState::new(d.clone(), lr, 4).unwrap();
            let mut proxy = fed_avg(&model, &user, &even_split(16, 4)).unwrap().params;
            proxy.scale(-1.0 / (lr * 4.0));
            max_abs_diff(&proxy, &g.params)
        };
        let (e6, e7) = (err(1e-6), err(1e-7));
        assert!(e6 < 1e-3, "error {e6}");
        assert!(e7 < e6 || e7 < 1e-8, "{e7} vs {e6}");
    }

    #[test]
    fn imprint_drift_bounded_by_logged_gradients() {
        let m = 8;
        let layout = make_layout(&ScalarDistribution::standard_normal(), 16, 1e-6).unwrap();
        let h = Measurement::build(MeasurementKind::Mean, m, 50.0, RngStream::new(0, 0)).unwrap();
        let module = build_hard_threshold(&layout, &h, Some(3)).unwrap();
        let model = ModelGraph::new(vec![], Some((&module).into()), Bridge::Sum, Head::sink(1, 4, 10.0, 30.0)).unwrap();
        let user = UserState::new(data(6, 64, m), 1e-4, 8).unwrap();
        let (delta, trace) = fed_avg_traced(&model, &user, &even_split(64, 8)).unwrap();
        let bound: f64 = 1e-4 * 8.0 * trace.iter().map(|s| s.max_imprint_row_grad).fold(0.0, f64::max);
        let w = delta.params.get(IMPRINT_WEIGHT).unwrap();
        for i in 0..w.rows() {
            let drift = libm::sqrt(w.row(i).iter().map(|v| v * v).sum());
            assert!(drift <= bound * (1.0 + 1e-9), "row {i}: {drift} > {bound}");
        }
    }

    #[test]
    fn fed_avg_is_deterministic_and_validates() {
        let model = relu_model(4, 4);
        let user = UserState::new(data(7, 8, 4), 1e-3, 2).unwrap();
        let a = fed_avg(&model, &user, &[4, 4]).unwrap();
        let b = fed_avg(&model, &user, &[4, 4]).unwrap();
        let bits = |p: &UpdatePayload<f64>| -> Vec<u64> {
            p.params.iter().flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits())).collect()
        };
        assert_eq!(bits(&a), bits(&b));
        assert!(fed_avg(&model, &user, &[8, 0]).is_err());
        assert!(fed_avg(&model, &user, &[4, 3]).is_err());
        assert!(UserState::new(data(7, 8, 4), 0.0, 2).is_err());
        assert!(UserState::<f64>::new(Batch::new(Tensor::zeros(&[1, 1]), None).unwrap(), 1.0, 0).is_err());
    }

    #[test]
    fn even_split_partitions() {
        assert_eq!(even_split(64, 8), vec![8; 8]);
        assert_eq!(even_split(10, 3), vec![4, 3, 3]);
    }
}
