//! User-side mitigations: global-norm clipping followed by additive noise.

use alloc::format;
use alloc::vec::Vec;

use crate::model::{ParamSet, PayloadKind, PayloadMeta, UpdatePayload};
use crate::numerics::{rand_gaussian, Real, RngStream, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Noise {
    None,
    Laplace(f64),
    Gaussian(f64),
}

impl Noise {
    pub fn sigma(&self) -> f64 {
        match *self {
            Self::None => 0.0,
            Self::Laplace(s) | Self::Gaussian(s) => s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DefenseConfig {
    pub clip: Option<f64>,
    pub noise: Noise,
}

impl Default for DefenseConfig {
    fn default() -> Self {
        Self {
            clip: None,
            noise: Noise::None,
        }
    }
}

impl DefenseConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(c) = self.clip {
            if !(c > 0.0) {
                return Err(Error::InvalidArgument(format!("clip bound must be positive, got {c}")));
            }
        }
        let s = self.noise.sigma();
        if !(s >= 0.0) || !s.is_finite() {
            return Err(Error::InvalidArgument(format!("noise scale must be >= 0, got {s}")));
        }
        Ok(())
    }
}

/// Clip the payload to global l2 norm `clip`, then add iid noise of scale `sigma` to every
/// entry. Entries are visited in parameter order, so the result is a pure function of the
/// stream.
pub fn apply_defense<T: Real>(
    payload: &UpdatePayload<T>,
    cfg: &DefenseConfig,
    stream: RngStream,
) -> Result<UpdatePayload<T>> {
    cfg.validate()?;
    let mut out = payload.clone();
    if let Some(c) = cfg.clip {
        let norm = out.params.global_norm();
        if norm > c {
            out.params.scale(T::from_f64(c / norm));
        }
    }
    let mut s = stream.sampler();
    match cfg.noise {
        Noise::None => {}
        Noise::Laplace(sigma) | Noise::Gaussian(sigma) if sigma == 0.0 => {}
        Noise::Laplace(sigma) => {
            for (_, t) in out.params.iter_mut() {
                for v in t.data_mut() {
                    *v += T::from_f64(s.laplace(sigma));
                }
            }
        }
        Noise::Gaussian(sigma) => {
            for (_, t) in out.params.iter_mut() {
                for v in t.data_mut() {
                    *v += T::from_f64(sigma * s.standard_normal());
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpAnalysis {
    /// `sqrt(m k) sigma`.
    pub predicted: f64,
    /// Standard deviation of the per-entry recovery error over all trials.
    pub measured: f64,
}

/// Recovery error when `k` data rows of length `m` are clipped to norm 1, noised with
/// Gaussian `sigma`, and rescaled by the true norm (about `sqrt(m k)`).
pub fn dp_recovery_analysis(k: usize, m: usize, sigma: f64, trials: usize, stream: RngStream) -> Result<DpAnalysis> {
    if k == 0 || m == 0 || trials == 0 {
        return Err(Error::InvalidArgument("need k, m and trials >= 1".into()));
    }
    let cfg = DefenseConfig {
        clip: Some(1.0),
        noise: Noise::Gaussian(sigma),
    };
    let mut errs: Vec<f64> = Vec::with_capacity(trials * k * m);
    for t in 0..trials {
        let trial = stream.derive(t as u64);
        let x0: Tensor<f64> = rand_gaussian(trial.derive(0), &[k, m]);
        let norm = x0.norm();
        let payload = UpdatePayload {
            kind: PayloadKind::Gradient,
            params: ParamSet::new(alloc::vec![("rows".into(), x0.clone())]),
            meta: PayloadMeta {
                count: k,
                users: 1,
                local_steps: 1,
                lr: 0.0,
            },
        };
        let noisy = apply_defense(&payload, &cfg, trial.derive(1))?;
        let rec = noisy.params.get("rows").expect("single tensor").scale(norm);
        errs.extend(rec.data().iter().zip(x0.data()).map(|(a, b)| a - b));
    }
    let n = errs.len() as f64;
    let mean = errs.iter().sum::<f64>() / n;
    let var = errs.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
    Ok(DpAnalysis {
        predicted: libm::sqrt((m * k) as f64) * sigma,
        measured: libm::sqrt(var),
    })
}
