//! Linear measurements `h(x) = c0 * <w, x>` used to order user data into bins.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::distributions::{fit_empirical, ScalarDistribution};
use crate::numerics::{dct_row, dot, rand_gaussian, Real, RngStream, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MeasurementKind {
    /// Average value (brightness for images): weights `1/m`.
    Mean,
    /// Scaled type-II DCT row of the given frequency.
    Dct { freq: usize },
    /// Random direction with iid `N(0, 1/sqrt(m))` entries (variance `1/sqrt(m)`).
    RandomGaussian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Measurement<T> {
    pub kind: MeasurementKind,
    weights: Tensor<T>,
    c0: f64,
}

impl<T: Real> Measurement<T> {
    pub fn build(kind: MeasurementKind, m: usize, c0: f64, stream: RngStream) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidArgument("measurement dimension must be >= 1".into()));
        }
        if !(c0 > 0.0) || !c0.is_finite() {
            return Err(Error::InvalidArgument(format!("scale c0 must be positive, got {c0}")));
        }
        let weights = match kind {
            MeasurementKind::Mean => Tensor::vector(vec![T::from_f64(1.0 / m as f64); m]),
            MeasurementKind::Dct { freq } => dct_row(m, freq)?,
            MeasurementKind::RandomGaussian => {
                let sd = libm::pow(m as f64, -0.25);
                rand_gaussian::<f64>(stream, &[m]).map(|v| v * sd).cast()
            }
        };
        Ok(Self { kind, weights, c0 })
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn c0(&self) -> f64 {
        self.c0
    }

    pub fn weights(&self) -> &Tensor<T> {
        &self.weights
    }

    /// `c0 * w`, the row actually written into an imprint layer.
    pub fn effective_row(&self) -> Vec<T> {
        let c = T::from_f64(self.c0);
        self.weights.data().iter().map(|&w| c * w).collect()
    }

    /// `c0 * <w, x>`.
    pub fn measure(&self, x: &[T]) -> Result<T> {
        if x.len() != self.dim() {
            return Err(Error::Shape(format!(
                "measurement of length {} applied to vector of length {}",
                self.dim(),
                x.len()
            )));
        }
        Ok(T::from_f64(self.c0) * dot(self.weights.data(), x))
    }

    /// Measurement computed in f64 regardless of `T`.
    pub fn measure_f64(&self, x: &[T]) -> f64 {
        self.c0
            * self
                .weights
                .data()
                .iter()
                .zip(x)
                .map(|(w, v)| w.to_f64() * v.to_f64())
                .sum::<f64>()
    }

    pub fn with_c0(&self, c0: f64) -> Result<Self> {
        if !(c0 > 0.0) || !c0.is_finite() {
            return Err(Error::InvalidArgument(format!("scale c0 must be positive, got {c0}")));
        }
        Ok(Self {
            kind: self.kind,
            weights: self.weights.clone(),
            c0,
        })
    }
}

/// The attacker's belief about the law of `h(x)`.
#[derive(Debug, Clone, PartialEq)]
pub enum DataModel {
    Normal { mean: f64, sd: f64 },
    Laplace { location: f64, scale: f64 },
    /// Fit to measurements of surrogate data.
    Empirical,
}

impl Default for DataModel {
    fn default() -> Self {
        Self::Normal { mean: 0.0, sd: 1.0 }
    }
}

impl DataModel {
    pub fn unit_laplace() -> Self {
        Self::Laplace {
            location: 0.0,
            scale: core::f64::consts::FRAC_1_SQRT_2,
        }
    }
}

/// Distribution the attacker bins against. Mismatch with the true law of `h(x)` is not
/// corrected; it only unbalances bin occupancy.
pub fn assumed_distribution<T: Real>(
    h: &Measurement<T>,
    model: &DataModel,
    surrogate: Option<&Tensor<T>>,
) -> Result<ScalarDistribution> {
    match model {
        DataModel::Normal { mean, sd } => ScalarDistribution::normal(*mean, *sd),
        DataModel::Laplace { location, scale } => ScalarDistribution::laplace(*location, *scale),
        DataModel::Empirical => {
            let data = surrogate.ok_or_else(|| {
                Error::InvalidArgument("empirical data model needs surrogate data".into())
            })?;
            if data.cols() != h.dim() {
                return Err(Error::Shape(format!(
                    "surrogate rows have length {}, measurement expects {}",
                    data.cols(),
                    h.dim()
                )));
            }
            let values: Vec<f64> = (0..data.rows()).map(|i| h.measure_f64(data.row(i))).collect();
            fit_empirical(&values)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const S: RngStream = RngStream::new(1, 2);

    #[test]
    fn mean_weights() {
        let h = Measurement::<f64>::build(MeasurementKind::Mean, 4, 1.0, S).unwrap();
        assert_eq!(h.weights().data(), &[0.25; 4]);
        assert_eq!(h.measure(&[3.0; 4]).unwrap(), 3.0);
        assert_eq!(h.measure(&[0.0; 4]).unwrap(), 0.0);
    }

    #[test]
    fn dct_weights_come_from_dct_row() {
        let m = 224 * 224 * 3;
        let h = Measurement::<f32>::build(MeasurementKind::Dct { freq: 32 }, m, 1.0, S).unwrap();
        assert_eq!(h.weights(), &dct_row::<f32>(m, 32).unwrap());
        assert!(Measurement::<f32>::build(MeasurementKind::Dct { freq: 8 }, 8, 1.0, S).is_err());
    }

    #[test]
    fn random_weights_have_variance_inv_sqrt_m() {
        let m = 100;
        let h = Measurement::<f64>::build(MeasurementKind::RandomGaussian, m, 1.0, S).unwrap();
        let w = h.weights().data();
        let mean = w.iter().sum::<f64>() / m as f64;
        let var = w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1) as f64;
        let target = 1.0 / (m as f64).sqrt();
        assert!((var / target - 1.0).abs() < 0.2, "var {var} vs {target}");
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(Measurement::<f32>::build(MeasurementKind::Mean, 0, 1.0, S).is_err());
        assert!(Measurement::<f32>::build(MeasurementKind::Mean, 3, 0.0, S).is_err());
        let h = Measurement::<f32>::build(MeasurementKind::Mean, 3, 1.0, S).unwrap();
        assert!(matches!(h.measure(&[1.0, 2.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn mean_of_standard_normal_vectors_has_sd_inv_sqrt_m() {
        let m = 64;
        let h = Measurement::<f64>::build(MeasurementKind::Mean, m, 1.0, S).unwrap();
        let x: Tensor<f64> = rand_gaussian(RngStream::new(9, 9), &[1000, m]);
        let hs: Vec<f64> = (0..1000).map(|i| h.measure(x.row(i)).unwrap()).collect();
        let mu = hs.iter().sum::<f64>() / 1000.0;
        let sd = (hs.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / 999.0).sqrt();
        assert!((sd * (m as f64).sqrt() - 1.0).abs() < 0.1, "sd {sd}");
    }

    #[test]
    fn default_and_laplace_models() {
        let h = Measurement::<f64>::build(MeasurementKind::Mean, 4, 1.0, S).unwrap();
        assert_eq!(
            assumed_distribution(&h, &DataModel::default(), None).unwrap(),
            ScalarDistribution::standard_normal()
        );
        assert_eq!(
            assumed_distribution(&h, &DataModel::unit_laplace(), None).unwrap(),
            ScalarDistribution::unit_laplace()
        );
        assert!(assumed_distribution(&h, &DataModel::Empirical, None).is_err());
    }

    #[test]
    fn empirical_from_surrogate_measurements() {
        let m = 16;
        let h = Measurement::<f64>::build(MeasurementKind::Mean, m, 4.0, S).unwrap();
        let x: Tensor<f64> = rand_gaussian(RngStream::new(3, 3), &[10_000, m]);
        let d = assumed_distribution(&h, &DataModel::Empirical, Some(&x)).unwrap();
        // h = 4 * mean of 16 standard normals ~ N(0, 1).
        let normal = ScalarDistribution::standard_normal();
        let ks = (-30..=30)
            .map(|i| i as f64 / 10.0)
            .map(|t| (d.cdf(t) - normal.cdf(t)).abs())
            .fold(0.0, f64::max);
        assert!(ks < 0.03, "ks {ks}");
    }

    proptest! {
        #[test]
        fn linear_and_scaled(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in 0u64..1000) {
            let m = 12;
            let h = Measurement::<f64>::build(MeasurementKind::RandomGaussian, m, 1.0, RngStream::new(seed, 0)).unwrap();
            let x: Tensor<f64> = rand_gaussian(RngStream::new(seed, 1), &[m]);
            let y: Tensor<f64> = rand_gaussian(RngStream::new(seed, 2), &[m]);
            let combo: Vec<f64> = x.data().iter().zip(y.data()).map(|(p, q)| a * p + b * q).collect();
            let lhs = h.measure(&combo).unwrap();
            let rhs = a * h.measure(x.data()).unwrap() + b * h.measure(y.data()).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-6 * (1.0 + rhs.abs()));
            let scaled = h.with_c0(2.5).unwrap();
            prop_assert_eq!(scaled.measure(x.data()).unwrap(), 2.5 * h.measure(x.data()).unwrap());
        }
    }
}
