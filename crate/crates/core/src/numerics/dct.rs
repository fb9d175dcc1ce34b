use alloc::format;

use super::{Real, Tensor};
use crate::{Error, Result};

/// Type-II DCT basis row scaled by `4/m`: entry `j` is `(4/m) cos(pi * freq * (2j+1) / (2m))`.
pub fn dct_row<T: Real>(m: usize, freq: usize) -> Result<Tensor<T>> {
    if m == 0 || freq >= m {
        return Err(Error::InvalidArgument(format!(
            "DCT frequency {freq} out of range for length {m}"
        )));
    }
    let scale = 4.0 / m as f64;
    let data = (0..m)
        .map(|j| {
            let arg = core::f64::consts::PI * freq as f64 * (2 * j + 1) as f64 / (2 * m) as f64;
            T::from_f64(scale * libm::cos(arg))
        })
        .collect();
    Ok(Tensor::vector(data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::tensor::dot;

    #[test]
    fn zero_frequency_is_constant() {
        let r: Tensor<f64> = dct_row(4, 0).unwrap();
        assert_eq!(r.data(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn first_frequency_matches_direct_trig() {
        let r: Tensor<f64> = dct_row(8, 1).unwrap();
        for (j, &v) in r.data().iter().enumerate() {
            let direct = 0.5 * (core::f64::consts::PI * (2 * j + 1) as f64 / 16.0).cos();
            assert!((v - direct).abs() < 1e-15);
        }
    }

    #[test]
    fn rows_are_orthogonal() {
        let m = 16;
        for a in 1..m {
            for b in 1..m {
                if a != b {
                    let ra: Tensor<f64> = dct_row(m, a).unwrap();
                    let rb: Tensor<f64> = dct_row(m, b).unwrap();
                    assert!(dot(ra.data(), rb.data()).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn frequency_out_of_range() {
        assert!(dct_row::<f32>(4, 4).is_err());
    }
}
