use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use super::{Real, Tensor};

/// Address of one reproducible random sequence: `(master_seed, stream_id)`.
///
/// Each stream is a ChaCha8 keystream keyed by the master seed with the stream id as the
/// ChaCha stream/nonce, so sequences are counter-based: any worker can regenerate the
/// sequence of any stream without coordination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub master_seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub const fn new(master_seed: u64, stream_id: u64) -> Self {
        Self {
            master_seed,
            stream_id,
        }
    }

    /// Child stream for a sub-task (replicate, user, trial...).
    pub fn derive(&self, child: u64) -> Self {
        Self::new(
            self.master_seed,
            splitmix64(self.stream_id ^ splitmix64(child.wrapping_add(0x9E37_79B9_7F4A_7C15))),
        )
    }

    pub fn sampler(&self) -> Sampler {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_id);
        Sampler { rng, spare: None }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stateful draw interface over one stream.
pub struct Sampler {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl Sampler {
    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in the open interval `(0, 1)`.
    pub fn uniform_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n` (rejection sampling, unbiased).
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % n;
            }
        }
    }

    /// Standard normal via Box-Muller; the second variate of each pair is cached.
    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.uniform_open();
        let u2 = self.uniform();
        let r = libm::sqrt(-2.0 * libm::log(u1));
        let theta = 2.0 * core::f64::consts::PI * u2;
        self.spare = Some(r * libm::sin(theta));
        r * libm::cos(theta)
    }

    /// Laplace(0, scale) by inverse CDF.
    pub fn laplace(&mut self, scale: f64) -> f64 {
        let u = self.uniform_open() - 0.5;
        let s = if u < 0.0 { -1.0 } else { 1.0 };
        -scale * s * libm::log(1.0 - 2.0 * libm::fabs(u))
    }

    pub fn shuffle<X>(&mut self, items: &mut [X]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }
}

/// Tensor of iid standard normal entries, deterministic per stream.
pub fn rand_gaussian<T: Real>(stream: RngStream, shape: &[usize]) -> Tensor<T> {
    let mut s = stream.sampler();
    let len: usize = shape.iter().product();
    let data = (0..len).map(|_| T::from_f64(s.standard_normal())).collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_stream_same_sequence() {
        let a: Tensor<f32> = rand_gaussian(RngStream::new(3, 9), &[4, 5]);
        let b: Tensor<f32> = rand_gaussian(RngStream::new(3, 9), &[4, 5]);
        assert_eq!(a, b);
    }

    #[test]
    fn golden_sequences() {
        // Frozen from this implementation; any change breaks cross-run reproducibility.
        let mut s = RngStream::new(42, 0).sampler();
        let u: Vec<u64> = (0..3).map(|_| s.next_u64()).collect();
        let mut s2 = RngStream::new(42, 0).sampler();
        let again: Vec<u64> = (0..3).map(|_| s2.next_u64()).collect();
        assert_eq!(u, again);
        let n: Tensor<f64> = rand_gaussian(RngStream::new(42, 1), &[10]);
        let expected = golden_normals();
        for (a, b) in n.data().iter().zip(expected.iter()) {
            assert_eq!(a.to_bits(), b.to_bits(), "{a} vs {b}");
        }
    }

    fn golden_normals() -> [f64; 10] {
        include!("golden_normals_42_1.in")
    }

    #[test]
    fn derive_gives_distinct_streams() {
        let root = RngStream::new(1, 0);
        assert_ne!(root.derive(0), root.derive(1));
        assert_ne!(root.derive(0).sampler().next_u64(), root.derive(1).sampler().next_u64());
    }

    #[test]
    fn below_is_in_range() {
        let mut s = RngStream::new(5, 5).sampler();
        for n in 1..50u64 {
            assert!(s.below(n) < n);
        }
    }
}
