//! Dense tensors, RNG streams, DCT rows and the linear-sum-assignment solver.

mod assignment;
mod dct;
mod real;
mod rng;
mod tensor;

pub use assignment::{assignment, Assignment};
pub use dct::dct_row;
pub use real::Real;
pub use rng::{rand_gaussian, RngStream, Sampler};
pub use tensor::{dot, rel_l2, sq_dist, Tensor};
