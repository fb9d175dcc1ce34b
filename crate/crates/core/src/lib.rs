//! Analytic data recovery through malicious "imprint" layers in federated learning.
//!
//! The crate is `no_std` (it needs `alloc`) and covers the whole computational side of the
//! attack laboratory:
//!
//! - [`numerics`]: tensors, seeded counter-based RNG streams, DCT rows, linear assignment.
//! - [`distributions`]: CDF/quantile providers used to place bin boundaries.
//! - [`measurement`]: linear functionals `h(x)` that order user data.
//! - [`imprint`]: construction of the malicious layer (ReLU, hard-threshold, one-shot).
//! - [`model`]: the shared model with a hand-derived backward pass.
//! - [`federation`]: fedSGD / fedAVG users and secure aggregation.
//! - [`recovery`]: the server-side inversion of aggregated updates.
//! - [`theory`]: expected recovery under the composition and iid occupancy models.
//! - [`metrics`]: PSNR, IIP and assignment-based matching.
//! - [`defense`]: clipping and additive noise on user payloads.
//! - [`pipeline`]: one end-to-end attack run over in-memory data.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod defense;
pub mod distributions;
mod error;
pub mod federation;
pub mod imprint;
pub mod measurement;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod recovery;
pub mod theory;

pub use error::{Error, Result};
pub use numerics::{Real, RngStream, Tensor};
