//! Numeric core for diverse Gaussian noise consistency training.
//!
//! Everything here is `no_std` + `alloc`: the tape autodiff engine, the two
//! reference classifiers, training objectives and the optimizer, noise
//! corruptions, robustness/calibration metrics, the synthetic texture
//! benchmark and the input-space curvature toolkit. File formats and the
//! command line live in the companion `dign` crate.
#![cfg_attr(not(test), no_std)]
extern crate alloc;

pub mod autodiff;
pub mod corruptions;
pub mod datasets;
pub mod error;
pub mod landscape;
pub mod metrics;
pub mod models;
pub mod rng;
pub mod tensor;
pub mod training;

pub use autodiff::{Gradients, Padding, Tape, Var};
pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::Tensor;
