//! Shift-add CNN toolchain for distributed fiber vibration sensing.
//!
//! The crate covers the whole path from a floating-point student network to
//! a multiplier-free integer engine:
//!
//! * [`nn`]: reference kernels, the four-layer student and its weight file.
//! * [`train`]: cross-entropy and distillation losses, backpropagation,
//!   Adam with a plateau schedule, stratified k-fold training.
//! * [`quant`]: truncated power-of-two weight expansion, biased binary
//!   encoding of shift magnitudes, the `SAQM` container.
//! * [`engine`]: integer inference where every multiply is a sum of shifts.
//! * [`stream`]: row-major line-buffer simulation and throughput arithmetic.
//! * [`data`]: frame files, dataset manifests, synthetic data and features.
//!
//! Batch loops run on rayon when the `parallel` feature is on; see [`par`].

pub(crate) mod binio;
pub mod data;
pub mod engine;
pub mod error;
pub mod fsutil;
pub mod nn;
pub mod par;
pub mod quant;
pub mod rng;
pub mod stream;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use par::ExecMode;
pub use tensor::{Shape, Tensor};
