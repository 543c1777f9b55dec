//! Linear sparse-interaction networks for long-horizon time series
//! forecasting: patch the lookback window, learn a sparse patch-to-patch
//! connection matrix through relaxed Bernoulli gates, propagate information
//! only along the learned connections, and decode with plain linear layers.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod heatmap;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod patch;
pub mod rng;
pub mod sscl;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{concat, grad_enabled, no_grad, Scalar, Tensor};
