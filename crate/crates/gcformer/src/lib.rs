//! Dual-branch time series forecasting with structured global convolution
//! kernels.
//!
//! The crate combines a global convolutional branch (three interchangeable
//! sublinear kernel parameterizations: multi-scale sub-kernels, frequency
//! domain weights, and a translated-Legendre state-space path) with a local
//! patch-attention branch, fused by a cross-attention decoder behind
//! reversible instance normalization.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod kernels;
pub mod legendre;
pub mod model;
pub mod numerics;
pub mod svg;
pub mod theory;
pub mod training;

pub use error::{GcError, Result};
