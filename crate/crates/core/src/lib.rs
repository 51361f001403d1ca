//! Signal-noise separation Wiener filtering.
//!
//! Reference channels are unmixed with SOBI, each separated component is
//! scored by its autoregressive spectrum, and the noise-dominant components
//! drive a multichannel FIR Wiener canceller on the signal channel. A classic
//! Wiener canceller on the raw references is provided as the baseline.

// NaN-rejecting checks are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod pipeline;
pub mod signals;
pub mod sobi;
pub mod spectral;
pub mod units;
pub mod wiener;

pub use error::{Error, Result};
