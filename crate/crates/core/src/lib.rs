//! Differentiable simulation of a band-limited 4-PAM IM/DD optical link with
//! end-to-end learned transmit pulse-shaper and receiver FIR filters.

pub mod autodiff;
pub mod chain;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod fft;
pub mod link;
pub mod report;
pub mod rng;
pub mod signal;
pub mod train;

pub use error::{Error, Result};
