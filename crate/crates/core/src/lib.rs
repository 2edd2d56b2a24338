//! Dynamic correlation networks from multivariate time series.
//!
//! The crate estimates time-varying correlation matrices with square and
//! tapered sliding windows or with heat-kernel smoothing on the circle,
//! clusters them into recurring connectivity states, summarizes state
//! dynamics as a Markov chain, and estimates twin heritability of
//! state-averaged connectivity with a transposition-averaged Falconer
//! estimator.

pub mod dyncorr;
pub mod error;
pub mod heritability;
pub mod io;
pub mod pipeline;
pub mod rng;
pub mod signal;
pub mod spectral;
pub mod states;
pub mod synth;

pub use error::{Error, Result};
