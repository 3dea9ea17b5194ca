//! Distributed graph filtering over random asymmetric wireless sensor networks.
//!
//! The crate covers the whole pipeline from geometry to filtering accuracy:
//!
//! - [`graph`]: topologies, shift operators, link-probability matrices and
//!   Bernoulli sampling of time-varying graph realizations.
//! - [`filters`]: FIR graph filters (node-invariant and node-variant), their
//!   time-varying counterparts, the ARMA(1) recursion and Tikhonov denoising.
//! - [`optimize`]: bias matrices, the variance bound and the bias-variance
//!   coefficient optimizer.
//! - [`radio`]: SINR physical layer, BER/PDR and the scheduler radii.
//! - [`scheduler`]: the CDSA slot allocation protocol, schedule verification
//!   and random-access / coloring baselines.
//! - [`sim`]: end-to-end Monte Carlo experiments.
//! - [`config`]: experiment configuration with validation.

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

#[cfg(test)]
macro_rules! assert_close {
    ($a:expr, $b:expr, $tol:expr) => {{
        let (a, b): (f64, f64) = ($a, $b);
        assert!((a - b).abs() <= $tol, "{a} vs {b} (tol {})", $tol);
    }};
}

pub mod config;
pub mod error;
pub mod filters;
pub mod graph;
pub mod optimize;
pub mod radio;
pub mod rng;
pub mod scheduler;
pub mod sim;

pub use error::{Error, Result};
