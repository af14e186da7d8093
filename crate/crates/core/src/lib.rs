//! Monte Carlo engine for the Heston stochastic-local-volatility model with
//! positivity-preserving discretizations of the CIR variance process.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod black_scholes;
pub mod brownian;
pub mod config;
pub mod convergence;
pub mod error;
pub mod exact;
pub mod experiments;
pub mod heston;
pub mod local_vol;
pub mod rng;
pub mod slv;
pub mod surface;
pub mod table;
pub mod variance;

pub use error::{Error, Result};
