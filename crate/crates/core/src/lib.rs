//! Simulation and verification toolkit for the scalar stochastic difference
//! equation
//!
//! ```text
//! x_{n+1} = x_n (1 + h f(x_n) + √h g(x_n) ξ_{n+1})
//! ```
//!
//! * [`noise`] — reproducible, counter-indexed noise streams;
//! * [`model`] — clamped power-law `f`, `g` and the regime classifier;
//! * [`engine`] — long paths in `(sign, ln|x|)` form with online accumulators;
//! * [`analysis`] — decay exponents, comparison ratios, exact-rate and
//!   oscillation statistics, martingale diagnostics, sequence utilities;
//! * [`oracle`] — quadrature expectations and the discretized Itô expansion;
//! * [`config`], [`report`], [`acceptance`] — experiment files, CSV output
//!   and the acceptance criteria.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acceptance;
pub mod analysis;
pub mod config;
pub mod engine;
pub mod error;
pub mod model;
pub mod noise;
pub mod oracle;
pub mod quadrature;
pub mod report;

pub use error::{LabError, Result};
