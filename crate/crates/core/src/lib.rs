//! Continuous-time synthetic controls.
//!
//! The counterfactual path of a single treated unit is modelled as the
//! solution of a neural controlled differential equation driven by spline
//! reconstructions of the control units. Four discrete-time synthetic
//! control estimators, synthetic data generators and an evaluation harness
//! are included for comparison.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod baselines;
pub mod dgp;
pub mod error;
pub mod eval;
pub mod io;
pub mod linalg;
pub mod ncsc;
pub mod nn;
pub mod panel;

pub use error::{Error, Result};
pub use panel::{Panel, SplinePath, UnitSeries};
