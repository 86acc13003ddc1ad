//! Joint moments, joint moment generating functions and correlations of
//! age-of-information processes modelled as piecewise-linear stochastic
//! hybrid systems.
//!
//! - [`tensor`]: dense tensors with mode products and the reset contraction.
//! - [`model`]: the SHS description (states, transitions, reset maps).
//! - [`solver`]: stationary and transient moment / MGF solvers.

// Negated comparisons are deliberate: NaN must fail every positivity check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod disciplines;
pub mod model;
pub mod simulator;
pub mod solver;
pub mod tensor;
