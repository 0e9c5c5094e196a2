//! Transient simulation of power systems as a differential-algebraic system,
//! with per-component integration rules (trapezoidal, backward Euler, or a
//! trained surrogate) solved simultaneously with the network by Newton-Raphson.

// NaN must fail every tolerance check, so `!(x < tol)` is used on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod algebraizer;
pub mod cli;
pub mod error;
pub mod harness;
pub mod machine;
pub mod netmodel;
pub mod oracle;
pub mod stepper;
pub mod surrogate;

pub use error::{Error, Result};
