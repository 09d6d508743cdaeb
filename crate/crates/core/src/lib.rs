//! Numerical tools for nonlocal evolution equations `∂t u = −u + g(t, Ku)`
//! on a bounded interval.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attractor;
pub mod comparison;
pub mod error;
pub mod evolution;
pub mod lyapunov;
pub mod nonlinearity;
pub mod spatial;

pub use error::{Error, Result};
