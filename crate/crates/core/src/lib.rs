//! Quasiconvex envelopes and periodic homogenization of singular
//! stored-energy densities.

// `!(a < b)` is used on purpose so NaN falls on the rejecting side
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cell;
pub mod cli;
pub mod descent;
pub mod envelope;
pub mod error;
pub mod gamma;
pub mod integrand;
pub mod laminate;
pub mod mesh;

pub use error::{Error, Result};
