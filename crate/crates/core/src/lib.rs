//! Sketch-preconditioned regression, Gauss-Newton training of two-layer ReLU
//! networks, and sketched Newton steps for convex GLMs.

// Validation is written `!(x > tol)` on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod convex;
pub mod error;
pub mod network;
pub mod operator;
pub mod regression;
pub mod rng;
pub mod sketch;
pub mod trainer;

pub use error::{Error, Result};
