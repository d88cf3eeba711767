//! Linearized assignment flows for image labeling.
//!
//! The crate integrates the linearized assignment flow with Krylov exponential
//! integrators and learns per-pixel regularization weight patches by Riemannian
//! gradient descent, using a closed-form, low-rank compressed parameter gradient.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod flow;
pub mod gradient;
pub mod graph;
pub mod krylov;
pub mod manifold;
pub mod predictor;
pub mod training;
pub mod vecops;

pub use error::{Error, Result};
