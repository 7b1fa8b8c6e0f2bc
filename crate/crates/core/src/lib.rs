//! Pure-compute core of the flow benchmark: a define-by-run reverse-mode
//! autodiff tape over `f64` tensors, the layers built on it, the three
//! next-frame flow models, dataset preparation, and the training and
//! evaluation protocol.
//!
//! The crate is `no_std` (with `alloc`) when the default `std` feature is
//! disabled. All transcendental math goes through `libm`, so results are
//! bit-identical with and without `std`.

#![cfg_attr(not(feature = "std"), no_std)]
// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod autodiff;
pub mod data;
mod error;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod rng;
mod tensor;
pub mod train;

pub use autodiff::{Tape, Var};
pub use error::{Error, Result};
pub use tensor::Tensor;
