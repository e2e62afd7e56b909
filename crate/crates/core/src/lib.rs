// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bnn;
pub mod container;
pub mod datasets;
mod error;
pub mod gp;
pub mod harness;
pub mod mcdropout;
pub mod nnet;
pub mod numerics;

pub use error::{Error, Result};
