// `!(v > 0.0)` is used on purpose: it rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod cell;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod finite_diff;
pub mod grad;
pub mod lab;
pub mod solver;
pub mod tensor;

pub use error::{Error, Result};
