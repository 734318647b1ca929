//! Physical-activity energy expenditure estimation from wrist and ankle
//! accelerometry.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data_model;
pub mod error;
pub mod eval;
pub mod nn;
pub mod optim;
pub mod preprocess;
pub mod sequencing;
pub mod synth;

pub use error::{Error, Result};
