// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analyze;
pub mod cli;
pub mod error;
pub mod eval;
pub mod infer;
pub mod ingest;
pub mod linalg;
pub mod model;
pub mod sim;
pub mod spde;

pub use error::{Error, Result};
