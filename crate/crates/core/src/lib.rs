#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analog;
pub mod backend;
pub mod baselines;
pub mod data;
pub mod embedding;
pub mod ensemble;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod qubo;
pub mod seed;
pub mod svm;

pub use error::{Error, Result};
