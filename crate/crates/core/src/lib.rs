//! Cross-batch first-order meta-optimization and Gaussian weight averaging
//! for cosine-similarity classifiers, with a synthetic static-bias benchmark.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod meta;
pub mod model;
pub mod objective;
pub mod params;
pub mod schedule;
pub mod train;

pub use error::{Error, Result};
pub use params::{Layout, ParamVector, Segment};
