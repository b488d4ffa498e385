#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod audit;
pub mod curate;
pub mod error;
pub mod explain;
pub mod features;
pub mod ingest;
pub mod integrity;
pub mod learn;
pub mod matrix;
pub mod pipeline;
pub mod rng;
pub mod select;
pub mod synth;

pub use error::{Error, Result};
