//! Driver-gaze simulation with affinity relation transformers over
//! heterogeneous spatio-temporal scene graphs.
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::type_complexity
)]

pub mod data;
pub mod error;
pub mod graph;
pub mod math;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod post;
pub mod simulate;
pub mod synth;
pub mod trace;
pub mod train;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
