//! Numerical substrate: tensors, the differentiation tape, normalisation,
//! segment operations, encodings, gradient checking and the optimizer.

mod adam;
mod gradcheck;
mod norm;
mod ops;
mod params;
mod tape;
mod tensor;

pub use adam::{AdamConfig, OptimState};
pub use gradcheck::{finite_diff_check, finite_diff_compare};
pub use norm::{normalize, NormMode, RunningStats, BATCH_NORM_MOMENTUM, NORM_EPS};
pub use ops::{linear_apply, segment_softmax, segment_sum, time_encoding};
pub use params::{Param, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{matmul, Tensor};

pub(crate) use tape::segment_softmax_values;
