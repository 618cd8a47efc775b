use serde::{Deserialize, Serialize};

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_MOMENTUM: f64 = 0.1;

/// Running mean/variance tracked by a batch-norm site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(features: usize) -> Self {
        Self {
            mean: vec![0.0; features],
            var: vec![1.0; features],
        }
    }

    /// Exponential update from biased batch statistics over `n` rows; the
    /// stored variance uses the unbiased estimate.
    pub fn update(&mut self, batch_mean: &[f64], batch_var: &[f64], n: usize) {
        let correction = n as f64 / (n as f64 - 1.0);
        for (m, b) in self.mean.iter_mut().zip(batch_mean) {
            *m = (1.0 - BATCH_NORM_MOMENTUM) * *m + BATCH_NORM_MOMENTUM * b;
        }
        for (v, b) in self.var.iter_mut().zip(batch_var) {
            *v = (1.0 - BATCH_NORM_MOMENTUM) * *v + BATCH_NORM_MOMENTUM * b * correction;
        }
    }
}

pub enum NormMode<'a> {
    /// Standardise each row over its features.
    Layer,
    /// Standardise each feature over rows with batch statistics and update
    /// the running statistics.
    BatchTrain(&'a mut RunningStats),
    /// Standardise each feature with the running statistics.
    BatchEval(&'a RunningStats),
}

/// Normalisation followed by the affine `scale ⊙ x̂ + shift`.
pub fn normalize(tape: &mut Tape, x: Var, mode: NormMode<'_>, scale: Var, shift: Var, eps: f64) -> Result<Var> {
    let q = tape.value(x).cols();
    for (what, v) in [("scale", scale), ("shift", shift)] {
        let t = tape.value(v);
        if t.rows() != 1 || t.cols() != q {
            return Err(Error::dim(
                "normalize",
                format!("{what} has {} values for {q} features", t.len()),
            ));
        }
    }
    let standardized = match mode {
        NormMode::Layer => tape.layer_standardize(x, eps),
        NormMode::BatchTrain(stats) => {
            let n = tape.value(x).rows();
            let (v, mean, var) = tape.batch_standardize(x, eps)?;
            stats.update(&mean, &var, n);
            v
        }
        NormMode::BatchEval(stats) => {
            if stats.mean.len() != q {
                return Err(Error::dim("normalize", "running stats width"));
            }
            let neg_mean = tape.constant(Tensor::row(stats.mean.iter().map(|m| -m).collect()));
            let inv = tape.constant(Tensor::row(stats.var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect()));
            let centered = tape.add_row(x, neg_mean)?;
            tape.mul_row(centered, inv)?
        }
    };
    let scaled = tape.mul_row(standardized, scale)?;
    tape.add_row(scaled, shift)
}
