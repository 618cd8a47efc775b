use std::sync::Arc;

use super::{segment_softmax_values, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// `x · W + b`, recorded on the tape.
pub fn linear_apply(tape: &mut Tape, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
    tape.linear(x, w, b)
}

/// Softmax of `logits` within each segment, stabilised by subtracting the
/// per-segment maximum.
pub fn segment_softmax(logits: &[f64], segments: &[usize]) -> Result<Vec<f64>> {
    if logits.len() != segments.len() {
        return Err(Error::dim(
            "segment_softmax",
            format!("{} logits, {} segment ids", logits.len(), segments.len()),
        ));
    }
    if logits.is_empty() {
        return Ok(Vec::new());
    }
    let nseg = segments.iter().copied().max().unwrap_or(0) + 1;
    let t = Tensor::column(logits.to_vec());
    Ok(segment_softmax_values(&t, segments, nseg).into_data())
}

/// Scatter-add rows of `values` into `nseg` output rows.
pub fn segment_sum(tape: &mut Tape, values: Var, segments: &[usize], nseg: usize) -> Result<Var> {
    tape.segment_sum(values, Arc::from(segments), nseg)
}

/// Sinusoidal timestep encoding: entries `2k` and `2k+1` hold
/// `sin(t / 10000^(2k/d))` and `cos(t / 10000^(2k/d))`.
pub fn time_encoding(t: i64, d: usize) -> Result<Tensor> {
    if !d.is_multiple_of(2) {
        return Err(Error::Config(format!("time encoding dimension must be even, got {d}")));
    }
    let mut out = Vec::with_capacity(d);
    for k in 0..d / 2 {
        let angle = t as f64 / 10000f64.powf(2.0 * k as f64 / d as f64);
        out.push(angle.sin());
        out.push(angle.cos());
    }
    Ok(Tensor::row(out))
}
