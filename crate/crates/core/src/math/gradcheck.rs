use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Maximum elementwise relative error between `analytic` and the central
/// difference `(f(θ + h eᵢ) − f(θ − h eᵢ)) / 2h`, with denominator
/// `max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_diff_compare<F>(mut f: F, theta: &Tensor, analytic: &Tensor, h: f64) -> Result<f64>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if h <= 0.0 {
        return Err(Error::Contract(format!("step h must be positive, got {h}")));
    }
    if !analytic.same_shape(theta) {
        return Err(Error::dim("finite_diff_compare", "gradient shape differs from θ"));
    }
    let base = f(theta)?;
    if f(theta)?.to_bits() != base.to_bits() {
        return Err(Error::Contract(
            "finite-difference check invalid: function is not deterministic".into(),
        ));
    }
    let mut worst = 0.0f64;
    let mut probe = theta.clone();
    for i in 0..theta.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic.data()[i];
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}

/// Check the tape gradient of the scalar built by `f` from a leaf holding θ.
pub fn finite_diff_check<F>(mut f: F, theta: &Tensor, h: f64) -> Result<f64>
where
    F: FnMut(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let leaf = tape.leaf(theta.clone());
    let out = f(&mut tape, leaf)?;
    let analytic = tape.backward(out)?.wrt(leaf);
    finite_diff_compare(
        |t| {
            let mut tape = Tape::new();
            let leaf = tape.leaf(t.clone());
            let out = f(&mut tape, leaf)?;
            Ok(tape.value(out).item())
        },
        theta,
        &analytic,
        h,
    )
}
