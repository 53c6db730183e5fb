//! Finite-difference validation of analytic gradients.

use super::{NumericsError, Tensor};

/// Relative disagreement between an analytic and a numeric derivative,
/// normalized so both tiny and huge gradients compare on one scale.
pub fn finite_difference_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// Central-difference check of a gradient against a scalar function.
///
/// Evaluates `f` twice per coordinate of `point` and returns the worst
/// relative error across coordinates. A doubled analytic gradient comes out
/// as 0.5; an exact match on a smooth function lands near rounding noise.
pub fn finite_difference_check<F>(
    mut f: F,
    point: &Tensor,
    analytic: &Tensor,
    step: f64,
) -> Result<f64, NumericsError>
where
    F: FnMut(&Tensor) -> Result<f64, NumericsError>,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(NumericsError::InvalidStep(step));
    }
    if point.shape() != analytic.shape() {
        return Err(NumericsError::ShapeMismatch {
            op: "finite_difference_check",
            lhs: point.shape().to_vec(),
            rhs: analytic.shape().to_vec(),
        });
    }

    let mut worst = 0.0_f64;
    let mut probe = point.clone();
    for i in 0..point.len() {
        let original = probe.data()[i];
        probe.data_mut()[i] = original + step;
        let above = f(&probe)?;
        probe.data_mut()[i] = original - step;
        let below = f(&probe)?;
        probe.data_mut()[i] = original;

        let numeric = (above - below) / (2.0 * step);
        worst = worst.max(finite_difference_error(analytic.data()[i], numeric));
    }
    Ok(worst)
}
