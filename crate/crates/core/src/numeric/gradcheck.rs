//! Central finite differences, the oracle for every analytic gradient.

use super::Matrix;
use crate::error::{Error, Result};

/// Default step at 64-bit precision.
pub const DEFAULT_STEP: f64 = 1e-5;

/// `(f(x + h e_ij) - f(x - h e_ij)) / 2h` for every entry of `x`.
pub fn finite_difference_gradient<F>(mut f: F, x: &Matrix, h: f64) -> Result<Matrix>
where
    F: FnMut(&Matrix) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::Domain(format!("finite-difference step {h} must be positive")));
    }
    let mut probe = x.clone();
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!(
                "function not finite around flat index {i} ({plus}, {minus})"
            )));
        }
        out.data_mut()[i] = (plus - minus) / (2.0 * h);
    }
    Ok(out)
}

/// `max|a - b| / max(max|a|, max|b|, floor)`: the error measure used by
/// the gradient checks.
pub fn relative_error(analytic: &Matrix, numeric: &Matrix) -> f64 {
    let scale = analytic.max_abs().max(numeric.max_abs()).max(1e-10);
    analytic.max_abs_diff(numeric) / scale
}
