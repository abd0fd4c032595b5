//! Stable scalar reductions shared by the losses and diagnostics.

use crate::error::{Error, Result};

/// Norm floor used by [`cosine_similarity`].
pub const COSINE_EPS: f64 = 1e-8;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `a·b / (max(|a|, eps) * max(|b|, eps))`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!(
            "cosine similarity of vectors with lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(cosine_unchecked(a, b))
}

#[inline]
pub(crate) fn cosine_unchecked(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (norm(a).max(COSINE_EPS) * norm(b).max(COSINE_EPS))
}

/// Gradient of [`cosine_similarity`] with respect to `a`, accumulated into
/// `out` with weight `scale`.
pub(crate) fn cosine_grad_lhs(a: &[f64], b: &[f64], scale: f64, out: &mut [f64]) {
    let na_raw = norm(a);
    let na = na_raw.max(COSINE_EPS);
    let nb = norm(b).max(COSINE_EPS);
    let inv = 1.0 / (na * nb);
    // Below the floor the denominator is constant in `a`.
    let radial = if na_raw > COSINE_EPS {
        dot(a, b) * inv / (na * na)
    } else {
        0.0
    };
    for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
        *o += scale * (y * inv - radial * x);
    }
}

/// `max(v) + ln Σ exp(v_i - max(v))`.
pub fn log_sum_exp(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::Domain("log_sum_exp of an empty vector".into()));
    }
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return Ok(m);
    }
    Ok(m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln())
}

/// Softmax of `v`, evaluated with the max-shift.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter_mut().for_each(|x| *x /= s);
    e
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Median of a non-empty slice; averages the two middle values for even sizes.
pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}
