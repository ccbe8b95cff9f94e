//! Small descriptive-statistics helpers shared across modules.
//!
//! Quantiles use the linear interpolation of order statistics at index
//! `(n - 1) p + 1` (Hyndman–Fan type 7), the default in R.

use crate::error::{Error, Result};

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation with denominator `n - 1`.
pub fn sample_sd(values: &[f64]) -> f64 {
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (values.len() as f64 - 1.0)).sqrt()
}

/// Type-7 quantile of an already sorted, non-empty slice.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Type-7 quantile of an arbitrary slice.
pub fn quantile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InsufficientData { what: "quantile", needed: 1, got: 0 });
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(quantile_sorted(&sorted, p))
}

pub fn median(values: &[f64]) -> Result<f64> {
    quantile(values, 0.5)
}

/// Interquartile range `Q(0.75) - Q(0.25)`.
pub fn iqr(values: &[f64]) -> Result<f64> {
    let mut sorted = values.to_vec();
    if sorted.is_empty() {
        return Err(Error::InsufficientData { what: "IQR", needed: 1, got: 0 });
    }
    sorted.sort_by(f64::total_cmp);
    Ok(quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25))
}

/// Median absolute deviation about the median, without a consistency factor.
pub fn mad(values: &[f64]) -> Result<f64> {
    let med = median(values)?;
    let dev: Vec<f64> = values.iter().map(|v| (v - med).abs()).collect();
    median(&dev)
}

/// Number of items out of `m` that must be covered to reach `level`,
/// i.e. `ceil(level * m)` capped at `m`.
///
/// The product is nudged down by a few ulps so that levels such as
/// `1 - 0.2` times 10 give 8 and not 9.
pub fn required_count(level: f64, m: usize) -> usize {
    let raw = level * m as f64;
    let k = (raw - raw.abs() * 1e-12).ceil();
    (k.max(0.0) as usize).min(m)
}
