//! Sequential conformal prediction per age.
//!
//! For every test year `l` and every age, the absolute residuals observed
//! strictly before `l` are modelled by an AR(p) quantile regression at level
//! `1 - alpha` (order chosen by AIC at every step), the next quantile `q_hat`
//! is predicted from the latest lags and the interval `forecast +/- q_hat` is
//! emitted. The realized residual is then appended and the model refitted.
//! Ages are processed independently.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantreg::{fit_quantile_ar, predict_quantile, select_ar_order};

/// Minimum number of past residuals per age before the first test year.
pub const MIN_HISTORY: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequentialConfig {
    pub alpha: f64,
    /// Maximum AR order; `None` uses `min(5, floor(len / 10))` at each step.
    pub p_max: Option<usize>,
}

impl SequentialConfig {
    pub fn new(alpha: f64) -> Self {
        Self { alpha, p_max: None }
    }
}

/// Intervals emitted for one test year.
#[derive(Debug, Clone, PartialEq)]
pub struct SequentialStep {
    pub year: i32,
    pub point: Vec<f64>,
    pub qhat: Vec<f64>,
    pub lb: Vec<f64>,
    pub ub: Vec<f64>,
    /// Selected AR order per age.
    pub orders: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequentialResult {
    pub steps: Vec<SequentialStep>,
    /// Number of (year, age) fits that fell back to order 0.
    pub fallbacks: usize,
}

struct AgeTrack {
    qhat: Vec<f64>,
    orders: Vec<usize>,
    fallbacks: usize,
}

fn run_age(history: Vec<f64>, points: &[f64], actuals: &[Option<f64>], cfg: &SequentialConfig) -> Result<AgeTrack> {
    let level = 1.0 - cfg.alpha;
    let mut r = history;
    let n = points.len();
    let mut out = AgeTrack { qhat: Vec::with_capacity(n), orders: Vec::with_capacity(n), fallbacks: 0 };
    for step in 0..n {
        let p = select_ar_order(&r, level, cfg.p_max)?;
        let model = fit_quantile_ar(&r, p, level)?;
        if model.fallback {
            out.fallbacks += 1;
        }
        let lags: Vec<f64> = r.iter().rev().take(model.order).copied().collect();
        out.qhat.push(predict_quantile(&model, &lags)?);
        out.orders.push(model.order);
        if let Some(a) = actuals[step] {
            r.push((a - points[step]).abs());
        }
    }
    Ok(out)
}

/// Runs the sequential loop over `years`.
///
/// `point_forecasts` and `history` are `n_test x J` and `eta x J`. History
/// holds past forecast residuals (their absolute values are used).
/// `actuals[l]` may be `None` only for the final year.
pub fn run_sequential(
    years: &[i32],
    point_forecasts: &DMatrix<f64>,
    actuals: &[Option<Vec<f64>>],
    history: &DMatrix<f64>,
    cfg: &SequentialConfig,
) -> Result<SequentialResult> {
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(Error::InvalidInput(format!("alpha must lie in (0, 1), got {}", cfg.alpha)));
    }
    let n = years.len();
    let j = point_forecasts.ncols();
    if n == 0 || point_forecasts.nrows() != n || actuals.len() != n {
        return Err(Error::InvalidInput(format!(
            "stream length mismatch: {} years, {} forecast rows, {} actuals",
            n,
            point_forecasts.nrows(),
            actuals.len()
        )));
    }
    if history.ncols() != j {
        return Err(Error::InvalidInput(format!("history has {} ages, forecasts have {}", history.ncols(), j)));
    }
    if history.nrows() < MIN_HISTORY {
        return Err(Error::InsufficientData {
            what: "sequential residual history",
            needed: MIN_HISTORY,
            got: history.nrows(),
        });
    }
    if history.iter().chain(point_forecasts.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("history and forecasts must be finite".into()));
    }
    for (step, a) in actuals.iter().enumerate() {
        match a {
            None if step + 1 < n => return Err(Error::Stream { year: years[step] }),
            Some(v) if v.len() != j => {
                return Err(Error::InvalidInput(format!(
                    "actual curve for {} has {} ages, expected {j}",
                    years[step],
                    v.len()
                )))
            }
            Some(v) if v.iter().any(|x| !x.is_finite()) => return Err(Error::Stream { year: years[step] }),
            _ => {}
        }
    }

    let per_age = |age: usize| -> Result<AgeTrack> {
        let hist: Vec<f64> = history.column(age).iter().map(|v| v.abs()).collect();
        let points: Vec<f64> = point_forecasts.column(age).iter().copied().collect();
        let acts: Vec<Option<f64>> = actuals.iter().map(|a| a.as_ref().map(|v| v[age])).collect();
        run_age(hist, &points, &acts, cfg)
    };

    #[cfg(feature = "parallel")]
    let tracks: Vec<AgeTrack> = {
        use rayon::prelude::*;
        (0..j).into_par_iter().map(per_age).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let tracks: Vec<AgeTrack> = (0..j).map(per_age).collect::<Result<_>>()?;

    let fallbacks = tracks.iter().map(|t| t.fallbacks).sum();
    let steps = (0..n)
        .map(|step| {
            let point: Vec<f64> = point_forecasts.row(step).iter().copied().collect();
            let qhat: Vec<f64> = tracks.iter().map(|t| t.qhat[step]).collect();
            SequentialStep {
                year: years[step],
                lb: point.iter().zip(&qhat).map(|(p, q)| p - q).collect(),
                ub: point.iter().zip(&qhat).map(|(p, q)| p + q).collect(),
                orders: tracks.iter().map(|t| t.orders[step]).collect(),
                point,
                qhat,
            }
        })
        .collect();
    Ok(SequentialResult { steps, fallbacks })
}
