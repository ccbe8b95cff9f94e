//! Interval evaluation: coverage, coverage gap, interval score and
//! six-number summaries over horizons.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{mean, quantile_sorted};

/// One evaluated cell: interval bounds and the realized value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub lb: f64,
    pub ub: f64,
    pub actual: f64,
}

impl Cell {
    pub fn covered(&self) -> bool {
        self.lb <= self.actual && self.actual <= self.ub
    }
}

/// Width plus `2/alpha` times the exceedance on either side.
pub fn interval_score(lb: f64, ub: f64, actual: f64, alpha: f64) -> Result<f64> {
    if lb > ub || lb.is_nan() || ub.is_nan() {
        return Err(Error::InvalidInterval { lb, ub });
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let penalty = 2.0 / alpha;
    let mut s = ub - lb;
    if actual < lb {
        s += penalty * (lb - actual);
    } else if actual > ub {
        s += penalty * (actual - ub);
    }
    Ok(s)
}

fn non_empty(cells: &[Cell]) -> Result<()> {
    if cells.is_empty() {
        return Err(Error::InsufficientData { what: "evaluation cells", needed: 1, got: 0 });
    }
    Ok(())
}

/// Fraction of cells with `lb <= actual <= ub`.
pub fn ecp(cells: &[Cell]) -> Result<f64> {
    non_empty(cells)?;
    Ok(cells.iter().filter(|c| c.covered()).count() as f64 / cells.len() as f64)
}

/// `|miscoverage - alpha|`, with below- and above-band exceedances pooled.
pub fn cpd(cells: &[Cell], alpha: f64) -> Result<f64> {
    non_empty(cells)?;
    let below = cells.iter().filter(|c| c.actual < c.lb).count();
    let above = cells.iter().filter(|c| c.actual > c.ub).count();
    let miss = (below + above) as f64 / cells.len() as f64;
    Ok((miss - alpha).abs())
}

pub fn mean_interval_score(cells: &[Cell], alpha: f64) -> Result<f64> {
    non_empty(cells)?;
    let mut total = 0.0;
    for c in cells {
        total += interval_score(c.lb, c.ub, c.actual, alpha)?;
    }
    Ok(total / cells.len() as f64)
}

pub fn mean_width(cells: &[Cell]) -> Result<f64> {
    non_empty(cells)?;
    Ok(cells.iter().map(|c| c.ub - c.lb).sum::<f64>() / cells.len() as f64)
}

/// Min, quartiles (type 7), median, mean and max.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SixNumber {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub mean: f64,
    pub q3: f64,
    pub max: f64,
}

impl SixNumber {
    pub fn as_array(&self) -> [f64; 6] {
        [self.min, self.q1, self.median, self.mean, self.q3, self.max]
    }
}

pub fn summarize_over_horizons(values: &[f64]) -> Result<SixNumber> {
    if values.is_empty() {
        return Err(Error::InsufficientData { what: "per-horizon values", needed: 1, got: 0 });
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidInput("per-horizon values contain NaN".into()));
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(SixNumber {
        min: s[0],
        q1: quantile_sorted(&s, 0.25),
        median: quantile_sorted(&s, 0.5),
        mean: mean(&s),
        q3: quantile_sorted(&s, 0.75),
        max: s[s.len() - 1],
    })
}

/// One row of the averaged-quantile table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgeQuantile {
    pub age: f64,
    pub h: usize,
    pub mean_qhat: f64,
}

/// Averages predicted half-widths over test years per (age, horizon).
///
/// `per_horizon[i] = (h, qhat)` where `qhat` is `n_years x J` in row-major
/// `Vec<Vec<f64>>` form.
pub fn averaged_predicted_quantiles(ages: &[f64], per_horizon: &[(usize, Vec<Vec<f64>>)]) -> Result<Vec<AgeQuantile>> {
    let mut out = Vec::with_capacity(ages.len() * per_horizon.len());
    for (h, rows) in per_horizon {
        if rows.is_empty() {
            return Err(Error::InsufficientData { what: "test years with predicted quantiles", needed: 1, got: 0 });
        }
        if rows.iter().any(|r| r.len() != ages.len()) {
            return Err(Error::InvalidInput(format!("predicted quantiles for h={h} do not match the age grid")));
        }
        for (j, &age) in ages.iter().enumerate() {
            let m = rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64;
            out.push(AgeQuantile { age, h: *h, mean_qhat: m });
        }
    }
    out.sort_by(|a, b| a.age.total_cmp(&b.age).then(a.h.cmp(&b.h)));
    Ok(out)
}
