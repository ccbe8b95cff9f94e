//! Split conformal calibration of scaled residual bands.
//!
//! Validation residual curves `eps_m(u)` for one horizon are summarized by a
//! pointwise scale function `gamma(u)`, and a multiplier `xi` is calibrated so
//! that the band `[-xi gamma(u), xi gamma(u)]` reaches coverage `1 - alpha` on
//! the validation residuals. The smallest such `xi` is an order statistic of
//! the per-item requirements `|eps|/gamma`, which is what a grid search over
//! `xi` converges to as the grid is refined.
//!
//! Two coverage notions are provided:
//!
//! * [`CoverageTarget::Band`]: a residual curve counts as covered only if it
//!   lies inside the band at every age ([`band_ecp`]).
//! * [`CoverageTarget::Pointwise`]: every (curve, age) cell counts separately
//!   ([`pointwise_ecp`]), the same notion the backtest metrics report.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fda::FunctionalSeries;
use crate::forecast::CurveForecast;
use crate::stats;

/// Relative floor applied to the scale function before dividing by it.
pub const GAMMA_RELATIVE_FLOOR: f64 = 1e-8;
/// Floor used when the scale function is identically zero.
pub const GAMMA_ABSOLUTE_FLOOR: f64 = 1e-12;

/// Validation residuals `actual - forecast` for one horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSet {
    pub horizon: usize,
    /// `M x J`, rows ordered by target year.
    pub residuals: DMatrix<f64>,
    pub origin_years: Vec<i32>,
    pub target_years: Vec<i32>,
}

impl ResidualSet {
    pub fn new(horizon: usize, residuals: DMatrix<f64>, origin_years: Vec<i32>) -> Result<Self> {
        if residuals.nrows() != origin_years.len() {
            return Err(Error::InvalidInput(format!(
                "{} residual rows but {} origin years",
                residuals.nrows(),
                origin_years.len()
            )));
        }
        if residuals.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("residuals must be finite".into()));
        }
        let target_years = origin_years.iter().map(|o| o + horizon as i32).collect();
        Ok(Self { horizon, residuals, origin_years, target_years })
    }

    pub fn len(&self) -> usize {
        self.residuals.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_ages(&self) -> usize {
        self.residuals.ncols()
    }
}

/// Residual curves for horizon `h` from every forecast that reaches it.
pub fn compute_residuals(actuals: &FunctionalSeries, forecasts: &[CurveForecast], h: usize) -> Result<ResidualSet> {
    let mut rows: Vec<(i32, i32, Vec<f64>)> = Vec::new();
    for fc in forecasts {
        let Some(pred) = fc.curve(h) else { continue };
        let target = fc.target_year(h);
        let actual = actuals.curve(target).ok_or(Error::Alignment { year: target })?;
        if actual.len() != pred.len() {
            return Err(Error::InvalidInput(format!(
                "forecast has {} ages, actuals have {}",
                pred.len(),
                actual.len()
            )));
        }
        let eps = actual.iter().zip(&pred).map(|(a, p)| a - p).collect();
        rows.push((target, fc.origin_year, eps));
    }
    rows.sort_by_key(|r| r.0);
    let j = actuals.n_ages();
    let mut residuals = DMatrix::zeros(rows.len(), j);
    for (m, (_, _, eps)) in rows.iter().enumerate() {
        for (c, v) in eps.iter().enumerate() {
            residuals[(m, c)] = *v;
        }
    }
    ResidualSet::new(h, residuals, rows.iter().map(|r| r.1).collect())
}

/// Pointwise spread statistic used as the band shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleStat {
    Sd,
    Iqr,
    Mad,
    Quantile,
}

impl ScaleStat {
    pub const ALL: [ScaleStat; 4] = [ScaleStat::Quantile, ScaleStat::Sd, ScaleStat::Iqr, ScaleStat::Mad];

    fn min_rows(self) -> usize {
        match self {
            ScaleStat::Quantile => 1,
            _ => 2,
        }
    }
}

impl fmt::Display for ScaleStat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScaleStat::Sd => "sd",
            ScaleStat::Iqr => "iqr",
            ScaleStat::Mad => "mad",
            ScaleStat::Quantile => "quantile",
        })
    }
}

impl FromStr for ScaleStat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sd" => Ok(ScaleStat::Sd),
            "iqr" => Ok(ScaleStat::Iqr),
            "mad" => Ok(ScaleStat::Mad),
            "quantile" | "quant" => Ok(ScaleStat::Quantile),
            other => Err(Error::InvalidInput(format!("unknown scale statistic '{other}'"))),
        }
    }
}

/// The band shape `gamma(u)` for one horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleFunction {
    pub stat: ScaleStat,
    pub alpha: f64,
    /// Raw statistic per age.
    pub gamma: Vec<f64>,
}

impl ScaleFunction {
    /// `gamma` with values below `1e-8 * max gamma` (or `1e-12` when gamma is
    /// identically zero) raised to that floor. Calibration and intervals both
    /// use this version.
    pub fn effective(&self) -> Vec<f64> {
        let max = self.gamma.iter().copied().fold(0.0, f64::max);
        let floor = if max > 0.0 { GAMMA_RELATIVE_FLOOR * max } else { GAMMA_ABSOLUTE_FLOOR };
        self.gamma.iter().map(|g| g.max(floor)).collect()
    }
}

/// Computes `gamma(u)` from the residual columns.
pub fn scale_function(residuals: &ResidualSet, stat: ScaleStat, alpha: f64) -> Result<ScaleFunction> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let m = residuals.len();
    if m < stat.min_rows() {
        return Err(Error::InsufficientData { what: "scale function", needed: stat.min_rows(), got: m });
    }
    let gamma = residuals
        .residuals
        .column_iter()
        .map(|col| {
            let v: Vec<f64> = col.iter().copied().collect();
            match stat {
                ScaleStat::Sd => Ok(stats::sample_sd(&v)),
                ScaleStat::Iqr => stats::iqr(&v),
                ScaleStat::Mad => stats::mad(&v),
                ScaleStat::Quantile => {
                    let abs: Vec<f64> = v.iter().map(|x| x.abs()).collect();
                    stats::quantile(&abs, 1.0 - alpha)
                }
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(ScaleFunction { stat, alpha, gamma })
}

/// Upper and lower exceedance ratios of one residual value.
#[inline]
fn ratios(eps: f64, gamma: f64) -> (f64, f64) {
    (eps.max(0.0) / gamma, (-eps).max(0.0) / gamma)
}

/// Per-curve requirements `(max_u eps+/gamma, max_u eps-/gamma)`.
fn row_requirements(residuals: &ResidualSet, gamma: &[f64]) -> Vec<(f64, f64)> {
    residuals
        .residuals
        .row_iter()
        .map(|row| {
            row.iter().zip(gamma).fold((0.0f64, 0.0f64), |(up, lo), (e, g)| {
                let (u, l) = ratios(*e, *g);
                (up.max(u), lo.max(l))
            })
        })
        .collect()
}

fn cell_requirements(residuals: &ResidualSet, gamma: &[f64]) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(residuals.residuals.len());
    for row in residuals.residuals.row_iter() {
        out.extend(row.iter().zip(gamma).map(|(e, g)| ratios(*e, *g)));
    }
    out
}

fn covered_fraction(reqs: &[(f64, f64)], xi_lo: f64, xi_hi: f64) -> f64 {
    if reqs.is_empty() {
        return 0.0;
    }
    let covered = reqs.iter().filter(|(up, lo)| *up <= xi_hi && *lo <= xi_lo).count();
    covered as f64 / reqs.len() as f64
}

/// Fraction of residual curves lying inside `[-xi_lo gamma, xi_hi gamma]` at
/// every age simultaneously.
pub fn band_ecp(residuals: &ResidualSet, scale: &ScaleFunction, xi_lo: f64, xi_hi: f64) -> f64 {
    covered_fraction(&row_requirements(residuals, &scale.effective()), xi_lo, xi_hi)
}

/// Fraction of (curve, age) cells inside `[-xi_lo gamma(u), xi_hi gamma(u)]`.
pub fn pointwise_ecp(residuals: &ResidualSet, scale: &ScaleFunction, xi_lo: f64, xi_hi: f64) -> f64 {
    covered_fraction(&cell_requirements(residuals, &scale.effective()), xi_lo, xi_hi)
}

/// `k`-th smallest value (1-based) of `values`.
fn order_statistic(mut values: Vec<f64>, k: usize, horizon: usize) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::NonCalibrable { horizon, reason: "no residuals".into() });
    }
    values.sort_by(f64::total_cmp);
    let v = values[k.max(1) - 1];
    if !v.is_finite() {
        return Err(Error::NonCalibrable { horizon, reason: "required multiplier is not finite".into() });
    }
    Ok(v)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

fn symmetric(reqs: Vec<(f64, f64)>, level: f64, horizon: usize) -> Result<f64> {
    let k = stats::required_count(level, reqs.len());
    order_statistic(reqs.into_iter().map(|(u, l)| u.max(l)).collect(), k, horizon)
}

fn per_tail(reqs: Vec<(f64, f64)>, alpha: f64, horizon: usize) -> Result<XiPair> {
    let k = stats::required_count(1.0 - alpha / 2.0, reqs.len());
    let upper = order_statistic(reqs.iter().map(|r| r.0).collect(), k, horizon)?;
    let lower = order_statistic(reqs.iter().map(|r| r.1).collect(), k, horizon)?;
    Ok(XiPair { lower, upper })
}

/// Smallest `xi >= 0` with `band_ecp(xi, xi) >= 1 - alpha`.
pub fn calibrate_xi(residuals: &ResidualSet, scale: &ScaleFunction, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    symmetric(row_requirements(residuals, &scale.effective()), 1.0 - alpha, residuals.horizon)
}

/// Lower and upper multipliers, each tail calibrated separately at `alpha / 2`
/// on whole curves.
pub fn calibrate_xi_pair(residuals: &ResidualSet, scale: &ScaleFunction, alpha: f64) -> Result<XiPair> {
    check_alpha(alpha)?;
    per_tail(row_requirements(residuals, &scale.effective()), alpha, residuals.horizon)
}

/// Smallest `xi >= 0` with `pointwise_ecp(xi, xi) >= 1 - alpha`.
pub fn calibrate_xi_pointwise(residuals: &ResidualSet, scale: &ScaleFunction, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    symmetric(cell_requirements(residuals, &scale.effective()), 1.0 - alpha, residuals.horizon)
}

/// Per-tail pointwise calibration at `alpha / 2` each.
pub fn calibrate_xi_pair_pointwise(residuals: &ResidualSet, scale: &ScaleFunction, alpha: f64) -> Result<XiPair> {
    check_alpha(alpha)?;
    per_tail(cell_requirements(residuals, &scale.effective()), alpha, residuals.horizon)
}

/// L2 isotonic (nondecreasing) regression by pool-adjacent-violators.
pub fn isotonic_smooth_xi(values: &[f64]) -> Vec<f64> {
    // blocks of (sum, count)
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &v in values {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (s1, c1) = blocks[blocks.len() - 1];
            let (s0, c0) = blocks[blocks.len() - 2];
            if s0 / c0 as f64 > s1 / c1 as f64 {
                blocks.pop();
                let last = blocks.len() - 1;
                blocks[last] = (s0 + s1, c0 + c1);
            } else {
                break;
            }
        }
    }
    blocks.into_iter().flat_map(|(s, c)| std::iter::repeat_n(s / c as f64, c)).collect()
}

/// Band multipliers below and above the point forecast.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XiPair {
    pub lower: f64,
    pub upper: f64,
}

impl XiPair {
    pub fn symmetric(xi: f64) -> Self {
        Self { lower: xi, upper: xi }
    }
}

/// `[forecast - xi_lo gamma, forecast + xi_hi gamma]`.
pub fn predict_interval_split(
    forecast: &[f64],
    scale: &ScaleFunction,
    xi_lo: f64,
    xi_hi: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(xi_lo >= 0.0 && xi_hi >= 0.0) {
        return Err(Error::InvalidInput(format!("band multipliers must be nonnegative, got ({xi_lo}, {xi_hi})")));
    }
    if forecast.len() != scale.gamma.len() {
        return Err(Error::InvalidInput(format!(
            "forecast has {} ages, scale function has {}",
            forecast.len(),
            scale.gamma.len()
        )));
    }
    let gamma = scale.effective();
    let lb = forecast.iter().zip(&gamma).map(|(f, g)| f - xi_lo * g).collect();
    let ub = forecast.iter().zip(&gamma).map(|(f, g)| f + xi_hi * g).collect();
    Ok((lb, ub))
}

/// Whether the tuning parameter is a single symmetric multiplier or a pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tuning {
    #[default]
    Single,
    Double,
}

impl FromStr for Tuning {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "single" => Ok(Tuning::Single),
            "double" => Ok(Tuning::Double),
            other => Err(Error::InvalidInput(format!("unknown tuning mode '{other}'"))),
        }
    }
}

/// Which coverage the calibration targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoverageTarget {
    /// Whole curves inside the band at every age.
    Band,
    /// Individual (curve, age) cells.
    #[default]
    Pointwise,
}

impl FromStr for CoverageTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "band" => Ok(CoverageTarget::Band),
            "pointwise" => Ok(CoverageTarget::Pointwise),
            other => Err(Error::InvalidInput(format!("unknown coverage target '{other}'"))),
        }
    }
}

/// Calibration result for one horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonCalibration {
    pub horizon: usize,
    pub n_curves: usize,
    pub scale: ScaleFunction,
    pub xi: XiPair,
    /// Validation coverage at `xi`, measured with the calibration target.
    pub achieved_ecp: f64,
}

/// Scale function plus tuning parameter(s) for one horizon.
pub fn calibrate_horizon(
    residuals: &ResidualSet,
    stat: ScaleStat,
    alpha: f64,
    tuning: Tuning,
    target: CoverageTarget,
) -> Result<HorizonCalibration> {
    let scale = scale_function(residuals, stat, alpha)?;
    let xi = match (tuning, target) {
        (Tuning::Single, CoverageTarget::Band) => XiPair::symmetric(calibrate_xi(residuals, &scale, alpha)?),
        (Tuning::Single, CoverageTarget::Pointwise) => {
            XiPair::symmetric(calibrate_xi_pointwise(residuals, &scale, alpha)?)
        }
        (Tuning::Double, CoverageTarget::Band) => calibrate_xi_pair(residuals, &scale, alpha)?,
        (Tuning::Double, CoverageTarget::Pointwise) => calibrate_xi_pair_pointwise(residuals, &scale, alpha)?,
    };
    let achieved_ecp = match target {
        CoverageTarget::Band => band_ecp(residuals, &scale, xi.lower, xi.upper),
        CoverageTarget::Pointwise => pointwise_ecp(residuals, &scale, xi.lower, xi.upper),
    };
    Ok(HorizonCalibration { horizon: residuals.horizon, n_curves: residuals.len(), scale, xi, achieved_ecp })
}
