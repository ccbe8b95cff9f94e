//! h-step-ahead curve forecasts from an FPCA model.
//!
//! Each score series is forecast independently with [`fit_ets`] and the curves
//! are assembled as `mean(u) + sum_k beta_hat[k, h] * phi_k(u)`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::ets::{fit_ets, EtsFit, EtsKind};
use crate::fda::FpcaModel;

/// Point forecasts for horizons `1..=H` made at `origin_year`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveForecast {
    pub origin_year: i32,
    /// `H x J`; row `h - 1` is the `h`-step-ahead curve.
    pub curves: DMatrix<f64>,
    /// `K x H`.
    pub score_forecasts: DMatrix<f64>,
    pub fits: Vec<EtsFit>,
}

impl CurveForecast {
    pub fn horizons(&self) -> usize {
        self.curves.nrows()
    }

    /// The `h`-step-ahead curve, if `1 <= h <= H`.
    pub fn curve(&self, h: usize) -> Option<Vec<f64>> {
        (h >= 1 && h <= self.horizons()).then(|| self.curves.row(h - 1).iter().copied().collect())
    }

    pub fn target_year(&self, h: usize) -> i32 {
        self.origin_year + h as i32
    }
}

/// Forecasts every score column of `model` `horizon` steps ahead and
/// assembles the curves. The origin is the last year of the model.
pub fn forecast_curves(model: &FpcaModel, horizon: usize, family: &[EtsKind]) -> Result<CurveForecast> {
    if horizon == 0 {
        return Err(Error::InvalidInput("forecast horizon must be at least 1".into()));
    }
    let k = model.k;
    let mut score_forecasts = DMatrix::zeros(k, horizon);
    let mut fits = Vec::with_capacity(k);
    for c in 0..k {
        let column: Vec<f64> = model.scores.column(c).iter().copied().collect();
        let fit = fit_ets(&column, family)?;
        for (h, v) in fit.forecast(horizon)?.into_iter().enumerate() {
            score_forecasts[(c, h)] = v;
        }
        fits.push(fit);
    }
    let mut curves = DMatrix::zeros(horizon, model.n_ages());
    for h in 0..horizon {
        let scores: Vec<f64> = score_forecasts.column(h).iter().copied().collect();
        let curve = model.reconstruct(&scores)?;
        curves.row_mut(h).copy_from(&curve.transpose());
    }
    Ok(CurveForecast { origin_year: model.last_year(), curves, score_forecasts, fits })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fda::{fpca, AgeGrid, FunctionalSeries, KRule};

    fn linear_world() -> FunctionalSeries {
        // x_t = mu + t * v with a single direction v
        let grid = AgeGrid::integer(4).unwrap();
        let mu = [-1.0, -2.0, -3.0, -2.5];
        let v = [0.5, 0.2, -0.1, 0.3];
        let n = 12;
        let mut m = DMatrix::zeros(n, 4);
        for t in 0..n {
            for j in 0..4 {
                m[(t, j)] = mu[j] + t as f64 * v[j];
            }
        }
        FunctionalSeries::new(grid, 1990, m).unwrap()
    }

    #[test]
    fn linear_scores_extrapolate_along_the_component() {
        let s = linear_world();
        let model = fpca(&s, KRule::Fixed(1)).unwrap();
        let fc = forecast_curves(&model, 3, &[EtsKind::Aan]).unwrap();
        assert_eq!(fc.origin_year, 2001);
        for h in 1..=3 {
            let beta = fc.score_forecasts[(0, h - 1)];
            let hand: Vec<f64> = (0..4).map(|j| model.mean[j] + beta * model.eigenfunctions[(0, j)]).collect();
            for (a, b) in fc.curve(h).unwrap().iter().zip(&hand) {
                assert!((a - b).abs() < 1e-10);
            }
            // and the line keeps going
            let truth = s.values().row(11)[0] + h as f64 * 0.5;
            assert!((fc.curves[(h - 1, 0)] - truth).abs() < 1e-4);
        }
    }

    #[test]
    fn horizon_prefix_consistency() {
        let s = linear_world();
        let model = fpca(&s, KRule::Fixed(2)).unwrap();
        let one = forecast_curves(&model, 1, &EtsKind::ALL).unwrap();
        let five = forecast_curves(&model, 5, &EtsKind::ALL).unwrap();
        assert_eq!(one.curves.row(0), five.curves.row(0));
        assert!(forecast_curves(&model, 0, &EtsKind::ALL).is_err());
    }
}
