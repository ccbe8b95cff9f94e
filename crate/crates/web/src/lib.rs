//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Each export generates a synthetic log-mortality surface, runs one piece of
//! the pipeline and returns a JSON string for the page to draw.

use fts_conformal::backtest::{run_backtest, BacktestConfig, MethodChoice};
use fts_conformal::fda::{fpca, KRule};
use fts_conformal::split::ScaleStat;
use fts_conformal::synth::{synth_generate, SynthSpec};
use fts_conformal::{Error, FunctionalSeries};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Largest surface the demo accepts, to keep the page responsive.
const MAX_YEARS: usize = 200;
const MAX_AGES: usize = 101;

#[derive(Debug, Clone, Copy)]
pub struct Surface {
    pub n_years: usize,
    pub n_ages: usize,
    pub k_true: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Surface {
    fn generate(&self) -> Result<FunctionalSeries, Error> {
        if self.n_years > MAX_YEARS || self.n_ages > MAX_AGES {
            return Err(Error::InvalidInput(format!("the demo is limited to {MAX_YEARS} years and {MAX_AGES} ages")));
        }
        let mut spec = SynthSpec::simple(self.n_years, self.n_ages, self.k_true, 0.5, 1.0, self.noise, self.seed);
        spec.first_year = 1921;
        synth_generate(&spec)
    }
}

#[derive(Debug, Serialize)]
pub struct FpcaView {
    pub first_year: i32,
    pub ages: Vec<f64>,
    pub curves: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    pub explained: Vec<f64>,
    pub k: usize,
    /// First `k` eigenfunctions, one vector per component.
    pub components: Vec<Vec<f64>>,
}

/// Eigen-structure of a synthetic surface. `k = 0` uses the eigenvalue-ratio rule.
pub fn fpca_view(surface: Surface, k: usize) -> Result<FpcaView, Error> {
    let s = surface.generate()?;
    let rule = if k == 0 { KRule::default() } else { KRule::Fixed(k) };
    let model = fpca(&s, rule)?;
    let total: f64 = model.eigenvalues.iter().sum();
    let shown = model.eigenvalues.len().min(10);
    Ok(FpcaView {
        first_year: s.first_year(),
        ages: s.grid().ages().to_vec(),
        curves: s.values().row_iter().map(|r| r.iter().copied().collect()).collect(),
        mean: model.mean.iter().copied().collect(),
        eigenvalues: model.eigenvalues[..shown].to_vec(),
        explained: model.eigenvalues[..shown].iter().map(|l| if total > 0.0 { l / total } else { 0.0 }).collect(),
        k: model.k,
        components: model.eigenfunctions.row_iter().map(|r| r.iter().copied().collect()).collect(),
    })
}

#[derive(Debug, Serialize)]
pub struct BandView {
    pub ages: Vec<f64>,
    pub origin: i32,
    pub target: i32,
    pub point: Vec<f64>,
    pub lb: Vec<f64>,
    pub ub: Vec<f64>,
    pub actual: Vec<f64>,
    pub xi_lower: f64,
    pub xi_upper: f64,
    /// Test coverage and mean width at this horizon.
    pub ecp: f64,
    pub mean_width: f64,
}

fn demo_config(method: MethodChoice, alpha: f64, h: usize) -> BacktestConfig {
    BacktestConfig { method, alphas: vec![alpha], max_horizon: Some(h), ..BacktestConfig::default() }
}

/// Split-conformal band for the last test target at horizon `h`.
pub fn split_band_view(surface: Surface, stat: &str, alpha: f64, h: usize) -> Result<BandView, Error> {
    let s = surface.generate()?;
    let stat: ScaleStat = stat.parse()?;
    let cfg = BacktestConfig { stats: vec![stat], ..demo_config(MethodChoice::Split, alpha, h) };
    let out = run_backtest(&s, &cfg)?;
    let report = &out.report.variants[0];
    let cal = report
        .calibrations
        .iter()
        .find(|c| c.horizon == h)
        .ok_or_else(|| Error::InvalidInput(format!("horizon {h} could not be calibrated")))?;
    let metrics = report
        .horizons
        .iter()
        .find(|m| m.h == h)
        .ok_or_else(|| Error::InvalidInput(format!("no test forecasts at horizon {h}")))?;
    let rec = out.intervals[0]
        .records
        .iter()
        .rfind(|r| r.h == h)
        .ok_or_else(|| Error::InvalidInput(format!("no test forecasts at horizon {h}")))?;
    Ok(BandView {
        ages: s.grid().ages().to_vec(),
        origin: rec.origin,
        target: rec.target,
        point: rec.point.clone(),
        lb: rec.lb.clone(),
        ub: rec.ub.clone(),
        actual: s.curve(rec.target).ok_or(Error::Alignment { year: rec.target })?,
        xi_lower: cal.xi.lower,
        xi_upper: cal.xi.upper,
        ecp: metrics.ecp,
        mean_width: metrics.mean_width,
    })
}

#[derive(Debug, Serialize)]
pub struct StreamView {
    pub age: f64,
    pub years: Vec<i32>,
    pub actual: Vec<f64>,
    pub point: Vec<f64>,
    pub lb: Vec<f64>,
    pub ub: Vec<f64>,
    /// Coverage over all ages up to and including each year.
    pub running_ecp: Vec<f64>,
}

/// One-step sequential intervals over the test years at one age index.
pub fn sequential_stream_view(surface: Surface, alpha: f64, age_index: usize) -> Result<StreamView, Error> {
    let s = surface.generate()?;
    if age_index >= s.n_ages() {
        return Err(Error::InvalidInput(format!("age index {age_index} is outside the grid")));
    }
    let out = run_backtest(&s, &demo_config(MethodChoice::Sequential, alpha, 1))?;
    let mut view = StreamView {
        age: s.grid().ages()[age_index],
        years: Vec::new(),
        actual: Vec::new(),
        point: Vec::new(),
        lb: Vec::new(),
        ub: Vec::new(),
        running_ecp: Vec::new(),
    };
    let (mut covered, mut cells) = (0usize, 0usize);
    for r in &out.intervals[0].records {
        let actual = s.curve(r.target).ok_or(Error::Alignment { year: r.target })?;
        covered += (0..actual.len()).filter(|&j| r.lb[j] <= actual[j] && actual[j] <= r.ub[j]).count();
        cells += actual.len();
        view.years.push(r.target);
        view.actual.push(actual[age_index]);
        view.point.push(r.point[age_index]);
        view.lb.push(r.lb[age_index]);
        view.ub.push(r.ub[age_index]);
        view.running_ecp.push(covered as f64 / cells as f64);
    }
    Ok(view)
}

fn to_js<T: Serialize>(r: Result<T, Error>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

fn surface(n_years: usize, n_ages: usize, k_true: usize, noise: f64, seed: u32) -> Surface {
    Surface { n_years, n_ages, k_true, noise, seed: u64::from(seed) }
}

#[wasm_bindgen]
pub fn fpca_explorer(
    n_years: usize,
    n_ages: usize,
    k_true: usize,
    noise: f64,
    seed: u32,
    k: usize,
) -> Result<String, JsError> {
    to_js(fpca_view(surface(n_years, n_ages, k_true, noise, seed), k))
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn split_band(
    n_years: usize,
    n_ages: usize,
    k_true: usize,
    noise: f64,
    seed: u32,
    stat: &str,
    alpha: f64,
    h: usize,
) -> Result<String, JsError> {
    to_js(split_band_view(surface(n_years, n_ages, k_true, noise, seed), stat, alpha, h))
}

#[wasm_bindgen]
pub fn sequential_stream(
    n_years: usize,
    n_ages: usize,
    k_true: usize,
    noise: f64,
    seed: u32,
    alpha: f64,
    age_index: usize,
) -> Result<String, JsError> {
    to_js(sequential_stream_view(surface(n_years, n_ages, k_true, noise, seed), alpha, age_index))
}
