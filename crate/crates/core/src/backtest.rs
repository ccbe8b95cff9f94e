//! Rolling-origin backtests over a train / validation / test split.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ets::EtsKind;
use crate::fda::{fpca, FpcaModel, FunctionalSeries, KRule};
use crate::forecast::{forecast_curves, CurveForecast};
use crate::metrics::{
    averaged_predicted_quantiles, cpd, ecp, mean_interval_score, mean_width, summarize_over_horizons, AgeQuantile,
    Cell, SixNumber,
};
use crate::sequential::{run_sequential, SequentialConfig};
use crate::split::{
    calibrate_horizon, compute_residuals, isotonic_smooth_xi, predict_interval_split, CoverageTarget,
    HorizonCalibration, ScaleStat, Tuning, XiPair,
};

/// Smallest window the models are fitted on.
pub const MIN_WINDOW: usize = 4;
/// Horizon cap used when none is configured.
pub const DEFAULT_MAX_HORIZON: usize = 20;

/// An inclusive range of years.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct YearRange {
    pub start: i32,
    pub end: i32,
}

impl YearRange {
    pub fn new(start: i32, end: i32) -> Result<Self> {
        if start > end {
            return Err(Error::InvalidInput(format!("empty year range {start}:{end}")));
        }
        Ok(Self { start, end })
    }

    pub fn len(&self) -> usize {
        (self.end - self.start + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, year: i32) -> bool {
        self.start <= year && year <= self.end
    }
}

impl fmt::Display for YearRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.start, self.end)
    }
}

/// Three consecutive, disjoint year ranges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: YearRange,
    pub validation: YearRange,
    pub test: YearRange,
}

impl SplitSpec {
    pub fn new(train: YearRange, validation: YearRange, test: YearRange) -> Result<Self> {
        if validation.start != train.end + 1 || test.start != validation.end + 1 {
            return Err(Error::InvalidInput(format!(
                "split ranges must be consecutive: {train}, {validation}, {test}"
            )));
        }
        if train.len() < MIN_WINDOW {
            return Err(Error::InsufficientData { what: "training years", needed: MIN_WINDOW, got: train.len() });
        }
        Ok(Self { train, validation, test })
    }

    /// `floor(0.6 n)` training years, `floor(0.2 n)` test years and the
    /// remainder for validation. 1921..2021 gives 60 / 21 / 20.
    pub fn auto(first_year: i32, last_year: i32) -> Result<Self> {
        let n = (last_year - first_year + 1).max(0) as usize;
        let train = n * 6 / 10;
        let test = n * 2 / 10;
        let validation = n.saturating_sub(train + test);
        if train < MIN_WINDOW || validation == 0 || test == 0 {
            return Err(Error::InsufficientData { what: "years for an automatic split", needed: 10, got: n });
        }
        let t_end = first_year + train as i32 - 1;
        let v_end = t_end + validation as i32;
        Self::new(
            YearRange::new(first_year, t_end)?,
            YearRange::new(t_end + 1, v_end)?,
            YearRange::new(v_end + 1, last_year)?,
        )
    }

    pub fn sample(&self) -> YearRange {
        YearRange { start: self.train.start, end: self.test.end }
    }

    pub fn phase(&self, phase: Phase) -> YearRange {
        match phase {
            Phase::Validation => self.validation,
            Phase::Test => self.test,
        }
    }

    /// Checks the split against the years present in `series`.
    pub fn check_against(&self, series: &FunctionalSeries) -> Result<()> {
        if self.train.start < series.first_year() || self.test.end > series.last_year() {
            return Err(Error::InvalidInput(format!(
                "split {}..{} exceeds the data years {}..{}",
                self.train.start,
                self.test.end,
                series.first_year(),
                series.last_year()
            )));
        }
        Ok(())
    }
}

impl FromStr for SplitSpec {
    type Err = Error;

    /// Parses `Y1:Y2,Y3:Y4,Y5:Y6`.
    fn from_str(s: &str) -> Result<Self> {
        let ranges: Vec<YearRange> = s
            .split(',')
            .map(|part| {
                let (a, b) = part
                    .trim()
                    .split_once(':')
                    .ok_or_else(|| Error::InvalidInput(format!("bad year range '{part}'")))?;
                let parse = |v: &str| {
                    v.trim().parse::<i32>().map_err(|_| Error::InvalidInput(format!("bad year '{v}' in '{part}'")))
                };
                YearRange::new(parse(a)?, parse(b)?)
            })
            .collect::<Result<_>>()?;
        match ranges.as_slice() {
            [t, v, e] => SplitSpec::new(*t, *v, *e),
            _ => Err(Error::InvalidInput(format!("expected three year ranges, got '{s}'"))),
        }
    }
}

impl fmt::Display for SplitSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.train, self.validation, self.test)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Validation,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeKind {
    #[default]
    Expanding,
    Rolling,
}

impl FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "expanding" => Ok(SchemeKind::Expanding),
            "rolling" => Ok(SchemeKind::Rolling),
            other => Err(Error::InvalidInput(format!("unknown window scheme '{other}'"))),
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SchemeKind::Expanding => "expanding",
            SchemeKind::Rolling => "rolling",
        })
    }
}

/// Expanding or rolling training windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WindowScheme {
    pub kind: SchemeKind,
    /// Rolling window length. By default the first window of each phase,
    /// i.e. every year from the sample start up to the first origin.
    pub rolling_length: Option<usize>,
}

impl WindowScheme {
    pub fn expanding() -> Self {
        Self { kind: SchemeKind::Expanding, rolling_length: None }
    }

    pub fn rolling(length: Option<usize>) -> Self {
        Self { kind: SchemeKind::Rolling, rolling_length: length }
    }
}

/// One forecast origin: the model is fitted on `train` and forecasts
/// `target = origin + h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Origin {
    pub train: YearRange,
    pub origin: i32,
    pub target: i32,
}

fn train_window(scheme: &WindowScheme, split: &SplitSpec, phase: Phase, origin: i32) -> Result<YearRange> {
    let sample_start = split.train.start;
    match scheme.kind {
        SchemeKind::Expanding => YearRange::new(sample_start, origin),
        SchemeKind::Rolling => {
            let default_len = (split.phase(phase).start - sample_start) as usize;
            let len = scheme.rolling_length.unwrap_or(default_len);
            if len < MIN_WINDOW {
                return Err(Error::InvalidInput(format!("rolling window length {len} is below {MIN_WINDOW}")));
            }
            let start = origin - len as i32 + 1;
            if start < sample_start {
                return Err(Error::InvalidInput(format!(
                    "rolling window of {len} years ending {origin} starts before the sample"
                )));
            }
            YearRange::new(start, origin)
        }
    }
}

/// Origins whose `h`-step targets fall inside `phase`. They run from the
/// year before the phase starts to `phase end - h`; an empty list means no
/// such origin exists.
pub fn make_origins(scheme: &WindowScheme, split: &SplitSpec, phase: Phase, h: usize) -> Result<Vec<Origin>> {
    if h == 0 {
        return Err(Error::InvalidInput("horizon must be at least 1".into()));
    }
    let range = split.phase(phase);
    let first = range.start - 1;
    let last = range.end - h as i32;
    (first..=last)
        .map(|origin| {
            Ok(Origin { train: train_window(scheme, split, phase, origin)?, origin, target: origin + h as i32 })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodChoice {
    #[default]
    Split,
    Sequential,
    Both,
}

impl MethodChoice {
    pub fn methods(self) -> Vec<Method> {
        match self {
            MethodChoice::Split => vec![Method::Split],
            MethodChoice::Sequential => vec![Method::Sequential],
            MethodChoice::Both => vec![Method::Split, Method::Sequential],
        }
    }
}

impl FromStr for MethodChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "split" => Ok(MethodChoice::Split),
            "sequential" => Ok(MethodChoice::Sequential),
            "both" => Ok(MethodChoice::Both),
            other => Err(Error::InvalidInput(format!("unknown method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Split,
    Sequential,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Split => "split",
            Method::Sequential => "sequential",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestConfig {
    pub method: MethodChoice,
    /// Scale statistics for the split method.
    pub stats: Vec<ScaleStat>,
    pub alphas: Vec<f64>,
    pub scheme: WindowScheme,
    pub k_rule: KRule,
    /// Explicit split; `None` derives it from the data years.
    pub split: Option<SplitSpec>,
    pub tuning: Tuning,
    pub isotonic: bool,
    pub coverage: CoverageTarget,
    /// Largest horizon; `None` uses `min(20, test length)`.
    pub max_horizon: Option<usize>,
    pub family: Vec<EtsKind>,
    /// Refit FPCA at every test origin for the sequential point forecasts;
    /// when false it is frozen at the first test origin.
    pub refresh_fpca: bool,
    pub ar_p_max: Option<usize>,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            method: MethodChoice::Split,
            stats: vec![ScaleStat::Sd],
            alphas: vec![0.2],
            scheme: WindowScheme::expanding(),
            k_rule: KRule::default(),
            split: None,
            tuning: Tuning::Single,
            isotonic: false,
            coverage: CoverageTarget::Pointwise,
            max_horizon: None,
            family: EtsKind::ALL.to_vec(),
            refresh_fpca: true,
            ar_p_max: None,
        }
    }
}

impl BacktestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() {
            return Err(Error::InvalidInput("at least one alpha is required".into()));
        }
        if let Some(a) = self.alphas.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
            return Err(Error::InvalidInput(format!("alpha must lie in (0, 1), got {a}")));
        }
        if self.method != MethodChoice::Sequential && self.stats.is_empty() {
            return Err(Error::InvalidInput("the split method needs at least one scale statistic".into()));
        }
        if self.family.is_empty() {
            return Err(Error::InvalidInput("the ETS family is empty".into()));
        }
        if self.max_horizon == Some(0) {
            return Err(Error::InvalidInput("horizon must be at least 1".into()));
        }
        Ok(())
    }

    pub fn resolve_split(&self, series: &FunctionalSeries) -> Result<SplitSpec> {
        let split = match self.split {
            Some(s) => s,
            None => SplitSpec::auto(series.first_year(), series.last_year())?,
        };
        split.check_against(series)?;
        Ok(split)
    }

    pub fn resolve_horizons(&self, split: &SplitSpec) -> usize {
        self.max_horizon.unwrap_or(DEFAULT_MAX_HORIZON).min(split.test.len())
    }
}

/// One interval forecast curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalRecord {
    pub origin: i32,
    pub target: i32,
    pub h: usize,
    pub point: Vec<f64>,
    pub lb: Vec<f64>,
    pub ub: Vec<f64>,
}

/// Identifies one method / level / statistic combination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub method: Method,
    pub alpha: f64,
    /// `None` for the sequential method.
    pub stat: Option<ScaleStat>,
}

impl Variant {
    pub fn stat_label(&self) -> String {
        self.stat.map_or_else(|| "none".to_string(), |s| s.to_string())
    }

    /// Directory-safe name, e.g. `split-sd-alpha0.2`.
    pub fn slug(&self) -> String {
        format!("{}-{}-alpha{}", self.method, self.stat_label(), self.alpha)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalForecastSet {
    pub variant: Variant,
    pub ages: Vec<f64>,
    pub records: Vec<IntervalRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetrics {
    pub h: usize,
    pub n_cells: usize,
    pub ecp: f64,
    pub cpd: f64,
    pub mean_width: f64,
    pub mean_interval_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedHorizon {
    pub h: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: String,
    pub summary: SixNumber,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub variant: Variant,
    pub horizons: Vec<HorizonMetrics>,
    pub summaries: Vec<MetricSummary>,
    /// Split method only.
    pub calibrations: Vec<HorizonCalibration>,
    pub skipped: Vec<SkippedHorizon>,
    /// Mean half-width per (age, h) over test years: the predicted quantile
    /// for the sequential method, `xi * gamma` for the split method.
    pub quantiles: Vec<AgeQuantile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub split: SplitSpec,
    pub max_horizon: usize,
    pub config: BacktestConfig,
    pub variants: Vec<VariantReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestOutput {
    pub report: BacktestReport,
    pub intervals: Vec<IntervalForecastSet>,
}

/// Per-origin forecasts for one phase, indexed by `origin - first`.
struct PhaseForecasts {
    first: i32,
    forecasts: Vec<CurveForecast>,
}

impl PhaseForecasts {
    fn get(&self, origin: i32) -> &CurveForecast {
        &self.forecasts[(origin - self.first) as usize]
    }
}

fn forecast_at(series: &FunctionalSeries, window: YearRange, cfg: &BacktestConfig, h: usize) -> Result<CurveForecast> {
    let train = series.slice_years(window.start, window.end)?;
    let model = fpca(&train, cfg.k_rule)?;
    forecast_curves(&model, h, &cfg.family)
}

fn map_origins<T: Send>(origins: Vec<i32>, f: impl Fn(i32) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        origins.into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        origins.into_iter().map(f).collect()
    }
}

fn phase_forecasts(
    series: &FunctionalSeries,
    split: &SplitSpec,
    phase: Phase,
    cfg: &BacktestConfig,
    h_max: usize,
    frozen: Option<&FpcaModel>,
) -> Result<PhaseForecasts> {
    let origins = make_origins(&cfg.scheme, split, phase, 1)?;
    let first = origins[0].origin;
    let forecasts = map_origins(origins.iter().map(|o| o.origin).collect(), |origin| {
        let window = train_window(&cfg.scheme, split, phase, origin)?;
        match frozen {
            Some(model) => {
                let train = series.slice_years(window.start, window.end)?;
                forecast_curves(&model.rescore(&train)?, h_max, &cfg.family)
            }
            None => forecast_at(series, window, cfg, h_max),
        }
    })?;
    Ok(PhaseForecasts { first, forecasts })
}

fn curve_of(series: &FunctionalSeries, year: i32) -> Result<Vec<f64>> {
    series.curve(year).ok_or(Error::Alignment { year })
}

fn evaluate(
    series: &FunctionalSeries,
    records: &[IntervalRecord],
    h: usize,
    alpha: f64,
) -> Result<Option<HorizonMetrics>> {
    let mut cells = Vec::new();
    for r in records.iter().filter(|r| r.h == h) {
        let actual = curve_of(series, r.target)?;
        for ((lb, ub), a) in r.lb.iter().zip(&r.ub).zip(&actual) {
            cells.push(Cell { lb: *lb, ub: *ub, actual: *a });
        }
    }
    if cells.is_empty() {
        return Ok(None);
    }
    Ok(Some(HorizonMetrics {
        h,
        n_cells: cells.len(),
        ecp: ecp(&cells)?,
        cpd: cpd(&cells, alpha)?,
        mean_width: mean_width(&cells)?,
        mean_interval_score: mean_interval_score(&cells, alpha)?,
    }))
}

fn summaries(horizons: &[HorizonMetrics]) -> Result<Vec<MetricSummary>> {
    if horizons.is_empty() {
        return Ok(Vec::new());
    }
    let pick: [(&str, fn(&HorizonMetrics) -> f64); 4] = [
        ("ecp", |m| m.ecp),
        ("cpd", |m| m.cpd),
        ("mean_width", |m| m.mean_width),
        ("mean_interval_score", |m| m.mean_interval_score),
    ];
    pick.iter()
        .map(|(name, f)| {
            let values: Vec<f64> = horizons.iter().map(f).collect();
            Ok(MetricSummary { metric: name.to_string(), summary: summarize_over_horizons(&values)? })
        })
        .collect()
}

/// Calibrates every horizon for one (statistic, alpha) pair. Horizons that
/// cannot be calibrated are returned separately.
pub fn calibrate_horizons(
    series: &FunctionalSeries,
    validation: &[CurveForecast],
    h_max: usize,
    stat: ScaleStat,
    alpha: f64,
    cfg: &BacktestConfig,
    split: &SplitSpec,
) -> Result<(Vec<HorizonCalibration>, Vec<SkippedHorizon>)> {
    let mut cals = Vec::new();
    let mut skipped = Vec::new();
    for h in 1..=h_max {
        let reaching: Vec<CurveForecast> =
            validation.iter().filter(|f| split.validation.contains(f.target_year(h))).cloned().collect();
        if reaching.is_empty() {
            skipped.push(SkippedHorizon { h, reason: "no validation forecast reaches this horizon".into() });
            continue;
        }
        let res = compute_residuals(series, &reaching, h)?;
        match calibrate_horizon(&res, stat, alpha, cfg.tuning, cfg.coverage) {
            Ok(c) => cals.push(c),
            Err(e @ (Error::NonCalibrable { .. } | Error::InsufficientData { .. })) => {
                skipped.push(SkippedHorizon { h, reason: e.to_string() })
            }
            Err(e) => return Err(e),
        }
    }
    if cfg.isotonic && !cals.is_empty() {
        let lower = isotonic_smooth_xi(&cals.iter().map(|c| c.xi.lower).collect::<Vec<_>>());
        let upper = isotonic_smooth_xi(&cals.iter().map(|c| c.xi.upper).collect::<Vec<_>>());
        for (c, (lo, hi)) in cals.iter_mut().zip(lower.into_iter().zip(upper)) {
            c.xi = XiPair { lower: lo, upper: hi };
        }
    }
    Ok((cals, skipped))
}

fn split_variant(
    series: &FunctionalSeries,
    split: &SplitSpec,
    cfg: &BacktestConfig,
    h_max: usize,
    val: &PhaseForecasts,
    test: &PhaseForecasts,
    variant: Variant,
) -> Result<(VariantReport, IntervalForecastSet)> {
    let stat = variant.stat.expect("split variants carry a statistic");
    let (calibrations, skipped) = calibrate_horizons(series, &val.forecasts, h_max, stat, variant.alpha, cfg, split)?;
    let mut records = Vec::new();
    for cal in &calibrations {
        let h = cal.horizon;
        for o in make_origins(&cfg.scheme, split, Phase::Test, h)? {
            let fc = test.get(o.origin);
            let point = fc.curve(h).expect("forecast covers the horizon");
            let (lb, ub) = predict_interval_split(&point, &cal.scale, cal.xi.lower, cal.xi.upper)?;
            records.push(IntervalRecord { origin: o.origin, target: o.target, h, point, lb, ub });
        }
    }
    let mut horizons = Vec::new();
    let mut half_widths = Vec::new();
    for cal in &calibrations {
        if let Some(m) = evaluate(series, &records, cal.horizon, variant.alpha)? {
            horizons.push(m);
        }
        let rows: Vec<Vec<f64>> = records
            .iter()
            .filter(|r| r.h == cal.horizon)
            .map(|r| r.lb.iter().zip(&r.ub).map(|(l, u)| 0.5 * (u - l)).collect())
            .collect();
        if !rows.is_empty() {
            half_widths.push((cal.horizon, rows));
        }
    }
    let report = VariantReport {
        variant,
        summaries: summaries(&horizons)?,
        horizons,
        calibrations,
        skipped,
        quantiles: averaged_predicted_quantiles(series.grid().ages(), &half_widths)?,
    };
    let set = IntervalForecastSet { variant, ages: series.grid().ages().to_vec(), records };
    Ok((report, set))
}

/// Residual history and test stream for the sequential method at one horizon.
struct SequentialInputs {
    origins: Vec<i32>,
    history: DMatrix<f64>,
    points: DMatrix<f64>,
    actuals: Vec<Option<Vec<f64>>>,
}

fn sequential_inputs(
    series: &FunctionalSeries,
    split: &SplitSpec,
    cfg: &BacktestConfig,
    h: usize,
    val: &PhaseForecasts,
    test: &PhaseForecasts,
) -> Result<SequentialInputs> {
    let j = series.n_ages();
    // every validation origin contributes its h-step residual, so each
    // residual used at target year l was realized before l
    let hist_origins: Vec<i32> = (split.validation.start - 1..split.test.start - 1).collect();
    let mut history = DMatrix::zeros(hist_origins.len(), j);
    for (row, &o) in hist_origins.iter().enumerate() {
        let fc = val.get(o);
        let point = fc.curve(h).expect("forecast covers the horizon");
        let actual = curve_of(series, o + h as i32)?;
        for c in 0..j {
            history[(row, c)] = actual[c] - point[c];
        }
    }
    let origins: Vec<i32> = make_origins(&cfg.scheme, split, Phase::Test, h)?.iter().map(|o| o.origin).collect();
    let mut points = DMatrix::zeros(origins.len(), j);
    let mut actuals = Vec::with_capacity(origins.len());
    for (row, &o) in origins.iter().enumerate() {
        let point = test.get(o).curve(h).expect("forecast covers the horizon");
        for c in 0..j {
            points[(row, c)] = point[c];
        }
        actuals.push(series.curve(o + h as i32));
    }
    Ok(SequentialInputs { origins, history, points, actuals })
}

fn sequential_variant(
    series: &FunctionalSeries,
    split: &SplitSpec,
    cfg: &BacktestConfig,
    h_max: usize,
    val: &PhaseForecasts,
    test: &PhaseForecasts,
    variant: Variant,
) -> Result<(VariantReport, IntervalForecastSet)> {
    let seq_cfg = SequentialConfig { alpha: variant.alpha, p_max: cfg.ar_p_max };
    let mut records = Vec::new();
    let mut qhats = Vec::new();
    let mut skipped = Vec::new();
    for h in 1..=h_max {
        let inputs = sequential_inputs(series, split, cfg, h, val, test)?;
        if inputs.origins.is_empty() {
            skipped.push(SkippedHorizon { h, reason: "no test origin reaches this horizon".into() });
            continue;
        }
        let targets: Vec<i32> = inputs.origins.iter().map(|o| o + h as i32).collect();
        let result = run_sequential(&targets, &inputs.points, &inputs.actuals, &inputs.history, &seq_cfg)?;
        let mut rows = Vec::with_capacity(result.steps.len());
        for (step, &origin) in result.steps.into_iter().zip(&inputs.origins) {
            rows.push(step.qhat.clone());
            records.push(IntervalRecord { origin, target: step.year, h, point: step.point, lb: step.lb, ub: step.ub });
        }
        qhats.push((h, rows));
    }
    let mut horizons = Vec::new();
    for (h, _) in &qhats {
        if let Some(m) = evaluate(series, &records, *h, variant.alpha)? {
            horizons.push(m);
        }
    }
    let quantiles = averaged_predicted_quantiles(series.grid().ages(), &qhats)?;
    let report = VariantReport {
        variant,
        summaries: summaries(&horizons)?,
        horizons,
        calibrations: Vec::new(),
        skipped,
        quantiles,
    };
    let set = IntervalForecastSet { variant, ages: series.grid().ages().to_vec(), records };
    Ok((report, set))
}

/// Point forecasts for every validation and test origin, shared by all
/// variants of a run.
pub struct OriginForecasts {
    validation: PhaseForecasts,
    test: PhaseForecasts,
    test_frozen: Option<PhaseForecasts>,
    h_max: usize,
}

impl OriginForecasts {
    pub fn validation(&self) -> &[CurveForecast] {
        &self.validation.forecasts
    }

    pub fn test(&self) -> &[CurveForecast] {
        &self.test.forecasts
    }
}

pub fn origin_forecasts(
    series: &FunctionalSeries,
    split: &SplitSpec,
    cfg: &BacktestConfig,
    h_max: usize,
) -> Result<OriginForecasts> {
    let validation = phase_forecasts(series, split, Phase::Validation, cfg, h_max, None)?;
    let test = phase_forecasts(series, split, Phase::Test, cfg, h_max, None)?;
    let needs_frozen = !cfg.refresh_fpca && cfg.method != MethodChoice::Split;
    let test_frozen = if needs_frozen {
        let first = make_origins(&cfg.scheme, split, Phase::Test, 1)?[0];
        let train = series.slice_years(first.train.start, first.train.end)?;
        let model = fpca(&train, cfg.k_rule)?;
        Some(phase_forecasts(series, split, Phase::Test, cfg, h_max, Some(&model))?)
    } else {
        None
    };
    Ok(OriginForecasts { validation, test, test_frozen, h_max })
}

/// Runs every configured variant over the test phase.
pub fn run_backtest(series: &FunctionalSeries, cfg: &BacktestConfig) -> Result<BacktestOutput> {
    cfg.validate()?;
    let split = cfg.resolve_split(series)?;
    let h_max = cfg.resolve_horizons(&split);
    let fc = origin_forecasts(series, &split, cfg, h_max)?;
    run_backtest_with(series, cfg, &fc)
}

/// Like [`run_backtest`] but reuses point forecasts from
/// [`origin_forecasts`]; only the interval settings of `cfg` may differ from
/// the configuration the forecasts were made with.
pub fn run_backtest_with(
    series: &FunctionalSeries,
    cfg: &BacktestConfig,
    fc: &OriginForecasts,
) -> Result<BacktestOutput> {
    cfg.validate()?;
    let split = cfg.resolve_split(series)?;
    let h_max = cfg.resolve_horizons(&split).min(fc.h_max);
    if cfg.method != MethodChoice::Split && !cfg.refresh_fpca && fc.test_frozen.is_none() {
        return Err(Error::InvalidInput("forecasts were made without a frozen FPCA model".into()));
    }

    let mut variants = Vec::new();
    let mut intervals = Vec::new();
    for method in cfg.method.methods() {
        for &alpha in &cfg.alphas {
            let (report, set) = match method {
                Method::Split => {
                    for &stat in &cfg.stats {
                        let v = Variant { method, alpha, stat: Some(stat) };
                        let (r, s) = split_variant(series, &split, cfg, h_max, &fc.validation, &fc.test, v)?;
                        variants.push(r);
                        intervals.push(s);
                    }
                    continue;
                }
                Method::Sequential => {
                    let test = if cfg.refresh_fpca { &fc.test } else { fc.test_frozen.as_ref().unwrap_or(&fc.test) };
                    let v = Variant { method, alpha, stat: None };
                    sequential_variant(series, &split, cfg, h_max, &fc.validation, test, v)?
                }
            };
            variants.push(report);
            intervals.push(set);
        }
    }
    Ok(BacktestOutput {
        report: BacktestReport { split, max_horizon: h_max, config: cfg.clone(), variants },
        intervals,
    })
}
