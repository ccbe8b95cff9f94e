//! Functional time-series forecasting of age-indexed curves with split and
//! sequential conformal prediction intervals.
//!
//! The pipeline: [`fda::fpca`] decomposes log-rate curves, [`ets`] forecasts
//! each score series, and [`split`] or [`sequential`] wraps the forecasts in
//! prediction intervals. [`backtest`] runs the whole thing over rolling
//! origins and [`metrics`] scores the result.

pub mod backtest;
pub mod config;
pub mod error;
pub mod ets;
pub mod fda;
pub mod forecast;
pub mod io;
pub mod metrics;
pub mod optim;
pub mod quantreg;
pub mod sequential;
pub mod split;
pub mod stats;
pub mod synth;

pub use backtest::{
    make_origins, origin_forecasts, run_backtest, run_backtest_with, BacktestConfig, BacktestOutput, BacktestReport,
    IntervalForecastSet, Method, MethodChoice, Phase, SplitSpec, WindowScheme,
};
pub use config::RunConfig;
pub use error::{Error, Result};
pub use ets::{fit_ets, EtsFit, EtsKind};
pub use fda::{fpca, select_k_evr, AgeGrid, FpcaModel, FunctionalSeries, KRule};
pub use forecast::{forecast_curves, CurveForecast};
pub use metrics::{interval_score, summarize_over_horizons};
pub use quantreg::{fit_quantile_ar, pinball_loss, predict_quantile, select_ar_order, QuantRegModel};
pub use sequential::{run_sequential, SequentialConfig};
pub use split::{band_ecp, calibrate_xi, calibrate_xi_pair, isotonic_smooth_xi, ScaleStat, Tuning};
pub use synth::{synth_generate, SynthSpec};
