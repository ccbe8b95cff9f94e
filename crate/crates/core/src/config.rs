//! Run configuration echoed into `config.json`.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::backtest::{BacktestConfig, MethodChoice, SplitSpec, WindowScheme};
use crate::error::{Error, Result};
use crate::ets::EtsKind;
use crate::fda::KRule;
use crate::io::{InputFormat, LoadOptions, Sex};
use crate::split::{CoverageTarget, ScaleStat, Tuning};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub input: PathBuf,
    pub format: InputFormat,
    pub log_input: bool,
    pub sex: Sex,
    /// Ages at and above this are pooled into one group (HMD input).
    pub top_age: u32,
    pub method: MethodChoice,
    pub stats: Vec<ScaleStat>,
    pub alphas: Vec<f64>,
    pub scheme: WindowScheme,
    pub k_rule: KRule,
    /// `None` splits the sample 60 / 20 / 20.
    pub split: Option<SplitSpec>,
    pub tuning: Tuning,
    pub isotonic: bool,
    pub coverage: CoverageTarget,
    pub max_horizon: Option<usize>,
    pub refresh_fpca: bool,
    pub seed: u64,
    pub out: PathBuf,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return Err(Error::InvalidInput("every alpha must lie in (0, 1)".into()));
        }
        self.backtest().validate()
    }

    pub fn load_options(&self) -> LoadOptions {
        LoadOptions { format: self.format, sex: self.sex, log_input: self.log_input, top_age: self.top_age }
    }

    pub fn backtest(&self) -> BacktestConfig {
        BacktestConfig {
            method: self.method,
            stats: self.stats.clone(),
            alphas: self.alphas.clone(),
            scheme: self.scheme,
            k_rule: self.k_rule,
            split: self.split,
            tuning: self.tuning,
            isotonic: self.isotonic,
            coverage: self.coverage,
            max_horizon: self.max_horizon,
            family: EtsKind::ALL.to_vec(),
            refresh_fpca: self.refresh_fpca,
            ar_p_max: None,
        }
    }
}
