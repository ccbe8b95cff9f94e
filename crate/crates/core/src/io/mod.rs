//! Data ingestion and report serialization.

pub mod hmd;
pub mod report;
pub mod wide;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use hmd::{load_hmd, parse_hmd, to_functional_series, AgeLabel, Conversion, ImputedCell, RawMortalityTable, Sex};
pub use report::{fmt_sig, write_report};
pub use wide::{load_wide, parse_wide, write_wide};

/// Age of the open top group used for HMD files.
pub const DEFAULT_TOP_AGE: u32 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    Hmd,
    Wide,
    #[default]
    Auto,
}

impl FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hmd" => Ok(InputFormat::Hmd),
            "wide" => Ok(InputFormat::Wide),
            "auto" => Ok(InputFormat::Auto),
            other => Err(Error::InvalidInput(format!("unknown input format '{other}'"))),
        }
    }
}

impl fmt::Display for InputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InputFormat::Hmd => "hmd",
            InputFormat::Wide => "wide",
            InputFormat::Auto => "auto",
        })
    }
}

/// Wide CSV when the first non-blank line starts with a `year` column
/// followed by no `age` column; HMD otherwise.
pub fn detect_format(text: &str) -> InputFormat {
    let first = text.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
    let fields: Vec<String> = first.split(',').map(|f| f.trim().to_ascii_lowercase()).collect();
    if fields.len() > 2 && fields[0] == "year" && fields[1] != "age" {
        InputFormat::Wide
    } else {
        InputFormat::Hmd
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadOptions {
    pub format: InputFormat,
    pub sex: Sex,
    pub log_input: bool,
    pub top_age: u32,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self { format: InputFormat::Auto, sex: Sex::Total, log_input: false, top_age: DEFAULT_TOP_AGE }
    }
}

/// Reads a mortality file into a log-scale functional series.
pub fn parse_series(text: &str, opts: &LoadOptions) -> Result<Conversion> {
    let format = match opts.format {
        InputFormat::Auto => detect_format(text),
        f => f,
    };
    match format {
        InputFormat::Wide => parse_wide(text, opts.log_input),
        _ => to_functional_series(&parse_hmd(text)?, opts.sex, opts.top_age),
    }
}

pub fn load_series(path: &Path, opts: &LoadOptions) -> Result<Conversion> {
    parse_series(&std::fs::read_to_string(path)?, opts)
}
