//! CSV and JSON report files.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::backtest::{BacktestOutput, IntervalForecastSet, VariantReport};
use crate::error::Result;

pub const METRICS_HEADER: &str = "method,sex,alpha,stat,h,ecp,cpd,mean_width,mean_interval_score";
pub const SUMMARY_HEADER: &str = "metric,alpha,stat,min,q1,median,mean,q3,max";
pub const INTERVALS_HEADER: &str = "origin,target,h,age,point,lb,ub";
pub const QUANTILES_HEADER: &str = "age,h,mean_qhat";

/// `%g`-style formatting with `digits` significant digits.
pub fn fmt_sig(x: f64, digits: usize) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "Inf".into() } else { "-Inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= digits as i32 {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Report floats use six significant digits.
pub fn g6(x: f64) -> String {
    fmt_sig(x, 6)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_metrics(path: &Path, variants: &[VariantReport], sex: &str) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "{METRICS_HEADER}")?;
    for v in variants {
        for m in &v.horizons {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                v.variant.method,
                sex,
                g6(v.variant.alpha),
                v.variant.stat_label(),
                m.h,
                g6(m.ecp),
                g6(m.cpd),
                g6(m.mean_width),
                g6(m.mean_interval_score)
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_summary(path: &Path, variants: &[VariantReport]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "{SUMMARY_HEADER}")?;
    for v in variants {
        for s in &v.summaries {
            let nums: Vec<String> = s.summary.as_array().iter().map(|x| g6(*x)).collect();
            writeln!(w, "{},{},{},{}", s.metric, g6(v.variant.alpha), v.variant.stat_label(), nums.join(","))?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_intervals(path: &Path, set: &IntervalForecastSet) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "{INTERVALS_HEADER}")?;
    for r in &set.records {
        for (j, age) in set.ages.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.origin,
                r.target,
                r.h,
                g6(*age),
                g6(r.point[j]),
                g6(r.lb[j]),
                g6(r.ub[j])
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_quantiles(path: &Path, v: &VariantReport) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "{QUANTILES_HEADER}")?;
    for q in &v.quantiles {
        writeln!(w, "{},{},{}", g6(q.age), q.h, g6(q.mean_qhat))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the report into `dir`, creating it if needed, and returns the
/// paths written.
///
/// With a single variant, `intervals.csv` and `quantiles_by_age.csv` sit
/// next to the metrics; otherwise each variant gets its own
/// `variants/<method>-<stat>-alpha<alpha>/` directory.
pub fn write_report<C: Serialize>(output: &BacktestOutput, sex: &str, config: &C, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let variants = &output.report.variants;

    let p = dir.join("metrics_by_horizon.csv");
    write_metrics(&p, variants, sex)?;
    written.push(p);
    let p = dir.join("summary.csv");
    write_summary(&p, variants)?;
    written.push(p);

    let single = variants.len() == 1;
    for (v, set) in variants.iter().zip(&output.intervals) {
        let vdir = if single {
            dir.to_path_buf()
        } else {
            let d = dir.join("variants").join(v.variant.slug());
            fs::create_dir_all(&d)?;
            d
        };
        let p = vdir.join("intervals.csv");
        write_intervals(&p, set)?;
        written.push(p);
        let p = vdir.join("quantiles_by_age.csv");
        write_quantiles(&p, v)?;
        written.push(p);
    }

    let p = dir.join("config.json");
    let mut w = create(&p)?;
    serde_json::to_writer_pretty(&mut w, config)?;
    writeln!(w)?;
    w.flush()?;
    written.push(p);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn significant_digits() {
        assert_eq!(g6(0.0), "0");
        assert_eq!(g6(0.2), "0.2");
        assert_eq!(g6(1.0), "1");
        assert_eq!(g6(-2.995732273), "-2.99573");
        assert_eq!(g6(123456.7), "123457");
        assert_eq!(g6(1234567.0), "1.23457e+06");
        assert_eq!(g6(0.0001234564), "0.000123456");
        assert_eq!(g6(0.00001234564), "1.23456e-05");
        assert_eq!(g6(8.833333333), "8.83333");
        assert_eq!(g6(999999.5), "1e+06");
    }
}
