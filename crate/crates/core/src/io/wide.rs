//! Wide CSV: a `year` column followed by one column per age.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::fda::{AgeGrid, FunctionalSeries};
use crate::io::hmd::{impute_log_curve, AgeLabel, Conversion, ImputedCell};

fn parse_cell(raw: &str, log_input: bool, line: usize) -> Result<Option<f64>> {
    let t = raw.trim();
    if t.is_empty() || t == "." || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("nan") {
        return Ok(None);
    }
    let v: f64 = t.parse().map_err(|_| Error::Parse { line, message: format!("bad value '{t}'") })?;
    if log_input {
        if !v.is_finite() {
            return Err(Error::Parse { line, message: format!("log rate '{t}' is not finite") });
        }
        Ok(Some(v))
    } else if v < 0.0 || !v.is_finite() {
        Err(Error::Parse { line, message: format!("rate '{t}' is not a nonnegative number") })
    } else {
        // zero rates are treated as missing and imputed in log scale
        Ok((v > 0.0).then(|| v.ln()))
    }
}

/// Parses wide CSV text. Values are raw rates unless `log_input` is set.
pub fn parse_wide(text: &str, log_input: bool) -> Result<Conversion> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    if headers.len() < 3 || !headers[0].eq_ignore_ascii_case("year") {
        return Err(Error::Schema("expected a 'year' column followed by at least two age columns".into()));
    }
    let ages: Vec<f64> = headers
        .iter()
        .skip(1)
        .map(|h| {
            h.parse::<AgeLabel>()
                .map(|a| a.age as f64)
                .or_else(|_| h.parse::<f64>().map_err(|_| Error::Schema(format!("column '{h}' is not an age"))))
        })
        .collect::<Result<_>>()?;
    let grid = AgeGrid::new(ages.clone())?;

    let mut years = Vec::new();
    let mut rows = Vec::new();
    let mut imputed = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record?;
        let line = idx + 2;
        if record.len() != headers.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        let year: i32 =
            record[0].parse().map_err(|_| Error::Parse { line, message: format!("bad year '{}'", &record[0]) })?;
        if let Some(&prev) = years.last() {
            if year == prev {
                return Err(Error::DuplicateCell { year, age: "*".into() });
            }
            if year != prev + 1 {
                return Err(Error::Schema(format!("years are not consecutive between {prev} and {year}")));
            }
        }
        let mut curve: Vec<Option<f64>> =
            record.iter().skip(1).map(|c| parse_cell(c, log_input, line)).collect::<Result<_>>()?;
        let (values, filled) = impute_log_curve(&mut curve, &ages, year)?;
        imputed.extend(filled.into_iter().map(|i| ImputedCell { year, age: ages[i] }));
        years.push(year);
        rows.push(values);
    }
    if rows.is_empty() {
        return Err(Error::Schema("the file has a header but no data rows".into()));
    }
    let j = ages.len();
    let values = DMatrix::from_fn(rows.len(), j, |t, c| rows[t][c]);
    Ok(Conversion { series: FunctionalSeries::new(grid, years[0], values)?, imputed })
}

pub fn load_wide(path: &Path, log_input: bool) -> Result<Conversion> {
    parse_wide(&std::fs::read_to_string(path)?, log_input)
}

/// Writes `series` with full round-trip precision.
pub fn write_wide<W: Write>(series: &FunctionalSeries, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    let mut header = vec!["year".to_string()];
    header.extend(series.grid().ages().iter().map(|a| a.to_string()));
    w.write_record(&header)?;
    for (t, year) in series.years().enumerate() {
        let mut rec = vec![year.to_string()];
        rec.extend(series.values().row(t).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
