//! HMD 1x1 period-rate files and their conversion to log-rate curves.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fda::{AgeGrid, FunctionalSeries};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Female,
    Male,
    #[default]
    Total,
}

impl FromStr for Sex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "female" => Ok(Sex::Female),
            "male" => Ok(Sex::Male),
            "total" => Ok(Sex::Total),
            other => Err(Error::InvalidInput(format!("unknown sex '{other}'"))),
        }
    }
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sex::Female => "female",
            Sex::Male => "male",
            Sex::Total => "total",
        })
    }
}

/// An age label such as `57` or `110+`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AgeLabel {
    pub age: u32,
    pub open: bool,
}

impl FromStr for AgeLabel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (digits, open) = match s.strip_suffix('+') {
            Some(d) => (d, true),
            None => (s, false),
        };
        digits.parse::<u32>().map(|age| AgeLabel { age, open }).map_err(|_| format!("bad age label '{s}'"))
    }
}

impl fmt::Display for AgeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.age, if self.open { "+" } else { "" })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawRow {
    pub year: i32,
    pub age: AgeLabel,
    pub female: Option<f64>,
    pub male: Option<f64>,
    pub total: Option<f64>,
}

impl RawRow {
    pub fn rate(&self, sex: Sex) -> Option<f64> {
        match sex {
            Sex::Female => self.female,
            Sex::Male => self.male,
            Sex::Total => self.total,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RawMortalityTable {
    pub rows: Vec<RawRow>,
}

impl RawMortalityTable {
    pub fn years(&self) -> Vec<i32> {
        let mut y: Vec<i32> = self.rows.iter().map(|r| r.year).collect();
        y.sort_unstable();
        y.dedup();
        y
    }

    pub fn missing_count(&self, sex: Sex) -> usize {
        self.rows.iter().filter(|r| r.rate(sex).is_none()).count()
    }
}

#[derive(Clone, Copy)]
enum Column {
    Year,
    Age,
    Female,
    Male,
    Total,
}

fn header_columns(tokens: &[&str]) -> Option<Vec<Option<Column>>> {
    let cols: Vec<Option<Column>> = tokens
        .iter()
        .map(|t| match t.to_ascii_lowercase().as_str() {
            "year" => Some(Column::Year),
            "age" => Some(Column::Age),
            "female" => Some(Column::Female),
            "male" => Some(Column::Male),
            "total" => Some(Column::Total),
            _ => None,
        })
        .collect();
    let has = |c: fn(&Column) -> bool| cols.iter().flatten().any(c);
    (has(|c| matches!(c, Column::Year)) && has(|c| matches!(c, Column::Age))).then_some(cols)
}

fn split_line(line: &str, comma: bool) -> Vec<&str> {
    if comma {
        line.split(',').map(str::trim).collect()
    } else {
        line.split_whitespace().collect()
    }
}

fn parse_rate(token: &str, line: usize) -> Result<Option<f64>> {
    if token == "." || token.is_empty() {
        return Ok(None);
    }
    let v: f64 = token.parse().map_err(|_| Error::Parse { line, message: format!("bad rate '{token}'") })?;
    if !(v >= 0.0 && v.is_finite()) {
        return Err(Error::Parse { line, message: format!("rate '{token}' is not a nonnegative number") });
    }
    Ok(Some(v))
}

/// Parses the text of an HMD-style rates file. Lines before the
/// `Year Age Female Male Total` header are treated as preamble.
pub fn parse_hmd(text: &str) -> Result<RawMortalityTable> {
    let mut lines = text.lines().enumerate();
    let mut layout = None;
    for (_, line) in lines.by_ref() {
        let comma = line.contains(',');
        let tokens = split_line(line.trim(), comma);
        if let Some(cols) = header_columns(&tokens) {
            layout = Some((cols, comma));
            break;
        }
    }
    let (cols, comma) = layout.ok_or_else(|| Error::Schema("no header row with Year and Age columns".into()))?;
    let rate_cols =
        cols.iter().flatten().filter(|c| matches!(c, Column::Female | Column::Male | Column::Total)).count();
    if rate_cols == 0 || cols.iter().any(Option::is_none) {
        return Err(Error::Schema("expected columns Year, Age and at least one of Female, Male, Total".into()));
    }

    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let tokens = split_line(trimmed, comma);
        if tokens.len() != cols.len() {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected {} fields, found {}", cols.len(), tokens.len()),
            });
        }
        let mut row = RawRow { year: 0, age: AgeLabel { age: 0, open: false }, female: None, male: None, total: None };
        for (col, tok) in cols.iter().flatten().zip(&tokens) {
            match col {
                Column::Year => {
                    row.year =
                        tok.parse().map_err(|_| Error::Parse { line: line_no, message: format!("bad year '{tok}'") })?
                }
                Column::Age => row.age = tok.parse().map_err(|message| Error::Parse { line: line_no, message })?,
                Column::Female => row.female = parse_rate(tok, line_no)?,
                Column::Male => row.male = parse_rate(tok, line_no)?,
                Column::Total => row.total = parse_rate(tok, line_no)?,
            }
        }
        if !seen.insert((row.year, row.age.age)) {
            return Err(Error::DuplicateCell { year: row.year, age: row.age.to_string() });
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Schema("the file has a header but no data rows".into()));
    }
    check_ladders(&rows)?;
    Ok(RawMortalityTable { rows })
}

fn check_ladders(rows: &[RawRow]) -> Result<()> {
    let mut by_year: BTreeMap<i32, Vec<AgeLabel>> = BTreeMap::new();
    for r in rows {
        by_year.entry(r.year).or_default().push(r.age);
    }
    for (year, mut ages) in by_year {
        ages.sort();
        let contiguous = ages.windows(2).all(|w| w[1].age == w[0].age + 1 && !w[0].open);
        if !contiguous {
            return Err(Error::Schema(format!("ages for {year} do not form a contiguous ladder")));
        }
    }
    Ok(())
}

pub fn load_hmd(path: &Path) -> Result<RawMortalityTable> {
    parse_hmd(&std::fs::read_to_string(path)?)
}

/// Fills missing entries of one log-scale curve by linear interpolation
/// over the age index, copying the nearest valid value at the ends.
/// Returns the filled positions.
pub fn impute_log_curve(values: &mut [Option<f64>], ages: &[f64], year: i32) -> Result<(Vec<f64>, Vec<usize>)> {
    let valid: Vec<usize> = (0..values.len()).filter(|&i| values[i].is_some()).collect();
    if valid.len() < 2 {
        return Err(Error::Imputation { year });
    }
    let mut filled = Vec::new();
    let mut out = Vec::with_capacity(values.len());
    for i in 0..values.len() {
        match values[i] {
            Some(v) => out.push(v),
            None => {
                filled.push(i);
                let next = valid.partition_point(|&v| v < i);
                let v = if next == 0 {
                    values[valid[0]].unwrap()
                } else if next == valid.len() {
                    values[valid[valid.len() - 1]].unwrap()
                } else {
                    let (a, b) = (valid[next - 1], valid[next]);
                    let (ya, yb) = (values[a].unwrap(), values[b].unwrap());
                    let w = (ages[i] - ages[a]) / (ages[b] - ages[a]);
                    ya + w * (yb - ya)
                };
                out.push(v);
                values[i] = Some(v);
            }
        }
    }
    Ok((out, filled))
}

/// A cell rewritten by imputation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImputedCell {
    pub year: i32,
    pub age: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conversion {
    pub series: FunctionalSeries,
    pub imputed: Vec<ImputedCell>,
}

/// Log rates on ages `0..=top_age`, the top group being the unweighted mean
/// of the positive rates at ages `>= top_age`. Missing and nonpositive rates
/// are imputed in log scale.
pub fn to_functional_series(table: &RawMortalityTable, sex: Sex, top_age: u32) -> Result<Conversion> {
    let years = table.years();
    if years.is_empty() {
        return Err(Error::Schema("no data rows".into()));
    }
    if let Some(w) = years.windows(2).find(|w| w[1] != w[0] + 1) {
        return Err(Error::Schema(format!("years are not consecutive between {} and {}", w[0], w[1])));
    }
    let j = top_age as usize + 1;
    let mut sums: BTreeMap<i32, Vec<(f64, usize)>> = years.iter().map(|&y| (y, vec![(0.0, 0); j])).collect();
    let mut max_age: BTreeMap<i32, u32> = BTreeMap::new();
    for r in &table.rows {
        let slot = (r.age.age.min(top_age)) as usize;
        let e = max_age.entry(r.year).or_insert(0);
        *e = (*e).max(r.age.age);
        let cell = &mut sums.get_mut(&r.year).expect("year collected above")[slot];
        if let Some(v) = r.rate(sex).filter(|v| *v > 0.0) {
            cell.0 += v;
            cell.1 += 1;
        }
    }
    let ages: Vec<f64> = (0..j).map(|a| a as f64).collect();
    let mut values = DMatrix::zeros(years.len(), j);
    let mut imputed = Vec::new();
    for (t, year) in years.iter().enumerate() {
        if max_age[year] < top_age {
            return Err(Error::Schema(format!(
                "ages for {year} stop at {} below the top age {top_age}",
                max_age[year]
            )));
        }
        let mut curve: Vec<Option<f64>> =
            sums[year].iter().map(|&(s, c)| (c > 0).then(|| (s / c as f64).ln())).collect();
        let (filled_curve, filled) = impute_log_curve(&mut curve, &ages, *year)?;
        imputed.extend(filled.into_iter().map(|i| ImputedCell { year: *year, age: ages[i] }));
        for (c, v) in filled_curve.into_iter().enumerate() {
            values[(t, c)] = v;
        }
    }
    let series = FunctionalSeries::new(AgeGrid::new(ages)?, years[0], values)?;
    Ok(Conversion { series, imputed })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "Australia, Death rates (period 1x1)\tLast modified: 01 Jan 2024\n\n  Year          Age             Female            Male           Total\n  1921           0             0.059987          0.071259          0.065823\n  1921           1             0.011000          .                 0.012000\n  1921           2+            0.004000          0.005000          0.004500\n";

    #[test]
    fn parses_the_documented_layout() {
        let t = parse_hmd(SAMPLE).unwrap();
        assert_eq!(t.rows.len(), 3);
        let r = t.rows[0];
        assert_eq!(
            (r.year, r.age.age, r.female, r.male, r.total),
            (1921, 0, Some(0.059987), Some(0.071259), Some(0.065823))
        );
        assert_eq!(t.rows[1].male, None);
        assert!(t.rows[2].age.open);
        assert_eq!(t.missing_count(Sex::Male), 1);
    }

    #[test]
    fn comma_delimited() {
        let t = parse_hmd("Year,Age,Female,Male,Total\n2000,0,0.1,0.2,0.15\n2000,110+,0.5,.,0.6\n").unwrap_err();
        // 0 then 110 is not a ladder
        assert!(matches!(t, Error::Schema(_)));
        let t = parse_hmd("Year,Age,Female,Male,Total\n2000,0,0.1,0.2,0.15\n2000,1,0.5,.,0.6\n").unwrap();
        assert_eq!(t.rows[1].male, None);
    }

    #[test]
    fn errors_carry_locations() {
        let dup = "Year Age Female Male Total\n1921 0 0.1 0.1 0.1\n1921 0 0.1 0.1 0.1\n";
        match parse_hmd(dup) {
            Err(Error::DuplicateCell { year, age }) => assert_eq!((year, age.as_str()), (1921, "0")),
            other => panic!("{other:?}"),
        }
        let bad = "Year Age Female Male Total\n1921 0 0.1 abc 0.1\n";
        assert!(matches!(parse_hmd(bad), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_hmd("Country Sex\n"), Err(Error::Schema(_))));
        assert!(matches!(parse_hmd("Year Age Female Other\n"), Err(Error::Schema(_))));
    }

    #[test]
    fn interpolates_in_log_scale() {
        let mut c = vec![Some(-5.0), Some(-4.0), None, Some(-2.0), None];
        let ages = [0.0, 1.0, 2.0, 3.0, 4.0];
        let (out, filled) = impute_log_curve(&mut c, &ages, 2000).unwrap();
        assert_eq!(out, vec![-5.0, -4.0, -3.0, -2.0, -2.0]);
        assert_eq!(filled, vec![2, 4]);
        let mut c = vec![Some(-1.0), None, None];
        assert!(matches!(impute_log_curve(&mut c, &ages[..3], 1999), Err(Error::Imputation { year: 1999 })));
    }

    #[test]
    fn collapses_the_top_group() {
        let mut text = String::from("Year Age Female Male Total\n");
        for age in 0..=110 {
            let label = if age == 110 { "110+".to_string() } else { age.to_string() };
            let rate = if age >= 100 {
                0.4
            } else if age == 50 {
                0.0
            } else {
                0.05
            };
            text.push_str(&format!("1921 {label} {rate} {rate} {rate}\n"));
        }
        let conv = to_functional_series(&parse_hmd(&text).unwrap(), Sex::Female, 100).unwrap();
        let s = &conv.series;
        assert_eq!(s.n_ages(), 101);
        assert!((s.values()[(0, 0)] - (-2.995_732_273_553_991)).abs() < 1e-12);
        assert!((s.values()[(0, 100)] - 0.4f64.ln()).abs() < 1e-12);
        assert_eq!(conv.imputed, vec![ImputedCell { year: 1921, age: 50.0 }]);
    }
}
