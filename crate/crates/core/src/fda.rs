//! Functional time series on a discrete age grid and functional principal
//! component analysis.
//!
//! Curves are stored as rows of an `n x J` matrix. Inner products between
//! curves use trapezoid quadrature weights on the age grid, so on a unit
//! spaced grid interior ages get weight 1 and the two end ages weight 1/2.
//!
//! The covariance operator `(K f)(u_i) = sum_j c(u_i, u_j) w_j f(u_j)` is
//! diagonalized through the symmetric matrix `W^{1/2} C W^{1/2}`;
//! eigenfunctions are mapped back with `W^{-1/2}` and are orthonormal under
//! the weighted inner product.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default threshold below which an eigenvalue is treated as negligible by the
/// eigenvalue-ratio criterion.
pub const DEFAULT_EVR_TAU: f64 = 1e-3;

/// Strictly ascending age labels shared by every curve of a series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeGrid {
    ages: Vec<f64>,
}

impl AgeGrid {
    pub fn new(ages: Vec<f64>) -> Result<Self> {
        if ages.len() < 2 {
            return Err(Error::InvalidInput(format!("age grid needs at least 2 ages, got {}", ages.len())));
        }
        if ages.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidInput("age grid contains a non-finite label".into()));
        }
        if let Some(w) = ages.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput(format!(
                "age grid must be strictly increasing ({} followed by {})",
                w[0], w[1]
            )));
        }
        Ok(Self { ages })
    }

    /// Integer ages `0, 1, ..., count - 1`.
    pub fn integer(count: usize) -> Result<Self> {
        Self::new((0..count).map(|a| a as f64).collect())
    }

    pub fn len(&self) -> usize {
        self.ages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ages.is_empty()
    }

    pub fn ages(&self) -> &[f64] {
        &self.ages
    }

    /// Trapezoid-rule weights for the L2 inner product on this grid.
    pub fn quadrature_weights(&self) -> Vec<f64> {
        let a = &self.ages;
        let j = a.len();
        (0..j)
            .map(|i| {
                let left = if i > 0 { a[i] - a[i - 1] } else { 0.0 };
                let right = if i + 1 < j { a[i + 1] - a[i] } else { 0.0 };
                0.5 * (left + right)
            })
            .collect()
    }
}

/// One curve per consecutive calendar year, all on the same age grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalSeries {
    grid: AgeGrid,
    first_year: i32,
    values: DMatrix<f64>,
}

impl FunctionalSeries {
    /// `values` is `n x J`; row `t` is the curve for year `first_year + t`.
    pub fn new(grid: AgeGrid, first_year: i32, values: DMatrix<f64>) -> Result<Self> {
        if values.ncols() != grid.len() {
            return Err(Error::InvalidInput(format!(
                "curve matrix has {} columns but the age grid has {} ages",
                values.ncols(),
                grid.len()
            )));
        }
        if let Some(idx) = values.iter().position(|v| !v.is_finite()) {
            let (r, c) = (idx % values.nrows(), idx / values.nrows());
            return Err(Error::InvalidInput(format!(
                "non-finite value for year {}, age {}",
                first_year + r as i32,
                grid.ages()[c]
            )));
        }
        Ok(Self { grid, first_year, values })
    }

    pub fn grid(&self) -> &AgeGrid {
        &self.grid
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn n_years(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_ages(&self) -> usize {
        self.grid.len()
    }

    pub fn first_year(&self) -> i32 {
        self.first_year
    }

    /// Last year label; equals `first_year - 1` for an empty series.
    pub fn last_year(&self) -> i32 {
        self.first_year + self.n_years() as i32 - 1
    }

    pub fn years(&self) -> impl Iterator<Item = i32> + '_ {
        (0..self.n_years()).map(move |t| self.first_year + t as i32)
    }

    pub fn year_index(&self, year: i32) -> Option<usize> {
        let t = year.checked_sub(self.first_year)?;
        (t >= 0 && (t as usize) < self.n_years()).then_some(t as usize)
    }

    /// Curve observed in `year`, if present.
    pub fn curve(&self, year: i32) -> Option<Vec<f64>> {
        self.year_index(year).map(|t| self.values.row(t).iter().copied().collect())
    }

    /// Sub-series covering `start..=end` (inclusive year labels).
    pub fn slice_years(&self, start: i32, end: i32) -> Result<Self> {
        let (Some(a), Some(b)) = (self.year_index(start), self.year_index(end)) else {
            return Err(Error::InvalidInput(format!(
                "years {start}..={end} are not inside {}..={}",
                self.first_year,
                self.last_year()
            )));
        };
        if b < a {
            return Err(Error::InvalidInput(format!("empty year range {start}..={end}")));
        }
        Ok(Self { grid: self.grid.clone(), first_year: start, values: self.values.rows(a, b - a + 1).into_owned() })
    }
}

/// Pointwise mean over years.
pub fn mean_curve(series: &FunctionalSeries) -> Result<DVector<f64>> {
    let n = series.n_years();
    if n == 0 {
        return Err(Error::InvalidInput("mean of an empty series".into()));
    }
    Ok(series.values().row_mean().transpose())
}

/// Sample covariance matrix (denominator `n - 1`) across ages.
pub fn covariance_matrix(series: &FunctionalSeries) -> Result<DMatrix<f64>> {
    let n = series.n_years();
    if n < 2 {
        return Err(Error::InsufficientData { what: "covariance", needed: 2, got: n });
    }
    let centered = centered(series.values(), &mean_curve(series)?);
    let mut cov = centered.transpose() * &centered / (n as f64 - 1.0);
    // exact symmetry regardless of summation order
    let j = cov.nrows();
    for r in 0..j {
        for c in (r + 1)..j {
            let v = 0.5 * (cov[(r, c)] + cov[(c, r)]);
            cov[(r, c)] = v;
            cov[(c, r)] = v;
        }
    }
    Ok(cov)
}

fn centered(values: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut out = values.clone();
    for mut row in out.row_iter_mut() {
        for (v, m) in row.iter_mut().zip(mean.iter()) {
            *v -= m;
        }
    }
    out
}

/// How many principal components to retain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KRule {
    Fixed(usize),
    /// Eigenvalue-ratio criterion with threshold `tau`; `k_max` defaults to
    /// `min(n - 1, J - 1)`.
    Evr {
        tau: f64,
        k_max: Option<usize>,
    },
}

impl Default for KRule {
    fn default() -> Self {
        KRule::Evr { tau: DEFAULT_EVR_TAU, k_max: None }
    }
}

/// Outcome of the eigenvalue-ratio criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvrChoice {
    pub k: usize,
    /// Set when every eigenvalue is at or below the threshold.
    pub degenerate: bool,
}

/// Eigenvalue-ratio choice of `K`.
///
/// Minimizes `lambda[k+1] / lambda[k]` over `1 <= k <= k_max` when
/// `lambda[k] > tau`, and assigns the value 1 when `lambda[k] <= tau`.
/// Ties go to the smallest `k`.
pub fn select_k_evr(eigenvalues: &[f64], tau: f64, k_max: usize) -> Result<EvrChoice> {
    if !(tau > 0.0) {
        return Err(Error::InvalidInput(format!("EVR threshold must be positive, got {tau}")));
    }
    if k_max < 1 || k_max + 1 > eigenvalues.len() {
        return Err(Error::InvalidInput(format!(
            "EVR k_max must lie in 1..={}, got {k_max}",
            eigenvalues.len().saturating_sub(1)
        )));
    }
    if eigenvalues.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
        return Err(Error::InvalidInput("eigenvalues must be finite and nonnegative".into()));
    }
    let mut best_k = 1;
    let mut best = f64::INFINITY;
    for k in 1..=k_max {
        let lk = eigenvalues[k - 1];
        let value = if lk > tau { eigenvalues[k] / lk } else { 1.0 };
        if value < best {
            best = value;
            best_k = k;
        }
    }
    Ok(EvrChoice { k: best_k, degenerate: eigenvalues[0] <= tau })
}

/// Truncated Karhunen–Loève decomposition of a functional series.
#[derive(Debug, Clone, PartialEq)]
pub struct FpcaModel {
    pub mean: DVector<f64>,
    /// All `J` eigenvalues in nonincreasing order, clamped at zero.
    pub eigenvalues: Vec<f64>,
    /// `K x J`; row `k` is the `k`-th eigenfunction on the grid.
    pub eigenfunctions: DMatrix<f64>,
    /// `n x K`; row `t` holds the scores of the curve in year `first_year + t`.
    pub scores: DMatrix<f64>,
    pub k: usize,
    pub quad_weights: Vec<f64>,
    pub first_year: i32,
    pub degenerate_spectrum: bool,
}

impl FpcaModel {
    pub fn n_ages(&self) -> usize {
        self.mean.len()
    }

    pub fn last_year(&self) -> i32 {
        self.first_year + self.scores.nrows() as i32 - 1
    }

    /// `mean(u) + sum_k scores[k] * phi_k(u)`.
    pub fn reconstruct(&self, scores: &[f64]) -> Result<DVector<f64>> {
        if scores.len() != self.k {
            return Err(Error::InvalidInput(format!("expected {} scores, got {}", self.k, scores.len())));
        }
        let mut curve = self.mean.clone();
        for (k, s) in scores.iter().enumerate() {
            for (c, phi) in curve.iter_mut().zip(self.eigenfunctions.row(k).iter()) {
                *c += s * phi;
            }
        }
        Ok(curve)
    }

    /// Weighted inner products `<x - mean, phi_k>` for `k = 1..K`.
    pub fn project(&self, curve: &[f64]) -> Result<Vec<f64>> {
        if curve.len() != self.n_ages() {
            return Err(Error::InvalidInput(format!("curve has {} ages, model has {}", curve.len(), self.n_ages())));
        }
        Ok((0..self.k)
            .map(|k| {
                self.eigenfunctions
                    .row(k)
                    .iter()
                    .zip(curve.iter().zip(self.mean.iter()))
                    .zip(&self.quad_weights)
                    .map(|((phi, (x, m)), w)| w * (x - m) * phi)
                    .sum()
            })
            .collect())
    }

    /// Same mean and eigenfunctions, with scores recomputed for `series`.
    pub fn rescore(&self, series: &FunctionalSeries) -> Result<FpcaModel> {
        let n = series.n_years();
        let mut scores = DMatrix::zeros(n, self.k);
        for t in 0..n {
            let row: Vec<f64> = series.values().row(t).iter().copied().collect();
            for (k, s) in self.project(&row)?.into_iter().enumerate() {
                scores[(t, k)] = s;
            }
        }
        Ok(FpcaModel { scores, first_year: series.first_year(), ..self.clone() })
    }
}

/// Functional principal component analysis with `K` chosen by `rule`.
///
/// Each eigenfunction is signed so that its entry of largest magnitude is
/// positive.
pub fn fpca(series: &FunctionalSeries, rule: KRule) -> Result<FpcaModel> {
    let n = series.n_years();
    let j = series.n_ages();
    if n < 3 {
        return Err(Error::InsufficientData { what: "FPCA", needed: 3, got: n });
    }
    let mean = mean_curve(series)?;
    let cov = covariance_matrix(series)?;
    let weights = series.grid().quadrature_weights();
    let sqrt_w: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();

    let mut a = cov;
    for r in 0..j {
        for c in 0..j {
            a[(r, c)] *= sqrt_w[r] * sqrt_w[c];
        }
    }
    let eig = SymmetricEigen::new(a);
    let mut order: Vec<usize> = (0..j).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]).then(x.cmp(&y)));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();

    let max_k = (n - 1).min(j);
    let (k, degenerate) = match rule {
        KRule::Fixed(k) => {
            if k == 0 || k > max_k {
                return Err(Error::InvalidK { k, max: max_k });
            }
            (k, false)
        }
        KRule::Evr { tau, k_max } => {
            let cap = (n - 1).min(j - 1);
            let k_max = k_max.unwrap_or(cap).clamp(1, cap.max(1));
            let choice = select_k_evr(&eigenvalues, tau, k_max)?;
            (choice.k, choice.degenerate)
        }
    };

    let mut eigenfunctions = DMatrix::zeros(k, j);
    for (row, &idx) in order.iter().take(k).enumerate() {
        let psi = eig.eigenvectors.column(idx);
        let mut phi: Vec<f64> = psi.iter().zip(&sqrt_w).map(|(p, s)| p / s).collect();
        let lead =
            phi.iter().enumerate().fold((0, 0.0f64), |acc, (i, v)| if v.abs() > acc.1 { (i, v.abs()) } else { acc }).0;
        if phi[lead] < 0.0 {
            phi.iter_mut().for_each(|v| *v = -*v);
        }
        for (c, v) in phi.into_iter().enumerate() {
            eigenfunctions[(row, c)] = v;
        }
    }

    let model = FpcaModel {
        mean,
        eigenvalues,
        eigenfunctions,
        scores: DMatrix::zeros(0, k),
        k,
        quad_weights: weights,
        first_year: series.first_year(),
        degenerate_spectrum: degenerate,
    };
    model.rescore(series)
}
