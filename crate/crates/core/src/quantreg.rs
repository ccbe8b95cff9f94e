//! Autoregressive quantile regression on absolute residuals.
//!
//! The model for a nonnegative series `r_s` at level `tau` is
//! `Q_tau[r_s | r_{s-1}, ..., r_{s-p}] = c_0 + c_1 r_{s-1} + ... + c_p r_{s-p}`,
//! fitted by minimizing the mean pinball (check) loss.
//!
//! * Order 0 is solved in closed form: the minimizer set of the check loss is
//!   one order statistic or the segment between two adjacent ones, and the
//!   type-7 sample quantile is returned whenever it lies in that set (clamped
//!   to it otherwise).
//! * Higher orders use majorize–minimize iterations on the perturbed check
//!   loss `rho(r) - (eps/2) ln(eps + |r|)`, each step a weighted least-squares
//!   solve, with `eps` annealed from `1e-2` to `1e-8` (relative to the data
//!   scale) after a least-squares warm start. The result is then compared with
//!   the exact basic solution through the `p + 1` best-fitting observations,
//!   and with the order-0 fit, and the lowest loss wins.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

const EPS_SCHEDULE: [f64; 7] = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8];
const MM_MAX_ITER: usize = 8;
/// Guard added inside the logarithm of the order-selection criterion.
pub const AIC_LOSS_OFFSET: f64 = 1e-12;
/// Upper bound on the default maximum AR order.
pub const DEFAULT_P_MAX_CAP: usize = 5;

/// Check loss `tau (a - q)` if `a >= q`, else `(1 - tau) (q - a)`.
#[inline]
pub fn pinball_loss(actual: f64, predicted: f64, tau: f64) -> f64 {
    let d = actual - predicted;
    if d >= 0.0 {
        tau * d
    } else {
        (tau - 1.0) * d
    }
}

/// A fitted AR(p) quantile regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantRegModel {
    pub order: usize,
    /// Intercept followed by the weights of lags `1..=p`.
    pub coefficients: Vec<f64>,
    pub level: f64,
    /// Mean check loss on the training rows.
    pub loss: f64,
    pub n_eff: usize,
    /// Set when the requested order could not be fitted and order 0 was used.
    pub fallback: bool,
}

impl QuantRegModel {
    pub fn intercept(&self) -> f64 {
        self.coefficients[0]
    }
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("quantile level must lie in (0, 1), got {level}")))
    }
}

fn mean_loss(y: &[f64], fitted: impl Iterator<Item = f64>, tau: f64) -> f64 {
    let total: f64 = y.iter().zip(fitted).map(|(a, q)| pinball_loss(*a, q, tau)).sum();
    total / y.len() as f64
}

/// Exact minimizer of the mean check loss over constants.
pub fn quantile_constant(y: &[f64], tau: f64) -> f64 {
    let mut sorted = y.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let t = tau * n as f64;
    let k = t.round();
    let (lo, hi) = if (t - k).abs() <= 1e-9 * t.max(1.0) && k >= 1.0 && (k as usize) < n {
        // flat between the k-th and (k+1)-th order statistics
        (sorted[k as usize - 1], sorted[k as usize])
    } else {
        let idx = (t.ceil() as usize).clamp(1, n) - 1;
        (sorted[idx], sorted[idx])
    };
    stats::quantile_sorted(&sorted, tau).clamp(lo, hi)
}

/// Rows `s = start..len` with regressors `(1, r_{s-1}, ..., r_{s-p})`.
struct Design {
    y: Vec<f64>,
    /// Row-major `n x (p + 1)`.
    x: Vec<f64>,
    cols: usize,
}

impl Design {
    fn new(series: &[f64], p: usize, start: usize) -> Self {
        let cols = p + 1;
        let n = series.len() - start;
        let mut x = Vec::with_capacity(n * cols);
        let mut y = Vec::with_capacity(n);
        for s in start..series.len() {
            y.push(series[s]);
            x.push(1.0);
            for lag in 1..=p {
                x.push(series[s - lag]);
            }
        }
        Self { y, x, cols }
    }

    fn rows(&self) -> usize {
        self.y.len()
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.cols..(i + 1) * self.cols]
    }

    fn fitted(&self, beta: &[f64]) -> impl Iterator<Item = f64> + '_ {
        let beta = beta.to_vec();
        (0..self.rows()).map(move |i| self.row(i).iter().zip(&beta).map(|(a, b)| a * b).sum())
    }

    fn loss(&self, beta: &[f64], tau: f64) -> f64 {
        mean_loss(&self.y, self.fitted(beta), tau)
    }
}

/// Solves the dense `n x n` system `a z = b` by Gaussian elimination with
/// partial pivoting. Returns `None` when the matrix is numerically singular.
fn solve_small(mut a: Vec<f64>, mut b: Vec<f64>, n: usize) -> Option<Vec<f64>> {
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return None;
    }
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))?;
        if a[piv * n + col].abs() <= 1e-13 * scale {
            return None;
        }
        if piv != col {
            for k in 0..n {
                a.swap(piv * n + k, col * n + k);
            }
            b.swap(piv, col);
        }
        for row in (col + 1)..n {
            let f = a[row * n + col] / a[col * n + col];
            if f != 0.0 {
                for k in col..n {
                    a[row * n + k] -= f * a[col * n + k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut z = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = ((row + 1)..n).map(|k| a[row * n + k] * z[k]).sum();
        z[row] = (b[row] - s) / a[row * n + row];
    }
    z.iter().all(|v| v.is_finite()).then_some(z)
}

/// Weighted normal equations `X' W X beta = X' W y + shift * X' 1`.
fn weighted_solve(d: &Design, w: &[f64], shift: f64) -> Option<Vec<f64>> {
    let c = d.cols;
    let mut a = vec![0.0; c * c];
    let mut b = vec![0.0; c];
    for i in 0..d.rows() {
        let xi = d.row(i);
        let wi = w[i];
        for r in 0..c {
            b[r] += xi[r] * (wi * d.y[i] + shift);
            for k in r..c {
                a[r * c + k] += wi * xi[r] * xi[k];
            }
        }
    }
    for r in 0..c {
        for k in 0..r {
            a[r * c + k] = a[k * c + r];
        }
    }
    // tiny ridge keeps collinear lags solvable
    let trace: f64 = (0..c).map(|r| a[r * c + r]).sum();
    for r in 0..c {
        a[r * c + r] += 1e-14 * trace.max(1e-300);
    }
    solve_small(a, b, c)
}

fn mm_fit(d: &Design, tau: f64, warm: Vec<f64>) -> Vec<f64> {
    let scale = d.y.iter().map(|v| v.abs()).sum::<f64>() / d.rows() as f64;
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let mut beta = warm;
    let mut w = vec![0.0; d.rows()];
    for &eps_rel in &EPS_SCHEDULE {
        let eps = eps_rel * scale;
        for _ in 0..MM_MAX_ITER {
            for (i, f) in d.fitted(&beta).enumerate() {
                w[i] = 1.0 / (eps + (d.y[i] - f).abs());
            }
            let Some(next) = weighted_solve(d, &w, 2.0 * tau - 1.0) else {
                break;
            };
            let change = next.iter().zip(&beta).map(|(a, b)| (a - b).abs() / (1.0 + b.abs())).fold(0.0, f64::max);
            beta = next;
            if change <= 1e-13 {
                break;
            }
        }
    }
    beta
}

/// Indices of the `p + 1` best-fitting, linearly independent observations.
fn initial_basis(d: &Design, beta: &[f64]) -> Option<Vec<usize>> {
    let c = d.cols;
    let mut order: Vec<usize> = (0..d.rows()).collect();
    let fitted: Vec<f64> = d.fitted(beta).collect();
    order.sort_by(|&i, &j| (d.y[i] - fitted[i]).abs().total_cmp(&(d.y[j] - fitted[j]).abs()).then(i.cmp(&j)));
    // greedy independent subset via incremental elimination
    let mut basis: Vec<(Vec<f64>, usize)> = Vec::new();
    let mut chosen = Vec::with_capacity(c);
    for &i in &order {
        let mut v = d.row(i).to_vec();
        for (b, piv) in &basis {
            let f = v[*piv] / b[*piv];
            for k in 0..c {
                v[k] -= f * b[k];
            }
        }
        let (piv, norm) =
            v.iter().enumerate().fold((0, 0.0f64), |acc, (k, x)| if x.abs() > acc.1 { (k, x.abs()) } else { acc });
        let ref_norm = d.row(i).iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if norm > 1e-9 * ref_norm.max(1e-300) {
            basis.push((v, piv));
            chosen.push(i);
            if chosen.len() == c {
                break;
            }
        }
    }
    (chosen.len() == c).then_some(chosen)
}

/// Coefficients interpolating the basis rows exactly.
fn basic_solution(d: &Design, basis: &[usize]) -> Option<Vec<f64>> {
    let a: Vec<f64> = basis.iter().flat_map(|&i| d.row(i).to_vec()).collect();
    let b: Vec<f64> = basis.iter().map(|&i| d.y[i]).collect();
    solve_small(a, b, d.cols)
}

/// Simplex-style descent over basic solutions of the check-loss LP.
///
/// From each vertex, the `2 (p + 1)` edges release one basis row upward or
/// downward. The steepest descending edge is followed to the breakpoint
/// minimizing the loss along it (a weighted median), where the row whose
/// residual hits zero enters the basis. Stops when no edge descends.
fn vertex_descent(d: &Design, tau: f64, mut basis: Vec<usize>) -> Option<Vec<f64>> {
    let c = d.cols;
    let n = d.rows();
    let mut beta = basic_solution(d, &basis)?;
    let mut in_basis = vec![false; n];
    for &i in &basis {
        in_basis[i] = true;
    }
    let scale = d.y.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    for _ in 0..(20 * n + 20) {
        let resid: Vec<f64> =
            d.fitted(&beta).enumerate().map(|(i, f)| if in_basis[i] { 0.0 } else { d.y[i] - f }).collect();
        let zero_tol = 1e-12 * scale;
        // X_B^{-T}-free edge directions: solve X_B dir = e_k per basis slot
        let xb: Vec<f64> = basis.iter().flat_map(|&i| d.row(i).to_vec()).collect();
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for k in 0..c {
            let mut e = vec![0.0; c];
            e[k] = 1.0;
            let dir = solve_small(xb.clone(), e, c)?;
            let g: Vec<f64> = (0..n).map(|i| d.row(i).iter().zip(&dir).map(|(a, b)| a * b).sum()).collect();
            for sign in [1.0, -1.0] {
                let mut deriv = 0.0;
                for i in 0..n {
                    let gi = sign * g[i];
                    if in_basis[i] {
                        if i == basis[k] {
                            // fitted value at row k moves by `sign`
                            deriv += if gi > 0.0 { 1.0 - tau } else { tau } * gi.abs();
                        }
                        continue;
                    }
                    let r = resid[i];
                    if r > zero_tol {
                        deriv -= tau * gi;
                    } else if r < -zero_tol {
                        deriv += (1.0 - tau) * gi;
                    } else {
                        deriv += if gi > 0.0 { 1.0 - tau } else { tau } * gi.abs();
                    }
                }
                if deriv < -1e-12 && best.as_ref().is_none_or(|b| deriv < b.0) {
                    let dir_s: Vec<f64> = dir.iter().map(|v| sign * v).collect();
                    best = Some((deriv, k, dir_s));
                }
            }
        }
        let Some((deriv, k, dir)) = best else {
            return Some(beta);
        };
        // breakpoints where a nonbasic residual crosses zero
        let mut breaks: Vec<(f64, f64, usize)> = (0..n)
            .filter(|&i| !in_basis[i] && resid[i].abs() > zero_tol)
            .filter_map(|i| {
                let gi: f64 = d.row(i).iter().zip(&dir).map(|(a, b)| a * b).sum();
                let t = resid[i] / gi;
                (gi != 0.0 && t > 0.0).then_some((t, gi.abs(), i))
            })
            .collect();
        breaks.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));
        let mut slope = deriv;
        let mut entering = None;
        for (_, w, i) in breaks {
            slope += w;
            if slope >= 0.0 {
                entering = Some(i);
                break;
            }
        }
        let entering = entering?;
        in_basis[basis[k]] = false;
        in_basis[entering] = true;
        basis[k] = entering;
        beta = basic_solution(d, &basis)?;
    }
    Some(beta)
}

fn fit_design(d: &Design, tau: f64) -> (Vec<f64>, f64) {
    let c = d.cols;
    let q0 = quantile_constant(&d.y, tau);
    let mut constant = vec![0.0; c];
    constant[0] = q0;
    let constant_loss = d.loss(&constant, tau);
    if c == 1 {
        return (constant, constant_loss);
    }
    let ones = vec![1.0; d.rows()];
    let warm = weighted_solve(d, &ones, 0.0).unwrap_or_else(|| constant.clone());
    let mut best = (constant, constant_loss);
    let mm = mm_fit(d, tau, warm);
    let exact = initial_basis(d, &mm).and_then(|b| vertex_descent(d, tau, b));
    for cand in [Some(mm), exact].into_iter().flatten() {
        let loss = d.loss(&cand, tau);
        if loss.is_finite() && loss < best.1 {
            best = (cand, loss);
        }
    }
    best
}

fn check_series(series: &[f64]) -> Result<()> {
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("residual series must be finite".into()));
    }
    Ok(())
}

/// Fits an AR(`p`) quantile regression at `level` on rows `s = p..len`.
///
/// Falls back to order 0 (with `fallback` set) when fewer than `p + 2`
/// usable rows remain.
pub fn fit_quantile_ar(series: &[f64], p: usize, level: f64) -> Result<QuantRegModel> {
    check_level(level)?;
    check_series(series)?;
    if series.is_empty() {
        return Err(Error::InsufficientData { what: "quantile regression", needed: 1, got: 0 });
    }
    let (p, fallback) = if series.len() >= p + p + 2 { (p, false) } else { (0, p > 0) };
    let d = Design::new(series, p, p);
    let (coefficients, loss) = fit_design(&d, level);
    Ok(QuantRegModel { order: p, coefficients, level, loss, n_eff: d.rows(), fallback })
}

/// `min(5, floor(len / 10))`.
pub fn default_p_max(len: usize) -> usize {
    DEFAULT_P_MAX_CAP.min(len / 10)
}

/// Order-selection criterion `2 n ln(loss + 1e-12) + 2 (p + 1)`.
pub fn quantile_aic(mean_loss: f64, n_eff: usize, p: usize) -> f64 {
    2.0 * n_eff as f64 * (mean_loss + AIC_LOSS_OFFSET).ln() + 2.0 * (p + 1) as f64
}

/// AIC-selected AR order in `0..=p_max`, all candidates fitted on the common
/// rows `s = p_max..len`. Ties go to the smallest order.
pub fn select_ar_order(series: &[f64], level: f64, p_max: Option<usize>) -> Result<usize> {
    check_level(level)?;
    check_series(series)?;
    if series.len() < 3 {
        return Err(Error::InsufficientData { what: "AR order selection", needed: 3, got: series.len() });
    }
    let feasible = (series.len() - 2) / 2;
    let p_max = p_max.unwrap_or_else(|| default_p_max(series.len())).min(feasible);
    let mut best = (0, f64::INFINITY);
    for p in 0..=p_max {
        let d = Design::new(series, p, p_max);
        let (_, loss) = fit_design(&d, level);
        let aic = quantile_aic(loss, d.rows(), p);
        if aic < best.1 {
            best = (p, aic);
        }
    }
    Ok(best.0)
}

/// Linear predictor at `latest_lags = (r_{l-1}, ..., r_{l-p})`, clamped at 0.
pub fn predict_quantile(model: &QuantRegModel, latest_lags: &[f64]) -> Result<f64> {
    if latest_lags.len() != model.order {
        return Err(Error::InvalidInput(format!(
            "model of order {} needs {} lags, got {}",
            model.order,
            model.order,
            latest_lags.len()
        )));
    }
    let q = model.coefficients[0] + model.coefficients[1..].iter().zip(latest_lags).map(|(c, r)| c * r).sum::<f64>();
    Ok(q.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(coefs: &[f64]) -> QuantRegModel {
        QuantRegModel {
            order: coefs.len() - 1,
            coefficients: coefs.to_vec(),
            level: 0.8,
            loss: 0.0,
            n_eff: 10,
            fallback: false,
        }
    }

    #[test]
    fn pinball_examples() {
        assert_eq!(pinball_loss(0.4, 0.4, 0.95), 0.0);
        assert!((pinball_loss(1.0, 0.0, 0.95) - 0.95).abs() < 1e-15);
        assert!((pinball_loss(0.0, 1.0, 0.95) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn constant_series_has_zero_loss() {
        let r = vec![0.7; 30];
        for p in 0..3 {
            let m = fit_quantile_ar(&r, p, 0.8).unwrap();
            let lags = vec![0.7; m.order];
            assert!((predict_quantile(&m, &lags).unwrap() - 0.7).abs() < 1e-9);
            assert!(m.loss < 1e-12);
        }
    }

    #[test]
    fn exact_ar1_is_recovered() {
        let mut r = vec![1.0];
        for _ in 0..29 {
            r.push(0.5 * r.last().unwrap());
        }
        for level in [0.2, 0.8, 0.95] {
            let m = fit_quantile_ar(&r, 1, level).unwrap();
            assert!(m.loss <= 1e-8, "{m:?}");
            assert!(m.coefficients[0].abs() < 1e-6 && (m.coefficients[1] - 0.5).abs() < 1e-6);
        }
        assert_eq!(select_ar_order(&r, 0.8, None).unwrap(), 1);
    }

    #[test]
    fn order_zero_is_the_sample_quantile_when_it_minimizes() {
        // tau n = 8 is an integer, so type-7 lies in the flat minimizer segment
        let r: Vec<f64> = vec![0.3, 1.2, 0.1, 0.9, 0.5, 2.2, 0.05, 0.8, 1.7, 0.4];
        let m = fit_quantile_ar(&r, 0, 0.8).unwrap();
        assert!((m.intercept() - stats::quantile(&r, 0.8).unwrap()).abs() < 1e-12);
        // tau n = 5.6: unique minimizer is the 6th order statistic
        let r7 = [0.3, 1.2, 0.1, 0.9, 0.5, 2.2, 0.05];
        assert_eq!(quantile_constant(&r7, 0.8), 1.2);
    }

    #[test]
    fn default_order_cap() {
        assert_eq!(default_p_max(30), 3);
        assert_eq!(default_p_max(9), 0);
        assert_eq!(default_p_max(200), 5);
        assert!(select_ar_order(&[0.1, 0.2], 0.8, None).is_err());
    }

    #[test]
    fn short_series_falls_back_to_order_zero() {
        let m = fit_quantile_ar(&[0.1, 0.4, 0.2], 2, 0.8).unwrap();
        assert_eq!(m.order, 0);
        assert!(m.fallback);
    }

    #[test]
    fn prediction_examples() {
        assert!((predict_quantile(&model(&[0.3]), &[]).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(predict_quantile(&model(&[0.0, 0.5]), &[2.0]).unwrap(), 1.0);
        assert_eq!(predict_quantile(&model(&[-1.0, 0.0]), &[3.0]).unwrap(), 0.0);
        assert!(predict_quantile(&model(&[0.0, 0.5]), &[]).is_err());
    }

    #[test]
    fn solve_small_handles_pivoting() {
        let z = solve_small(vec![0.0, 1.0, 1.0, 0.0], vec![2.0, 3.0], 2).unwrap();
        assert_eq!(z, vec![3.0, 2.0]);
        assert!(solve_small(vec![1.0, 2.0, 2.0, 4.0], vec![1.0, 2.0], 2).is_none());
    }
}
