//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use nalgebra::DMatrix;

/// Type-7 sample quantile written out from its definition.
pub fn type7(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = (v.len() as f64 - 1.0) * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Mean pinball loss of a constant predictor.
pub fn mean_pinball(values: &[f64], q: f64, tau: f64) -> f64 {
    values.iter().map(|&a| if a >= q { tau * (a - q) } else { (1.0 - tau) * (q - a) }).sum::<f64>()
        / values.len() as f64
}

/// EVR criterion evaluated literally over `k = 1..=k_max`.
pub fn evr_brute(eigs: &[f64], tau: f64, k_max: usize) -> (usize, bool) {
    let mut best_k = 1;
    let mut best_v = f64::INFINITY;
    for k in 1..=k_max {
        let v = if eigs[k - 1] > tau { eigs[k] / eigs[k - 1] } else { 1.0 };
        if v < best_v {
            best_v = v;
            best_k = k;
        }
    }
    (best_k, eigs[0] <= tau)
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// eigenvalues in descending order and the matching eigenvectors as columns.
pub fn jacobi_eigen(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut a = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| a[(j, j)].partial_cmp(&a[(i, i)]).unwrap());
    let vals = idx.iter().map(|&i| a[(i, i)]).collect();
    let vecs = DMatrix::from_fn(n, n, |r, c| v[(r, idx[c])]);
    (vals, vecs)
}

/// Sample covariance (denominator n - 1) of the rows of `x`.
pub fn covariance(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, j) = x.shape();
    let mean: Vec<f64> = (0..j).map(|c| x.column(c).sum() / n as f64).collect();
    DMatrix::from_fn(j, j, |a, b| {
        (0..n).map(|t| (x[(t, a)] - mean[a]) * (x[(t, b)] - mean[b])).sum::<f64>() / (n as f64 - 1.0)
    })
}

/// Trapezoid weights on an arbitrary increasing grid.
pub fn trapezoid(ages: &[f64]) -> Vec<f64> {
    let n = ages.len();
    (0..n)
        .map(|i| {
            let left = if i > 0 { ages[i] - ages[i - 1] } else { 0.0 };
            let right = if i + 1 < n { ages[i + 1] - ages[i] } else { 0.0 };
            0.5 * (left + right)
        })
        .collect()
}

/// Whole-curve coverage counted directly: curve `m` is covered when every
/// age satisfies `-lo g <= e <= hi g`.
pub fn band_coverage(res: &DMatrix<f64>, gamma: &[f64], lo: f64, hi: f64) -> f64 {
    let m = res.nrows();
    let covered = (0..m)
        .filter(|&r| (0..res.ncols()).all(|c| -lo * gamma[c] <= res[(r, c)] && res[(r, c)] <= hi * gamma[c]))
        .count();
    covered as f64 / m as f64
}
