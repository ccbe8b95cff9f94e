mod common;

use fts_conformal::split::{
    band_ecp, calibrate_xi, calibrate_xi_pair, isotonic_smooth_xi, pointwise_ecp, predict_interval_split,
    scale_function, ResidualSet, ScaleFunction, ScaleStat,
};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn residual_set() -> impl Strategy<Value = ResidualSet> {
    (1usize..25, 1usize..6).prop_flat_map(|(m, j)| {
        prop::collection::vec(-3.0f64..3.0, m * j).prop_map(move |v| {
            let res = DMatrix::from_row_slice(m, j, &v);
            ResidualSet::new(1, res, (0..m as i32).collect()).unwrap()
        })
    })
}

fn fixed_gamma(j: usize, values: &[f64]) -> ScaleFunction {
    ScaleFunction { stat: ScaleStat::Sd, alpha: 0.1, gamma: values[..j].to_vec() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn calibration_is_correct_and_minimal(res in residual_set(), gam in prop::collection::vec(0.2f64..2.0, 6), alpha in 0.01f64..0.6) {
        let scale = fixed_gamma(res.n_ages(), &gam);
        let xi = calibrate_xi(&res, &scale, alpha).unwrap();
        prop_assert!(band_ecp(&res, &scale, xi, xi) >= 1.0 - alpha);
        if xi > 0.0 {
            prop_assert!(band_ecp(&res, &scale, xi - 1e-6, xi - 1e-6) < 1.0 - alpha);
        }
        // independent recount; products and ratios may round apart at the boundary
        let slack = xi * (1.0 + 1e-12);
        prop_assert_eq!(band_ecp(&res, &scale, xi, xi), common::band_coverage(&res.residuals, &scale.gamma, slack, slack));
    }

    #[test]
    fn matches_grid_search(res in residual_set(), gam in prop::collection::vec(0.2f64..2.0, 6), alpha in 0.01f64..0.6) {
        let scale = fixed_gamma(res.n_ages(), &gam);
        let xi = calibrate_xi(&res, &scale, alpha).unwrap();
        let step = 1e-4;
        let mut grid = 0.0;
        let mut k = 0u64;
        while band_ecp(&res, &scale, grid, grid) < 1.0 - alpha {
            k += 1;
            grid = k as f64 * step;
        }
        prop_assert!(grid >= xi - 1e-12 && grid - xi <= step + 1e-12, "grid {grid} vs exact {xi}");
    }

    #[test]
    fn pair_controls_each_tail(res in residual_set(), gam in prop::collection::vec(0.2f64..2.0, 6), alpha in 0.01f64..0.6) {
        let scale = fixed_gamma(res.n_ages(), &gam);
        let pair = calibrate_xi_pair(&res, &scale, alpha).unwrap();
        prop_assert!(band_ecp(&res, &scale, pair.lower, f64::INFINITY) >= 1.0 - alpha / 2.0);
        prop_assert!(band_ecp(&res, &scale, f64::INFINITY, pair.upper) >= 1.0 - alpha / 2.0);
        if pair.upper > 0.0 {
            prop_assert!(band_ecp(&res, &scale, f64::INFINITY, pair.upper - 1e-6) < 1.0 - alpha / 2.0);
        }
        if pair.lower > 0.0 {
            prop_assert!(band_ecp(&res, &scale, pair.lower - 1e-6, f64::INFINITY) < 1.0 - alpha / 2.0);
        }
    }

    #[test]
    fn scale_equivariance(res in residual_set(), c in 0.01f64..100.0, alpha in 0.01f64..0.6) {
        prop_assume!(res.len() >= 2);
        let scaled = ResidualSet::new(1, &res.residuals * c, res.origin_years.clone()).unwrap();
        for stat in [ScaleStat::Sd, ScaleStat::Iqr, ScaleStat::Mad, ScaleStat::Quantile] {
            let g = scale_function(&res, stat, alpha).unwrap();
            let gs = scale_function(&scaled, stat, alpha).unwrap();
            let a = calibrate_xi(&res, &g, alpha).unwrap();
            let b = calibrate_xi(&scaled, &gs, alpha).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0), "{stat}: {a} vs {b}");
        }
        let g = ScaleFunction { stat: ScaleStat::Sd, alpha, gamma: vec![1.0; res.n_ages()] };
        let a = calibrate_xi(&res, &g, alpha).unwrap();
        let b = calibrate_xi(&scaled, &g, alpha).unwrap();
        prop_assert!((a * c - b).abs() <= 1e-9 * b.max(1.0));
    }

    #[test]
    fn monotone_in_alpha(res in residual_set(), gam in prop::collection::vec(0.2f64..2.0, 6), a1 in 0.01f64..0.9, a2 in 0.01f64..0.9) {
        let (lo, hi) = if a1 < a2 { (a1, a2) } else { (a2, a1) };
        let scale = fixed_gamma(res.n_ages(), &gam);
        prop_assert!(calibrate_xi(&res, &scale, lo).unwrap() >= calibrate_xi(&res, &scale, hi).unwrap());
    }

    #[test]
    fn isotonic_matches_brute_force(values in prop::collection::vec(0usize..5, 1..=5)) {
        let x: Vec<f64> = values.iter().map(|v| *v as f64).collect();
        let fit = isotonic_smooth_xi(&x);
        let sse = |y: &[f64]| -> f64 { y.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum() };
        prop_assert!(fit.windows(2).all(|w| w[0] <= w[1] + 1e-12));
        // brute force over nondecreasing sequences on a fine grid of the value range
        let grid: Vec<f64> = (0..=16).map(|i| i as f64 * 0.25).collect();
        let mut best = f64::INFINITY;
        let mut seq = vec![0usize; x.len()];
        loop {
            let y: Vec<f64> = seq.iter().map(|&i| grid[i]).collect();
            best = best.min(sse(&y));
            // next nondecreasing index sequence
            let mut i = seq.len();
            loop {
                if i == 0 {
                    break;
                }
                i -= 1;
                if seq[i] + 1 < grid.len() {
                    seq[i] += 1;
                    let v = seq[i];
                    for s in seq.iter_mut().skip(i + 1) {
                        *s = v;
                    }
                    break;
                }
                if i == 0 {
                    i = usize::MAX;
                    break;
                }
            }
            if i == usize::MAX {
                break;
            }
        }
        // PAV is optimal over all reals, so it can only beat the grid
        prop_assert!(sse(&fit) <= best + 1e-9);
        // and the grid contains every pooled mean of at most 4 integers
        // only up to a quarter step, so the gap is bounded
        prop_assert!(best - sse(&fit) <= 0.25);
    }

    #[test]
    fn intervals_are_ordered(f in prop::collection::vec(-5.0f64..5.0, 4), lo in 0.0f64..3.0, hi in 0.0f64..3.0) {
        let scale = ScaleFunction { stat: ScaleStat::Sd, alpha: 0.1, gamma: vec![0.0, 0.5, 1.0, 2.0] };
        let (lb, ub) = predict_interval_split(&f, &scale, lo, hi).unwrap();
        prop_assert!(lb.iter().zip(&ub).all(|(l, u)| l <= u));
    }
}

fn set(rows: &[&[f64]]) -> ResidualSet {
    let m = rows.len();
    let j = rows[0].len();
    let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
    ResidualSet::new(1, DMatrix::from_row_slice(m, j, &flat), (0..m as i32).collect()).unwrap()
}

#[test]
fn pair_examples() {
    let unit = ScaleFunction { stat: ScaleStat::Sd, alpha: 0.2, gamma: vec![1.0, 1.0] };
    let sym = set(&[&[1.0, 1.0], &[-1.0, -1.0]]);
    let p = calibrate_xi_pair(&sym, &unit, 0.2).unwrap();
    assert_eq!((p.lower, p.upper), (1.0, 1.0));
    let pos = set(&[&[0.5, 1.0], &[2.0, 0.1], &[0.3, 0.3]]);
    assert_eq!(calibrate_xi_pair(&pos, &unit, 0.2).unwrap().lower, 0.0);
    let zero = set(&[&[0.0, 0.0], &[0.0, 0.0]]);
    let p = calibrate_xi_pair(&zero, &unit, 0.2).unwrap();
    assert_eq!((p.lower, p.upper), (0.0, 0.0));
}

#[test]
fn isotonic_examples() {
    assert_eq!(isotonic_smooth_xi(&[1.0, 2.0, 3.0]), vec![1.0, 2.0, 3.0]);
    assert_eq!(isotonic_smooth_xi(&[3.0, 1.0]), vec![2.0, 2.0]);
    assert_eq!(isotonic_smooth_xi(&[1.0, 3.0, 2.0]), vec![1.0, 2.5, 2.5]);
}

#[test]
fn matching_test_residuals_reproduce_validation_coverage() {
    // test residuals identical to the validation residuals give the same
    // coverage as measured on the validation set
    let res = set(&[&[0.1, -0.4, 0.2], &[0.9, 0.1, -0.3], &[-0.2, 0.5, 0.6], &[0.3, -1.2, 0.0], &[0.05, 0.2, -0.1]]);
    let scale = scale_function(&res, ScaleStat::Sd, 0.2).unwrap();
    let xi = calibrate_xi(&res, &scale, 0.2).unwrap();
    let forecast = [1.0, 2.0, 3.0];
    let (lb, ub) = predict_interval_split(&forecast, &scale, xi, xi).unwrap();
    let mut curves = 0;
    let mut cells = 0;
    for r in res.residuals.row_iter() {
        let inside: Vec<bool> = (0..3)
            .map(|j| {
                let a = forecast[j] + r[j];
                lb[j] <= a && a <= ub[j]
            })
            .collect();
        curves += inside.iter().all(|b| *b) as usize;
        cells += inside.iter().filter(|b| **b).count();
    }
    assert_eq!(curves as f64 / 5.0, band_ecp(&res, &scale, xi, xi));
    assert_eq!(cells as f64 / 15.0, pointwise_ecp(&res, &scale, xi, xi));
}
