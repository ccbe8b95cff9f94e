use fts_conformal::ets::{fit_ets, EtsKind};
use proptest::prelude::*;

fn series() -> impl Strategy<Value = Vec<f64>> {
    (8usize..40, -3.0f64..3.0, -0.3f64..0.3).prop_flat_map(|(n, start, drift)| {
        prop::collection::vec(-0.5f64..0.5, n)
            .prop_map(move |noise| noise.iter().enumerate().map(|(t, e)| start + drift * t as f64 + e).collect())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn prefix_consistency(y in series(), h in 1usize..12) {
        for kind in EtsKind::ALL {
            let fit = fit_ets(&y, &[kind]).unwrap();
            let long = fit.forecast(h + 5).unwrap();
            prop_assert_eq!(&fit.forecast(h).unwrap()[..], &long[..h]);
        }
    }

    #[test]
    fn shift_equivariance(y in series(), c in -50.0f64..50.0) {
        let shifted: Vec<f64> = y.iter().map(|v| v + c).collect();
        for kind in EtsKind::ALL {
            let a = fit_ets(&y, &[kind]).unwrap().forecast(5).unwrap();
            let b = fit_ets(&shifted, &[kind]).unwrap().forecast(5).unwrap();
            let spread = y.iter().fold(0.0f64, |m, v| m.max(v.abs())) + c.abs();
            for (x, z) in a.iter().zip(&b) {
                prop_assert!((x + c - z).abs() <= 1e-8 * spread.max(1.0), "{kind}: {x} + {c} vs {z}");
            }
        }
    }
}

#[test]
fn iid_noise_prefers_the_simple_level() {
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let reps = 200;
    let ok = (0..reps)
        .filter(|_| {
            let y: Vec<f64> = (0..40).map(|_| normal.sample(&mut rng)).collect();
            let ann = fit_ets(&y, &[EtsKind::Ann]).unwrap().aicc;
            let aan = fit_ets(&y, &[EtsKind::Aan]).unwrap().aicc;
            ann <= aan + 2.0
        })
        .count();
    assert!(ok as f64 >= 0.9 * reps as f64, "{ok}/{reps}");
}

/// Holt recursion written out directly; forecasts `l_n + h b_n`.
fn holt_oracle(y: &[f64], alpha: f64, beta: f64, l0: f64, b0: f64, horizon: usize) -> Vec<f64> {
    let (mut l, mut b) = (l0, b0);
    for v in y {
        let err = v - (l + b);
        l = l + b + alpha * err;
        b += beta * err;
    }
    (1..=horizon).map(|h| l + h as f64 * b).collect()
}

#[test]
fn holt_tracks_a_line() {
    let y: Vec<f64> = (1..=20).map(f64::from).collect();
    let fit = fit_ets(&y, &[EtsKind::Aan]).unwrap();
    for (h, f) in fit.forecast(5).unwrap().iter().enumerate() {
        assert!((f - (20.0 + (h + 1) as f64)).abs() <= 1e-4);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn holt_forecasts_match_the_recursion(y in series()) {
        let fit = fit_ets(&y, &[EtsKind::Aan]).unwrap();
        let oracle = holt_oracle(&y, fit.alpha, fit.beta, fit.initial_level, fit.initial_trend, 6);
        for (f, o) in fit.forecast(6).unwrap().iter().zip(&oracle) {
            prop_assert!((f - o).abs() <= 1e-9 * o.abs().max(1.0));
        }
    }
}
