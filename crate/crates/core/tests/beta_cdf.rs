mod common;

use common::{beta_cdf_oracle, beta_cdf_oracle_grid, grid_x, GRID_PAIRS};
use fedoui_core::beta::{bilateral_score, fit_beta_moments, regularized_incomplete_beta, BetaFit, BetaParams};
use fedoui_core::oui::OuiValue;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};

fn cdf(x: f64, a: f64, b: f64) -> f64 {
    regularized_incomplete_beta(x, &BetaParams::new(a, b).unwrap()).unwrap()
}

#[test]
fn cdf_matches_quadrature_on_grid() {
    let xs = grid_x();
    let mut worst = (0.0, 0.0, 0.0, 0.0);
    for (a, b) in GRID_PAIRS {
        let expected = beta_cdf_oracle_grid(&xs, a, b);
        for (&x, want) in xs.iter().zip(expected) {
            let err = (cdf(x, a, b) - want).abs();
            if err > worst.0 {
                worst = (err, x, a, b);
            }
        }
    }
    assert!(worst.0 <= 1e-10, "max error {:e} at x={} a={} b={}", worst.0, worst.1, worst.2, worst.3);
}

#[test]
fn cdf_at_reported_round_center() {
    let want = beta_cdf_oracle(0.2767, 6.10, 15.94);
    let got = cdf(0.2767, 6.10, 15.94);
    assert!((got - want).abs() <= 1e-10, "{got} vs {want}");
    let p = BetaParams::new(6.10, 15.94).unwrap();
    let s = bilateral_score(OuiValue::new(0.2767).unwrap(), &p).unwrap();
    assert!((s - 2.0 * want.min(1.0 - want)).abs() <= 2e-10);
}

#[test]
fn reflection_identity() {
    for (a, b) in GRID_PAIRS {
        for x in grid_x() {
            let lhs = cdf(x, a, b);
            let rhs = 1.0 - cdf(1.0 - x, b, a);
            assert!((lhs - rhs).abs() <= 1e-10, "x={x} a={a} b={b}: {lhs} vs {rhs}");
        }
    }
}

#[test]
fn uniform_is_identity() {
    for i in 0..=1000 {
        let x = i as f64 / 1000.0;
        assert!((cdf(x, 1.0, 1.0) - x).abs() <= 1e-12);
    }
    assert!((cdf(0.3, 1.0, 1.0) - 0.3).abs() <= 1e-12);
}

#[test]
fn fit_recovers_mean_of_large_sample() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let dist = Beta::new(6.10, 15.94).unwrap();
    let samples: Vec<f64> = (0..10_000).map(|_| dist.sample(&mut rng)).collect();
    let p = fit_beta_moments(&samples).unwrap().params().expect("fitted");
    assert!((p.mean() - 0.2768).abs() < 0.01, "mean {}", p.mean());
}

fn log_uniform(lo: f64, hi: f64) -> impl Strategy<Value = f64> {
    (lo.ln()..hi.ln()).prop_map(f64::exp)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn cdf_is_monotone(a in log_uniform(1e-3, 1e4), b in log_uniform(1e-3, 1e4)) {
        let mut prev = 0.0;
        for i in 0..=400 {
            let v = cdf(i as f64 / 400.0, a, b);
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert!(v >= prev - 1e-12, "drop at {i}: {prev} -> {v}");
            prev = v;
        }
        prop_assert_eq!(cdf(0.0, a, b), 0.0);
        prop_assert_eq!(cdf(1.0, a, b), 1.0);
    }

    #[test]
    fn score_is_unimodal_with_peak_one_at_median(a in log_uniform(0.2, 500.0), b in log_uniform(0.2, 500.0)) {
        let p = BetaParams::new(a, b).unwrap();
        let score = |x: f64| bilateral_score(OuiValue::new(x).unwrap(), &p).unwrap();
        let med = p.median().unwrap();
        prop_assert!((score(med) - 1.0).abs() <= 1e-8);
        prop_assert_eq!(score(0.0), 0.0);
        prop_assert_eq!(score(1.0), 0.0);
        let vals: Vec<f64> = (0..=1000).map(|i| score(i as f64 / 1000.0)).collect();
        let peak = vals
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.total_cmp(y.1))
            .map(|(i, _)| i)
            .unwrap();
        for w in vals[..=peak].windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-9);
        }
        for w in vals[peak..].windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9);
        }
    }

    #[test]
    fn moments_round_trip(a in 0.5f64..50.0, b in 0.5f64..50.0, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Beta::new(a, b).unwrap();
        let xs: Vec<f64> = (0..10_000).map(|_| dist.sample(&mut rng)).collect();
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
        match fit_beta_moments(&xs).unwrap() {
            BetaFit::Fitted(p) => {
                prop_assert!((p.mean() - m).abs() <= 1e-12 * m);
                prop_assert!((p.variance() - v).abs() <= 1e-10 * v);
            }
            BetaFit::Degenerate => prop_assert!(false, "unexpected degenerate fit"),
        }
    }
}
