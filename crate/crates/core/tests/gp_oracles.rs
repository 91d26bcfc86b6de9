use adaptive_sampling::checks::{gp_case, gradient_error, posterior_error};
use adaptive_sampling::geometry::Point;
use adaptive_sampling::gp::{predict, Dataset, GpPosterior, Hyperparams};
use proptest::prelude::*;

#[test]
fn predict_matches_dense_formulas() {
    for seed in 0..50 {
        let e = posterior_error(seed).unwrap();
        assert!(e < 1e-10, "seed {seed}: {e:e}");
    }
}

#[test]
fn gradient_matches_central_differences() {
    for seed in 0..20u64 {
        let m = [2, 5][seed as usize % 2];
        let n = [5, 20][(seed as usize / 2) % 2];
        let e = gradient_error(1000 + seed, n, m).unwrap();
        assert!(e < 1e-5, "seed {seed}: {e:e}");
    }
}

#[test]
fn neg_log_det_agrees_with_determinant() {
    for seed in 0..10 {
        let (data, h, q) = gp_case(50 + seed, 6, 3);
        let det = predict(&data, &h, &q).unwrap().covariance.determinant();
        let v = GpPosterior::new(&data, &h).unwrap().neg_log_det(&q).unwrap();
        assert!((v + det.ln()).abs() < 1e-8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn posterior_variance_below_prior(seed in 0u64..10_000, n in 0usize..8) {
        let (data, h, q) = gp_case(seed, n, 4);
        let cov = predict(&data, &h, &q).unwrap().covariance;
        for i in 0..q.len() {
            prop_assert!(cov[(i, i)] <= h.signal_variance + 1e-8);
        }
    }

    #[test]
    fn extra_measurement_never_raises_log_det(seed in 0u64..10_000, x in 0.0..8.0f64, y in 0.0..8.0f64) {
        let (data, h, q) = gp_case(seed, 4, 3);
        let before = predict(&data, &h, &q).unwrap().covariance.determinant().ln();
        let mut more = data.clone();
        more.push(Point::new(x, y), 0.0);
        let after = predict(&more, &h, &q).unwrap().covariance.determinant().ln();
        prop_assert!(after <= before + 1e-9);
    }
}

#[test]
fn prior_is_returned_without_data() {
    let h = Hyperparams { constant_mean: 3.0, signal_variance: 2.0, length_scale: 1.5, noise_variance: 0.1 };
    let s = predict(&Dataset::default(), &h, &[Point::new(1.0, 1.0)]).unwrap();
    assert_eq!(s.mean[0], 3.0);
    assert_eq!(s.covariance[(0, 0)], 2.0);
}
