use adaptive_sampling::checks::{box_qp_error, soft_threshold_error, BoxQp};
use adaptive_sampling::qp::{reformulate, solve_qp, ConvexSubproblem, EqRow, LinearRow, PenaltyTerm, QpStatus};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn box_qps_match_active_set_enumeration() {
    for seed in 0..100 {
        let e = box_qp_error(seed);
        assert!(e < 1e-5, "seed {seed}: {e:e}");
    }
}

#[test]
fn l1_instances_match_soft_threshold() {
    for seed in 0..100 {
        let e = soft_threshold_error(seed);
        assert!(e < 1e-6, "seed {seed}: {e:e}");
    }
}

#[test]
fn no_random_feasible_point_is_better() {
    for seed in 0..20 {
        let b = BoxQp::random(500 + seed);
        let s = solve_qp(&b.standard(), 1e-6, 20_000);
        let f = b.objective(&s.x);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..100 {
            let x: Vec<f64> = (0..b.dim()).map(|j| rng.random_range(b.lo[j]..=b.hi[j])).collect();
            assert!(f <= b.objective(&x) + 1e-6);
        }
    }
}

#[test]
fn scaling_leaves_the_argmin_unchanged() {
    for seed in 0..20 {
        let b = BoxQp::random(700 + seed);
        let mut sub = ConvexSubproblem::new(b.p.clone(), b.q.clone());
        sub.l1_terms.push(PenaltyTerm::new(0.7, LinearRow::from_dense(&vec![1.0; b.dim()]), -0.3));
        sub.hinge_terms.push(PenaltyTerm::new(2.0, LinearRow::new(vec![(0, 1.0)]), 0.5));
        sub.trust_bound = 1.5;
        let x1 = solve_qp(&reformulate(&sub), 1e-6, 20_000).x;
        let c = 37.0;
        sub.p *= c;
        sub.q *= c;
        sub.l1_terms[0].weight *= c;
        sub.hinge_terms[0].weight *= c;
        let x2 = solve_qp(&reformulate(&sub), 1e-6, 20_000).x;
        for j in 0..b.dim() {
            assert!((x1[j] - x2[j]).abs() < 1e-6, "seed {seed}");
        }
    }
}

#[test]
fn equality_constrained_matches_kkt_system() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let n = 5;
        let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let p = b.transpose() * &b + DMatrix::identity(n, n);
        let q = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let a = DMatrix::from_fn(2, n, |_, _| rng.random_range(-1.0..1.0));
        let rhs = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
        let mut sub = ConvexSubproblem::new(p.clone(), q.clone());
        for i in 0..2 {
            sub.eq_rows.push(EqRow { row: LinearRow::from_dense(a.row(i).transpose().as_slice()), rhs: rhs[i] });
        }
        let s = solve_qp(&reformulate(&sub), 1e-6, 20_000);
        assert_eq!(s.status, QpStatus::Optimal);

        let mut kkt = DMatrix::zeros(n + 2, n + 2);
        kkt.view_mut((0, 0), (n, n)).copy_from(&p);
        kkt.view_mut((n, 0), (2, n)).copy_from(&a);
        kkt.view_mut((0, n), (n, 2)).copy_from(&a.transpose());
        let mut r = DVector::zeros(n + 2);
        r.rows_mut(0, n).copy_from(&(-&q));
        r.rows_mut(n, 2).copy_from(&rhs);
        let sol = kkt.lu().solve(&r).unwrap();
        for j in 0..n {
            assert!((s.x[j] - sol[j]).abs() < 1e-6);
        }
    }
}

#[test]
fn hinge_inactive_at_optimum() {
    let mut sub = ConvexSubproblem::new(DMatrix::identity(1, 1), DVector::zeros(1));
    sub.hinge_terms.push(PenaltyTerm::new(1.0, LinearRow::new(vec![(0, 1.0)]), -1.0));
    let s = solve_qp(&reformulate(&sub), 1e-6, 20_000);
    assert!(s.x[0].abs() < 1e-6);
}

#[test]
fn both_algorithms_agree_with_enumeration() {
    use adaptive_sampling::qp::{solve_qp_from, QpAlgorithm, QpSettings};
    for seed in 0..30 {
        let b = BoxQp::random(900 + seed);
        let x = b.enumerate().unwrap();
        for algorithm in [QpAlgorithm::InteriorPoint, QpAlgorithm::OperatorSplitting] {
            let s = solve_qp_from(&b.standard(), &QpSettings { algorithm, ..QpSettings::default() }, None);
            assert_eq!(s.status, QpStatus::Optimal);
            let e = s.x.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(e < 1e-5, "seed {seed} {algorithm:?}: {e:e}");
        }
    }
}
