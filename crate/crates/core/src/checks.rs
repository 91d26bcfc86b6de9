//! Oracle suites: independent reference computations for the GP posterior,
//! the gradient of `f0` and the QP solver. The CLI's check subcommands and
//! the integration tests both run these.

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::gp::{kernel, Dataset, GpPosterior, Hyperparams};
use crate::qp::{reformulate, solve_qp, ConvexSubproblem, CsrMatrix, LinearRow, PenaltyTerm, QpStatus, StandardQp};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_points(rng: &mut ChaCha8Rng, n: usize, span: f64) -> Vec<Point> {
    (0..n).map(|_| Point::new(rng.random_range(0.0..span), rng.random_range(0.0..span))).collect()
}

/// Random hyperparameters, `n` training points and `m` query sites.
pub fn gp_case(seed: u64, n: usize, m: usize) -> (Dataset, Hyperparams, Vec<Point>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = Hyperparams {
        constant_mean: rng.random_range(-1.0..1.0),
        signal_variance: rng.random_range(0.5..2.0),
        length_scale: rng.random_range(1.0..3.0),
        noise_variance: rng.random_range(0.01..0.1),
    };
    let locs = random_points(&mut rng, n, 8.0);
    let ys = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let data = Dataset::new(locs, ys).expect("lengths match by construction");
    (data, h, random_points(&mut rng, m, 8.0))
}

/// Posterior mean and covariance by explicit matrix inversion.
pub fn dense_posterior(data: &Dataset, h: &Hyperparams, q: &[Point]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let x = data.locations();
    let n = x.len();
    let k = DMatrix::from_fn(n, n, |i, j| kernel(&x[i], &x[j], h) + if i == j { h.noise_variance } else { 0.0 });
    let ks = DMatrix::from_fn(q.len(), n, |i, j| kernel(&q[i], &x[j], h));
    let kss = DMatrix::from_fn(q.len(), q.len(), |i, j| kernel(&q[i], &q[j], h));
    let kinv = k.try_inverse().ok_or(Error::IllConditioned { max_jitter: 0.0 })?;
    let y = DVector::from_iterator(n, data.measurements().iter().map(|v| v - h.constant_mean));
    let mean = (&ks * &kinv * y).add_scalar(h.constant_mean);
    let cov = kss - &ks * kinv * ks.transpose();
    Ok((mean, cov))
}

/// Largest relative deviation of `predict` from [`dense_posterior`].
pub fn posterior_error(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=6);
    let m = rng.random_range(1..=4);
    let (data, h, q) = gp_case(seed.wrapping_mul(31).wrapping_add(7), n, m);
    let got = GpPosterior::new(&data, &h)?.predict(&q)?;
    let (mean, cov) = dense_posterior(&data, &h, &q)?;
    let dm = (&got.mean - &mean).amax() / (1.0 + mean.amax());
    let dc = (&got.covariance - &cov).amax() / (1.0 + cov.amax());
    Ok(dm.max(dc))
}

/// Central differences of `f0` with step `step`.
pub fn finite_difference(gp: &GpPosterior, q: &[Point], step: f64) -> Result<Vec<f64>> {
    let mut g = vec![0.0; 2 * q.len()];
    for a in 0..q.len() {
        for c in 0..2 {
            let mut qp = q.to_vec();
            let mut qm = q.to_vec();
            qp[a][c] += step;
            qm[a][c] -= step;
            g[2 * a + c] = (gp.neg_log_det(&qp)? - gp.neg_log_det(&qm)?) / (2.0 * step);
        }
    }
    Ok(g)
}

/// Relative 2-norm error of the analytic gradient against central differences.
pub fn gradient_error(seed: u64, n: usize, m: usize) -> Result<f64> {
    let (data, h, q) = gp_case(seed, n, m);
    let gp = GpPosterior::new(&data, &h)?;
    let (_, g) = gp.neg_log_det_with_grad(&q)?;
    let fd = finite_difference(&gp, &q, 1e-5)?;
    let num: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let den: f64 = fd.iter().map(|b| b * b).sum::<f64>().sqrt().max(1e-12);
    Ok(num / den)
}

pub struct BoxQp {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxQp {
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=6);
        let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let p = b.transpose() * &b + DMatrix::identity(n, n) * 0.1;
        let q = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
        let lo: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..0.0)).collect();
        let hi: Vec<f64> = lo.iter().map(|l| l + rng.random_range(0.1..3.0)).collect();
        Self { p, q, lo, hi }
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn standard(&self) -> StandardQp {
        let n = self.dim();
        let mut a = CsrMatrix::new(n);
        for j in 0..n {
            a.push_row([(j, 1.0)]);
        }
        StandardQp {
            p: self.p.clone(),
            q: self.q.clone(),
            a,
            l: DVector::from_column_slice(&self.lo),
            u: DVector::from_column_slice(&self.hi),
            n_original: n,
        }
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let x = DVector::from_column_slice(x);
        0.5 * x.dot(&(&self.p * &x)) + self.q.dot(&x)
    }

    /// Tries every assignment of each variable to free, lower or upper and
    /// keeps the one satisfying the KKT conditions.
    pub fn enumerate(&self) -> Option<Vec<f64>> {
        let n = self.dim();
        let mut best: Option<(f64, Vec<f64>)> = None;
        for code in 0..3usize.pow(n as u32) {
            let mut state = vec![0u8; n];
            let mut c = code;
            for s in state.iter_mut() {
                *s = (c % 3) as u8;
                c /= 3;
            }
            let mut x = vec![0.0; n];
            for j in 0..n {
                x[j] = match state[j] {
                    1 => self.lo[j],
                    2 => self.hi[j],
                    _ => 0.0,
                };
            }
            let free: Vec<usize> = (0..n).filter(|&j| state[j] == 0).collect();
            if !free.is_empty() {
                let k = free.len();
                let pff = DMatrix::from_fn(k, k, |a, b| self.p[(free[a], free[b])]);
                let rhs = DVector::from_fn(k, |a, _| {
                    let j = free[a];
                    -self.q[j] - (0..n).filter(|l| state[*l] != 0).map(|l| self.p[(j, l)] * x[l]).sum::<f64>()
                });
                let Some(sol) = pff.lu().solve(&rhs) else {
                    continue;
                };
                for (a, &j) in free.iter().enumerate() {
                    x[j] = sol[a];
                }
            }
            let feasible = (0..n).all(|j| x[j] >= self.lo[j] - 1e-12 && x[j] <= self.hi[j] + 1e-12);
            let g = &self.p * DVector::from_column_slice(&x) + &self.q;
            let signs_ok = (0..n).all(|j| match state[j] {
                1 => g[j] >= -1e-12,
                2 => g[j] <= 1e-12,
                _ => true,
            });
            if feasible && signs_ok {
                let f = self.objective(&x);
                if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
                    best = Some((f, x));
                }
            }
        }
        best.map(|b| b.1)
    }
}

/// Infinity-norm distance between the solver's answer and enumeration;
/// infinite when the solver does not report an optimum.
pub fn box_qp_error(seed: u64) -> f64 {
    let b = BoxQp::random(seed);
    let s = solve_qp(&b.standard(), 1e-6, 20_000);
    match b.enumerate() {
        Some(x) if s.status == QpStatus::Optimal => s.x.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max),
        _ => f64::INFINITY,
    }
}

pub fn soft_threshold(v: f64, k: f64) -> f64 {
    v.signum() * (v.abs() - k).max(0.0)
}

/// `min rho/2 |x - v|^2 + lambda |x|` through the epigraph encoding; returns
/// the error against the analytic proximal map.
pub fn soft_threshold_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rho = rng.random_range(0.1..10.0);
    let lambda = rng.random_range(0.01..5.0);
    let v = rng.random_range(-5.0..5.0);
    let mut sub = ConvexSubproblem::new(DMatrix::from_element(1, 1, rho), DVector::from_element(1, -rho * v));
    sub.l1_terms.push(PenaltyTerm::new(lambda, LinearRow::new(vec![(0, 1.0)]), 0.0));
    let s = solve_qp(&reformulate(&sub), 1e-6, 20_000);
    if s.status != QpStatus::Optimal {
        return f64::INFINITY;
    }
    (s.x[0] - soft_threshold(v, lambda / rho)).abs()
}

/// Worst case of one oracle suite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckReport {
    pub instances: usize,
    pub worst: f64,
    pub tolerance: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.worst < self.tolerance
    }
}

/// Analytic gradient of `f0` against central differences (step 1e-5) on
/// `count` instances cycling through `M in {2, 5}` and `N in {5, 20}`.
pub fn gradcheck(count: u64) -> Result<CheckReport> {
    let mut worst: f64 = 0.0;
    for seed in 0..count {
        let m = [2, 5][seed as usize % 2];
        let n = [5, 20][(seed as usize / 2) % 2];
        worst = worst.max(gradient_error(1000 + seed, n, m)?);
    }
    Ok(CheckReport { instances: count as usize, worst, tolerance: 1e-5 })
}

/// Posterior against explicit inversion on `count` small instances.
pub fn gpcheck(count: u64) -> Result<CheckReport> {
    let mut worst: f64 = 0.0;
    for seed in 0..count {
        worst = worst.max(posterior_error(seed)?);
    }
    Ok(CheckReport { instances: count as usize, worst, tolerance: 1e-10 })
}

/// Box QPs against enumeration, then L1 instances against soft-thresholding.
pub fn qpcheck(count: u64) -> (CheckReport, CheckReport) {
    let boxes = (0..count).map(box_qp_error).fold(0.0, f64::max);
    let l1 = (0..count).map(soft_threshold_error).fold(0.0, f64::max);
    (
        CheckReport { instances: count as usize, worst: boxes, tolerance: 1e-5 },
        CheckReport { instances: count as usize, worst: l1, tolerance: 1e-6 },
    )
}
