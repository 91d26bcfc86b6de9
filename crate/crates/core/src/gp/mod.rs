//! Gaussian-process model of the scalar field.
//!
//! The model uses a constant mean and an isotropic squared-exponential
//! kernel. Measurement noise enters only on the diagonal of the training
//! covariance, so posterior covariances describe the latent field.
//!
//! The sampling metric is `-log det` of the posterior covariance at a set of
//! candidate sampling sites. Its gradient with respect to the sites follows
//! from `d log det S = tr(S^-1 dS)`: only the row and column of the moved
//! site change, which gives
//!
//! ```text
//! d f / d s_a = -2 sum_b W[a,b] (dk(s_a, s_b) - sum_n dk(x_n, s_a) B[n,b])
//! ```
//!
//! with `W = S^-1` and `B = K^-1 k(X, S)`.

mod io;
mod train;

pub use io::{read_dataset_csv, write_dataset_csv};
pub use train::{log_marginal_likelihood, train, TrainOptions};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point, Rect};

/// Smallest jitter (relative to the signal variance) tried after a plain
/// factorization fails.
pub const JITTER_START: f64 = 1e-8;
/// Largest relative jitter before giving up.
pub const JITTER_MAX: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub constant_mean: f64,
    pub signal_variance: f64,
    pub length_scale: f64,
    pub noise_variance: f64,
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.signal_variance > 0.0
            && self.length_scale > 0.0
            && self.noise_variance > 0.0
            && self.constant_mean.is_finite()
            && self.signal_variance.is_finite()
            && self.length_scale.is_finite()
            && self.noise_variance.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid hyperparameters {self:?}")))
        }
    }
}

/// Measurement history in acquisition order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    locations: Vec<Point>,
    measurements: Vec<f64>,
}

impl Dataset {
    pub fn new(locations: Vec<Point>, measurements: Vec<f64>) -> Result<Self> {
        if locations.len() != measurements.len() {
            return Err(Error::InvalidInput(format!(
                "{} locations but {} measurements",
                locations.len(),
                measurements.len()
            )));
        }
        Ok(Self { locations, measurements })
    }

    pub fn push(&mut self, location: Point, value: f64) {
        self.locations.push(location);
        self.measurements.push(value);
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn locations(&self) -> &[Point] {
        &self.locations
    }

    pub fn measurements(&self) -> &[f64] {
        &self.measurements
    }

    pub fn check_domain(&self, domain: &Rect) -> Result<()> {
        match self.locations.iter().find(|p| !domain.contains(p, 0.0)) {
            Some(p) => Err(Error::OutOfDomain { x: p.x, y: p.y }),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorStats {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

pub fn kernel(a: &Point, b: &Point, h: &Hyperparams) -> f64 {
    h.signal_variance * (-(a - b).norm_squared() / (2.0 * h.length_scale * h.length_scale)).exp()
}

fn gram(points: &[Point], h: &Hyperparams) -> DMatrix<f64> {
    let n = points.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = h.signal_variance;
        for j in 0..i {
            let v = kernel(&points[i], &points[j], h);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

fn cross(rows: &[Point], cols: &[Point], h: &Hyperparams) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| kernel(&rows[i], &cols[j], h))
}

/// Cholesky factor of `m`, retrying with growing diagonal jitter.
///
/// The first attempt uses no jitter; after that the ladder runs from
/// `JITTER_START * scale` by factors of ten up to `JITTER_MAX * scale`.
pub(crate) fn factor_with_jitter(m: &DMatrix<f64>, scale: f64) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok((c, 0.0));
    }
    let mut rel = JITTER_START;
    while rel <= JITTER_MAX * (1.0 + 1e-12) {
        let jitter = rel * scale;
        let mut shifted = m.clone();
        for i in 0..shifted.nrows() {
            shifted[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(shifted) {
            return Ok((c, jitter));
        }
        rel *= 10.0;
    }
    Err(Error::IllConditioned { max_jitter: JITTER_MAX * scale })
}

/// GP conditioned on a dataset with fixed hyperparameters.
///
/// The training factorization is computed once, so repeated queries during a
/// solve only pay for the cross-covariances.
#[derive(Debug, Clone)]
pub struct GpPosterior {
    hyper: Hyperparams,
    data: Dataset,
    factor: Option<Cholesky<f64, Dyn>>,
    alpha: DVector<f64>,
}

impl GpPosterior {
    pub fn new(data: &Dataset, hyper: &Hyperparams) -> Result<Self> {
        hyper.validate()?;
        if data.is_empty() {
            return Ok(Self { hyper: *hyper, data: data.clone(), factor: None, alpha: DVector::zeros(0) });
        }
        let mut k = gram(data.locations(), hyper);
        for i in 0..k.nrows() {
            k[(i, i)] += hyper.noise_variance;
        }
        let (factor, _) = factor_with_jitter(&k, hyper.signal_variance)?;
        let resid = DVector::from_iterator(data.len(), data.measurements().iter().map(|y| y - hyper.constant_mean));
        let alpha = factor.solve(&resid);
        Ok(Self { hyper: *hyper, data: data.clone(), factor: Some(factor), alpha })
    }

    pub fn hyperparams(&self) -> &Hyperparams {
        &self.hyper
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn predict(&self, queries: &[Point]) -> Result<PosteriorStats> {
        if queries.is_empty() {
            return Err(Error::InvalidInput("predict needs at least one query".into()));
        }
        let prior = gram(queries, &self.hyper);
        let Some(factor) = &self.factor else {
            let mean = DVector::from_element(queries.len(), self.hyper.constant_mean);
            return Ok(PosteriorStats { mean, covariance: prior });
        };
        let kxs = cross(self.data.locations(), queries, &self.hyper);
        let mean = kxs.tr_mul(&self.alpha).add_scalar(self.hyper.constant_mean);
        let v = factor.l().solve_lower_triangular(&kxs).expect("nonsingular factor");
        let mut covariance = prior - v.tr_mul(&v);
        symmetrize(&mut covariance);
        Ok(PosteriorStats { mean, covariance })
    }

    /// Posterior mean and variance at each query, without the full covariance.
    pub fn predict_marginals(&self, queries: &[Point]) -> (Vec<f64>, Vec<f64>) {
        let m = self.hyper.constant_mean;
        let sf2 = self.hyper.signal_variance;
        let Some(factor) = &self.factor else {
            return (vec![m; queries.len()], vec![sf2; queries.len()]);
        };
        let l = factor.l();
        let n = self.data.len();
        let mut means = Vec::with_capacity(queries.len());
        let mut vars = Vec::with_capacity(queries.len());
        let mut col = DVector::zeros(n);
        for q in queries {
            for (i, x) in self.data.locations().iter().enumerate() {
                col[i] = kernel(x, q, &self.hyper);
            }
            means.push(m + col.dot(&self.alpha));
            let v = l.solve_lower_triangular(&col).expect("nonsingular factor");
            vars.push(sf2 - v.norm_squared());
        }
        (means, vars)
    }

    pub fn neg_log_det(&self, queries: &[Point]) -> Result<f64> {
        let stats = self.predict(queries)?;
        let (chol, _) = factor_with_jitter(&stats.covariance, self.hyper.signal_variance)?;
        Ok(-2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
    }

    /// `-log det` of the posterior covariance and its gradient with respect
    /// to the flattened query coordinates `[s1x, s1y, s2x, ...]`.
    pub fn neg_log_det_with_grad(&self, queries: &[Point]) -> Result<(f64, Vec<f64>)> {
        if queries.is_empty() {
            return Err(Error::InvalidInput("neg_log_det needs at least one query".into()));
        }
        let h = &self.hyper;
        let m = queries.len();
        let inv_l2 = 1.0 / (h.length_scale * h.length_scale);
        let prior = gram(queries, h);

        let (cov, kxs, b) = match &self.factor {
            None => (prior.clone(), None, None),
            Some(factor) => {
                let kxs = cross(self.data.locations(), queries, h);
                let v = factor.l().solve_lower_triangular(&kxs).expect("nonsingular factor");
                let mut cov = &prior - v.tr_mul(&v);
                symmetrize(&mut cov);
                let b = factor.solve(&kxs);
                (cov, Some(kxs), Some(b))
            }
        };
        let (chol, _) = factor_with_jitter(&cov, h.signal_variance)?;
        let value = -2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let w = chol.inverse();

        let mut grad = vec![0.0; 2 * m];
        for a in 0..m {
            for c in 0..2 {
                let mut acc = 0.0;
                for bq in 0..m {
                    let mut d = if bq == a { 0.0 } else { -prior[(a, bq)] * (queries[a][c] - queries[bq][c]) * inv_l2 };
                    if let (Some(kxs), Some(bm)) = (&kxs, &b) {
                        let locs = self.data.locations();
                        for n in 0..locs.len() {
                            let dk = -kxs[(n, a)] * (queries[a][c] - locs[n][c]) * inv_l2;
                            d -= dk * bm[(n, bq)];
                        }
                    }
                    acc += w[(a, bq)] * d;
                }
                grad[2 * a + c] = -2.0 * acc;
            }
        }
        Ok((value, grad))
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn predict(data: &Dataset, h: &Hyperparams, queries: &[Point]) -> Result<PosteriorStats> {
    GpPosterior::new(data, h)?.predict(queries)
}

pub fn neg_log_det(data: &Dataset, h: &Hyperparams, s: &[Point]) -> Result<f64> {
    GpPosterior::new(data, h)?.neg_log_det(s)
}

pub fn grad_neg_log_det(data: &Dataset, h: &Hyperparams, s: &[Point]) -> Result<Vec<f64>> {
    Ok(GpPosterior::new(data, h)?.neg_log_det_with_grad(s)?.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit() -> Hyperparams {
        Hyperparams { constant_mean: 0.0, signal_variance: 1.0, length_scale: 1.0, noise_variance: 0.01 }
    }

    fn random_points(rng: &mut ChaCha8Rng, n: usize, span: f64) -> Vec<Point> {
        (0..n).map(|_| Point::new(rng.random_range(0.0..span), rng.random_range(0.0..span))).collect()
    }

    fn random_case(seed: u64, n: usize, m: usize) -> (Dataset, Hyperparams, Vec<Point>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = Hyperparams {
            constant_mean: rng.random_range(-1.0..1.0),
            signal_variance: rng.random_range(0.5..2.0),
            length_scale: rng.random_range(1.0..3.0),
            noise_variance: rng.random_range(0.01..0.1),
        };
        let locs = random_points(&mut rng, n, 6.0);
        let ys = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        (Dataset::new(locs, ys).unwrap(), h, random_points(&mut rng, m, 6.0))
    }

    // Posterior by explicit inversion, independent of the factorized path.
    fn dense_posterior(data: &Dataset, h: &Hyperparams, q: &[Point]) -> (DVector<f64>, DMatrix<f64>) {
        let x = data.locations();
        let n = x.len();
        let k = DMatrix::from_fn(n, n, |i, j| kernel(&x[i], &x[j], h) + if i == j { h.noise_variance } else { 0.0 });
        let ks = DMatrix::from_fn(q.len(), n, |i, j| kernel(&q[i], &x[j], h));
        let kss = DMatrix::from_fn(q.len(), q.len(), |i, j| kernel(&q[i], &q[j], h));
        let kinv = k.try_inverse().unwrap();
        let y = DVector::from_iterator(n, data.measurements().iter().map(|v| v - h.constant_mean));
        let mean = (&ks * &kinv * y).add_scalar(h.constant_mean);
        let cov = kss - &ks * kinv * ks.transpose();
        (mean, cov)
    }

    #[test]
    fn kernel_examples() {
        let h = Hyperparams { signal_variance: 2.0, ..unit() };
        let a = Point::new(0.3, -1.0);
        assert_eq!(kernel(&a, &a, &h), 2.0);
        let v = kernel(&Point::new(0.0, 0.0), &Point::new(1.0, 1.0), &unit());
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let p = random_points(&mut rng, 2, 10.0);
            assert_eq!(kernel(&p[0], &p[1], &h), kernel(&p[1], &p[0], &h));
        }
    }

    #[test]
    fn empty_data_returns_prior() {
        let h = Hyperparams { constant_mean: 3.0, signal_variance: 1.7, ..unit() };
        let s = predict(&Dataset::default(), &h, &[Point::new(1.0, 2.0)]).unwrap();
        assert_eq!(s.mean[0], 3.0);
        assert_eq!(s.covariance[(0, 0)], 1.7);
    }

    #[test]
    fn interpolates_a_noise_free_point() {
        let h = Hyperparams { noise_variance: 1e-10, ..unit() };
        let p = Point::new(0.5, 0.5);
        let data = Dataset::new(vec![p], vec![1.25]).unwrap();
        let s = predict(&data, &h, &[p]).unwrap();
        assert!(s.covariance[(0, 0)] < 1e-6);
        assert!((s.mean[0] - 1.25).abs() < 1e-4);
    }

    #[test]
    fn matches_dense_formulas() {
        for seed in 0..10 {
            let (data, h, q) = random_case(seed, 3, 2);
            let s = predict(&data, &h, &q).unwrap();
            let (mean, cov) = dense_posterior(&data, &h, &q);
            assert!((s.mean - mean).amax() < 1e-10);
            assert!((s.covariance - cov).amax() < 1e-10);
        }
    }

    #[test]
    fn marginals_match_full_prediction() {
        let (data, h, q) = random_case(5, 12, 7);
        let gp = GpPosterior::new(&data, &h).unwrap();
        let full = gp.predict(&q).unwrap();
        let (mean, var) = gp.predict_marginals(&q);
        for i in 0..q.len() {
            assert!((mean[i] - full.mean[i]).abs() < 1e-12);
            assert!((var[i] - full.covariance[(i, i)]).abs() < 1e-12);
        }
    }

    #[test]
    fn neg_log_det_examples() {
        // far-apart queries under the prior give an identity covariance
        let q = [Point::new(0.0, 0.0), Point::new(100.0, 0.0)];
        let v = neg_log_det(&Dataset::default(), &unit(), &q).unwrap();
        assert!(v.abs() < 1e-12);
        let h2 = Hyperparams { signal_variance: 2.0, ..unit() };
        let v = neg_log_det(&Dataset::default(), &h2, &q).unwrap();
        assert!((v + 2.0 * 2f64.ln()).abs() < 1e-12);
        for seed in 0..10 {
            let (data, h, q) = random_case(100 + seed, 6, 3);
            let det = predict(&data, &h, &q).unwrap().covariance.determinant();
            let v = neg_log_det(&data, &h, &q).unwrap();
            assert!((v + det.ln()).abs() < 1e-8);
        }
    }

    fn finite_difference(gp: &GpPosterior, q: &[Point], step: f64) -> Vec<f64> {
        let mut g = vec![0.0; 2 * q.len()];
        for a in 0..q.len() {
            for c in 0..2 {
                let mut qp = q.to_vec();
                let mut qm = q.to_vec();
                qp[a][c] += step;
                qm[a][c] -= step;
                g[2 * a + c] = (gp.neg_log_det(&qp).unwrap() - gp.neg_log_det(&qm).unwrap()) / (2.0 * step);
            }
        }
        g
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..20 {
            let (data, h, q) = random_case(200 + seed, 5 + (seed as usize % 3) * 5, 2 + seed as usize % 4);
            let gp = GpPosterior::new(&data, &h).unwrap();
            let (_, g) = gp.neg_log_det_with_grad(&q).unwrap();
            let fd = finite_difference(&gp, &q, 1e-5);
            let num: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let den: f64 = fd.iter().map(|b| b * b).sum::<f64>().sqrt().max(1e-12);
            assert!(num / den < 1e-5, "seed {seed}: rel err {}", num / den);
        }
    }

    #[test]
    fn gradient_respects_mirror_symmetry() {
        let h = unit();
        let data = Dataset::new(vec![Point::new(1.0, 0.5), Point::new(1.0, -0.5)], vec![0.3, 0.3]).unwrap();
        let q = [Point::new(0.0, 0.8), Point::new(0.0, -0.8)];
        let g = grad_neg_log_det(&data, &h, &q).unwrap();
        assert!((g[0] - g[2]).abs() < 1e-8);
        assert!((g[1] + g[3]).abs() < 1e-8);
    }

    #[test]
    fn distant_queries_decouple() {
        let h = unit();
        let a = Point::new(0.3, 0.1);
        let b = Point::new(30.0, 1.0);
        let empty = Dataset::default();
        let joint = grad_neg_log_det(&empty, &h, &[a, b]).unwrap();
        let ga = grad_neg_log_det(&empty, &h, &[a]).unwrap();
        let gb = grad_neg_log_det(&empty, &h, &[b]).unwrap();
        let split = [ga[0], ga[1], gb[0], gb[1]];
        for (x, y) in joint.iter().zip(split.iter()) {
            assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn posterior_variance_below_prior() {
        for seed in 0..10 {
            let (data, h, q) = random_case(300 + seed, 8, 6);
            let s = predict(&data, &h, &q).unwrap();
            for i in 0..q.len() {
                assert!(s.covariance[(i, i)] <= h.signal_variance + 1e-8);
            }
        }
    }

    #[test]
    fn extra_measurement_never_adds_information_loss() {
        for seed in 0..10 {
            let (data, h, q) = random_case(400 + seed, 6, 3);
            let before = dense_posterior(&data, &h, &q).1.determinant().ln();
            let mut more = data.clone();
            more.push(Point::new(2.0, 3.0), 0.1);
            let after = dense_posterior(&more, &h, &q).1.determinant().ln();
            assert!(after <= before + 1e-10);
        }
    }

    #[test]
    fn duplicated_queries_are_perfectly_correlated() {
        let (data, h, q) = random_case(9, 6, 1);
        let s = predict(&data, &h, &[q[0], q[0]]).unwrap();
        assert!((s.covariance[(0, 1)] - s.covariance[(0, 0)]).abs() < 1e-8);
    }

    #[test]
    fn dataset_rejects_length_mismatch() {
        assert!(Dataset::new(vec![Point::new(0.0, 0.0)], vec![]).is_err());
    }
}
