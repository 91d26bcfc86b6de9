//! Type-II maximum likelihood for the kernel hyperparameters.
//!
//! The constant mean is profiled out (it has a closed-form generalized
//! least-squares optimum for any fixed kernel), and the three positive
//! parameters are optimized by projected gradient ascent in log space.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::{factor_with_jitter, kernel, Dataset, Hyperparams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct TrainOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub starts: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { max_iter: 200, grad_tol: 1e-6, starts: 4 }
    }
}

// Box on the log-parameters [log sf2, log l, log sn2].
const LOG_LO: [f64; 3] = [-18.4, -6.9, -23.0];
const LOG_HI: [f64; 3] = [18.4, 9.2, 18.4];

struct Evaluation {
    lml: f64,
    grad: [f64; 3],
    mean: f64,
}

fn to_log(h: &Hyperparams) -> [f64; 3] {
    [h.signal_variance.ln(), h.length_scale.ln(), h.noise_variance.ln()]
}

fn project(p: [f64; 3]) -> [f64; 3] {
    std::array::from_fn(|i| p[i].clamp(LOG_LO[i], LOG_HI[i]))
}

fn from_log(p: &[f64; 3], mean: f64) -> Hyperparams {
    Hyperparams {
        constant_mean: mean,
        signal_variance: p[0].exp(),
        length_scale: p[1].exp(),
        noise_variance: p[2].exp(),
    }
}

/// Log marginal likelihood of `data` under `h`, with `h.constant_mean` as given.
pub fn log_marginal_likelihood(data: &Dataset, h: &Hyperparams) -> Result<f64> {
    h.validate()?;
    let (k, _) = covariance(data, h);
    let (chol, _) = factor_with_jitter(&k, h.signal_variance)?;
    let r = DVector::from_iterator(data.len(), data.measurements().iter().map(|y| y - h.constant_mean));
    let alpha = chol.solve(&r);
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Ok(-0.5 * r.dot(&alpha) - 0.5 * log_det - 0.5 * data.len() as f64 * (2.0 * PI).ln())
}

// Training covariance and its noise-free part.
fn covariance(data: &Dataset, h: &Hyperparams) -> (DMatrix<f64>, DMatrix<f64>) {
    let x = data.locations();
    let n = x.len();
    let kf = DMatrix::from_fn(n, n, |i, j| kernel(&x[i], &x[j], h));
    let mut k = kf.clone();
    for i in 0..n {
        k[(i, i)] += h.noise_variance;
    }
    (k, kf)
}

// Profile likelihood at log-parameters `p`: mean set to its GLS optimum.
fn evaluate(data: &Dataset, p: &[f64; 3]) -> Result<Evaluation> {
    let h = from_log(p, 0.0);
    let n = data.len();
    let (k, kf) = covariance(data, &h);
    let (chol, _) = factor_with_jitter(&k, h.signal_variance)?;
    let y = DVector::from_column_slice(data.measurements());
    let ones = DVector::from_element(n, 1.0);
    let kinv_y = chol.solve(&y);
    let kinv_1 = chol.solve(&ones);
    let mean = kinv_y.sum() / kinv_1.sum();
    let r = y.add_scalar(-mean);
    let alpha = chol.solve(&r);
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let lml = -0.5 * r.dot(&alpha) - 0.5 * log_det - 0.5 * n as f64 * (2.0 * PI).ln();

    // d lml / d p = 0.5 tr((alpha alpha^T - K^-1) dK/dp)
    let kinv = chol.inverse();
    let x = data.locations();
    let inv_l2 = 1.0 / (h.length_scale * h.length_scale);
    let mut grad = [0.0; 3];
    for i in 0..n {
        for j in 0..n {
            let m = alpha[i] * alpha[j] - kinv[(i, j)];
            grad[0] += m * kf[(i, j)];
            grad[1] += m * kf[(i, j)] * (x[i] - x[j]).norm_squared() * inv_l2;
        }
        grad[2] += (alpha[i] * alpha[i] - kinv[(i, i)]) * h.noise_variance;
    }
    for g in &mut grad {
        *g *= 0.5;
    }
    Ok(Evaluation { lml, grad, mean })
}

// Gradient components that would push a parameter out of its box are dropped.
fn projected_norm(p: &[f64; 3], g: &[f64; 3]) -> f64 {
    (0..3)
        .map(|i| {
            let blocked = (p[i] <= LOG_LO[i] && g[i] < 0.0) || (p[i] >= LOG_HI[i] && g[i] > 0.0);
            if blocked {
                0.0
            } else {
                g[i] * g[i]
            }
        })
        .sum::<f64>()
        .sqrt()
}

fn ascend(data: &Dataset, start: [f64; 3], opts: &TrainOptions) -> Result<(Evaluation, [f64; 3])> {
    let mut p = project(start);
    let mut cur = evaluate(data, &p)?;
    let mut step = 0.1;
    for _ in 0..opts.max_iter {
        if projected_norm(&p, &cur.grad) < opts.grad_tol {
            break;
        }
        let mut improved = false;
        for _ in 0..40 {
            let trial = project(std::array::from_fn(|i| p[i] + step * cur.grad[i]));
            let gain: f64 = (0..3).map(|i| cur.grad[i] * (trial[i] - p[i])).sum();
            match evaluate(data, &trial) {
                Ok(next) if next.lml >= cur.lml + 1e-4 * gain => {
                    p = trial;
                    cur = next;
                    improved = true;
                    step *= 2.0;
                    break;
                }
                _ => step *= 0.5,
            }
        }
        if !improved {
            break;
        }
    }
    Ok((cur, p))
}

/// Maximizes the log marginal likelihood starting from `init` and three
/// perturbed starts; the result never has lower likelihood than `init`.
pub fn train(data: &Dataset, init: &Hyperparams, opts: &TrainOptions) -> Result<Hyperparams> {
    init.validate()?;
    if data.len() < 2 {
        return Err(Error::InsufficientData { needed: 2, got: data.len() });
    }
    let base = to_log(init);
    let ys = data.measurements();
    let mean_y = ys.iter().sum::<f64>() / ys.len() as f64;
    let var_y = (ys.iter().map(|y| (y - mean_y).powi(2)).sum::<f64>() / ys.len() as f64).max(1e-6);
    let starts = [
        base,
        [base[0], base[1] + 3f64.ln(), base[2]],
        [base[0], base[1] - 3f64.ln(), base[2]],
        [var_y.ln(), base[1], (0.1 * var_y).ln()],
    ];

    let mut best: Option<(Evaluation, [f64; 3])> = None;
    for s in starts.iter().take(opts.starts.max(1)) {
        let Ok(candidate) = ascend(data, *s, opts) else {
            continue;
        };
        if best.as_ref().map_or(true, |(b, _)| candidate.0.lml > b.lml) {
            best = Some(candidate);
        }
    }
    let (eval, p) = best.ok_or(Error::IllConditioned { max_jitter: super::JITTER_MAX })?;
    let trained = from_log(&p, eval.mean);
    // the first start is the initial point, so this only guards rounding
    let init_lml = log_marginal_likelihood(data, init)?;
    if log_marginal_likelihood(data, &trained)? < init_lml {
        return Ok(*init);
    }
    Ok(trained)
}
