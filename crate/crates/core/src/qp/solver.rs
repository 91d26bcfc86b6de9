//! QP solvers on an equilibrated copy of the problem.
//!
//! The default is an interior point method; the operator-splitting method
//! iterates with the reduced system `(P + sigma I + A' R A) x = ...`,
//! `R = diag(rho_i)`, polishes on the guessed active set and carries the
//! infeasibility certificate. Interior point runs that stall fall back to
//! the splitting method from their last iterate.
//!
//! A point is optimal when the unscaled KKT residuals pass
//! `prim <= tol (1 + |Ax|)` and `dual <= tol (1 + max(|Px|, |A'y|, |q|))`.

use nalgebra::DMatrix;

use super::ipm;
use super::ldl::EnvelopeLdl;
use super::StandardQp;

const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const RHO_EQ_FACTOR: f64 = 1e3;
const SCALE_MIN: f64 = 1e-4;
const SCALE_MAX: f64 = 1e4;
const ADAPT_EVERY: usize = 25;
const POLISH_DELTA: f64 = 1e-6;
const REFINE_STEPS: usize = 10;
const IPM_TOL_FACTOR: f64 = 1e-3;
const IPM_MAX_ITER: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QpAlgorithm {
    InteriorPoint,
    OperatorSplitting,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub algorithm: QpAlgorithm,
    pub tol: f64,
    pub max_iter: usize,
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub adaptive_rho: bool,
    pub polish: bool,
    pub scaling_iters: usize,
    pub infeasibility_tol: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            algorithm: QpAlgorithm::InteriorPoint,
            tol: 1e-6,
            max_iter: 20_000,
            rho: 1.0,
            sigma: 1e-6,
            alpha: 1.6,
            adaptive_rho: true,
            polish: true,
            scaling_iters: 10,
            infeasibility_tol: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QpStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: Vec<f64>,
    /// Constraint multipliers; positive at upper bounds, negative at lower.
    pub y: Vec<f64>,
    pub objective: f64,
    pub status: QpStatus,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
}

/// Solves `qp` from a cold start with default settings apart from `tol` and `max_iter`.
pub fn solve_qp(qp: &StandardQp, tol: f64, max_iter: usize) -> QpSolution {
    solve_qp_from(qp, &QpSettings { tol, max_iter, ..QpSettings::default() }, None)
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Absolute primal and dual KKT residuals of `(x, y)` on the unscaled problem.
pub(crate) fn kkt_residuals(qp: &StandardQp, x: &[f64], y: &[f64]) -> (f64, f64) {
    let mut ax = vec![0.0; qp.a.nrows];
    qp.a.mul_vec(x, &mut ax);
    let prim = ax.iter().enumerate().map(|(i, v)| (qp.l[i] - v).max(v - qp.u[i]).max(0.0)).fold(0.0, f64::max);
    let mut aty = vec![0.0; qp.dim()];
    qp.a.tr_mul_vec(y, &mut aty);
    let px = &qp.p * nalgebra::DVector::from_column_slice(x);
    let dual = (0..qp.dim()).map(|j| (px[j] + qp.q[j] + aty[j]).abs()).fold(0.0, f64::max);
    (prim, dual)
}

/// Mixed absolute and relative optimality test on the unscaled problem.
pub(crate) fn is_optimal(qp: &StandardQp, x: &[f64], y: &[f64], tol: f64) -> bool {
    let n = qp.dim();
    let mut ax = vec![0.0; qp.a.nrows];
    qp.a.mul_vec(x, &mut ax);
    let mut aty = vec![0.0; n];
    qp.a.tr_mul_vec(y, &mut aty);
    let px = &qp.p * nalgebra::DVector::from_column_slice(x);
    let q: Vec<f64> = qp.q.iter().copied().collect();
    let (prim, dual) = kkt_residuals(qp, x, y);
    let prim_scale = inf_norm(&ax);
    let dual_scale = inf_norm(px.as_slice()).max(inf_norm(&aty)).max(inf_norm(&q));
    prim.is_finite() && dual.is_finite() && prim <= tol * (1.0 + prim_scale) && dual <= tol * (1.0 + dual_scale)
}

pub(super) struct Scaled {
    pub p: DMatrix<f64>,
    pub q: Vec<f64>,
    pub a: super::CsrMatrix,
    pub l: Vec<f64>,
    pub u: Vec<f64>,
    pub d: Vec<f64>,
    pub e: Vec<f64>,
    pub c: f64,
}

fn clamp_scale(norm: f64) -> f64 {
    if norm < SCALE_MIN {
        1.0
    } else {
        (1.0 / norm.sqrt()).clamp(SCALE_MIN, SCALE_MAX)
    }
}

// Ruiz equilibration of the KKT matrix followed by a cost scaling.
fn equilibrate(qp: &StandardQp, iters: usize) -> Scaled {
    let n = qp.dim();
    let m = qp.a.nrows;
    let mut p = qp.p.clone();
    let mut q: Vec<f64> = qp.q.iter().copied().collect();
    let mut a = qp.a.clone();
    let mut d = vec![1.0; n];
    let mut e = vec![1.0; m];
    for _ in 0..iters {
        let mut col = vec![0.0f64; n];
        for j in 0..n {
            for i in 0..n {
                col[j] = col[j].max(p[(i, j)].abs());
            }
        }
        let mut row = vec![0.0f64; m];
        for i in 0..m {
            for (j, v) in a.row(i) {
                col[j] = col[j].max(v.abs());
                row[i] = row[i].max(v.abs());
            }
        }
        let ds: Vec<f64> = col.iter().map(|&c| clamp_scale(c)).collect();
        let es: Vec<f64> = row.iter().map(|&r| clamp_scale(r)).collect();
        for j in 0..n {
            for i in 0..n {
                p[(i, j)] *= ds[i] * ds[j];
            }
            q[j] *= ds[j];
            d[j] *= ds[j];
        }
        a.scale(&es, &ds);
        for i in 0..m {
            e[i] *= es[i];
        }
    }
    let mean_col = if n == 0 {
        0.0
    } else {
        (0..n).map(|j| (0..n).fold(0.0f64, |mx, i| mx.max(p[(i, j)].abs()))).sum::<f64>() / n as f64
    };
    let cost = mean_col.max(inf_norm(&q));
    let c = if cost < SCALE_MIN { 1.0 } else { (1.0 / cost).clamp(SCALE_MIN, SCALE_MAX) };
    p *= c;
    q.iter_mut().for_each(|v| *v *= c);
    let l = (0..m).map(|i| qp.l[i] * e[i]).collect();
    let u = (0..m).map(|i| qp.u[i] * e[i]).collect();
    Scaled { p, q, a, l, u, d, e, c }
}

fn row_rho(l: f64, u: f64, rho: f64) -> f64 {
    if l == f64::NEG_INFINITY && u == f64::INFINITY {
        RHO_MIN
    } else if u - l < 1e-12 {
        (RHO_EQ_FACTOR * rho).min(RHO_MAX)
    } else {
        rho
    }
}

fn factor_reduced(s: &Scaled, sigma: f64, rho: &[f64]) -> Option<EnvelopeLdl> {
    let n = s.q.len();
    let mut m = s.p.clone();
    for j in 0..n {
        m[(j, j)] += sigma;
    }
    for i in 0..s.a.nrows {
        let entries: Vec<(usize, f64)> = s.a.row(i).collect();
        for &(j, vj) in &entries {
            for &(k, vk) in &entries {
                m[(j, k)] += rho[i] * vj * vk;
            }
        }
    }
    EnvelopeLdl::factor(&m)
}

// KKT solve on the guessed active set; returns unscaled (x, y) if it is an
// exact KKT point within tolerance.
fn polish(qp: &StandardQp, s: &Scaled, z: &[f64], y: &[f64], tol: f64) -> Option<(Vec<f64>, Vec<f64>)> {
    let n = s.q.len();
    let m = s.a.nrows;
    // +1 upper (or equality), -1 lower
    let mut active: Vec<(usize, f64)> = Vec::new();
    for i in 0..m {
        if s.u[i] - s.l[i] < 1e-12 {
            active.push((i, s.u[i]));
        } else if s.l[i].is_finite() && z[i] - s.l[i] < -y[i] {
            active.push((i, s.l[i]));
        } else if s.u[i].is_finite() && s.u[i] - z[i] < y[i] {
            active.push((i, s.u[i]));
        }
    }
    let na = active.len();
    let dim = n + na;
    let mut k0 = DMatrix::zeros(dim, dim);
    k0.view_mut((0, 0), (n, n)).copy_from(&s.p);
    for (r, &(i, _)) in active.iter().enumerate() {
        for (j, v) in s.a.row(i) {
            k0[(n + r, j)] = v;
            k0[(j, n + r)] = v;
        }
    }
    let mut k = k0.clone();
    for j in 0..n {
        k[(j, j)] += POLISH_DELTA;
    }
    for r in 0..na {
        k[(n + r, n + r)] -= POLISH_DELTA;
    }
    let f = EnvelopeLdl::factor(&k)?;
    let rhs: Vec<f64> = s.q.iter().map(|v| -v).chain(active.iter().map(|&(_, b)| b)).collect();
    let mut sol = rhs.clone();
    f.solve_in_place(&mut sol);
    for _ in 0..REFINE_STEPS {
        let ks = &k0 * nalgebra::DVector::from_column_slice(&sol);
        let mut r: Vec<f64> = (0..dim).map(|i| rhs[i] - ks[i]).collect();
        f.solve_in_place(&mut r);
        for i in 0..dim {
            sol[i] += r[i];
        }
    }
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }

    let x: Vec<f64> = (0..n).map(|j| sol[j] * s.d[j]).collect();
    let mut yy = vec![0.0; m];
    for (r, &(i, b)) in active.iter().enumerate() {
        let yi = sol[n + r] * s.e[i] / s.c;
        let eq = s.u[i] - s.l[i] < 1e-12;
        // multiplier sign must match the side that is active
        if !eq && ((b == s.l[i] && yi > tol) || (b == s.u[i] && yi < -tol)) {
            return None;
        }
        yy[i] = yi;
    }
    let (prim, dual) = kkt_residuals(qp, &x, &yy);
    (prim <= tol && dual <= tol).then_some((x, yy))
}

/// Solves `qp`, optionally warm-started at the primal point `x0`.
pub fn solve_qp_from(qp: &StandardQp, settings: &QpSettings, x0: Option<&[f64]>) -> QpSolution {
    let n = qp.dim();
    let m = qp.a.nrows;
    let tol = settings.tol;
    let finish = |x: Vec<f64>, y: Vec<f64>, status: QpStatus, iterations: usize| {
        let (primal_residual, dual_residual) = kkt_residuals(qp, &x, &y);
        QpSolution { objective: qp.objective(&x), x, y, status, iterations, primal_residual, dual_residual }
    };
    if (0..m).any(|i| qp.l[i] > qp.u[i]) {
        return finish(x0.map_or(vec![0.0; n], <[f64]>::to_vec), vec![0.0; m], QpStatus::Infeasible, 0);
    }

    let s = equilibrate(qp, settings.scaling_iters);
    let x0: Option<Vec<f64>> = x0.map(<[f64]>::to_vec);
    let mut spent = 0;
    let x0 = if settings.algorithm == QpAlgorithm::InteriorPoint {
        let start: Vec<f64> = match &x0 {
            Some(v) => (0..n).map(|j| v[j] / s.d[j]).collect(),
            None => vec![0.0; n],
        };
        let r = ipm::solve(&s, &start, IPM_TOL_FACTOR * tol, IPM_MAX_ITER);
        if settings.polish {
            let mut ax = vec![0.0; m];
            s.a.mul_vec(&r.x, &mut ax);
            if let Some((xp, yp)) = polish(qp, &s, &ax, &r.y, tol) {
                return finish(xp, yp, QpStatus::Optimal, r.iterations);
            }
        }
        let x: Vec<f64> = (0..n).map(|j| r.x[j] * s.d[j]).collect();
        let y: Vec<f64> = (0..m).map(|i| r.y[i] * s.e[i] / s.c).collect();
        if is_optimal(qp, &x, &y, tol) {
            return finish(x, y, QpStatus::Optimal, r.iterations);
        }
        spent = r.iterations;
        Some(x).filter(|v| v.iter().all(|t| t.is_finite())).or(x0)
    } else {
        x0
    };
    let finish = |x, y, status, k: usize| finish(x, y, status, k + spent);
    let x0 = x0.as_deref();

    let mut rho_base = settings.rho.clamp(RHO_MIN, RHO_MAX);
    let mut rho: Vec<f64> = (0..m).map(|i| row_rho(s.l[i], s.u[i], rho_base)).collect();
    let Some(mut kkt) = factor_reduced(&s, settings.sigma, &rho) else {
        return finish(vec![0.0; n], vec![0.0; m], QpStatus::MaxIter, 0);
    };

    let clip = |v: f64, i: usize| v.max(s.l[i]).min(s.u[i]);
    let mut x: Vec<f64> = match x0 {
        Some(x0) => (0..n).map(|j| x0[j] / s.d[j]).collect(),
        None => vec![0.0; n],
    };
    let mut z = vec![0.0; m];
    s.a.mul_vec(&x, &mut z);
    for (i, zi) in z.iter_mut().enumerate() {
        *zi = clip(*zi, i);
    }
    let mut y = vec![0.0; m];
    let mut y_prev = y.clone();

    let mut work_n = vec![0.0; n];
    let mut ax = vec![0.0; m];
    let mut next_polish = 25;

    let unscale = |x: &[f64], y: &[f64]| -> (Vec<f64>, Vec<f64>) {
        ((0..n).map(|j| x[j] * s.d[j]).collect(), (0..m).map(|i| y[i] * s.e[i] / s.c).collect())
    };

    for k in 1..=settings.max_iter {
        // x-update
        let rz: Vec<f64> = (0..m).map(|i| rho[i] * z[i] - y[i]).collect();
        s.a.tr_mul_vec(&rz, &mut work_n);
        let mut xt: Vec<f64> = (0..n).map(|j| settings.sigma * x[j] - s.q[j] + work_n[j]).collect();
        kkt.solve_in_place(&mut xt);
        let mut zt = vec![0.0; m];
        s.a.mul_vec(&xt, &mut zt);
        for j in 0..n {
            x[j] = settings.alpha * xt[j] + (1.0 - settings.alpha) * x[j];
        }
        y_prev.copy_from_slice(&y);
        for i in 0..m {
            let zr = settings.alpha * zt[i] + (1.0 - settings.alpha) * z[i];
            let zn = clip(zr + y[i] / rho[i], i);
            y[i] += rho[i] * (zr - zn);
            z[i] = zn;
        }

        // residuals in unscaled units
        s.a.mul_vec(&x, &mut ax);
        let prim = (0..m).map(|i| ((ax[i] - z[i]) / s.e[i]).abs()).fold(0.0, f64::max);
        let px = &s.p * nalgebra::DVector::from_column_slice(&x);
        s.a.tr_mul_vec(&y, &mut work_n);
        let dual = (0..n).map(|j| ((px[j] + s.q[j] + work_n[j]) / (s.d[j] * s.c)).abs()).fold(0.0, f64::max);

        let prim_scale = (0..m).map(|i| (ax[i] / s.e[i]).abs().max((z[i] / s.e[i]).abs())).fold(0.0, f64::max);
        let dual_scale = (0..n)
            .map(|j| {
                let dj = s.d[j] * s.c;
                (px[j] / dj).abs().max((work_n[j] / dj).abs()).max((s.q[j] / dj).abs())
            })
            .fold(0.0, f64::max);
        let relative = prim <= tol * (1.0 + prim_scale) && dual <= tol * (1.0 + dual_scale);

        if settings.polish && (k == next_polish || relative) {
            if k == next_polish {
                next_polish *= 2;
            }
            if let Some((xp, yp)) = polish(qp, &s, &z, &y, tol) {
                return finish(xp, yp, QpStatus::Optimal, k);
            }
        }
        if relative {
            let (xu, yu) = unscale(&x, &y);
            if is_optimal(qp, &xu, &yu, tol) {
                return finish(xu, yu, QpStatus::Optimal, k);
            }
        }

        if k % ADAPT_EVERY == 0 {
            if primal_infeasible(&s, &y, &y_prev, settings.infeasibility_tol) {
                let (xu, yu) = unscale(&x, &y);
                return finish(xu, yu, QpStatus::Infeasible, k);
            }
            if settings.adaptive_rho {
                let pr = prim / prim_scale.max(1e-12);
                let dr = dual / dual_scale.max(1e-12);
                let ratio = (pr / dr.max(1e-300)).sqrt();
                let proposed = (rho_base * ratio).clamp(RHO_MIN, RHO_MAX);
                if proposed.is_finite() && (proposed > 5.0 * rho_base || proposed < 0.2 * rho_base) {
                    let new_rho: Vec<f64> = (0..m).map(|i| row_rho(s.l[i], s.u[i], proposed)).collect();
                    if let Some(f) = factor_reduced(&s, settings.sigma, &new_rho) {
                        rho_base = proposed;
                        rho = new_rho;
                        kkt = f;
                    }
                }
            }
        }
    }

    let (xu, yu) = unscale(&x, &y);
    finish(xu, yu, QpStatus::MaxIter, settings.max_iter)
}

// Farkas-type certificate from the change in the dual iterate.
fn primal_infeasible(s: &Scaled, y: &[f64], y_prev: &[f64], eps: f64) -> bool {
    let m = y.len();
    let dy: Vec<f64> = (0..m).map(|i| y[i] - y_prev[i]).collect();
    let norm = (0..m).map(|i| (s.e[i] * dy[i]).abs()).fold(0.0, f64::max);
    if norm < 1e-12 {
        return false;
    }
    let n = s.q.len();
    let mut aty = vec![0.0; n];
    s.a.tr_mul_vec(&dy, &mut aty);
    if (0..n).map(|j| (aty[j] / s.d[j]).abs()).fold(0.0, f64::max) > eps * norm {
        return false;
    }
    let mut support = 0.0;
    for i in 0..m {
        let v = dy[i];
        if (s.e[i] * v).abs() < eps * norm {
            continue;
        }
        let bound = if v > 0.0 { s.u[i] } else { s.l[i] };
        if !bound.is_finite() {
            return false;
        }
        support += bound * v;
    }
    support < -eps * norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qp::CsrMatrix;
    use nalgebra::DVector;

    fn qp(p: &[f64], q: &[f64], a: &[&[f64]], l: &[f64], u: &[f64]) -> StandardQp {
        let n = q.len();
        let mut am = CsrMatrix::new(n);
        for row in a {
            am.push_row(row.iter().copied().enumerate());
        }
        StandardQp {
            p: DMatrix::from_row_slice(n, n, p),
            q: DVector::from_column_slice(q),
            a: am,
            l: DVector::from_column_slice(l),
            u: DVector::from_column_slice(u),
            n_original: n,
        }
    }

    #[test]
    fn clipped_optimum() {
        // (x-1)^2 = x^2 - 2x + 1
        let s = solve_qp(&qp(&[2.0], &[-2.0], &[&[1.0]], &[0.0], &[0.5]), 1e-6, 20_000);
        assert_eq!(s.status, QpStatus::Optimal);
        assert!((s.x[0] - 0.5).abs() < 1e-6);
        assert!(s.y[0] > 0.0);
    }

    #[test]
    fn equality_constrained() {
        // min x^2 + y^2 s.t. x + y = 1
        let s = solve_qp(&qp(&[2.0, 0.0, 0.0, 2.0], &[0.0, 0.0], &[&[1.0, 1.0]], &[1.0], &[1.0]), 1e-6, 20_000);
        assert_eq!(s.status, QpStatus::Optimal);
        assert!((s.x[0] - 0.5).abs() < 1e-6 && (s.x[1] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn detects_infeasibility() {
        let s = solve_qp(
            &qp(&[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0], &[&[1.0, 1.0], &[1.0, 1.0]], &[2.0, -1.0], &[3.0, 1.0]),
            1e-6,
            20_000,
        );
        assert_eq!(s.status, QpStatus::Infeasible);
    }

    #[test]
    fn linear_program_with_large_costs() {
        // min 1e6 t  s.t. t >= x - 1, t >= 1 - x, 0 <= x <= 3, plus small quadratic on x
        let s = solve_qp(
            &qp(
                &[1e-2, 0.0, 0.0, 0.0],
                &[-1.0, 1e6],
                &[&[-1.0, 1.0], &[1.0, 1.0], &[1.0, 0.0]],
                &[-1.0, 1.0, 0.0],
                &[f64::INFINITY, f64::INFINITY, 3.0],
            ),
            1e-6,
            20_000,
        );
        assert_eq!(s.status, QpStatus::Optimal);
        assert!((s.x[0] - 1.0).abs() < 1e-6 && s.x[1].abs() < 1e-6, "{:?}", s.x);
    }
}
