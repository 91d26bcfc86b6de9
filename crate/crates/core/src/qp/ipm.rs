//! Mehrotra predictor-corrector interior point method on the equilibrated
//! problem. Equality rows stay as equalities; every finite side of the other
//! rows becomes `g x + s = h`, `s >= 0`. Each iteration factors the reduced
//! quasi-definite system `[P + G' D G, E'; E, -delta]` once and solves it
//! twice.

use nalgebra::DMatrix;

use super::ldl::EnvelopeLdl;
use super::solver::Scaled;

const REG: f64 = 1e-10;
const REFINE: usize = 3;
const STEP_FRACTION: f64 = 0.99;

pub(super) struct IpmResult {
    /// Scaled primal point.
    pub x: Vec<f64>,
    /// Scaled multipliers in the `l <= Ax <= u` convention.
    pub y: Vec<f64>,
    pub iterations: usize,
}

struct Ineq {
    row: usize,
    sign: f64,
    h: f64,
}

pub(super) fn solve(s: &Scaled, x0: &[f64], eps: f64, max_iter: usize) -> IpmResult {
    let n = s.q.len();
    let m = s.a.nrows;
    let mut eq_rows = Vec::new();
    let mut ineq = Vec::new();
    for i in 0..m {
        if s.u[i] - s.l[i] < 1e-12 {
            eq_rows.push(i);
            continue;
        }
        if s.u[i].is_finite() {
            ineq.push(Ineq { row: i, sign: 1.0, h: s.u[i] });
        }
        if s.l[i].is_finite() {
            ineq.push(Ineq { row: i, sign: -1.0, h: -s.l[i] });
        }
    }
    let ne = eq_rows.len();
    let ni = ineq.len();
    let dim = n + ne;

    let mut x = x0.to_vec();
    let mut nu = vec![0.0; ne];
    let mut ax = vec![0.0; m];
    s.a.mul_vec(&x, &mut ax);
    let mut sl: Vec<f64> = ineq.iter().map(|g| (g.h - g.sign * ax[g.row]).max(1.0)).collect();
    let mut lam = vec![1.0; ni];

    let gather_y = |nu: &[f64], lam: &[f64]| {
        let mut y = vec![0.0; m];
        for (k, &i) in eq_rows.iter().enumerate() {
            y[i] = nu[k];
        }
        for (k, g) in ineq.iter().enumerate() {
            y[g.row] += g.sign * lam[k];
        }
        y
    };

    let mut aty = vec![0.0; n];
    let mut iterations = max_iter;
    for it in 0..=max_iter {
        iterations = it;
        s.a.mul_vec(&x, &mut ax);
        let y = gather_y(&nu, &lam);
        s.a.tr_mul_vec(&y, &mut aty);
        let px = &s.p * nalgebra::DVector::from_column_slice(&x);
        let r_d: Vec<f64> = (0..n).map(|j| px[j] + s.q[j] + aty[j]).collect();
        let r_e: Vec<f64> = eq_rows.iter().map(|&i| ax[i] - s.u[i]).collect();
        let r_i: Vec<f64> = ineq.iter().enumerate().map(|(k, g)| g.sign * ax[g.row] + sl[k] - g.h).collect();
        let gap: f64 = sl.iter().zip(&lam).map(|(a, b)| a * b).sum();
        let mu = if ni > 0 { gap / ni as f64 } else { 0.0 };

        let norm = |v: &[f64]| v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let dual_scale = 1.0 + norm(px.as_slice()).max(norm(&s.q)).max(norm(&aty));
        let prim_scale = 1.0 + norm(&ax);
        let obj: f64 = 0.5 * x.iter().zip(px.iter()).map(|(a, b)| a * b).sum::<f64>()
            + x.iter().zip(&s.q).map(|(a, b)| a * b).sum::<f64>();
        if norm(&r_d) <= eps * dual_scale
            && norm(&r_e).max(norm(&r_i)) <= eps * prim_scale
            && gap <= eps * (1.0 + obj.abs())
        {
            return IpmResult { x, y, iterations: it };
        }
        if it == max_iter {
            break;
        }

        let d: Vec<f64> = sl.iter().zip(&lam).map(|(a, b)| b / a).collect();
        let mut k0 = DMatrix::zeros(dim, dim);
        k0.view_mut((0, 0), (n, n)).copy_from(&s.p);
        for (k, g) in ineq.iter().enumerate() {
            let entries: Vec<(usize, f64)> = s.a.row(g.row).collect();
            for &(j, vj) in &entries {
                for &(l, vl) in &entries {
                    k0[(j, l)] += d[k] * vj * vl;
                }
            }
        }
        for (r, &i) in eq_rows.iter().enumerate() {
            for (j, v) in s.a.row(i) {
                k0[(n + r, j)] = v;
                k0[(j, n + r)] = v;
            }
        }
        let mut kr = k0.clone();
        for j in 0..n {
            kr[(j, j)] += REG;
        }
        for r in n..dim {
            kr[(r, r)] -= REG;
        }
        let Some(f) = EnvelopeLdl::factor(&kr) else {
            break;
        };

        // Newton direction for complementarity target `r_c`; returns (dx, dnu, ds, dlam).
        let direction = |r_c: &[f64]| {
            let w: Vec<f64> = (0..ni).map(|k| (r_c[k] + lam[k] * r_i[k]) / sl[k]).collect();
            let mut gw = vec![0.0; m];
            for (k, g) in ineq.iter().enumerate() {
                gw[g.row] += g.sign * w[k];
            }
            let mut gtw = vec![0.0; n];
            s.a.tr_mul_vec(&gw, &mut gtw);
            let rhs: Vec<f64> = (0..n).map(|j| -r_d[j] - gtw[j]).chain(r_e.iter().map(|v| -v)).collect();
            let mut sol = rhs.clone();
            f.solve_in_place(&mut sol);
            for _ in 0..REFINE {
                let ks = &k0 * nalgebra::DVector::from_column_slice(&sol);
                let mut res: Vec<f64> = (0..dim).map(|i| rhs[i] - ks[i]).collect();
                f.solve_in_place(&mut res);
                sol.iter_mut().zip(&res).for_each(|(a, b)| *a += b);
            }
            let dx = sol[..n].to_vec();
            let dnu = sol[n..].to_vec();
            let mut adx = vec![0.0; m];
            s.a.mul_vec(&dx, &mut adx);
            let mut ds = vec![0.0; ni];
            let mut dl = vec![0.0; ni];
            for (k, g) in ineq.iter().enumerate() {
                let gdx = g.sign * adx[g.row];
                ds[k] = -r_i[k] - gdx;
                dl[k] = w[k] + d[k] * gdx;
            }
            (dx, dnu, ds, dl)
        };
        let max_step = |ds: &[f64], dl: &[f64]| {
            let mut a = 1.0f64;
            for k in 0..ni {
                if ds[k] < 0.0 {
                    a = a.min(-sl[k] / ds[k]);
                }
                if dl[k] < 0.0 {
                    a = a.min(-lam[k] / dl[k]);
                }
            }
            a
        };

        let r_aff: Vec<f64> = (0..ni).map(|k| -sl[k] * lam[k]).collect();
        let (_, _, ds_a, dl_a) = direction(&r_aff);
        let a_aff = max_step(&ds_a, &dl_a);
        let sigma = if ni > 0 {
            let mu_aff: f64 =
                (0..ni).map(|k| (sl[k] + a_aff * ds_a[k]) * (lam[k] + a_aff * dl_a[k])).sum::<f64>() / ni as f64;
            (mu_aff / mu).powi(3).min(1.0)
        } else {
            0.0
        };
        let r_c: Vec<f64> = (0..ni).map(|k| -sl[k] * lam[k] - ds_a[k] * dl_a[k] + sigma * mu).collect();
        let (dx, dnu, ds, dl) = direction(&r_c);
        let alpha = (STEP_FRACTION * max_step(&ds, &dl)).min(1.0);
        if !alpha.is_finite() || alpha < 1e-12 || dx.iter().any(|v| !v.is_finite()) {
            break;
        }
        for j in 0..n {
            x[j] += alpha * dx[j];
        }
        for r in 0..ne {
            nu[r] += alpha * dnu[r];
        }
        for k in 0..ni {
            sl[k] += alpha * ds[k];
            lam[k] += alpha * dl[k];
        }
    }
    let y = gather_y(&nu, &lam);
    IpmResult { x, y, iterations }
}
