use super::agent::{build_subproblem, control_var, state_var, AgentProblem, Dynamics};
use super::scadmm::clamp_controls;
use super::{AdmmConfig, TrajectoryVars};
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::qp::{solve_subproblem, QpSettings, QpStatus};
use nalgebra::{DMatrix, SymmetricEigen};

const REGION_TOL: f64 = 5e-7;
const SOC_PASSES: usize = 3;
const INNER_R_INIT: f64 = 0.5;

fn local_objective(p: &AgentProblem, w: &TrajectoryVars, target: &Point, rho: f64) -> f64 {
    p.cost(w) + 0.5 * rho * (w.final_position() - target).norm_squared()
}

fn region_violation(p: &AgentProblem, w: &TrajectoryVars) -> f64 {
    w.states.iter().map(|s| p.region.max_violation(&Point::new(s[0], s[1]))).fold(f64::NEG_INFINITY, f64::max)
}

// Rolls out the controls of `w + d`, clipped to the box.
fn candidate_from(p: &AgentProblem, w: &TrajectoryVars, d: &[f64]) -> TrajectoryVars {
    let mut controls = w.controls.clone();
    for (j, u) in controls.iter_mut().enumerate() {
        for c in 0..2 {
            u[c] += d[control_var(j, c)];
        }
    }
    let mut candidate = TrajectoryVars { states: w.states.clone(), controls };
    clamp_controls(p, &mut candidate);
    p.rollout(&candidate.controls)
}

/// Hessian over the controls of `sum_j c_j . s_j(u)`, where
/// `s_j = s_0 + dt sum_{i<=j} v_i (cos th_i, sin th_i)` and `th_i = th_0 + dt sum_{k<i} om_k`,
/// ordered `[v_0, om_0, v_1, om_1, ...]`.
fn rollout_curvature(p: &AgentProblem, w: &TrajectoryVars, c: &[[f64; 2]]) -> DMatrix<f64> {
    let h = p.horizon;
    let dt = p.dt;
    let mut hess = DMatrix::zeros(2 * h, 2 * h);
    // term i of the sum appears in every s_j with j >= i
    let mut lam = [0.0; 2];
    let mut weights = vec![[0.0; 2]; h];
    for i in (0..h).rev() {
        lam = [lam[0] + c[i][0], lam[1] + c[i][1]];
        weights[i] = lam;
    }
    let mut th = p.start_state.heading;
    for (j, lam) in weights.iter().enumerate() {
        let (sn, cs) = th.sin_cos();
        let d1 = lam[1] * cs - lam[0] * sn;
        let d2 = -(lam[0] * cs + lam[1] * sn);
        let v = w.controls[j][0];
        for k in 0..j {
            hess[(2 * j, 2 * k + 1)] += dt * dt * d1;
            hess[(2 * k + 1, 2 * j)] += dt * dt * d1;
            for l in 0..j {
                hess[(2 * k + 1, 2 * l + 1)] += dt.powi(3) * v * d2;
            }
        }
        th += dt * w.controls[j][1];
    }
    hess
}

fn psd_part(m: DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m);
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose()
}

/// Locally solves `min f_i(w) + rho/2 |s_H(w) - target|^2` over the agent's
/// feasible set, starting from `warm`.
///
/// Successive linearization with the dynamics as hard equalities; every
/// candidate is rolled out exactly from its controls, so iterates always
/// satisfy the dynamics and never increase the objective. `iteration` only
/// labels a failure.
pub fn ladmm_w_step(
    p: &AgentProblem,
    target: &Point,
    rho: f64,
    warm: &TrajectoryVars,
    cfg: &AdmmConfig,
    iteration: usize,
) -> Result<TrajectoryVars> {
    let sc = &cfg.sc;
    let mut start = warm.clone();
    clamp_controls(p, &mut start);
    let mut w = p.rollout(&start.controls);
    let mut phi = local_objective(p, &w, target, rho);
    let mut r = INNER_R_INIT.clamp(sc.r_min, sc.r_max);
    let settings = QpSettings::default();
    let facets = p.region.halfplanes.len();
    let mut just_shrunk = false;
    let mut region_y = vec![0.0; p.horizon * facets];
    // region row (j, f) sits after the 3H dynamics rows and, per step, three
    // state and two control rows
    let region_row = |j: usize, f: usize| 3 * p.horizon + j * (5 + facets) + 5 + f;

    for _ in 0..cfg.inner_max_iter {
        // Lagrangian curvature: consensus term plus the region rows weighted
        // by their multipliers from the previous model
        let s_h = w.final_position();
        let mut c = vec![[0.0; 2]; p.horizon];
        for j in 0..p.horizon {
            for (f, hp) in p.region.halfplanes.iter().enumerate() {
                let y = region_y[j * facets + f];
                c[j] = [c[j][0] + y * hp.normal().x, c[j][1] + y * hp.normal().y];
            }
        }
        c[p.horizon - 1][0] += rho * (s_h.x - target.x);
        c[p.horizon - 1][1] += rho * (s_h.y - target.y);
        let curv = psd_part(rollout_curvature(p, &w, &c));
        let model = |shift: Option<&[f64]>| {
            let mut sub = build_subproblem(p, &w, target, rho, Dynamics::Hard, r, shift);
            for a in 0..2 * p.horizon {
                for b in 0..2 * p.horizon {
                    sub.p[(control_var(a / 2, a % 2), control_var(b / 2, b % 2))] += curv[(a, b)];
                }
            }
            let zero = vec![0.0; sub.dim()];
            solve_subproblem(&sub, &settings, Some(&zero))
        };
        let sol = model(None)?;
        if sol.status != QpStatus::Optimal {
            r *= 0.5;
            if r < sc.r_min {
                return Ok(w);
            }
            continue;
        }
        for j in 0..p.horizon {
            for f in 0..facets {
                region_y[j * facets + f] = sol.y[region_row(j, f)].max(0.0);
            }
        }
        let predicted = -sol.objective;
        let step = sol.x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if predicted <= cfg.inner_tol * (1.0 + phi.abs()) || step <= cfg.inner_tol {
            return Ok(w);
        }
        let mut candidate = candidate_from(p, &w, &sol.x);
        // second-order correction: each active or violated region row gets the
        // nonlinearity it showed at the candidate folded into its bound
        let mut shift = vec![0.0; p.horizon * facets];
        let mut d = sol.x.clone();
        let mut best = (region_violation(p, &candidate) <= REGION_TOL)
            .then(|| (local_objective(p, &candidate, target, rho), candidate.clone()));
        for _ in 0..SOC_PASSES {
            let mut changed = false;
            for j in 0..p.horizon {
                let lin = Point::new(w.states[j][0] + d[state_var(j, 0)], w.states[j][1] + d[state_var(j, 1)]);
                let act = Point::new(candidate.states[j][0], candidate.states[j][1]);
                for (f, hp) in p.region.halfplanes.iter().enumerate() {
                    let k = j * facets + f;
                    let (l, v) = (hp.violation(&lin), hp.violation(&act));
                    if l + shift[k] > -REGION_TOL || v > -REGION_TOL {
                        let next = v - l + 0.5 * REGION_TOL;
                        changed |= (next - shift[k]).abs() > REGION_TOL;
                        shift[k] = next;
                    }
                }
            }
            if !changed {
                break;
            }
            match model(Some(&shift)) {
                Ok(c) if c.status == QpStatus::Optimal => {
                    d = c.x;
                    candidate = candidate_from(p, &w, &d);
                    if region_violation(p, &candidate) <= REGION_TOL {
                        let f = local_objective(p, &candidate, target, rho);
                        if best.as_ref().is_none_or(|(fb, _)| f < *fb) {
                            best = Some((f, candidate.clone()));
                        }
                    }
                }
                _ => break,
            }
        }
        if let Some((_, b)) = best {
            candidate = b;
        }
        let phi_new = local_objective(p, &candidate, target, rho);
        let ratio = (phi - phi_new) / predicted;
        if region_violation(p, &candidate) <= REGION_TOL && ratio > 0.1 {
            w = candidate;
            phi = phi_new;
            if ratio > 0.75 && step >= 0.9 * r && !just_shrunk {
                r = (2.0 * r).min(sc.r_max);
            } else if ratio < 0.25 {
                r *= 0.5;
            }
            just_shrunk = false;
        } else {
            r *= 0.5;
            just_shrunk = true;
        }
        if r < sc.r_min {
            return Ok(w);
        }
    }
    Err(Error::SubproblemFailure {
        agent: p.index,
        iteration,
        reason: format!("inner loop hit its cap of {} iterations", cfg.inner_max_iter),
        best: Box::new(w),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rect;
    use crate::vehicle::{ControlBounds, ControlInput, CostWeights, RobotState};

    fn problem(h: usize, weights: CostWeights) -> AgentProblem {
        AgentProblem {
            index: 0,
            start_state: RobotState::new(15.0, 15.0, 0.3),
            u_prev: ControlInput::ZERO,
            region: Rect::default().to_polytope(),
            bounds: ControlBounds::default(),
            weights,
            horizon: h,
            dt: 0.2,
        }
    }

    #[test]
    fn stationary_warm_start_is_returned() {
        let p = problem(4, CostWeights::diagonal([0.0; 2], [0.0; 2]));
        let warm = p.rollout(&[[1.0, 0.2], [0.5, -0.3], [1.0, 0.0], [0.2, 0.4]]);
        let out = ladmm_w_step(&p, &warm.final_position(), 0.1, &warm, &AdmmConfig::default(), 0).unwrap();
        assert_eq!(out, warm);
    }

    #[test]
    fn single_step_matches_grid_search() {
        let p = problem(1, CostWeights::default());
        let target = Point::new(15.25, 15.1);
        let rho = 0.1;
        let warm = TrajectoryVars::hold(&p.start_state, 1);
        let out = ladmm_w_step(&p, &target, rho, &warm, &AdmmConfig::default(), 0).unwrap();

        let mut best = (f64::INFINITY, 0.0, 0.0);
        let n = 4000;
        for a in 0..=n {
            let v = -2.0 + 4.0 * a as f64 / n as f64;
            // the objective does not depend on omega beyond its cost, so a
            // coarse omega grid around zero is enough
            for b in -20..=20 {
                let om = b as f64 * 1e-3;
                let w = p.rollout(&[[v, om]]);
                let f = local_objective(&p, &w, &target, rho);
                if f < best.0 {
                    best = (f, v, om);
                }
            }
        }
        assert!((out.controls[0][0] - best.1).abs() < 1e-2, "{:?} vs {:?}", out.controls[0], best);
        assert!((out.controls[0][1] - best.2).abs() < 1e-2);
    }

    #[test]
    fn output_is_dynamically_feasible_and_no_worse() {
        let p = problem(10, CostWeights::default());
        let cfg = AdmmConfig::default();
        let warm = TrajectoryVars::hold(&p.start_state, 10);
        for (k, target) in [Point::new(18.0, 14.0), Point::new(12.0, 17.0), Point::new(15.0, 19.0)].iter().enumerate() {
            let out = ladmm_w_step(&p, target, 1.0, &warm, &cfg, k).unwrap();
            assert!(p.constraints().max_dynamics_residual(&out) < 1e-12);
            assert!(local_objective(&p, &out, target, 1.0) <= local_objective(&p, &warm, target, 1.0));
            assert!(p.constraints().h(&out).iter().all(|v| *v <= 1e-6));
        }
    }

    #[test]
    fn rollout_curvature_matches_differences() {
        let p = problem(4, CostWeights::default());
        let u = [[1.0, 0.2], [-0.5, 0.7], [1.5, -0.4], [0.3, 0.9]];
        let c = [[0.3, -0.2], [0.0, 0.0], [-1.1, 0.4], [0.6, 0.8]];
        let w = p.rollout(&u);
        let hess = rollout_curvature(&p, &w, &c);
        let f = |u: &[[f64; 2]]| {
            let w = p.rollout(u);
            (0..4).map(|j| c[j][0] * w.states[j][0] + c[j][1] * w.states[j][1]).sum::<f64>()
        };
        let e = 1e-4;
        for a in 0..8 {
            for b in 0..8 {
                let shifted = |da: f64, db: f64| {
                    let mut v = u;
                    v[a / 2][a % 2] += da;
                    v[b / 2][b % 2] += db;
                    f(&v)
                };
                let fd = (shifted(e, e) - shifted(e, -e) - shifted(-e, e) + shifted(-e, -e)) / (4.0 * e * e);
                assert!((hess[(a, b)] - fd).abs() < 1e-6, "({a},{b}): {} vs {fd}", hess[(a, b)]);
            }
        }
    }
}
