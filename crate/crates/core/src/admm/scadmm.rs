use super::agent::{apply_step, build_subproblem, model_cost, penalized_cost, AgentProblem, Dynamics};
use super::{ScConfig, TrajectoryVars};
use crate::error::Result;
use crate::geometry::Point;
use crate::qp::{solve_subproblem, QpSettings, QpStatus};

#[derive(Debug, Clone, PartialEq)]
pub struct ScStep {
    pub w: TrajectoryVars,
    /// Actual minus predicted penalized cost; infinite when the subproblem
    /// produced no usable step.
    pub delta: f64,
    pub accepted: bool,
    pub radius: f64,
}

/// Acceptance and radius factor for a given `delta`.
///
/// Ties go to the more permissive case: `delta == eps2` is accepted with a
/// contraction and `delta == eps0` keeps the radius.
pub fn trust_rule(delta: f64, sc: &ScConfig) -> (bool, f64) {
    if delta.is_nan() || delta > sc.eps2 {
        (false, sc.beta_fail)
    } else if delta > sc.eps1 {
        (true, sc.beta_fail)
    } else if delta >= sc.eps0 {
        (true, 1.0)
    } else {
        (true, sc.beta_succ)
    }
}

pub(crate) fn clamp_controls(p: &AgentProblem, w: &mut TrajectoryVars) {
    let lo = p.bounds.lower();
    let hi = p.bounds.upper();
    for u in &mut w.controls {
        for c in 0..2 {
            u[c] = u[c].clamp(lo[c], hi[c]);
        }
    }
}

/// One convexified step for agent `p` around `w_prev` with trust radius `r`.
pub fn scadmm_w_step(
    p: &AgentProblem,
    w_prev: &TrajectoryVars,
    target: &Point,
    rho: f64,
    r: f64,
    sc: &ScConfig,
) -> Result<ScStep> {
    let sub = build_subproblem(p, w_prev, target, rho, Dynamics::Penalized(sc.lambda), r, None);
    let zero = vec![0.0; sub.dim()];
    let sol = solve_subproblem(&sub, &QpSettings::default(), Some(&zero))?;
    if sol.status != QpStatus::Optimal {
        let radius = (r * 0.5).clamp(sc.r_min, sc.r_max);
        return Ok(ScStep { w: w_prev.clone(), delta: f64::INFINITY, accepted: false, radius });
    }
    let mut w = apply_step(w_prev, &sol.x);
    clamp_controls(p, &mut w);
    let delta = penalized_cost(p, &w, sc.lambda) - model_cost(p, w_prev, &sub, &sol.x);
    let (accepted, factor) = trust_rule(delta, sc);
    let radius = (r * factor).clamp(sc.r_min, sc.r_max);
    Ok(ScStep { w: if accepted { w } else { w_prev.clone() }, delta, accepted, radius })
}
