use nalgebra::{DMatrix, DVector};

use super::TrajectoryVars;
use crate::error::{Error, Result};
use crate::geometry::{Point, Polytope};
use crate::qp::{ConvexSubproblem, EqRow, IneqRow, LinearRow, PenaltyTerm};
use crate::vehicle::{control_cost, jacobians, propagate, ControlBounds, ControlInput, CostWeights, RobotState};

/// Everything agent `index` needs to plan its next horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentProblem {
    pub index: usize,
    pub start_state: RobotState,
    pub u_prev: ControlInput,
    pub region: Polytope,
    pub bounds: ControlBounds,
    pub weights: CostWeights,
    pub horizon: usize,
    pub dt: f64,
}

impl AgentProblem {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidInput("horizon must be at least 1".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidInput("dt must be positive".into()));
        }
        self.bounds.validate()?;
        self.weights.validate()?;
        if !crate::geometry::contains(&self.region, &self.start_state.position(), 1e-6) {
            return Err(Error::InvalidInput(format!("agent {} starts outside its movement region", self.index)));
        }
        Ok(())
    }

    /// Control cost `f_i(w)`.
    pub fn cost(&self, w: &TrajectoryVars) -> f64 {
        control_cost(&w.control_inputs(), &self.u_prev, &self.weights)
    }

    /// The trajectory obtained by applying `w`'s controls from the start
    /// state, so that every dynamics residual is zero.
    pub fn rollout(&self, controls: &[[f64; 2]]) -> TrajectoryVars {
        let mut cur = self.start_state.as_array();
        let states = controls
            .iter()
            .map(|u| {
                cur = propagate(cur, *u, self.dt);
                cur
            })
            .collect();
        TrajectoryVars { states, controls: controls.to_vec() }
    }

    pub fn constraints(&self) -> AgentConstraints<'_> {
        build_agent_constraints(self)
    }
}

/// Dynamics equalities `g` and inequalities `h <= 0` of one agent.
///
/// `g` has `3H` entries, `g_j = x_{j+1} - f(x_j, u_j)` with `x_0` the start
/// state. `h` lists the `4H` control-box rows `(v - v_max, v_min - v, w -
/// w_max, w_min - w)` per step, followed by one row per step and region facet.
#[derive(Debug, Clone, Copy)]
pub struct AgentConstraints<'a> {
    problem: &'a AgentProblem,
}

pub fn build_agent_constraints(p: &AgentProblem) -> AgentConstraints<'_> {
    AgentConstraints { problem: p }
}

impl AgentConstraints<'_> {
    pub fn num_equalities(&self) -> usize {
        3 * self.problem.horizon
    }

    pub fn num_inequalities(&self) -> usize {
        self.problem.horizon * (4 + self.problem.region.len())
    }

    pub fn g(&self, w: &TrajectoryVars) -> Vec<f64> {
        let p = self.problem;
        let mut prev = p.start_state.as_array();
        let mut out = Vec::with_capacity(3 * p.horizon);
        for (x, u) in w.states.iter().zip(&w.controls) {
            let f = propagate(prev, *u, p.dt);
            out.extend((0..3).map(|c| x[c] - f[c]));
            prev = *x;
        }
        out
    }

    pub fn h(&self, w: &TrajectoryVars) -> Vec<f64> {
        let p = self.problem;
        let b = &p.bounds;
        let mut out = Vec::with_capacity(self.num_inequalities());
        for u in &w.controls {
            out.extend([u[0] - b.v_max, b.v_min - u[0], u[1] - b.omega_max, b.omega_min - u[1]]);
        }
        for x in &w.states {
            let q = Point::new(x[0], x[1]);
            out.extend(p.region.halfplanes.iter().map(|hp| hp.violation(&q)));
        }
        out
    }

    pub fn max_dynamics_residual(&self, w: &TrajectoryVars) -> f64 {
        self.g(w).iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// How the linearized dynamics enter a subproblem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Dynamics {
    /// `lambda |g + grad g . d|` per component.
    Penalized(f64),
    /// `g + grad g . d = 0`.
    Hard,
}

// Subproblem variables are time-major: step j holds [x_{j+1}, u_j].
pub(crate) fn state_var(j: usize, c: usize) -> usize {
    5 * j + c
}

pub(crate) fn control_var(j: usize, c: usize) -> usize {
    5 * j + 3 + c
}

/// `w + d` with `d` in subproblem ordering.
pub(crate) fn apply_step(w: &TrajectoryVars, d: &[f64]) -> TrajectoryVars {
    let mut out = w.clone();
    for j in 0..w.horizon() {
        for c in 0..3 {
            out.states[j][c] += d[state_var(j, c)];
        }
        for c in 0..2 {
            out.controls[j][c] += d[control_var(j, c)];
        }
    }
    out
}

/// Convex model of `f_i(w + d) + rho/2 |s_H(w + d) - target|^2` around `w`
/// with linearized dynamics, explicit control-box and region rows and the
/// trust bound `|d|_inf <= r` folded into single rows per variable.
/// `region_shift`, indexed `j * facets + f`, tightens individual region rows.
pub(crate) fn build_subproblem(
    p: &AgentProblem,
    w: &TrajectoryVars,
    target: &Point,
    rho: f64,
    dynamics: Dynamics,
    r: f64,
    region_shift: Option<&[f64]>,
) -> ConvexSubproblem {
    let h = p.horizon;
    let n = 5 * h;
    let mut big_p = DMatrix::zeros(n, n);
    let mut q = DVector::zeros(n);
    let (qw, rw) = (p.weights.q, p.weights.r);

    // control cost: exact quadratic in u
    for j in 0..h {
        let u = w.controls[j];
        let prev = if j == 0 { [p.u_prev.v, p.u_prev.omega] } else { w.controls[j - 1] };
        for a in 0..2 {
            for b in 0..2 {
                big_p[(control_var(j, a), control_var(j, b))] += 2.0 * (qw[(a, b)] + rw[(a, b)]);
                q[control_var(j, a)] += 2.0 * qw[(a, b)] * u[b] + 2.0 * rw[(a, b)] * (u[b] - prev[b]);
                if j > 0 {
                    big_p[(control_var(j - 1, a), control_var(j - 1, b))] += 2.0 * rw[(a, b)];
                    big_p[(control_var(j, a), control_var(j - 1, b))] -= 2.0 * rw[(a, b)];
                    big_p[(control_var(j - 1, a), control_var(j, b))] -= 2.0 * rw[(a, b)];
                    q[control_var(j - 1, a)] -= 2.0 * rw[(a, b)] * (u[b] - prev[b]);
                }
            }
        }
    }
    // consensus term on the terminal position
    let s_h = w.final_position();
    for c in 0..2 {
        big_p[(state_var(h - 1, c), state_var(h - 1, c))] += rho;
        q[state_var(h - 1, c)] += rho * (s_h[c] - target[c]);
    }

    let mut sub = ConvexSubproblem::new(big_p, q);

    let g = build_agent_constraints(p).g(w);
    let mut prev = p.start_state.as_array();
    for j in 0..h {
        let (a, b) = jacobians(prev, w.controls[j], p.dt);
        for c in 0..3 {
            let mut coeffs = vec![(state_var(j, c), 1.0)];
            if j > 0 {
                coeffs.extend((0..3).map(|d| (state_var(j - 1, d), -a[(c, d)])));
            }
            coeffs.extend((0..2).map(|e| (control_var(j, e), -b[(c, e)])));
            let row = LinearRow::new(coeffs.into_iter().filter(|(_, v)| *v != 0.0).collect());
            match dynamics {
                Dynamics::Penalized(lambda) => sub.l1_terms.push(PenaltyTerm::new(lambda, row, g[3 * j + c])),
                Dynamics::Hard => sub.eq_rows.push(EqRow { row, rhs: -g[3 * j + c] }),
            }
        }
        prev = w.states[j];
    }

    let lo = p.bounds.lower();
    let hi = p.bounds.upper();
    for j in 0..h {
        for c in 0..3 {
            sub.ineq_rows.push(IneqRow { row: LinearRow::new(vec![(state_var(j, c), 1.0)]), lower: -r, upper: r });
        }
        for c in 0..2 {
            let u = w.controls[j][c];
            let lower = (lo[c] - u).max(-r);
            let upper = (hi[c] - u).min(r);
            sub.ineq_rows.push(IneqRow { row: LinearRow::new(vec![(control_var(j, c), 1.0)]), lower, upper });
        }
        let pos = Point::new(w.states[j][0], w.states[j][1]);
        let facets = p.region.halfplanes.len();
        for (f, hp) in p.region.halfplanes.iter().enumerate() {
            let nrm = hp.normal();
            let shift = region_shift.map_or(0.0, |s| s[j * facets + f]);
            sub.ineq_rows.push(IneqRow {
                row: LinearRow::new(vec![(state_var(j, 0), nrm.x), (state_var(j, 1), nrm.y)]),
                lower: f64::NEG_INFINITY,
                upper: -hp.violation(&pos) - shift,
            });
        }
    }
    sub
}

/// Penalized cost `J_i(w) = f_i(w) + lambda sum |g(w)|`. The box and region
/// rows are hard constraints, so they carry no penalty here.
pub(crate) fn penalized_cost(p: &AgentProblem, w: &TrajectoryVars, lambda: f64) -> f64 {
    p.cost(w) + lambda * build_agent_constraints(p).g(w).iter().map(|v| v.abs()).sum::<f64>()
}

/// `J~_i(d)`: the same cost with `g` replaced by its linearization.
pub(crate) fn model_cost(p: &AgentProblem, w: &TrajectoryVars, sub: &ConvexSubproblem, d: &[f64]) -> f64 {
    p.cost(&apply_step(w, d)) + sub.l1_terms.iter().map(|t| t.weight * t.affine(d).abs()).sum::<f64>()
}
