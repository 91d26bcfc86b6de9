//! Consensus ADMM over the agents' terminal sampling positions.
//!
//! The station holds `z` (one 2-D position per agent) and the duals `mu`.
//! Each outer iteration it sends agent `i` the query point `z_i + mu_i/rho`,
//! every agent improves its own trajectory `w_i` against that target and
//! replies with its terminal position `v_i`, and the station takes one
//! linearized step on the sampling objective followed by a dual ascent step.
//!
//! [`run_ladmm`] solves each agent's nonconvex trajectory problem to local
//! optimality; [`run_scadmm`] takes one trust-region-limited convex step per
//! iteration on a penalized, linearized model.

mod agent;
mod driver;
mod ladmm;
mod scadmm;
mod traj;

use serde::{Deserialize, Serialize};

pub use agent::{build_agent_constraints, AgentConstraints, AgentProblem};
pub use driver::{run, run_ladmm, run_scadmm, ConsensusState, MessageStats, SolveOutcome, SolverTrace};
pub use ladmm::ladmm_w_step;
pub use scadmm::{scadmm_w_step, trust_rule, ScStep};
pub use traj::TrajectoryVars;

use crate::error::{Error, Result};
use crate::geometry::{Point, Rect};
use crate::gp::GpPosterior;

/// Parameters of the successive-convexification variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScConfig {
    pub lambda: f64,
    pub tau: f64,
    pub beta_fail: f64,
    pub beta_succ: f64,
    pub eps0: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub r_init: f64,
    pub r_min: f64,
    pub r_max: f64,
}

impl Default for ScConfig {
    fn default() -> Self {
        Self {
            lambda: 1e6,
            tau: 1e6,
            beta_fail: 0.5,
            beta_succ: 2.0,
            eps0: 1.0,
            eps1: 1e2,
            eps2: 1e3,
            r_init: 0.1,
            r_min: 1e-6,
            r_max: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdmmConfig {
    pub rho: f64,
    pub lipschitz: f64,
    pub eps_res: f64,
    pub k_max: usize,
    pub sc: ScConfig,
    /// Iteration cap of the inner loop that solves an L-ADMM agent step.
    pub inner_max_iter: usize,
    pub inner_tol: f64,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            rho: 0.1,
            lipschitz: 0.01,
            eps_res: 1e-3,
            k_max: 100,
            sc: ScConfig::default(),
            inner_max_iter: 50,
            inner_tol: 1e-6,
        }
    }
}

impl AdmmConfig {
    pub fn validate(&self) -> Result<()> {
        let sc = &self.sc;
        let ok = self.rho > 0.0
            && self.lipschitz >= 0.0
            && self.eps_res > 0.0
            && self.k_max >= 1
            && sc.lambda > 0.0
            && sc.tau > 0.0
            && 0.0 < sc.eps0
            && sc.eps0 < sc.eps1
            && sc.eps1 < sc.eps2
            && 0.0 < sc.beta_fail
            && sc.beta_fail < 1.0
            && sc.beta_succ > 1.0
            && 0.0 < sc.r_min
            && sc.r_min <= sc.r_init
            && sc.r_init <= sc.r_max
            && self.inner_max_iter >= 1
            && self.inner_tol > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput("ADMM parameters out of range".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Scadmm,
    Ladmm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[serde(alias = "central")]
    Centralized,
    Distributed,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Scadmm => "scadmm",
            Method::Ladmm => "ladmm",
        })
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Centralized => "centralized",
            Mode::Distributed => "distributed",
        })
    }
}

/// The station's objective `f0` over the stacked sampling sites.
pub trait SamplingObjective: Sync {
    fn value(&self, sites: &[Point]) -> Result<f64>;
    /// Value and gradient, the latter ordered `[x_0, y_0, x_1, y_1, ...]`.
    fn value_and_gradient(&self, sites: &[Point]) -> Result<(f64, Vec<f64>)>;
}

impl SamplingObjective for GpPosterior {
    fn value(&self, sites: &[Point]) -> Result<f64> {
        self.neg_log_det(sites)
    }

    fn value_and_gradient(&self, sites: &[Point]) -> Result<(f64, Vec<f64>)> {
        self.neg_log_det_with_grad(sites)
    }
}

/// `z = clamp(v - (grad + mu) / (rho + L))` with the clamp applied per agent
/// position to `domain`.
pub fn z_step(v: &[f64], mu: &[f64], rho: f64, lipschitz: f64, grad: &[f64], domain: &Rect) -> Vec<f64> {
    let mut z: Vec<f64> = (0..v.len()).map(|i| v[i] - (grad[i] + mu[i]) / (rho + lipschitz)).collect();
    for pair in z.chunks_exact_mut(2) {
        pair[0] = pair[0].clamp(domain.x_min, domain.x_max);
        pair[1] = pair[1].clamp(domain.y_min, domain.y_max);
    }
    z
}

/// `mu + rho (z - v)`
pub fn dual_step(mu: &[f64], z: &[f64], v: &[f64], rho: f64) -> Vec<f64> {
    (0..mu.len()).map(|i| mu[i] + rho * (z[i] - v[i])).collect()
}

pub(crate) fn stack(points: &[Point]) -> Vec<f64> {
    points.iter().flat_map(|p| [p.x, p.y]).collect()
}

pub(crate) fn unstack(v: &[f64]) -> Vec<Point> {
    v.chunks_exact(2).map(|c| Point::new(c[0], c[1])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn z_step_examples() {
        let d = Rect::default();
        let v = [10.0, 10.0, 20.0, 5.0];
        assert_eq!(z_step(&v, &[0.0; 4], 0.1, 0.01, &[0.0; 4], &d), v.to_vec());
        let z = z_step(&v, &[0.0; 4], 0.1, 0.01, &[0.11; 4], &d);
        for i in 0..4 {
            assert!((z[i] - (v[i] - 1.0)).abs() < 1e-12);
        }
        // pushed outward from the wall, stays in the domain
        let z = z_step(&[0.0, 30.0], &[0.0; 2], 0.1, 0.01, &[1.0, -1.0], &d);
        assert_eq!(z, vec![0.0, 30.0]);
    }

    #[test]
    fn dual_step_examples() {
        assert_eq!(dual_step(&[1.0, 2.0], &[3.0, 4.0], &[3.0, 4.0], 0.1), vec![1.0, 2.0]);
        let mu = dual_step(&[0.0, 0.0, 0.0], &[1.0, 0.0, 0.0], &[0.0; 3], 0.1);
        assert_eq!(mu, vec![0.1, 0.0, 0.0]);
    }

    #[test]
    fn default_config_is_valid() {
        AdmmConfig::default().validate().unwrap();
        let mut bad = AdmmConfig::default();
        bad.sc.eps1 = bad.sc.eps2;
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn dual_steps_compose(mu in prop::collection::vec(-5.0..5.0f64, 4),
                              a in prop::collection::vec(-5.0..5.0f64, 4),
                              b in prop::collection::vec(-5.0..5.0f64, 4)) {
            let zero = vec![0.0; 4];
            let two = dual_step(&dual_step(&mu, &a, &zero, 0.1), &b, &zero, 0.1);
            let sum: Vec<f64> = (0..4).map(|i| a[i] + b[i]).collect();
            let one = dual_step(&mu, &sum, &zero, 0.1);
            for i in 0..4 {
                prop_assert!((two[i] - one[i]).abs() < 1e-12);
            }
        }

        #[test]
        fn z_step_identity_inside(v in prop::collection::vec(5.0..25.0f64, 4),
                                  g in prop::collection::vec(-0.1..0.1f64, 4),
                                  mu in prop::collection::vec(-0.1..0.1f64, 4)) {
            let z = z_step(&v, &mu, 0.1, 0.01, &g, &Rect::default());
            for i in 0..4 {
                prop_assert_eq!(z[i], v[i] - (g[i] + mu[i]) / 0.11);
            }
        }
    }
}
