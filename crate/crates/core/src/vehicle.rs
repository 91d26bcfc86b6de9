//! Discrete unicycle kinematics and the per-robot control cost.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Matrix3, Matrix3x2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(theta: f64) -> f64 {
    let wrapped = theta.rem_euclid(2.0 * PI);
    if wrapped > PI {
        wrapped - 2.0 * PI
    } else {
        wrapped
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl RobotState {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self { x, y, heading: normalize_angle(heading) }
    }

    pub fn position(&self) -> Point {
        Point::new(self.x, self.y)
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.x, self.y, self.heading]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub v: f64,
    pub omega: f64,
}

impl ControlInput {
    pub const ZERO: Self = Self { v: 0.0, omega: 0.0 };

    pub fn new(v: f64, omega: f64) -> Self {
        Self { v, omega }
    }

    pub fn as_vector(&self) -> Vector2<f64> {
        Vector2::new(self.v, self.omega)
    }
}

/// Box on the control input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlBounds {
    pub v_min: f64,
    pub v_max: f64,
    pub omega_min: f64,
    pub omega_max: f64,
}

impl Default for ControlBounds {
    fn default() -> Self {
        Self { v_min: -2.0, v_max: 2.0, omega_min: -PI, omega_max: PI }
    }
}

impl ControlBounds {
    pub fn validate(&self) -> Result<()> {
        if self.v_min <= self.v_max && self.omega_min <= self.omega_max {
            Ok(())
        } else {
            Err(Error::InvalidInput("control bounds have min > max".into()))
        }
    }

    pub fn lower(&self) -> [f64; 2] {
        [self.v_min, self.omega_min]
    }

    pub fn upper(&self) -> [f64; 2] {
        [self.v_max, self.omega_max]
    }

    /// Exact membership, no tolerance.
    pub fn contains(&self, u: &ControlInput) -> bool {
        u.v >= self.v_min && u.v <= self.v_max && u.omega >= self.omega_min && u.omega <= self.omega_max
    }
}

/// Weights of the velocity (`q`) and acceleration (`r`) penalties.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub q: Matrix2<f64>,
    pub r: Matrix2<f64>,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self { q: Matrix2::from_diagonal(&Vector2::new(0.01, 0.01)), r: Matrix2::identity() }
    }
}

impl CostWeights {
    pub fn diagonal(q: [f64; 2], r: [f64; 2]) -> Self {
        Self {
            q: Matrix2::from_diagonal(&Vector2::new(q[0], q[1])),
            r: Matrix2::from_diagonal(&Vector2::new(r[0], r[1])),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, m) in [("Q", &self.q), ("R", &self.r)] {
            if (m - m.transpose()).abs().max() > 1e-12 {
                return Err(Error::InvalidInput(format!("{name} is not symmetric")));
            }
            if m.symmetric_eigenvalues().min() < -1e-12 {
                return Err(Error::InvalidInput(format!("{name} is not positive semidefinite")));
            }
        }
        Ok(())
    }
}

/// One step of the discrete unicycle without heading normalization.
///
/// Solvers use this inside a horizon so that the heading stays continuous.
pub fn propagate(state: [f64; 3], u: [f64; 2], dt: f64) -> [f64; 3] {
    let [x, y, th] = state;
    [x + dt * th.cos() * u[0], y + dt * th.sin() * u[0], th + dt * u[1]]
}

pub fn step(s: &RobotState, u: &ControlInput, dt: f64) -> RobotState {
    let [x, y, th] = propagate(s.as_array(), [u.v, u.omega], dt);
    RobotState::new(x, y, th)
}

/// States at `t+1 .. t+H` produced by applying `controls` from `s0`.
pub fn rollout(s0: &RobotState, controls: &[ControlInput], dt: f64) -> Vec<RobotState> {
    let mut out = Vec::with_capacity(controls.len());
    let mut cur = *s0;
    for u in controls {
        cur = step(&cur, u, dt);
        out.push(cur);
    }
    out
}

/// Jacobians `(df/dx, df/du)` of the discrete dynamics at `(s, u)`.
pub fn linearize(s: &RobotState, u: &ControlInput, dt: f64) -> (Matrix3<f64>, Matrix3x2<f64>) {
    jacobians(s.as_array(), [u.v, u.omega], dt)
}

pub(crate) fn jacobians(state: [f64; 3], u: [f64; 2], dt: f64) -> (Matrix3<f64>, Matrix3x2<f64>) {
    let (sin, cos) = state[2].sin_cos();
    let v = u[0];
    #[rustfmt::skip]
    let a = Matrix3::new(
        1.0, 0.0, -dt * v * sin,
        0.0, 1.0,  dt * v * cos,
        0.0, 0.0,  1.0,
    );
    #[rustfmt::skip]
    let b = Matrix3x2::new(
        dt * cos, 0.0,
        dt * sin, 0.0,
        0.0,      dt,
    );
    (a, b)
}

fn quad_form(m: &Matrix2<f64>, v: &Vector2<f64>) -> f64 {
    v.dot(&(m * v))
}

/// `sum_j |u_j|_Q^2 + |u_j - u_{j-1}|_R^2` with `u_{-1} = u_prev`.
pub fn control_cost(controls: &[ControlInput], u_prev: &ControlInput, w: &CostWeights) -> f64 {
    let mut prev = u_prev.as_vector();
    let mut total = 0.0;
    for u in controls {
        let cur = u.as_vector();
        total += quad_form(&w.q, &cur) + quad_form(&w.r, &(cur - prev));
        prev = cur;
    }
    total
}
