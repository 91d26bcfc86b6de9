use serde::{Deserialize, Serialize};

use crate::geometry::Point;
use crate::vehicle::{ControlInput, RobotState};

/// One agent's decision variables over the horizon: states `x_1..x_H` and
/// controls `u_0..u_{H-1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryVars {
    pub states: Vec<[f64; 3]>,
    pub controls: Vec<[f64; 2]>,
}

impl TrajectoryVars {
    /// Zero controls with the start state held over the horizon.
    pub fn hold(start: &RobotState, horizon: usize) -> Self {
        Self { states: vec![start.as_array(); horizon], controls: vec![[0.0; 2]; horizon] }
    }

    pub fn horizon(&self) -> usize {
        self.controls.len()
    }

    /// `[states row-major, controls row-major]`, length `5H`.
    pub fn flatten(&self) -> Vec<f64> {
        self.states.iter().flatten().chain(self.controls.iter().flatten()).copied().collect()
    }

    pub fn from_flat(w: &[f64]) -> Self {
        assert_eq!(w.len() % 5, 0, "flattened length must be a multiple of 5");
        let h = w.len() / 5;
        let states = (0..h).map(|j| [w[3 * j], w[3 * j + 1], w[3 * j + 2]]).collect();
        let controls = (0..h).map(|j| [w[3 * h + 2 * j], w[3 * h + 2 * j + 1]]).collect();
        Self { states, controls }
    }

    /// Terminal position `s_{t+H}`.
    pub fn final_position(&self) -> Point {
        let s = self.states.last().expect("horizon is at least one");
        Point::new(s[0], s[1])
    }

    pub fn control_inputs(&self) -> Vec<ControlInput> {
        self.controls.iter().map(|u| ControlInput::new(u[0], u[1])).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flatten_round_trip() {
        let w =
            TrajectoryVars { states: vec![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]], controls: vec![[7.0, 8.0], [9.0, 10.0]] };
        let flat = w.flatten();
        assert_eq!(flat, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0]);
        assert_eq!(TrajectoryVars::from_flat(&flat), w);
    }
}
