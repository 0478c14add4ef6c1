use serde::{Deserialize, Serialize};

use super::SimError;

/// Kinematic joint-space plant: positions move toward the command at a
/// bounded speed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub q: Vec<f64>,
    pub v: Vec<f64>,
    /// Per-joint speed limit in rad/s.
    pub vmax: Vec<f64>,
    pub period_s: f64,
}

impl PlantState {
    pub fn at_rest(q: Vec<f64>, vmax: f64, period_s: f64) -> Self {
        let n = q.len();
        Self {
            q,
            v: vec![0.0; n],
            vmax: vec![vmax; n],
            period_s,
        }
    }

    /// Largest allowed position change of joint `j` in one tick.
    pub fn max_step(&self, j: usize) -> f64 {
        self.vmax[j] * self.period_s
    }
}

pub fn step_plant(state: &PlantState, command: &[f64]) -> Result<PlantState, SimError> {
    if command.len() != state.q.len() {
        return Err(SimError::DimensionMismatch {
            expected: state.q.len(),
            got: command.len(),
        });
    }
    let mut next = state.clone();
    for (j, &c) in command.iter().enumerate() {
        let lim = state.max_step(j);
        let dq = (c - state.q[j]).clamp(-lim, lim);
        next.q[j] = if dq == c - state.q[j] { c } else { state.q[j] + dq };
        next.v[j] = (next.q[j] - state.q[j]) / state.period_s;
    }
    Ok(next)
}
