use serde::{Deserialize, Serialize};

use crate::kinematics::{end_effector_position, KinematicChain};
use crate::runtime::ExecutorStats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutMetrics {
    pub success: bool,
    /// Time at which the end effector entered the tolerance for good.
    pub completion_s: Option<f64>,
    pub ticks: usize,
    /// Mean `|q[t+3] − 3q[t+2] + 3q[t+1] − q[t]| / period³` over ticks and joints.
    pub mean_jerk: f64,
    pub max_switch_discontinuity: f64,
    pub starvation_events: usize,
    pub inference_calls: usize,
    pub delay_mismatches: usize,
    /// Ticks on which some joint moved more than its rate limit (always zero
    /// for a correct plant).
    pub rate_violations: usize,
}

/// Mean absolute third difference divided by `period³`.
pub fn mean_jerk(q: &[Vec<f64>], period_s: f64) -> f64 {
    if q.len() < 4 {
        return 0.0;
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for w in q.windows(4) {
        for j in 0..w[0].len() {
            sum += (w[3][j] - 3.0 * w[2][j] + 3.0 * w[1][j] - w[0][j]).abs();
            n += 1;
        }
    }
    sum / n.max(1) as f64 / period_s.powi(3)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuccessCriterion {
    /// End-effector distance in metres.
    pub tolerance: f64,
    pub hold_ticks: usize,
}

impl Default for SuccessCriterion {
    fn default() -> Self {
        Self {
            tolerance: 0.02,
            hold_ticks: 10,
        }
    }
}

/// Accumulates executed joint positions and checks the success condition.
pub struct Recorder<'a> {
    chain: &'a KinematicChain<f64>,
    target: [f64; 3],
    criterion: SuccessCriterion,
    period_s: f64,
    max_step: Vec<f64>,
    pub q: Vec<Vec<f64>>,
    streak: usize,
    entered: Option<usize>,
    rate_violations: usize,
}

impl<'a> Recorder<'a> {
    pub fn new(
        chain: &'a KinematicChain<f64>,
        target: [f64; 3],
        criterion: SuccessCriterion,
        q0: Vec<f64>,
        max_step: Vec<f64>,
        period_s: f64,
    ) -> Self {
        Self {
            chain,
            target,
            criterion,
            period_s,
            max_step,
            q: vec![q0],
            streak: 0,
            entered: None,
            rate_violations: 0,
        }
    }

    pub fn ticks(&self) -> usize {
        self.q.len() - 1
    }

    /// Records the position after one tick; returns `true` once the task is done.
    pub fn push(&mut self, q: Vec<f64>) -> bool {
        let prev = self.q.last().expect("initial state recorded");
        if q.iter().zip(prev).zip(&self.max_step).any(|((a, b), m)| (a - b).abs() > m * (1.0 + 1e-12)) {
            self.rate_violations += 1;
        }
        let ee = end_effector_position(self.chain, &q).expect("plant and chain agree");
        let dist = ((ee[0] - self.target[0]).powi(2) + (ee[1] - self.target[1]).powi(2) + (ee[2] - self.target[2]).powi(2)).sqrt();
        self.q.push(q);
        if dist <= self.criterion.tolerance {
            if self.streak == 0 {
                self.entered = Some(self.ticks());
            }
            self.streak += 1;
        } else {
            self.streak = 0;
            self.entered = None;
        }
        self.streak >= self.criterion.hold_ticks
    }

    pub fn finish(&self, stats: &ExecutorStats) -> RolloutMetrics {
        let success = self.streak >= self.criterion.hold_ticks;
        RolloutMetrics {
            success,
            completion_s: self.entered.filter(|_| success).map(|t| t as f64 * self.period_s),
            ticks: self.ticks(),
            mean_jerk: mean_jerk(&self.q, self.period_s),
            max_switch_discontinuity: stats.max_switch_discontinuity(),
            starvation_events: stats.starvation_events,
            inference_calls: stats.requests,
            delay_mismatches: stats.delay_mismatches,
            rate_violations: self.rate_violations,
        }
    }
}
