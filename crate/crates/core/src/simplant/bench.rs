use std::io::Write;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{RolloutMetrics, SuccessCriterion};
use super::rollout::{run_rollout, RolloutConfig};
use super::SimError;
use crate::episodes::reach::sample_reach_problem;
use crate::kinematics::KinematicChain;
use crate::runtime::{ExecutionMode, InferenceSession, Policy, ServerConfig};
use crate::simplertc::Decay;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchCell {
    pub name: String,
    pub mode: ExecutionMode,
    pub rtc: bool,
    #[serde(default)]
    pub decay: Decay,
    #[serde(default = "default_window")]
    pub window: usize,
    /// Teacher-forcing ratio of the model this cell runs.
    pub tf_ratio: f64,
    #[serde(default = "default_latency")]
    pub latency_ms: f64,
}

fn default_window() -> usize {
    8
}

fn default_latency() -> f64 {
    300.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchGrid {
    pub cells: Vec<BenchCell>,
    pub rollouts: usize,
    pub seed: u64,
    /// Sampler steps per chunk.
    pub steps: usize,
    pub control_period_ns: u64,
    pub vmax: f64,
    pub max_ticks: usize,
    pub success: SuccessCriterion,
}

impl Default for BenchGrid {
    fn default() -> Self {
        Self {
            cells: BenchGrid::ablation(&[0.0, 0.25]),
            rollouts: 100,
            seed: 0,
            steps: 10,
            control_period_ns: 20_000_000,
            vmax: 2.5,
            max_ticks: 600,
            success: SuccessCriterion::default(),
        }
    }
}

impl BenchGrid {
    /// Synchronous and naive asynchronous baselines on the last ratio, plus
    /// asynchronous SimpleRTC on every ratio.
    pub fn ablation(tf_ratios: &[f64]) -> Vec<BenchCell> {
        let base = *tf_ratios.last().unwrap_or(&0.25);
        let cell = |name: String, mode, rtc, tf_ratio| BenchCell {
            name,
            mode,
            rtc,
            decay: Decay::Linear,
            window: 8,
            tf_ratio,
            latency_ms: 300.0,
        };
        let mut cells = vec![
            cell(format!("sync_tf{base}"), ExecutionMode::Sync { effective_steps: 16 }, false, base),
            cell(format!("async_naive_tf{base}"), ExecutionMode::Async, false, base),
        ];
        cells.extend(
            tf_ratios
                .iter()
                .map(|&tf| cell(format!("async_rtc_tf{tf}"), ExecutionMode::Async, true, tf)),
        );
        cells
    }
}

/// One CSV row: means and standard deviations over a cell's rollouts.
/// Completion statistics cover successful rollouts only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: String,
    pub mode: String,
    pub rtc: bool,
    pub decay: String,
    pub tf_ratio: f64,
    pub latency_ms: f64,
    pub rollouts: usize,
    pub success_rate: f64,
    pub completion_s_mean: f64,
    pub completion_s_std: f64,
    pub jerk_mean: f64,
    pub jerk_std: f64,
    pub discontinuity_mean: f64,
    pub discontinuity_std: f64,
    pub discontinuity_max: f64,
    pub starvation_mean: f64,
    pub inference_calls_mean: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, var.sqrt())
}

pub fn summarize(cell: &BenchCell, runs: &[RolloutMetrics]) -> CellSummary {
    let pick = |f: &dyn Fn(&RolloutMetrics) -> f64| runs.iter().map(f).collect::<Vec<_>>();
    let completion: Vec<f64> = runs.iter().filter_map(|r| r.completion_s).collect();
    let (c_mean, c_std) = mean_std(&completion);
    let (j_mean, j_std) = mean_std(&pick(&|r| r.mean_jerk));
    let disc = pick(&|r| r.max_switch_discontinuity);
    let (d_mean, d_std) = mean_std(&disc);
    let mode = match cell.mode {
        ExecutionMode::Sync { effective_steps } => format!("sync{effective_steps}"),
        ExecutionMode::Async => "async".to_string(),
    };
    CellSummary {
        cell: cell.name.clone(),
        mode,
        rtc: cell.rtc,
        decay: cell.decay.to_string(),
        tf_ratio: cell.tf_ratio,
        latency_ms: cell.latency_ms,
        rollouts: runs.len(),
        success_rate: runs.iter().filter(|r| r.success).count() as f64 / runs.len().max(1) as f64,
        completion_s_mean: c_mean,
        completion_s_std: c_std,
        jerk_mean: j_mean,
        jerk_std: j_std,
        discontinuity_mean: d_mean,
        discontinuity_std: d_std,
        discontinuity_max: disc.iter().copied().fold(0.0, f64::max),
        starvation_mean: mean_std(&pick(&|r| r.starvation_events as f64)).0,
        inference_calls_mean: mean_std(&pick(&|r| r.inference_calls as f64)).0,
    }
}

/// Rollouts of one cell; rollout `i` uses seed `grid.seed + i` for both the
/// task and the sampler noise, so cells are paired.
pub fn run_cell(
    grid: &BenchGrid,
    cell: &BenchCell,
    chain: &KinematicChain<f64>,
    policy: Arc<Policy>,
) -> Result<Vec<RolloutMetrics>, SimError> {
    let rollout = RolloutConfig {
        mode: cell.mode,
        latency_ms: cell.latency_ms,
        control_period_ns: grid.control_period_ns,
        vmax: grid.vmax,
        max_ticks: grid.max_ticks,
        success: grid.success,
    };
    (0..grid.rollouts)
        .map(|i| {
            let seed = grid.seed.wrapping_add(i as u64);
            let problem = sample_reach_problem(chain, false, &mut ChaCha8Rng::seed_from_u64(seed))?;
            let server = ServerConfig {
                control_period_ns: grid.control_period_ns,
                steps: grid.steps,
                rtc: cell.rtc,
                window: cell.window,
                decay: cell.decay,
                seed,
                ..ServerConfig::default()
            };
            let mut session = InferenceSession::new(policy.clone(), server, 0);
            Ok(run_rollout(&mut session, chain, &problem, &rollout, 0)?.0)
        })
        .collect()
}

/// Runs every cell; `policy_for` maps a teacher-forcing ratio to its model.
pub fn benchmark_suite(
    grid: &BenchGrid,
    chain: &KinematicChain<f64>,
    mut policy_for: impl FnMut(f64) -> Option<Arc<Policy>>,
    mut on_cell: impl FnMut(&CellSummary),
) -> Result<Vec<CellSummary>, SimError> {
    let mut out = Vec::with_capacity(grid.cells.len());
    for cell in &grid.cells {
        let policy = policy_for(cell.tf_ratio).ok_or(SimError::MissingModel(cell.tf_ratio))?;
        let runs = run_cell(grid, cell, chain, policy)?;
        let s = summarize(cell, &runs);
        on_cell(&s);
        out.push(s);
    }
    Ok(out)
}

pub fn write_csv<W: Write>(rows: &[CellSummary], out: W) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
