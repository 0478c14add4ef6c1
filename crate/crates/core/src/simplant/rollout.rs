use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::metrics::{Recorder, RolloutMetrics, SuccessCriterion};
use super::plant::{step_plant, PlantState};
use super::SimError;
use crate::diffusion::{Denoiser, NoiseSchedule};
use crate::embodiment::{relative_action, ActionChunk, ActionSpace, RobotState, ACTION_WIDTH};
use crate::episodes::reach::{dls_ik, duration_steps, planar_two_link, reach_observation, two_link_ik, ReachParams, ReachProblem, REACH_TASK};
use crate::episodes::{Episode, EpisodeHeader, Frame};
use crate::kinematics::KinematicChain;
use crate::runtime::{ChunkExecutor, ChunkResponse, ExecutionMode, InferenceSession, ObservationRequest, Policy, RuntimeError};

/// Anything that turns an observation request into a chunk.
pub trait PolicyEndpoint {
    fn infer(&mut self, request: &ObservationRequest, now_ns: i64) -> Result<ChunkResponse, RuntimeError>;
}

impl PolicyEndpoint for InferenceSession {
    fn infer(&mut self, request: &ObservationRequest, now_ns: i64) -> Result<ChunkResponse, RuntimeError> {
        self.handle(request, now_ns)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RolloutConfig {
    pub mode: ExecutionMode,
    /// Time between dispatching a request and the chunk becoming usable.
    pub latency_ms: f64,
    pub control_period_ns: u64,
    pub vmax: f64,
    pub max_ticks: usize,
    pub success: SuccessCriterion,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            mode: ExecutionMode::Async,
            latency_ms: 300.0,
            control_period_ns: 20_000_000,
            vmax: 2.5,
            max_ticks: 600,
            success: SuccessCriterion::default(),
        }
    }
}

impl RolloutConfig {
    pub fn period_s(&self) -> f64 {
        self.control_period_ns as f64 * 1e-9
    }

    /// Injected latency rounded up to whole ticks.
    pub fn latency_ticks(&self) -> usize {
        let ns = (self.latency_ms * 1e6).round().max(0.0) as u64;
        ns.div_ceil(self.control_period_ns) as usize
    }
}

pub(crate) fn response_chunk(chain: &KinematicChain<f64>, resp: &ChunkResponse) -> Result<ActionChunk<f64>, RuntimeError> {
    let deltas = resp.deltas().map_err(RuntimeError::from)?;
    let reference = RobotState::from_q(chain, resp.reference.clone(), resp.generated_ns)?;
    Ok(ActionChunk::new(deltas, reference)?)
}

pub(crate) fn reach_record(chain: &KinematicChain<f64>, problem: &ReachProblem, cfg: &RolloutConfig, q: &[Vec<f64>]) -> Episode {
    let mut header = EpisodeHeader::new(&chain.name, chain.dof(), &chain.structure_hash(), cfg.control_period_ns, REACH_TASK);
    header.task_params = serde_json::to_value(ReachParams {
        target: problem.target,
        start: problem.start.clone(),
        goal: problem.goal.clone(),
        duration_steps: duration_steps(&problem.start, &problem.goal, cfg.vmax, cfg.period_s()),
        branch: problem.branch,
    })
    .expect("plain data");
    let frames = q
        .iter()
        .enumerate()
        .map(|(k, q)| Frame::new((k as u64 * cfg.control_period_ns) as i64, q.clone()))
        .collect();
    Episode { header, frames }
}

/// Closed-loop reach in simulated time.
///
/// A request dispatched at tick `k` is answered immediately but its chunk only
/// becomes usable at tick `k + latency_ticks`; every tick first adopts due
/// chunks, then dispatches, then steps the plant.
pub fn run_rollout(
    endpoint: &mut dyn PolicyEndpoint,
    chain: &KinematicChain<f64>,
    problem: &ReachProblem,
    cfg: &RolloutConfig,
    session: u64,
) -> Result<(RolloutMetrics, Episode), SimError> {
    let period_ns = cfg.control_period_ns;
    let lat = cfg.latency_ticks();
    let mut plant = PlantState::at_rest(problem.start.clone(), cfg.vmax, cfg.period_s());
    let max_step = (0..plant.q.len()).map(|j| plant.max_step(j)).collect();
    let mut rec = Recorder::new(chain, problem.target, cfg.success, plant.q.clone(), max_step, cfg.period_s());
    let mut exec = ChunkExecutor::new(cfg.mode);
    let mut inflight: Option<(usize, ChunkResponse)> = None;
    let mut measured: Option<u64> = None;
    for tick in 0..cfg.max_ticks {
        let now = (tick as u64 * period_ns) as i64;
        for round in 0..2 {
            if inflight.as_ref().is_some_and(|(due, _)| *due <= tick) {
                let (_, resp) = inflight.take().expect("checked");
                exec.adopt(resp.sequence, response_chunk(chain, &resp)?, resp.delay);
            }
            if round == 0 && exec.needs_dispatch() {
                let (sequence, executed) = exec.dispatch();
                let req = ObservationRequest {
                    session,
                    sequence,
                    timestamp_ns: now,
                    q: plant.q.clone(),
                    obs: reach_observation(&plant.q, &problem.target),
                    executed,
                    latency_ns: measured,
                };
                let resp = endpoint.infer(&req, now)?;
                inflight = Some((tick + lat, resp));
                measured = Some(lat as u64 * period_ns);
            }
        }
        let cmd = exec.command(&plant.q);
        plant = step_plant(&plant, &cmd)?;
        if rec.push(plant.q.clone()) {
            break;
        }
    }
    let metrics = rec.finish(&exec.stats);
    Ok((metrics, reach_record(chain, problem, cfg, &rec.q)))
}

/// Replays precomputed joint targets without any chunk switching.
pub fn replay_open_loop(
    chain: &KinematicChain<f64>,
    problem: &ReachProblem,
    targets: &[Vec<f64>],
    cfg: &RolloutConfig,
) -> Result<(RolloutMetrics, Episode), SimError> {
    let mut plant = PlantState::at_rest(problem.start.clone(), cfg.vmax, cfg.period_s());
    let max_step = (0..plant.q.len()).map(|j| plant.max_step(j)).collect();
    let mut rec = Recorder::new(chain, problem.target, cfg.success, plant.q.clone(), max_step, cfg.period_s());
    let exec = ChunkExecutor::new(cfg.mode);
    for k in 0..cfg.max_ticks {
        let cmd = targets.get(k).or(targets.last()).cloned().unwrap_or_else(|| plant.q.clone());
        plant = step_plant(&plant, &cmd)?;
        if rec.push(plant.q.clone()) {
            break;
        }
    }
    Ok((rec.finish(&exec.stats), reach_record(chain, problem, cfg, &rec.q)))
}

/// Oracle that ignores its noisy input and returns a rate-limited approach to
/// the inverse-kinematics goal for the observed target.
///
/// Observations are `q ⊕ target` as produced by [`reach_observation`].
pub struct ExpertDenoiser {
    pub chain: KinematicChain<f64>,
    pub horizon: usize,
    /// Largest joint change per row.
    pub step: f64,
}

impl ExpertDenoiser {
    /// Wraps the expert as a servable policy over a 1000-step schedule.
    pub fn policy(chain: KinematicChain<f64>, horizon: usize, step: f64) -> Policy {
        Policy {
            denoiser: Box::new(ExpertDenoiser {
                chain: chain.clone(),
                horizon,
                step,
            }),
            schedule: NoiseSchedule::cosine(1000),
            obs_dim: chain.dof() + 3,
            chain,
            horizon,
        }
    }

    pub fn goal(&self, q: &[f64], target: [f64; 3]) -> Vec<f64> {
        if let Some((l1, l2)) = planar_two_link(&self.chain) {
            if let Some(sols) = two_link_ik(l1, l2, [target[0], target[1]]) {
                let tau = std::f64::consts::TAU;
                return sols
                    .iter()
                    .map(|s| {
                        let t1 = s[0] + ((q[0] - s[0]) / tau).round() * tau;
                        vec![t1, s[1]]
                    })
                    .min_by(|a, b| {
                        let da = (a[0] - q[0]).abs().max((a[1] - q[1]).abs());
                        let db = (b[0] - q[0]).abs().max((b[1] - q[1]).abs());
                        da.total_cmp(&db)
                    })
                    .expect("two solutions");
            }
        }
        dls_ik(&self.chain, q, target, 200).unwrap_or_else(|| q.to_vec())
    }

    pub fn chunk(&self, q: &[f64], target: [f64; 3]) -> Array2<f64> {
        let goal = self.goal(q, target);
        let current = RobotState::from_q(&self.chain, q.to_vec(), 0).expect("observation matches chain");
        let mut out = Array2::zeros((self.horizon, q.len() * ACTION_WIDTH));
        for t in 0..self.horizon {
            let lim = self.step * (t + 1) as f64;
            let qt: Vec<f64> = q.iter().zip(&goal).map(|(a, g)| a + (g - a).clamp(-lim, lim)).collect();
            let s = RobotState::from_q(&self.chain, qt, 0).expect("same chain");
            let row = relative_action(&current, &s, ActionSpace::default()).expect("same chain").to_flat();
            for (c, v) in row.into_iter().enumerate() {
                out[[t, c]] = v;
            }
        }
        out
    }
}

impl Denoiser<f64> for ExpertDenoiser {
    fn denoise(&self, _x: &Array2<f64>, obs: &[f64], _tau: usize) -> Array2<f64> {
        let n = self.chain.dof();
        self.chunk(&obs[..n], [obs[n], obs[n + 1], obs[n + 2]])
    }
}
