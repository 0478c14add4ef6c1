use std::sync::Arc;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::protocol::{ChunkResponse, ObservationRequest};
use super::RuntimeError;
use crate::diffusion::{randn, Denoiser, NoiseSchedule};
use crate::embodiment::{chunk_to_absolute, relative_action, ActionChunk, ActionSpace, ControlMode, RobotState, ACTION_WIDTH};
use crate::kinematics::KinematicChain;
use crate::simplertc::{align_previous_chunk, guided_denoise, Decay, RtcConfig};
use crate::training::ToyDenoiser;

/// Everything a server needs to answer requests; shared read-only between sessions.
pub struct Policy {
    pub denoiser: Box<dyn Denoiser<f64> + Send + Sync>,
    pub schedule: NoiseSchedule<f64>,
    pub chain: KinematicChain<f64>,
    pub horizon: usize,
    pub obs_dim: usize,
}

impl Policy {
    pub fn from_model(model: ToyDenoiser<f64>, chain: KinematicChain<f64>) -> Result<Self, RuntimeError> {
        let c = &model.config;
        if c.n_joints != chain.dof() {
            return Err(RuntimeError::Config(format!(
                "model expects {} joints, chain has {}",
                c.n_joints,
                chain.dof()
            )));
        }
        Ok(Self {
            schedule: NoiseSchedule::cosine(c.train_steps),
            horizon: c.horizon,
            obs_dim: c.obs_dim,
            chain,
            denoiser: Box::new(model),
        })
    }

    pub fn width(&self) -> usize {
        self.chain.dof() * ACTION_WIDTH
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServerConfig {
    pub control_period_ns: u64,
    /// Sampler steps per chunk.
    pub steps: usize,
    /// Blend the previous chunk into new ones.
    pub rtc: bool,
    /// Delay used before any latency has been measured.
    pub default_delay: usize,
    pub window: usize,
    pub decay: Decay,
    /// Smoothing factor of the latency moving average.
    pub latency_alpha: f64,
    pub seed: u64,
    /// Feed the guided prefix to the denoiser clean.
    pub clean_prefix_input: bool,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            control_period_ns: 20_000_000,
            steps: 10,
            rtc: true,
            default_delay: 4,
            window: 8,
            decay: Decay::Linear,
            latency_alpha: 0.3,
            seed: 0,
            clean_prefix_input: true,
        }
    }
}

/// Per-connection state: the last chunk, its reference, and the latency estimate.
#[derive(Debug, Clone)]
pub struct SessionState {
    pub last: Option<ActionChunk<f64>>,
    pub executed: usize,
    /// Moving average of the reported round trips, in nanoseconds.
    pub latency_ns: Option<f64>,
    pub last_sequence: Option<u64>,
}

pub struct InferenceSession {
    pub policy: Arc<Policy>,
    pub config: ServerConfig,
    pub state: SessionState,
    rng: ChaCha8Rng,
}

impl InferenceSession {
    pub fn new(policy: Arc<Policy>, config: ServerConfig, session: u64) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(config.seed ^ session.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        Self {
            policy,
            config,
            state: SessionState {
                last: None,
                executed: 0,
                latency_ns: None,
                last_sequence: None,
            },
            rng,
        }
    }

    /// Delay in whole control steps implied by the latency estimate.
    pub fn delay_steps(&self) -> usize {
        match self.state.latency_ns {
            Some(l) => (l / self.config.control_period_ns as f64).ceil().max(0.0) as usize,
            None => self.config.default_delay,
        }
        .min(self.policy.horizon)
    }

    fn observe_latency(&mut self, latency_ns: Option<u64>) {
        if let Some(l) = latency_ns {
            let l = l as f64;
            self.state.latency_ns = Some(match self.state.latency_ns {
                None => l,
                Some(ema) => ema + self.config.latency_alpha * (l - ema),
            });
        }
    }

    /// The previous chunk re-expressed relative to `reference`.
    fn rebased_previous(&self, reference: &RobotState<f64>) -> Result<Option<Array2<f64>>, RuntimeError> {
        let Some(prev) = &self.state.last else {
            return Ok(None);
        };
        if prev.reference.q == reference.q {
            return Ok(Some(prev.deltas.clone()));
        }
        let space = ActionSpace::default();
        let states = chunk_to_absolute(&self.policy.chain, prev, ControlMode::JointSpace, space)?;
        let mut out = Array2::zeros(prev.deltas.dim());
        for (t, s) in states.iter().enumerate() {
            let row = relative_action(reference, s, space)?.to_flat();
            for (c, v) in row.into_iter().enumerate() {
                out[[t, c]] = v;
            }
        }
        Ok(Some(out))
    }

    pub fn handle(&mut self, req: &ObservationRequest, now_ns: i64) -> Result<ChunkResponse, RuntimeError> {
        let policy = self.policy.clone();
        let p = &*policy;
        if let Some(last) = self.state.last_sequence {
            if req.sequence <= last {
                return Err(RuntimeError::Protocol(format!("sequence {} not after {last}", req.sequence)));
            }
        }
        if req.q.len() != p.chain.dof() || req.obs.len() != p.obs_dim {
            return Err(RuntimeError::Protocol(format!(
                "expected {} joints and {} observation features, got {} and {}",
                p.chain.dof(),
                p.obs_dim,
                req.q.len(),
                req.obs.len()
            )));
        }
        self.state.last_sequence = Some(req.sequence);
        self.observe_latency(req.latency_ns);
        let d = self.delay_steps();
        let reference = RobotState::from_q(&p.chain, req.q.clone(), req.timestamp_ns)?;
        let executed = req.executed.min(p.horizon);
        self.state.executed = executed;
        let aligned = if self.config.rtc {
            self.rebased_previous(&reference)?
                .map(|prev| align_previous_chunk(&prev, executed, p.horizon))
        } else {
            None
        };
        let rtc = RtcConfig {
            delay: d,
            window: self.config.window,
            decay: self.config.decay,
            horizon: p.horizon,
            clean_prefix_input: self.config.clean_prefix_input,
        };
        let x_t = randn((p.horizon, p.width()), &mut self.rng);
        let chunk = guided_denoise(&p.schedule, x_t, &*p.denoiser, &req.obs, self.config.steps, aligned.as_ref(), &rtc)?;
        let response = ChunkResponse {
            session: req.session,
            sequence: req.sequence,
            chunk: chunk.rows().into_iter().map(|r| r.to_vec()).collect(),
            reference: req.q.clone(),
            generated_ns: now_ns,
            delay: d,
        };
        self.state.last = Some(ActionChunk::new(chunk, reference)?);
        Ok(response)
    }
}
