//! End-to-end training of the reach policy from episodes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{LossWeights, WtmConfig};
use super::model::{Activation, ModelConfig, ToyDenoiser};
use super::trainer::{fit, StepStats, TrainContext, TrainerConfig};
use super::TrainingError;
use crate::diffusion::{NoiseSchedule, TeacherForcingConfig};
use crate::episodes::{Episode, ReachDataset};
use crate::kinematics::KinematicChain;

/// Knot rows used by the reach policy: dense near the start of the chunk,
/// sparse towards its end.
pub const REACH_KNOTS: [usize; 15] = [0, 1, 2, 3, 4, 6, 8, 11, 15, 20, 26, 33, 41, 50, 63];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyTrainConfig {
    pub horizon: usize,
    pub hidden: Vec<usize>,
    pub time_embedding: usize,
    /// Diffusion steps `T`.
    pub diffusion_steps: usize,
    pub knots: Vec<usize>,
    pub data_std: f64,
    pub teacher_forcing: TeacherForcingConfig,
    pub wtm: WtmConfig,
    pub loss: LossWeights,
    pub trainer: TrainerConfig,
    /// Share of samples cut at an episode's first frame instead of a uniform frame.
    pub start_fraction: f64,
    pub seed: u64,
}

impl Default for ToyTrainConfig {
    fn default() -> Self {
        Self {
            horizon: 64,
            hidden: vec![256, 256],
            time_embedding: 32,
            diffusion_steps: 1000,
            knots: REACH_KNOTS.to_vec(),
            data_std: 0.0,
            teacher_forcing: TeacherForcingConfig::default(),
            wtm: WtmConfig::default(),
            loss: LossWeights::default(),
            trainer: TrainerConfig::default(),
            start_fraction: 0.0,
            seed: 0,
        }
    }
}

impl ToyTrainConfig {
    pub fn model_config(&self, n_joints: usize, obs_dim: usize) -> ModelConfig {
        ModelConfig {
            horizon: self.horizon,
            n_joints,
            obs_dim,
            time_embedding: self.time_embedding,
            hidden: self.hidden.clone(),
            activation: Activation::Silu,
            train_steps: self.diffusion_steps,
            data_std: self.data_std,
            knots: self.knots.clone(),
        }
    }
}

/// Trains a fresh model on chunks cut from `episodes`.
pub fn train_reach_policy(
    chain: &KinematicChain<f64>,
    episodes: &[Episode],
    cfg: &ToyTrainConfig,
    on_step: impl FnMut(usize, &StepStats),
) -> Result<ToyDenoiser<f64>, TrainingError> {
    if episodes.is_empty() {
        return Err(TrainingError::Data("no episodes".into()));
    }
    if cfg.loss.train_steps != cfg.diffusion_steps {
        return Err(TrainingError::Data(format!(
            "loss uses T = {} but the schedule has {} steps",
            cfg.loss.train_steps, cfg.diffusion_steps
        )));
    }
    let ds = ReachDataset::new(chain, episodes, cfg.horizon).map_err(|e| TrainingError::Data(e.to_string()))?;
    let obs_dim = ds.sample_at(0, 0).obs.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = ToyDenoiser::new(cfg.model_config(chain.dof(), obs_dim), &mut rng)?;
    let schedule = NoiseSchedule::cosine(cfg.diffusion_steps);
    let ctx = TrainContext {
        chain,
        schedule: &schedule,
        teacher_forcing: cfg.teacher_forcing,
        wtm: cfg.wtm,
        loss: cfg.loss,
    };
    let start = cfg.start_fraction.clamp(0.0, 1.0);
    let sampler = |r: &mut ChaCha8Rng| {
        if start > 0.0 && r.random_bool(start) {
            ds.sample_at(r.random_range(0..ds.episodes.len()), 0)
        } else {
            ds.sample(r)
        }
    };
    fit(&mut model, &ctx, &cfg.trainer, sampler, &mut rng, on_step)?;
    Ok(model)
}
