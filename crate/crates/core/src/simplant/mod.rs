//! Simulated rate-limited plant, closed-loop reach rollouts and the
//! synchronous versus asynchronous benchmark.

mod bench;
mod metrics;
mod plant;
mod rollout;

pub use bench::{benchmark_suite, run_cell, summarize, write_csv, BenchCell, BenchGrid, CellSummary};
pub use metrics::{mean_jerk, Recorder, RolloutMetrics, SuccessCriterion};
pub use plant::{step_plant, PlantState};
pub use rollout::{replay_open_loop, run_rollout, ExpertDenoiser, PolicyEndpoint, RolloutConfig};
pub(crate) use rollout::{reach_record, response_chunk};

use crate::embodiment::EmbodimentError;
use crate::episodes::EpisodeError;
use crate::runtime::RuntimeError;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("command has {got} joints, plant has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no model for teacher-forcing ratio {0}")]
    MissingModel(f64),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Episode(#[from] EpisodeError),
    #[error(transparent)]
    Embodiment(#[from] EmbodimentError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
