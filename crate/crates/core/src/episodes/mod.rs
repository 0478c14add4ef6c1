//! Episode files, the integrity monitor, static-frame pruning and synthetic
//! reach demonstrations.

mod format;
mod integrity;
pub mod reach;

pub use format::{
    read_episode, read_episode_from, write_episode, write_episode_to, Episode, EpisodeError, EpisodeHeader, Frame,
    FORMAT_NAME, FORMAT_VERSION,
};
pub use integrity::{integrity_check, prune_static_frames, Gap, IntegrityReport, DEFAULT_GAP_FACTOR};
pub use reach::{generate_reach_dataset, generate_reach_episodes, load_dataset, ReachConfig, ReachDataset};

#[cfg(test)]
mod tests;
