use serde::{Deserialize, Serialize};

use crate::embodiment::ActionChunk;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExecutionMode {
    /// Observe, wait for the chunk while holding still, execute the first
    /// `effective_steps` rows, repeat.
    Sync { effective_steps: usize },
    /// Keep executing the current chunk while the next one is computed.
    Async,
}

impl ExecutionMode {
    pub fn is_async(&self) -> bool {
        matches!(self, Self::Async)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Pending {
    sequence: u64,
    executed: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExecutorStats {
    pub requests: usize,
    pub adopted: usize,
    pub starvation_events: usize,
    /// `max |new command − old command|` at each switch between chunks.
    pub switch_discontinuities: Vec<f64>,
    /// Switches where the rows executed during inference differ from the
    /// server's planned delay.
    pub delay_mismatches: usize,
}

impl ExecutorStats {
    pub fn max_switch_discontinuity(&self) -> f64 {
        self.switch_discontinuities.iter().copied().fold(0.0, f64::max)
    }
}

/// What happened when a response was adopted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Switch {
    /// Row of the new chunk executed next.
    pub row: usize,
    pub discontinuity: Option<f64>,
}

/// Tracks which chunk row to command at each control tick.
///
/// A request records how many rows of the current chunk had been executed when
/// the observation was taken. When its response arrives the new chunk is entered
/// at the row matching the rows executed since, so both chunks refer to the same
/// instant.
#[derive(Debug, Clone)]
pub struct ChunkExecutor {
    pub mode: ExecutionMode,
    current: Option<ActionChunk<f64>>,
    cursor: usize,
    pending: Option<Pending>,
    next_sequence: u64,
    last_command: Option<Vec<f64>>,
    starving: bool,
    pub stats: ExecutorStats,
}

impl ChunkExecutor {
    pub fn new(mode: ExecutionMode) -> Self {
        Self {
            mode,
            current: None,
            cursor: 0,
            pending: None,
            next_sequence: 1,
            last_command: None,
            starving: false,
            stats: ExecutorStats::default(),
        }
    }

    fn limit(&self) -> usize {
        let h = self.current.as_ref().map_or(0, |c| c.horizon());
        match self.mode {
            ExecutionMode::Sync { effective_steps } => effective_steps.min(h),
            ExecutionMode::Async => h,
        }
    }

    pub fn has_pending(&self) -> bool {
        self.pending.is_some()
    }

    pub fn needs_dispatch(&self) -> bool {
        self.pending.is_none() && (self.mode.is_async() || self.current.is_none() || self.cursor >= self.limit())
    }

    /// Registers a request; returns its sequence number and executed index.
    pub fn dispatch(&mut self) -> (u64, usize) {
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        let executed = if self.current.is_some() { self.cursor } else { 0 };
        self.pending = Some(Pending { sequence, executed });
        self.stats.requests += 1;
        (sequence, executed)
    }

    /// Forgets the pending request, e.g. after the server dropped it.
    pub fn cancel(&mut self, sequence: u64) {
        if self.pending.is_some_and(|p| p.sequence == sequence) {
            self.pending = None;
        }
    }

    /// Switches to `chunk` if it answers the pending request; stale responses are ignored.
    pub fn adopt(&mut self, sequence: u64, chunk: ActionChunk<f64>, planned_delay: usize) -> Option<Switch> {
        let pending = self.pending.filter(|p| p.sequence == sequence)?;
        self.pending = None;
        let row = if self.current.is_some() {
            self.cursor.saturating_sub(pending.executed)
        } else {
            0
        };
        if self.mode.is_async() && self.current.is_some() && row != planned_delay {
            self.stats.delay_mismatches += 1;
        }
        let old = match (&self.current, self.mode) {
            (Some(c), ExecutionMode::Async) if self.cursor < c.horizon() => Some(c.joint_command(self.cursor)),
            _ => self.last_command.clone(),
        };
        let discontinuity = match (&old, row < chunk.horizon()) {
            (Some(old), true) if self.current.is_some() => {
                let new = chunk.joint_command(row);
                Some(new.iter().zip(old).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            }
            _ => None,
        };
        if let Some(d) = discontinuity {
            self.stats.switch_discontinuities.push(d);
        }
        self.current = Some(chunk);
        self.cursor = row;
        self.stats.adopted += 1;
        Some(Switch { row, discontinuity })
    }

    /// Command for this tick; holds the last command when no row is available.
    pub fn command(&mut self, q_now: &[f64]) -> Vec<f64> {
        let limit = self.limit();
        if let (Some(c), true) = (&self.current, self.cursor < limit) {
            let cmd = c.joint_command(self.cursor);
            self.cursor += 1;
            self.starving = false;
            self.last_command = Some(cmd.clone());
            return cmd;
        }
        if self.mode.is_async() && self.current.is_some() && !self.starving {
            self.starving = true;
            self.stats.starvation_events += 1;
            log::warn!("chunk exhausted before a replacement arrived; holding");
        }
        self.last_command.clone().unwrap_or_else(|| q_now.to_vec())
    }
}
