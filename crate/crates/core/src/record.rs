//! Per-run traces emitted by the protocol drivers.

use serde::{Deserialize, Serialize};

/// One checkpoint row for one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRow {
    pub run_id: u64,
    /// Trials completed (1-based).
    pub t: u64,
    pub agent: usize,
    pub cum_regret: f64,
    pub sync_count: u64,
    pub messages_sent: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub seed: u64,
    pub config_hash: String,
    /// Clique cover size (decentralized runs only).
    pub cover_size: Option<usize>,
    /// Synchronization rounds (centralized) or sync requests (decentralized).
    pub n_total: u64,
    /// `(t, β)` of agent 0 at every checkpoint.
    pub beta_trace: Vec<(u64, f64)>,
    /// Noise-tree seeds, one per agent and parameter set, for replay.
    pub noise_seeds: Vec<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: u64,
    pub rows: Vec<CheckpointRow>,
    pub meta: RunMeta,
    /// Trials (1-based) on which a synchronization round or request happened.
    pub sync_trials: Vec<u64>,
    /// Final cumulative pseudoregret per agent.
    pub final_regret: Vec<f64>,
}

impl RunRecord {
    pub fn group_regret(&self) -> f64 {
        self.final_regret.iter().sum()
    }

    pub fn per_agent_regret(&self) -> f64 {
        if self.final_regret.is_empty() {
            0.0
        } else {
            self.group_regret() / self.final_regret.len() as f64
        }
    }
}

/// Trial counts (1-based) at which checkpoint rows are emitted: every
/// `every` trials plus the final trial.
pub fn checkpoint_trials(horizon: u64, every: u64) -> Vec<u64> {
    if horizon == 0 {
        return Vec::new();
    }
    let every = every.max(1);
    let mut out: Vec<u64> = (1..=horizon / every).map(|k| k * every).collect();
    if !horizon.is_multiple_of(every) {
        out.push(horizon);
    }
    out
}
