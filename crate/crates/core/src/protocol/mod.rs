//! The RSU chief: task broadcast, volunteer collection, worker selection,
//! deadline-gated update collection with quorum, and federated averaging.

mod aggregate;
mod chief;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::learner::{LearnerError, ModelParams, TrainConfig};
use crate::traffic::VehicleId;

pub use aggregate::{federated_average, quorum_for, select_workers};
pub use chief::{
    centralized_train, run_round, CentralizedRun, Chief, Evaluator, FleetEnvironment,
    PendingUpdate,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("no updates to aggregate")]
    Empty,
    #[error("update from {sender} does not match the global model layout")]
    LayoutMismatch { sender: Identity },
    #[error("update from {sender} carries non-finite parameters")]
    NonFinite { sender: Identity },
    #[error("update from {sender} is tagged for round {got}, open round is {open}")]
    WrongRound { sender: Identity, got: u64, open: u64 },
    #[error("duplicate update from {sender}")]
    DuplicateSender { sender: Identity },
    #[error("update from {sender} claims zero samples")]
    NoSamples { sender: Identity },
    #[error("configuration: {0}")]
    Config(String),
    #[error("environment: {0}")]
    Environment(String),
    #[error(transparent)]
    Learner(#[from] LearnerError),
}

/// Protocol-level identity. The chief does not authenticate, so a fabricated
/// Sybil identity is indistinguishable from a vehicle on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Identity {
    Vehicle(VehicleId),
    Sybil { master: VehicleId, index: u32 },
}

impl fmt::Display for Identity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Identity::Vehicle(v) => write!(f, "{v}"),
            Identity::Sybil { master, index } => write!(f, "s{}.{index}", master.0),
        }
    }
}

/// A worker's reply for one round (honest or fabricated).
#[derive(Debug, Clone, PartialEq)]
pub struct LocalUpdate {
    pub sender: Identity,
    pub round: u64,
    pub params: ModelParams,
    pub sample_count: usize,
}

/// Instructions and timing plan broadcast with GM^t.
#[derive(Debug, Clone, PartialEq)]
pub struct FlTask {
    pub round: u64,
    pub train: TrainConfig,
    pub announced_at: f64,
    /// Simulation second by which updates must have arrived.
    pub deadline: f64,
    pub model: ModelParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundStatus {
    Completed,
    Abandoned,
}

impl fmt::Display for RoundStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RoundStatus::Completed => "completed",
            RoundStatus::Abandoned => "abandoned",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub round: u64,
    pub volunteers: Vec<Identity>,
    pub selected: Vec<Identity>,
    /// Accepted updates in sender order.
    pub received: Vec<LocalUpdate>,
    /// Updates that arrived but failed ingestion checks.
    pub quarantined: Vec<Identity>,
    pub status: RoundStatus,
    /// Held-out RMSE of the global model after this round, km/h.
    pub global_rmse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Weight each update by its claimed sample count.
    Samples,
    Uniform,
}

/// When the run counts as converged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Convergence {
    /// Held-out RMSE at most this multiple of the centralized final RMSE.
    RelativeToCentralized(f64),
    /// Held-out RMSE at most this many km/h.
    AbsoluteKmh(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    /// Worker cap per round.
    pub k: usize,
    pub quorum_fraction: f64,
    /// Seconds between announcement and the reporting deadline.
    pub deadline_s: f64,
    pub rounds: usize,
    /// Local windows an honest vehicle needs before it volunteers.
    pub min_samples: usize,
    pub weighting: Weighting,
    /// Uniform range of honest local computation time, seconds.
    pub compute_delay_s: (f64, f64),
    pub convergence: Convergence,
    pub stop_on_convergence: bool,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            k: 10,
            quorum_fraction: 0.5,
            deadline_s: 60.0,
            rounds: 100,
            min_samples: 5,
            weighting: Weighting::Samples,
            compute_delay_s: (2.0, 10.0),
            convergence: Convergence::RelativeToCentralized(1.10),
            stop_on_convergence: true,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        let bad = |m: &str| Err(ProtocolError::Config(m.to_string()));
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if !(self.quorum_fraction > 0.0 && self.quorum_fraction <= 1.0) {
            return bad("quorum_fraction must be in (0, 1]");
        }
        if !(self.deadline_s >= 1.0 && self.deadline_s.is_finite()) {
            return bad("deadline_s must be at least one second");
        }
        if self.rounds == 0 {
            return bad("rounds must be at least 1");
        }
        if self.min_samples == 0 {
            return bad("min_samples must be at least 1");
        }
        let (lo, hi) = self.compute_delay_s;
        if !(lo >= 0.0 && lo <= hi && hi < self.deadline_s) {
            return bad("compute_delay_s must satisfy 0 <= lo <= hi < deadline_s");
        }
        match self.convergence {
            Convergence::RelativeToCentralized(f) | Convergence::AbsoluteKmh(f)
                if !(f > 0.0 && f.is_finite()) =>
            {
                bad("convergence threshold must be positive")
            }
            _ => Ok(()),
        }
    }
}
