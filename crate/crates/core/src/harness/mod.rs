//! Scenario files, the coupled traffic/federation run, metrics persistence,
//! comparisons and plots.

mod cosim;
mod plot;
mod report;
mod reproduce;
mod run;
mod scenario;

use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::adversary::AdversaryError;
use crate::learner::LearnerError;
use crate::network::NetworkError;
use crate::protocol::ProtocolError;
use crate::traffic::SimError;

pub use cosim::{normalizer, replica_samples, subsample, CoSim, Traffic};
pub use plot::{plot_rmse, Series};
pub use report::{
    compare, compare_sweep, prepare_output_dir, read_report, sign_test_p, write_comparison,
    write_report, write_sweep, ComparisonRow, MetricsReport, RoundRecord, SweepRow,
    ADVERSARY_CSV, CENTRALIZED_CSV, COMPARISON_CSV, ROUNDS_CSV, SUMMARY_CSV,
};
pub use reproduce::{bundled_scenario, mean_trace, reproduce, Figure, BUNDLED, REFERENCE_NET};
pub use run::{run_grid, run_scenario};
pub use scenario::{
    Density, DensityRates, DemandSpec, EvalSpec, RouteSpec, Scenario, ScenarioFile, ScheduledSpawn,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("comparison refused: {0}")]
    Mismatch(String),
    #[error("plot: {0}")]
    Plot(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Adversary(#[from] AdversaryError),
}

impl HarnessError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        HarnessError::Io { path: path.to_path_buf(), source }
    }
}
