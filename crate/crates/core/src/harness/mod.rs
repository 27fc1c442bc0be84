//! Scenario-driven experiments: Monte Carlo error estimates, update
//! studies, the brute-force control oracle and CSV export.

pub mod export;
pub mod metrics;
pub mod moments;
pub mod monte_carlo;
pub mod oracle;
pub mod scenario;

use thiserror::Error;

use crate::control::ControlError;
use crate::netgraph::NetError;
use crate::pdesim::PdeError;

pub use metrics::{norm_rmse, MetricError};
pub use monte_carlo::{
    error_reduction_study, monte_carlo, run_experiments, sample_run, ErrorReport, ExperimentConfig,
    McOptions,
};
pub use oracle::{compare_with_explicit, oracle_control_optimizer, OracleOptions, OracleResult};
pub use scenario::{DemandKind, Scenario, ScenarioError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Pde(#[from] PdeError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("no damping profile named `{0}`")]
    UnknownProfile(String),
    #[error("at least one run is required")]
    NoRuns,
    #[error("oracle did not converge after {} sweeps (residual {:e})", best.sweeps, best.stationarity)]
    NotConverged { best: Box<OracleResult> },
    #[error("{0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
