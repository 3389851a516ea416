//! Configured end-to-end runs: load a scenario, execute the enabled
//! analyses in dependency order and write report, tables and plots.

mod config;
mod output;
mod plot;
mod report;
mod run;

use std::path::PathBuf;

use thiserror::Error;

use crate::error::LabError;

pub use config::{
    Analyses, Bound, DispersionSpec, EnsembleSpec, GridSpec, HydroSpec, InitialState, ParabolicSpec, ScenarioConfig,
    ScenarioName, METRICS,
};
pub use output::{Outputs, MANIFEST};
pub use report::{AnalysisSummary, Metric, Provenance, RunReport};
pub use run::{run_scenario, RunOptions, Stage};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("config error: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {error}")]
    Numerical { stage: Stage, error: LabError },

    #[error("{failed} tolerance check(s) failed: {names}")]
    Checks { failed: usize, names: String },

    #[error("I/O error at {}: {error}", path.display())]
    Io { path: PathBuf, error: std::io::Error },
}

impl ScenarioError {
    /// Process exit code: 1 config, 2 numerical, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            ScenarioError::Config(_) => 1,
            ScenarioError::Numerical { .. } | ScenarioError::Checks { .. } => 2,
            ScenarioError::Io { .. } => 3,
        }
    }
}
