//! Experiment layer: Monte Carlo estimators, tail and law diagnostics, and
//! the spec-driven runner behind the `cb-lab` binary.

mod experiment;
pub mod stats;

use std::path::PathBuf;

use serde::de::DeserializeOwned;

use crate::cumulant::CumulantError;
use crate::moments::MomentError;
use crate::simulator::SimError;

pub use experiment::{
    parse_spec, run_experiment, Analysis, CrosscheckSection, ExperimentSpec, HillSection, InitialLaw, KsSection,
    LaplaceSection, Manifest, ManifestAnalysis, ManifestFile, RunOptions, RunOutcome,
};
pub use stats::{
    empirical_laplace, hill_sweep, hill_tail_index, ks_two_sample, mc_f_moment, mean_se, EstimateReport, HillEstimate,
    KsResult, LaplaceEstimate, Stability, TailDiagnosis,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LabError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("insufficient tail: {k} exceedances, need at least {needed}")]
    InsufficientTail { k: usize, needed: usize },
    #[error("{file}:{line}:{column}: {message}")]
    Parse { file: String, line: usize, column: usize, message: String },
    #[error("{file}:{line}: {message}")]
    Config { file: String, line: usize, message: String },
    #[error("{}: {message}", path.display())]
    Io { path: PathBuf, message: String },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Cumulant(#[from] CumulantError),
    #[error(transparent)]
    Moment(#[from] MomentError),
}

impl LabError {
    pub(crate) fn io(path: impl Into<PathBuf>, err: std::io::Error) -> Self {
        Self::Io { path: path.into(), message: err.to_string() }
    }
}

/// 1-based line and column of byte `offset` in `src`.
pub(crate) fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(src.len());
    let before = &src[..offset];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(offset, |i| offset - i - 1) + 1;
    (line, column)
}

/// Deserialize a TOML document, anchoring errors to a line and column.
pub fn parse_toml<T: DeserializeOwned>(src: &str, file: &str) -> Result<T, LabError> {
    toml::from_str(src).map_err(|e| {
        let (line, column) = e.span().map_or((1, 1), |s| line_col(src, s.start));
        LabError::Parse { file: file.to_string(), line, column, message: e.message().trim().to_string() }
    })
}
