//! Training, closed-loop evaluation, the closed-form decoder baseline,
//! ablation studies and report emission.

mod checks;
mod closed_form;
mod report;
mod rollout;
mod stats;
mod study;
mod train;

pub use checks::{run_geomtest, run_gradcheck, CheckLine, CheckOutcome};
pub use closed_form::{closed_form_baseline, ClosedFormPolicy, TrajectorySource};
pub use report::{emit_report, read_summary, results_csv, CellSummary, ReportFormat, StudySummary, CSV_HEADER, SUMMARY_SCHEMA};
pub use rollout::{
    evaluate, ChunkMode, ChunkPlan, ChunkPolicy, EpisodeTrace, EvalConfig, EvalReport, ExpertPolicy, LearnedPolicy,
    PredictionNoise,
};
pub use stats::{wilson_interval, WILSON_Z95};
pub use study::{run_study, Decoder, StudyCell, StudyKind, StudyRow, StudySpec, StudyTable, STUDY_SCHEMA};
pub use train::{train, train_on, LossRecord, TrainConfig, TrainRun, TRAIN_SCHEMA};

use std::path::PathBuf;

use thiserror::Error;

use crate::datasets::DatasetError;
use crate::geometry::GeometryError;
use crate::policy::PolicyError;
use crate::simworld::SimError;
use crate::tensornet::TensorError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("numeric fault at step {step}: {detail}; last good checkpoint at {checkpoint:?}")]
    NumericFault { step: u64, detail: String, checkpoint: Option<PathBuf> },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type HarnessResult<T> = std::result::Result<T, HarnessError>;

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.display().to_string(), source }
}
