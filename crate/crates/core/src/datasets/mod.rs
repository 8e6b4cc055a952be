//! Expert demonstrations, horizon windows and supervision targets.

mod io;
mod record;
mod supervision;
mod windows;

pub use io::{read_dataset, write_dataset, DEMOS_SCHEMA};
pub use record::{record_demonstrations, state_vector, DatasetHeader, DemoSet, Demonstration, RecordConfig, Timestep};
pub use supervision::{make_supervision, SupervisionTarget, SupervisionVariant, TrajTarget};
pub use windows::{make_windows, TrainingWindow};

use thiserror::Error;

use crate::geometry::GeometryError;
use crate::simworld::SimError;

/// Tolerance for `ee_pose_cam = world_to_camera(ee_pose_world)`.
pub const CAMERA_CONSISTENCY_TOL: f64 = 1e-10;
/// Tolerance for `apply_action(T_t, a_t) = T_{t+1}`.
pub const ACTION_CONSISTENCY_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("I/O error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("truncated dataset at line {line}: {message}")]
    Truncated { line: usize, message: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("chart violation in supervision target at horizon step {step}: {detail}")]
    ChartViolation { step: usize, detail: String },
    #[error("demonstration invariant violated at t={t}: {detail}")]
    Invariant { t: usize, detail: String },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type DatasetResult<T> = std::result::Result<T, DatasetError>;
