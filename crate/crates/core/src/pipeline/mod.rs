//! Frame-sequence orchestration: configuration, synthetic test sequences,
//! overlays and the per-pair processing loop.

mod config;
mod overlay;
mod run;
mod scenario;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::flow::FlowError;

pub use self::config::{CameraSection, ClassifySection, LkSection, PipelineConfig};
pub use self::overlay::{overlay_path, render_overlay, OVERLAY_SUFFIX};
pub use self::run::{
    list_frames, run_sequence, FrameResult, FrameStream, LabelCounts, StageTimings, MANIFEST_NAME,
};
pub use self::scenario::{
    generate_synthetic_sequence, GroundTruthFrame, PatchMotion, PatchSpec, Rect, Scenario, ScenarioFile,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{dir}: need at least 2 frames, found {found}")]
    NoFrames { dir: PathBuf, found: usize },
    #[error("{path}: frame is {actual:?}, expected {expected:?}")]
    DimensionMismatch {
        path: PathBuf,
        expected: (u32, u32),
        actual: (u32, u32),
    },
    #[error(transparent)]
    Flow(#[from] FlowError),
}

impl PipelineError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
