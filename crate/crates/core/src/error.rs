use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = LsrError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum LsrError {
    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    #[error("sampling unavailable: encoder is deterministic")]
    SamplingUnavailable,

    #[error("no roadmap within component bound (c_max = {c_max})")]
    NoFeasibleRoadmap { c_max: usize },

    #[error("unreachable under roadmap after {attempts} start/goal node pairs")]
    Unreachable { attempts: usize },

    #[error("rank {rank} out of range for {regions} regions")]
    RankOutOfRange { rank: usize, regions: usize },

    #[error("edge ({from}, {to}) has no action annotation")]
    MissingAnnotation { from: usize, to: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("parse error on line {line}: {detail}")]
    Parse { line: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl LsrError {
    pub(crate) fn parse(line: usize, detail: impl Into<String>) -> Self {
        LsrError::Parse {
            line,
            detail: detail.into(),
        }
    }
}
