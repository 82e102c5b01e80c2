//! Memorization probes and chroma adherence over trained toy models.

mod adherence;
mod memorization;

use thiserror::Error;

pub use adherence::{audio_adherence, chroma_adherence, Sonifier};
pub use memorization::{
    memorization_dataset, memorization_report, overfit, MemorizationReport, MemorizationRow, OverfitConfig,
    OverfitOutcome, PARTIAL_THRESHOLD,
};

use crate::conditioning::ConditioningError;
use crate::grid::GridError;
use crate::model::ModelError;
use crate::patterns::PatternError;
use crate::rvq::RvqError;
use crate::sampling::SamplingError;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("prompt plus continuation needs {needed} timesteps, example has {timesteps}")]
    TooShort { needed: usize, timesteps: usize },
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Pattern(#[from] PatternError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Rvq(#[from] RvqError),
    #[error(transparent)]
    Conditioning(#[from] ConditioningError),
}
