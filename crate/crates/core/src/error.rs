//! Error types shared across the engine.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("dataset has no sequences")]
    EmptyDataset,
    #[error("split ratios must be positive and sum to 1 (got {ratios:?})")]
    BadSplitRatios { ratios: Vec<f64> },
    #[error("invalid type table: {detail}")]
    BadTypeTable { detail: String },
    #[error("sequence {id:?} is invalid: {detail}")]
    InvalidSequence { id: String, detail: String },
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("schema violation in {path}: {detail}")]
    Schema { path: String, detail: String },
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("sequence length {len} exceeds backbone max length {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("non-finite activations in layer {layer}")]
    NonFiniteActivation { layer: usize },
    #[error("intensity underflowed to zero at event {index}")]
    ZeroIntensity { index: usize },
    #[error("sequence needs at least 2 events (got {len})")]
    SequenceTooShort { len: usize },
    #[error("non-finite objective for sequence {id:?}")]
    NonFiniteObjective { id: String },
    #[error("non-finite gradient for parameter {name:?}")]
    NonFiniteGradient { name: String },
    #[error("invalid configuration: {detail}")]
    BadConfig { detail: String },
    #[error("checkpoint error: {detail}")]
    Checkpoint { detail: String },
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("training diverged (non-finite objective) at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error("train split is empty")]
    EmptyTrainSplit,
}
