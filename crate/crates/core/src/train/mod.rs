//! Optimization, schedules, and Matthews-correlation evaluation.

mod metrics;
mod optim;
mod schedule;
mod trainer;

use thiserror::Error;

use crate::corpus::CorpusError;
use crate::model::ModelError;
use crate::tokenize::TokenizerError;

pub use metrics::{mcc, ConfusionMatrix};
pub use optim::{adamw_step, AdamWConfig, OptimizerState};
pub use schedule::{lr_at, warmup_steps};
pub use trainer::{
    encode_split, evaluate, evaluate_examples, predict, train, train_observed, EpochRecord,
    Evaluation, RunMetadata, TrainConfig, TrainOutcome,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("tensor shapes do not match")]
    ShapeMismatch,
    #[error("the {0} split is empty")]
    EmptySplit(&'static str),
    #[error("batch_size must be positive")]
    ZeroBatch,
    #[error("non-finite parameters after step {step}")]
    NonFinite { step: usize },
}
