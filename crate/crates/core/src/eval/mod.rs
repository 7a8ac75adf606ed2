//! Evaluation: dataset splits, the naive-Bayes baseline, classification
//! metrics, aspect judging and dataset statistics.

mod classifier;
mod gptscore;
mod metrics;
mod split;
mod stats;

use thiserror::Error;

pub use classifier::{conversation_tokens as feature_tokens, labeled, tokenize, train_baseline_classifier, ClassifierOptions, NaiveBayes};
pub use gptscore::{gptscore_evaluate, judge_messages, parse_judgment, Aspect, AspectScore};
pub use metrics::{evaluate_classifier, evaluate_predictions, metrics_from_pairs, read_predictions, ClassMetrics, EvalMetrics};
pub use split::{split_dataset, split_indices, Split, SplitSpec, MIN_SPLIT_SIZE};
pub use stats::{compute_stats, conversation_tokens, DatasetStats, Distribution, TOKEN_BUCKET_WIDTH};

use crate::backend::BackendError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("need at least {needed} conversations to split, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("training data must cover at least two departments")]
    SingleClassTraining,
    #[error("{0} is empty")]
    EmptyInput(&'static str),
    #[error("conversation {0} has no department label")]
    MissingLabel(String),
    #[error("no prediction for conversation {0}")]
    MissingPrediction(String),
    #[error("unknown aspect `{0}` (expected SPE, FLE, UND, INF, PAT or ACC)")]
    UnknownAspect(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
