//! End-to-end orchestration: corpus ingestion, splitting, preprocessing,
//! training, generation, evaluation and the human-study sampler.

mod config;
mod corpus;
mod prep;
mod run;

pub use config::{CorpusFormat, RunConfig};
pub use corpus::{ingest, parse_jsonl, parse_parallel, split, CorpusPair, IngestReport, Split};
pub use prep::{analyze, bpe_training_texts, encode_example, preprocess, train_tokenizer, Analyzed, PreprocessReport, ProcessedExample, Skip};
pub use run::{
    corpus_length_stats, evaluate, load_split, read_examples, run_preprocess, run_train_bpe, sample_human_study, train, write_examples,
    HumanStudyRow, Inference, PreprocessCounts, RunLayout, TrainOutcome,
};

use std::path::PathBuf;

use thiserror::Error;

use crate::bpe::BpeError;
use crate::java::JavaError;
use crate::metrics::MetricError;
use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("format error: {0}")]
    Format(String),
    #[error("too few pairs: {requested} requested for test+valid, only {available} available")]
    TooFewPairs { requested: usize, available: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{kind}: {source}")]
    Java { kind: &'static str, source: JavaError },
    #[error(transparent)]
    Bpe(#[from] BpeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Coarse class of a failure, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Internal,
}

impl PipelineError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> PipelineError {
        let path = path.into();
        move |source| PipelineError::Io { path, source }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            PipelineError::Config(_) => ErrorClass::Usage,
            PipelineError::Io { .. } | PipelineError::Format(_) | PipelineError::TooFewPairs { .. } | PipelineError::Java { .. } => ErrorClass::Data,
            PipelineError::Bpe(BpeError::Io(_) | BpeError::Format(_)) => ErrorClass::Data,
            PipelineError::Model(ModelError::Checkpoint(_) | ModelError::Io(_)) => ErrorClass::Data,
            PipelineError::Bpe(_) | PipelineError::Model(_) | PipelineError::Metric(_) => ErrorClass::Internal,
        }
    }
}

impl From<JavaError> for PipelineError {
    fn from(source: JavaError) -> Self {
        PipelineError::Java { kind: source.kind(), source }
    }
}
