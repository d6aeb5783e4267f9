use thiserror::Error;

use crate::schedule::Pass;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("{layers} layers cannot be split evenly over {stages} stages")]
    UnevenStages { layers: usize, stages: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("label {label} out of range for vocabulary of {vocab}")]
    LabelOutOfRange { label: usize, vocab: usize },
    #[error("vocabulary of {vocab} cannot be split into {shards} equal shards")]
    NotShardable { vocab: usize, shards: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("shard state is missing the {0} matrix")]
    MissingState(&'static str),
    #[error("insufficient microbatches: n={n} is smaller than p={p}")]
    InsufficientMicrobatches { n: usize, p: usize },
    #[error("building block has zero interval")]
    ZeroInterval,
    #[error("simulation deadlocked with {} blocked passes", blocked.len())]
    Deadlock { blocked: Vec<Pass> },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unknown method `{0}`")]
    UnknownMethod(String),
}

pub type Result<T> = std::result::Result<T, Error>;
