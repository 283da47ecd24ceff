//! Error type shared by all core modules.

use alloc::string::String;

/// Errors produced by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("undecodable character {ch:?} at byte {pos}")]
    Undecodable { ch: char, pos: usize },
    #[error("invalid token id {0}")]
    InvalidTokenId(u32),
    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("duplicate record id {id:?} at lines {first} and {second}")]
    DuplicateId {
        id: String,
        first: usize,
        second: usize,
    },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("cannot build a tree from zero blocks")]
    EmptyBlocks,
    #[error("leaf index {index} out of range for {len} leaves")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("attack needs a non-empty honest trace")]
    EmptyHonestTrace,
    #[error("training diverged at epoch {0}")]
    TrainingDiverged(usize),
    #[error("{needed} poison candidates needed, only {available} eligible")]
    InsufficientEligible { needed: usize, available: usize },
    #[error("style variants must include an \"original\" entry")]
    MissingOriginalVariant,
    #[error("offset {offset} makes the report negative at position {index} (honest {honest})")]
    NegativeReport {
        index: usize,
        honest: u64,
        offset: u64,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = core::result::Result<T, Error>;
