//! Error type shared across the crate.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed header in {path}: {detail}")]
    MalformedHeader { path: PathBuf, detail: String },

    #[error("non-finite matrix entry at row {row}, column {col}")]
    NonFiniteEntry { row: usize, col: usize },

    #[error("duplicate token {token:?} at rows {first} and {second}")]
    DuplicateToken {
        token: String,
        first: usize,
        second: usize,
    },

    #[error("token file has {found} lines but header declares {expected}")]
    TokenCountMismatch { expected: usize, found: usize },

    #[error("i/o failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid dimensions: {0}")]
    InvalidDims(String),

    #[error("invalid prompt length: {0}")]
    InvalidLength(String),

    #[error("token id {id} out of range for vocabulary of size {vocab}")]
    InvalidTokenId { id: usize, vocab: usize },

    #[error("prompts belong to different tables (vocabulary sizes {left} and {right})")]
    TableMismatch { left: usize, right: usize },

    #[error("template must contain exactly one {{}} slot, found {found}")]
    BadTemplate { found: usize },

    #[error("cosine projection query has norm {norm:e}, at or below the 1e-12 floor")]
    ZeroNormQuery { norm: f64 },

    #[error(
        "row {row} has norm {norm:e}, at or below the 1e-12 floor required by the cosine metric"
    )]
    ZeroNormRow { row: usize, norm: f64 },

    #[error("projection mask allows no tokens")]
    EmptyMask,

    #[error("degenerate encoding: pre-normalization norm {norm:e} is at or below the 1e-12 floor")]
    DegenerateEncoding { norm: f64 },

    #[error("classification batch is empty")]
    EmptyBatch,

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("non-finite gradient entry at row {row}, column {col}")]
    NonFiniteGrad { row: usize, col: usize },

    #[error("fluency weight {lambda} > 0 but no fluency model is attached")]
    MissingFluencyModel { lambda: f64 },

    #[error("non-finite loss {loss} at step {step}")]
    NonFiniteLoss { step: usize, loss: f64 },

    #[error("search space {vocab}^{len} exceeds the exhaustive-search guard of {guard}")]
    SearchSpaceTooLarge {
        vocab: usize,
        len: usize,
        guard: u64,
    },

    #[error("malformed csv in {path}: {detail}")]
    MalformedCsv { path: PathBuf, detail: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("task generation failed: {0}")]
    TaskGeneration(String),
}
