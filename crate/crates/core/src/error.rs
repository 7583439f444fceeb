use std::io;

use thiserror::Error;

/// Errors produced by dataset handling, training and evaluation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("dimension mismatch at row {row}: expected {expected} values, found {found}")]
    DimensionMismatch {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("negative activation {value} at row {row} under relu constraint")]
    NegativeActivation { row: usize, value: f32 },

    #[error("non-finite value at row {row}")]
    NonFiniteValue { row: usize },

    #[error("unknown class {class} at row {row}")]
    UnknownClassAtRow { row: usize, class: u32 },

    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },

    #[error("unknown class {0}")]
    UnknownClass(u32),

    #[error("class with zero samples: {0}")]
    EmptyClass(u32),

    #[error("zero dimensionality")]
    ZeroDimensionality,

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("insufficient novel classes: requested {requested}, available {available}")]
    InsufficientNovelClasses { requested: usize, available: usize },

    #[error("insufficient samples in class {class}: need {needed}, have {available}")]
    InsufficientSamples {
        class: u32,
        needed: usize,
        available: usize,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("nothing to extend")]
    NothingToExtend,

    #[error("classifier already extended with {0} novel classes")]
    AlreadyExtended(usize),

    #[error("zero-variance base class {0}")]
    ZeroVarianceBase(usize),

    #[error("untrained novel classifier")]
    UntrainedNovel,

    #[error("zero-norm column {0}")]
    ZeroNormColumn(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("numeric failure: {0}")]
    NumericFailure(String),
}

pub type Result<T> = std::result::Result<T, Error>;
