use std::io;

use thiserror::Error;

/// Coarse failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Io,
    Syntax,
}

#[derive(Debug, Error)]
pub enum Error {
    // textify
    #[error(
        "insufficient data for column `{column}`: need {needed} distinct values, found {found}"
    )]
    InsufficientData {
        column: String,
        needed: usize,
        found: usize,
    },
    #[error("malformed type_hierarchy `{0}`: at least two `/`-separated tokens required")]
    MalformedHierarchy(String),
    #[error("tag-service response schema error: {0}")]
    SchemaError(String),
    #[error("dangling foreign key `{key}` in column `{column}`: no row in table `{table}`")]
    DanglingForeignKey {
        column: String,
        table: String,
        key: String,
    },

    // embedding
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    // udf
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("unknown token `{0}`")]
    UnknownToken(String),
    #[error("none of the tokens [{0}] are in the vocabulary")]
    AllTokensUnknown(String),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("invalid flag {0}")]
    InvalidFlag(i64),
    #[error("degenerate analogy direction (identical vectors)")]
    DegenerateDirection,
    #[error("unknown concept `{0}` in external model")]
    UnknownConcept(String),

    // ann
    #[error("invalid cluster count k={k} for {n} vectors")]
    InvalidK { k: usize, n: usize },

    // query
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("unknown table `{0}`")]
    UnknownTable(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("type error: {0}")]
    TypeError(String),
    #[error("UDF `{function}` failed on row {row}: {source}")]
    Udf {
        function: String,
        row: String,
        #[source]
        source: Box<Error>,
    },
    #[error("token variable `{0}` is not constrained by any contains() predicate")]
    UnconstrainedTokenVariable(String),
    #[error("no valid substitution for relational variables")]
    NoValidSubstitution,

    // model_store
    #[error("checksum mismatch for `{0}`")]
    ChecksumMismatch(String),
    #[error("version mismatch: {0}")]
    VersionMismatch(String),

    #[error("data error: {0}")]
    Data(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::DimensionMismatch { .. } | Error::InvalidK { .. } => {
                ErrorClass::Config
            }
            Error::Syntax { .. } | Error::UnknownFunction(_) => ErrorClass::Syntax,
            Error::Io(_) => ErrorClass::Io,
            Error::Udf { source, .. } => source.class(),
            _ => ErrorClass::Data,
        }
    }

    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
