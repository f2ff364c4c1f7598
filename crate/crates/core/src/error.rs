use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the extraction and cataloging pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate box ({x0},{y0})-({x1},{y1}): need x0 < x1 and y0 < y1")]
    DegenerateBox { x0: u32, y0: u32, x1: u32, y1: u32 },

    #[error("image dimensions {width}x{height} do not match {len} pixels")]
    ImageShape { width: u32, height: u32, len: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown {kind} token {token:?}")]
    UnknownToken { kind: &'static str, token: String },

    #[error("invalid category {0:?}: categories must be non-empty and free of path separators")]
    InvalidCategory(String),

    #[error("duplicate record id {source_token}_{era_token}_{id}")]
    DuplicateId {
        source_token: &'static str,
        era_token: &'static str,
        id: u64,
    },

    #[error("conversion table line {line}: {message}")]
    ConversionTable { line: usize, message: String },

    #[error("malformed JSON in {what} at line {line}, column {column}: {message}")]
    Json {
        what: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("infeasible page spec: {0}")]
    InfeasibleSpec(String),

    #[error("OCR failed: {0}")]
    Ocr(String),

    #[error("image error for {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn json(what: impl Into<String>, err: serde_json::Error) -> Self {
        Error::Json {
            what: what.into(),
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
