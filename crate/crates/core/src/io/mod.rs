//! File formats: JSON sample manifests, binary `GRCE` embedding files and
//! CSV/SVG report outputs.

mod embedding;
mod manifest;
mod report;

pub use embedding::{
    decode_embedding, encode_embedding, read_embedding, write_embedding, Embedding, MAGIC, VERSION,
};
pub use manifest::{load_manifest, parse_manifest, write_manifest, DeclaredDims, SampleManifest};
pub use report::{
    format_weight, render_span_svg, write_atomic, write_plan_csv, write_ranking_csv,
    write_span_csv,
};

use std::path::PathBuf;

use thiserror::Error;

use crate::span::SpanError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest parse error: {0}")]
    ParseError(String),
    #[error("manifest record {record}: missing field `{field}`")]
    MissingField { record: usize, field: &'static str },
    #[error("manifest record {record}: {source}")]
    SpanOutOfRange {
        record: usize,
        #[source]
        source: SpanError,
    },
    #[error("manifest record {record}: {message}")]
    InvalidRecord { record: usize, message: String },
    #[error("bad magic {0:?}, expected \"GRCE\"")]
    BadMagic([u8; 4]),
    #[error("unsupported embedding version {0}")]
    BadVersion(u32),
    #[error("unsupported embedding rank {0}")]
    BadRank(u32),
    #[error("payload truncated: expected {expected} bytes, found {actual}")]
    TruncatedPayload { expected: usize, actual: usize },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("declared dims {declared:?} do not match file dims {actual:?}")]
    DimsMismatch {
        declared: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{0}")]
    Inconsistent(String),
}

impl IoError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}
