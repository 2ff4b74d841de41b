use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::IoError;
use crate::span::{validate_spans, Span};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeclaredDims {
    /// `[T', H', W', D]`.
    pub visual: [usize; 4],
    /// `[L, d]`.
    pub text: [usize; 2],
}

/// One clip: its label, caption tokens and the embedding files that carry
/// the encoder outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleManifest {
    pub id: String,
    pub label: String,
    pub caption: String,
    pub tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub spans: Vec<Span>,
    pub visual_file: PathBuf,
    pub text_file: PathBuf,
    pub dims: DeclaredDims,
}

const REQUIRED: [&str; 7] = [
    "id",
    "label",
    "caption",
    "tokens",
    "visual_file",
    "text_file",
    "dims",
];

/// Parses manifest JSON; relative file paths are resolved against `base`.
pub fn parse_manifest(json: &str, base: &Path) -> Result<Vec<SampleManifest>, IoError> {
    let value: Value = serde_json::from_str(json).map_err(|e| IoError::ParseError(e.to_string()))?;
    let Value::Array(records) = value else {
        return Err(IoError::ParseError("manifest must be a JSON array".into()));
    };
    let mut out = Vec::with_capacity(records.len());
    for (record, raw) in records.into_iter().enumerate() {
        let Value::Object(fields) = &raw else {
            return Err(IoError::ParseError(format!("record {record} is not an object")));
        };
        if let Some(field) = REQUIRED.iter().find(|f| !fields.contains_key(**f)) {
            return Err(IoError::MissingField { record, field });
        }
        let mut sample: SampleManifest = serde_json::from_value(raw)
            .map_err(|e| IoError::ParseError(format!("record {record}: {e}")))?;
        if sample.tokens.is_empty() {
            return Err(IoError::InvalidRecord {
                record,
                message: "no tokens".into(),
            });
        }
        if sample.dims.text[0] != sample.tokens.len() {
            return Err(IoError::InvalidRecord {
                record,
                message: format!(
                    "{} tokens but text dims declare L = {}",
                    sample.tokens.len(),
                    sample.dims.text[0]
                ),
            });
        }
        validate_spans(&sample.spans, sample.tokens.len())
            .map_err(|source| IoError::SpanOutOfRange { record, source })?;
        for path in [&mut sample.visual_file, &mut sample.text_file] {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
        out.push(sample);
    }
    Ok(out)
}

pub fn load_manifest(path: &Path) -> Result<Vec<SampleManifest>, IoError> {
    let json = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    parse_manifest(&json, base)
}

pub fn write_manifest(path: &Path, samples: &[SampleManifest]) -> Result<(), IoError> {
    let mut json = serde_json::to_string_pretty(samples).map_err(|e| IoError::ParseError(e.to_string()))?;
    json.push('\n');
    super::write_atomic(path, json.as_bytes())
}
