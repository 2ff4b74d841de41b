//! Caption enhancement: pick the top-k predicted categories, turn them into
//! "an emotion of <class>" descriptor phrases, and hand the assembled
//! prompt to a rewriting service.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Environment variable holding the bearer token for [`HttpRefiner`].
pub const TOKEN_ENV: &str = "GRACE_REFINER_TOKEN";

const CAPTION_SEPARATOR: &str = "\n";
const PHRASE_JOINER: &str = "; ";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TextError {
    #[error("k = {k} is outside 1..={categories}")]
    BadK { k: usize, categories: usize },
    #[error("caption is empty")]
    EmptyCaption,
    #[error("category name {0:?} is empty or contains a separator")]
    BadCategory(String),
}

#[derive(Debug, Error)]
pub enum RefineError {
    #[error("refiner request timed out")]
    Timeout,
    #[error("refiner rejected credentials (HTTP {0})")]
    AuthError(u16),
    #[error("bad refiner response: {0}")]
    BadResponse(String),
    #[error("refiner transport failure: {0}")]
    Transport(String),
}

/// Indices of the `k` highest scores, best first; ties go to the smaller index.
pub fn top_k(scores: &[f64], k: usize) -> Result<Vec<usize>, TextError> {
    if k == 0 || k > scores.len() {
        return Err(TextError::BadK {
            k,
            categories: scores.len(),
        });
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    Ok(idx)
}

pub fn descriptor_phrase(category: &str) -> String {
    format!("an emotion of {category}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRequest {
    pub caption: String,
    pub descriptors: Vec<String>,
    pub prompt: String,
}

/// `caption + "\n" + phrases joined by "; "`.
pub fn build_prompt<S: AsRef<str>>(caption: &str, categories: &[S]) -> Result<PromptRequest, TextError> {
    if caption.trim().is_empty() {
        return Err(TextError::EmptyCaption);
    }
    if categories.is_empty() {
        return Err(TextError::BadK { k: 0, categories: 0 });
    }
    let mut descriptors = Vec::with_capacity(categories.len());
    for c in categories {
        let c = c.as_ref();
        if c.trim().is_empty() || c.contains(['\n', ';']) {
            return Err(TextError::BadCategory(c.to_string()));
        }
        descriptors.push(descriptor_phrase(c));
    }
    let prompt = format!(
        "{caption}{CAPTION_SEPARATOR}{}",
        descriptors.join(PHRASE_JOINER)
    );
    Ok(PromptRequest {
        caption: caption.to_string(),
        descriptors,
        prompt,
    })
}

pub trait RefinerClient: Send + Sync {
    fn refine(&self, req: &PromptRequest) -> Result<String, RefineError>;
}

/// Deterministic stand-in: appends the descriptor phrases the caption does
/// not already contain, in request order.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockRefiner;

impl RefinerClient for MockRefiner {
    fn refine(&self, req: &PromptRequest) -> Result<String, RefineError> {
        let missing: Vec<&str> = req
            .descriptors
            .iter()
            .map(String::as_str)
            .filter(|d| !req.caption.contains(d))
            .collect();
        if missing.is_empty() {
            return Ok(req.caption.clone());
        }
        Ok(format!(
            "{}{PHRASE_JOINER}{}",
            req.caption,
            missing.join(PHRASE_JOINER)
        ))
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    prompt: &'a str,
}

#[derive(Deserialize)]
struct WireResponse {
    text: String,
}

/// JSON-over-HTTP rewriter: POSTs `{"prompt": ...}`, expects `{"text": ...}`.
pub struct HttpRefiner {
    url: String,
    token: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpRefiner {
    pub fn new(url: impl Into<String>, token: Option<String>, timeout: Duration) -> Result<Self, RefineError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| RefineError::Transport(e.to_string()))?;
        Ok(Self {
            url: url.into(),
            token,
            client,
        })
    }

    /// Reads the bearer token from [`TOKEN_ENV`] if set.
    pub fn from_env(url: impl Into<String>, timeout: Duration) -> Result<Self, RefineError> {
        Self::new(url, std::env::var(TOKEN_ENV).ok(), timeout)
    }
}

impl RefinerClient for HttpRefiner {
    fn refine(&self, req: &PromptRequest) -> Result<String, RefineError> {
        let mut request = self.client.post(&self.url).json(&WireRequest {
            prompt: &req.prompt,
        });
        if let Some(token) = &self.token {
            request = request.bearer_auth(token);
        }
        let response = request.send().map_err(|e| {
            if e.is_timeout() {
                RefineError::Timeout
            } else {
                RefineError::Transport(e.to_string())
            }
        })?;
        let status = response.status();
        if status == reqwest::StatusCode::UNAUTHORIZED || status == reqwest::StatusCode::FORBIDDEN {
            return Err(RefineError::AuthError(status.as_u16()));
        }
        if !status.is_success() {
            return Err(RefineError::BadResponse(format!("HTTP {status}")));
        }
        let body = response.text().map_err(|e| {
            if e.is_timeout() {
                RefineError::Timeout
            } else {
                RefineError::Transport(e.to_string())
            }
        })?;
        let parsed: WireResponse =
            serde_json::from_str(&body).map_err(|e| RefineError::BadResponse(e.to_string()))?;
        if parsed.text.trim().is_empty() {
            return Err(RefineError::BadResponse("empty text".into()));
        }
        Ok(parsed.text)
    }
}

pub fn refine(client: &dyn RefinerClient, req: &PromptRequest) -> Result<String, RefineError> {
    client.refine(req)
}
