//! Model capabilities behind uniform traits.
//!
//! Five roles are consumed by the pipeline: an [`Embedder`] and four chat
//! roles (generator, annotator, monitor, judge), all [`ChatModel`]s. Each role
//! is backed either by the remote OpenAI-compatible client in [`remote`] or by
//! the deterministic offline backends in [`mock`].

pub mod annotations;
pub mod embedding;
pub mod mock;
pub mod prompts;
pub mod remote;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use annotations::{parse_annotations, AnnotationKind, AnnotationRecord};
pub use embedding::{cosine, reaches, Embedding, MockEmbedder, SIMILARITY_TOLERANCE};
pub use mock::{sample_instructions, MockChat};
pub use remote::{RemoteBackend, RetryPolicy, API_KEY_VAR, BASE_URL_VAR};

use crate::sim::PixelGrid;

/// Longest text accepted by [`Embedder::embed_texts`], in characters.
pub const MAX_EMBED_CHARS: usize = 8192;

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("transport error: {message}")]
    Transport { message: String, retriable: bool },
    #[error("backend returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("could not decode backend response: {message}")]
    Decode { message: String, raw: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("internal invariant violated: {0}")]
    Invariant(String),
    #[error("backend does not support this request: {0}")]
    Unsupported(String),
    #[error("missing configuration: {0}")]
    MissingConfig(String),
}

impl ProviderError {
    pub fn is_retriable(&self) -> bool {
        match self {
            ProviderError::Transport { retriable, .. } => *retriable,
            ProviderError::Http { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }

    pub fn decode(message: impl Into<String>, raw: impl Into<String>) -> Self {
        ProviderError::Decode {
            message: message.into(),
            raw: raw.into(),
        }
    }
}

/// Image part of a request; `key` is the render-store content address.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRef {
    pub key: String,
    pub grid: Arc<PixelGrid>,
}

impl ImageRef {
    pub fn new(grid: Arc<PixelGrid>) -> Self {
        Self {
            key: grid.content_key(),
            grid,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UserPart {
    Text(String),
    Image(ImageRef),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub system_text: String,
    pub user_parts: Vec<UserPart>,
    pub temperature: f64,
    pub seed: Option<u64>,
}

impl GenerationRequest {
    pub fn new(system_text: impl Into<String>) -> Self {
        Self {
            system_text: system_text.into(),
            user_parts: Vec::new(),
            temperature: 0.0,
            seed: None,
        }
    }

    pub fn text(mut self, text: impl Into<String>) -> Self {
        self.user_parts.push(UserPart::Text(text.into()));
        self
    }

    pub fn image(mut self, grid: Arc<PixelGrid>) -> Self {
        self.user_parts.push(UserPart::Image(ImageRef::new(grid)));
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.user_parts.is_empty() {
            return Err(ProviderError::InvalidRequest(
                "request has no user parts".into(),
            ));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(ProviderError::InvalidRequest(format!(
                "temperature {} is not a non-negative real",
                self.temperature
            )));
        }
        for part in &self.user_parts {
            if let UserPart::Image(img) = part {
                if img.grid.is_empty() || img.key != img.grid.content_key() {
                    return Err(ProviderError::InvalidRequest(format!(
                        "image {} does not resolve to its render",
                        img.key
                    )));
                }
            }
        }
        Ok(())
    }

    /// Concatenated text parts.
    pub fn user_text(&self) -> String {
        self.user_parts
            .iter()
            .filter_map(|p| match p {
                UserPart::Text(t) => Some(t.as_str()),
                UserPart::Image(_) => None,
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn images(&self) -> impl Iterator<Item = &ImageRef> {
        self.user_parts.iter().filter_map(|p| match p {
            UserPart::Image(img) => Some(img),
            UserPart::Text(_) => None,
        })
    }
}

pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;
    /// One unit-norm vector per input, in input order.
    fn embed_texts(&self, texts: &[String]) -> Result<Vec<Embedding>, ProviderError>;

    fn embed_one(&self, text: &str) -> Result<Embedding, ProviderError> {
        let mut v = self.embed_texts(&[text.to_string()])?;
        v.pop()
            .ok_or_else(|| ProviderError::Invariant("embedder returned no vector".into()))
    }
}

pub trait ChatModel: Send + Sync {
    fn chat_generate(&self, request: &GenerationRequest) -> Result<String, ProviderError>;
}

/// Shared pre-flight checks for [`Embedder`] implementations.
pub fn check_embed_inputs(texts: &[String]) -> Result<(), ProviderError> {
    if texts.is_empty() {
        return Err(ProviderError::InvalidRequest("no texts to embed".into()));
    }
    if let Some(t) = texts.iter().find(|t| t.chars().count() > MAX_EMBED_CHARS) {
        return Err(ProviderError::InvalidRequest(format!(
            "text of {} characters exceeds the {MAX_EMBED_CHARS}-character limit",
            t.chars().count()
        )));
    }
    Ok(())
}

/// The five model roles the pipeline consumes.
#[derive(Clone)]
pub struct ProviderBundle {
    pub embedder: Arc<dyn Embedder>,
    pub generator: Arc<dyn ChatModel>,
    pub annotator: Arc<dyn ChatModel>,
    pub monitor: Arc<dyn ChatModel>,
    pub judge: Arc<dyn ChatModel>,
}

impl ProviderBundle {
    /// Fully offline bundle. The annotator reads app specs to describe screens.
    pub fn mock(seed: u64, specs: Vec<Arc<crate::sim::SimAppSpec>>) -> Self {
        let specs = Arc::new(specs);
        Self {
            embedder: Arc::new(MockEmbedder::default()),
            generator: Arc::new(MockChat::new(seed).with_specs(specs.clone())),
            annotator: Arc::new(MockChat::new(seed.wrapping_add(1)).with_specs(specs.clone())),
            monitor: Arc::new(MockChat::new(seed.wrapping_add(2))),
            judge: Arc::new(MockChat::new(seed.wrapping_add(3)).with_specs(specs)),
        }
    }
}

/// Which backend serves a role.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[derive(Default)]
pub enum BackendKind {
    #[default]
    Mock,
    Remote {
        model: String,
    },
}

/// Scans for the outermost `[...]` span.
pub fn outermost_list(raw: &str) -> Option<&str> {
    let start = raw.find('[')?;
    let end = raw.rfind(']')?;
    (end > start).then(|| &raw[start..=end])
}

/// Scans for the outermost `{...}` span.
pub fn outermost_object(raw: &str) -> Option<&str> {
    let start = raw.find('{')?;
    let end = raw.rfind('}')?;
    (end > start).then(|| &raw[start..=end])
}
