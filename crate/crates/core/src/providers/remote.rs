//! OpenAI-compatible HTTP backend.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use base64::Engine as _;
use serde_json::{json, Value};

use super::{
    check_embed_inputs, ChatModel, Embedder, Embedding, GenerationRequest, ProviderError, UserPart,
};

pub const API_KEY_VAR: &str = "AGENT_FORGE_API_KEY";
pub const BASE_URL_VAR: &str = "AGENT_FORGE_BASE_URL";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            initial_backoff: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    /// Runs `op` until it succeeds, fails with a non-retriable error, or the
    /// attempt budget is spent. Backoff doubles after each failure.
    pub fn run<T>(
        &self,
        mut op: impl FnMut() -> Result<T, ProviderError>,
    ) -> Result<T, ProviderError> {
        let mut delay = self.initial_backoff;
        let mut attempt = 1;
        loop {
            match op() {
                Err(e) if e.is_retriable() && attempt < self.attempts => {
                    log::warn!(
                        "attempt {attempt}/{} failed: {e}; retrying in {delay:?}",
                        self.attempts
                    );
                    std::thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

#[derive(Debug)]
pub struct RemoteBackend {
    base_url: String,
    api_key: String,
    model: String,
    retry: RetryPolicy,
    agent: ureq::Agent,
    dimension: AtomicUsize,
}

impl RemoteBackend {
    pub fn new(
        base_url: impl Into<String>,
        api_key: impl Into<String>,
        model: impl Into<String>,
    ) -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(120)))
            .build();
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: api_key.into(),
            model: model.into(),
            retry: RetryPolicy::default(),
            agent: ureq::Agent::new_with_config(config),
            dimension: AtomicUsize::new(0),
        }
    }

    /// Reads the base URL and key from the environment.
    pub fn from_env(model: impl Into<String>) -> Result<Self, ProviderError> {
        let var = |name: &str| {
            std::env::var(name).map_err(|_| {
                ProviderError::MissingConfig(format!("environment variable {name} is not set"))
            })
        };
        Ok(Self::new(var(BASE_URL_VAR)?, var(API_KEY_VAR)?, model))
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_dimension(self, dimension: usize) -> Self {
        self.dimension.store(dimension, Ordering::Relaxed);
        self
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, ProviderError> {
        let url = format!("{}/{path}", self.base_url);
        self.retry.run(|| {
            let mut response = self
                .agent
                .post(&url)
                .header("Authorization", &format!("Bearer {}", self.api_key))
                .send_json(body)
                .map_err(|e| ProviderError::Transport {
                    message: e.to_string(),
                    retriable: true,
                })?;
            let status = response.status().as_u16();
            let text =
                response
                    .body_mut()
                    .read_to_string()
                    .map_err(|e| ProviderError::Transport {
                        message: e.to_string(),
                        retriable: true,
                    })?;
            if !(200..300).contains(&status) {
                return Err(ProviderError::Http { status, body: text });
            }
            serde_json::from_str(&text).map_err(|e| ProviderError::decode(e.to_string(), text))
        })
    }

    fn chat_body(&self, request: &GenerationRequest) -> Value {
        let content: Vec<Value> = request
            .user_parts
            .iter()
            .map(|part| match part {
                UserPart::Text(text) => json!({"type": "text", "text": text}),
                UserPart::Image(img) => {
                    let data = base64::engine::general_purpose::STANDARD.encode(img.grid.to_png());
                    json!({"type": "image_url", "image_url": {"url": format!("data:image/png;base64,{data}")}})
                }
            })
            .collect();
        let mut body = json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": request.system_text},
                {"role": "user", "content": content},
            ],
            "temperature": request.temperature,
        });
        if let Some(seed) = request.seed {
            body["seed"] = json!(seed);
        }
        body
    }
}

impl ChatModel for RemoteBackend {
    fn chat_generate(&self, request: &GenerationRequest) -> Result<String, ProviderError> {
        request.validate()?;
        let response = self.post("chat/completions", &self.chat_body(request))?;
        response["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| {
                ProviderError::decode(
                    "response has no choices[0].message.content",
                    response.to_string(),
                )
            })
    }
}

impl Embedder for RemoteBackend {
    /// Configured dimension, or the one reported by the first response.
    fn dimension(&self) -> usize {
        self.dimension.load(Ordering::Relaxed)
    }

    fn embed_texts(&self, texts: &[String]) -> Result<Vec<Embedding>, ProviderError> {
        check_embed_inputs(texts)?;
        let response = self.post("embeddings", &json!({"model": self.model, "input": texts}))?;
        let raw = || response.to_string();
        let data = response["data"]
            .as_array()
            .ok_or_else(|| ProviderError::decode("response has no data array", raw()))?;
        if data.len() != texts.len() {
            return Err(ProviderError::decode(
                format!("expected {} embeddings, got {}", texts.len(), data.len()),
                raw(),
            ));
        }
        let mut rows: Vec<(usize, Vec<f64>)> = Vec::with_capacity(data.len());
        for (pos, item) in data.iter().enumerate() {
            let index = item["index"].as_u64().map(|i| i as usize).unwrap_or(pos);
            let values: Option<Vec<f64>> = item["embedding"]
                .as_array()
                .and_then(|a| a.iter().map(Value::as_f64).collect::<Option<_>>());
            let values = values
                .ok_or_else(|| ProviderError::decode("embedding is not a number array", raw()))?;
            rows.push((index, values));
        }
        rows.sort_by_key(|(i, _)| *i);
        let dim = rows[0].1.len();
        if dim == 0 || rows.iter().any(|(_, v)| v.len() != dim) {
            return Err(ProviderError::Invariant(
                "embedding dimensions differ within a batch".into(),
            ));
        }
        let expected = self.dimension.load(Ordering::Relaxed);
        if expected == 0 {
            self.dimension.store(dim, Ordering::Relaxed);
        } else if expected != dim {
            return Err(ProviderError::Invariant(format!(
                "backend returned dimension {dim}, expected {expected}"
            )));
        }
        Ok(rows
            .into_iter()
            .map(|(_, v)| Embedding::normalized(v))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn retry_stops_on_non_retriable() {
        let policy = RetryPolicy {
            attempts: 3,
            initial_backoff: Duration::from_millis(1),
        };
        let mut calls = 0;
        let r: Result<(), _> = policy.run(|| {
            calls += 1;
            Err(ProviderError::Http {
                status: 400,
                body: String::new(),
            })
        });
        assert!(r.is_err());
        assert_eq!(calls, 1);
    }

    #[test]
    fn retry_spends_budget_on_retriable() {
        let policy = RetryPolicy {
            attempts: 3,
            initial_backoff: Duration::from_millis(1),
        };
        let mut calls = 0;
        let r: Result<(), _> = policy.run(|| {
            calls += 1;
            Err(ProviderError::Http {
                status: 429,
                body: "slow down".into(),
            })
        });
        assert!(matches!(r, Err(ProviderError::Http { status: 429, .. })));
        assert_eq!(calls, 3);
    }

    #[test]
    fn chat_body_encodes_images_as_data_urls() {
        let grid = std::sync::Arc::new(crate::sim::PixelGrid::filled(4, 4, 9));
        let backend = RemoteBackend::new("http://localhost:1", "k", "m");
        let body = backend.chat_body(
            &GenerationRequest::new("sys")
                .image(grid)
                .text("hi")
                .with_seed(3),
        );
        let url = body["messages"][1]["content"][0]["image_url"]["url"]
            .as_str()
            .unwrap();
        assert!(url.starts_with("data:image/png;base64,"));
        assert_eq!(body["seed"], 3);
        assert_eq!(body["messages"][0]["content"], "sys");
    }
}
