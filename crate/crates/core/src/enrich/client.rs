//! Vision-language description service clients.

use std::io::Cursor;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::frames::Frame;
use crate::http::{self, HttpFailure};

/// A failed description request.
#[derive(Debug, Clone, thiserror::Error)]
#[error("{message}")]
pub struct ServiceError {
    pub message: String,
    pub retryable: bool,
}

impl ServiceError {
    pub fn transient(message: impl Into<String>) -> Self {
        ServiceError { message: message.into(), retryable: true }
    }

    pub fn fatal(message: impl Into<String>) -> Self {
        ServiceError { message: message.into(), retryable: false }
    }
}

/// Turns a handful of video frames plus a prompt into a text description.
pub trait DescriptionClient: Send + Sync {
    /// Identifies the service and model; part of the cache key.
    fn provider_id(&self) -> &str;

    fn describe(&self, frames: &[Frame], prompt: &str) -> Result<String, ServiceError>;
}

/// Deterministic client that always answers with the same text.
#[derive(Debug)]
pub struct StubClient {
    text: String,
    provider_id: String,
    calls: AtomicUsize,
}

impl StubClient {
    pub fn new(text: impl Into<String>) -> Self {
        StubClient { text: text.into(), provider_id: "stub".into(), calls: AtomicUsize::new(0) }
    }

    pub fn with_provider_id(mut self, id: impl Into<String>) -> Self {
        self.provider_id = id.into();
        self
    }

    /// Number of `describe` calls served so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl DescriptionClient for StubClient {
    fn provider_id(&self) -> &str {
        &self.provider_id
    }

    fn describe(&self, _frames: &[Frame], _prompt: &str) -> Result<String, ServiceError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(self.text.clone())
    }
}

fn default_api_key_env() -> String {
    "OPENAI_API_KEY".into()
}
fn default_timeout_secs() -> u64 {
    60
}
fn default_max_tokens() -> u32 {
    300
}
fn default_detail() -> String {
    "low".into()
}

/// Endpoint settings for an OpenAI-compatible chat completions service with
/// image input. The API key is read from the environment variable named by
/// `api_key_env`, never from the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_detail")]
    pub image_detail: String,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4o".into(),
            api_key_env: default_api_key_env(),
            timeout_secs: default_timeout_secs(),
            max_tokens: default_max_tokens(),
            image_detail: default_detail(),
        }
    }
}

pub struct HttpDescriptionClient {
    config: ServiceConfig,
    api_key: Option<String>,
    provider_id: String,
    agent: ureq::Agent,
}

impl HttpDescriptionClient {
    /// Fails when the configured credential variable is unset.
    pub fn from_env(config: ServiceConfig) -> Result<Self, String> {
        let key = std::env::var(&config.api_key_env)
            .map_err(|_| format!("environment variable {} is not set", config.api_key_env))?;
        Ok(Self::with_key(config, Some(key)))
    }

    pub fn with_key(config: ServiceConfig, api_key: Option<String>) -> Self {
        let agent = http::agent(Duration::from_secs(config.timeout_secs));
        let provider_id = format!("openai-compatible:{}", config.model);
        HttpDescriptionClient { config, api_key, provider_id, agent }
    }

    fn request_body(&self, frames: &[Frame], prompt: &str) -> Result<serde_json::Value, ServiceError> {
        let mut content = vec![json!({"type": "text", "text": prompt})];
        for frame in frames {
            let mut png = Vec::new();
            frame
                .image
                .write_to(&mut Cursor::new(&mut png), image::ImageFormat::Png)
                .map_err(|e| ServiceError::fatal(format!("cannot encode frame {}: {e}", frame.index)))?;
            let b64 = base64::engine::general_purpose::STANDARD.encode(&png);
            content.push(json!({
                "type": "image_url",
                "image_url": {"url": format!("data:image/png;base64,{b64}"), "detail": self.config.image_detail},
            }));
        }
        Ok(json!({
            "model": self.config.model,
            "max_tokens": self.config.max_tokens,
            "temperature": 0,
            "messages": [{"role": "user", "content": content}],
        }))
    }
}

impl DescriptionClient for HttpDescriptionClient {
    fn provider_id(&self) -> &str {
        &self.provider_id
    }

    fn describe(&self, frames: &[Frame], prompt: &str) -> Result<String, ServiceError> {
        let body = self.request_body(frames, prompt)?;
        let resp = http::post_json(&self.agent, &self.config.endpoint, self.api_key.as_deref(), &body)
            .map_err(|e: HttpFailure| ServiceError { retryable: e.retryable(), message: e.to_string() })?;
        resp.pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
            .map(str::to_string)
            .ok_or_else(|| ServiceError::fatal("response has no choices[0].message.content"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::http::testing::MockServer;

    fn frame() -> Frame {
        Frame { index: 0, timestamp_ms: 0, image: image::RgbaImage::new(2, 2) }
    }

    #[test]
    fn posts_chat_completion_with_inline_frames() {
        let server = MockServer::start(vec![(
            200,
            r#"{"choices":[{"message":{"role":"assistant","content":"A man shrugs."}}]}"#.into(),
        )]);
        let cfg = ServiceConfig { endpoint: format!("{}/v1/chat/completions", server.url), ..Default::default() };
        let client = HttpDescriptionClient::with_key(cfg, Some("k".into()));
        let text = client.describe(&[frame(), frame()], "describe").unwrap();
        assert_eq!(text, "A man shrugs.");
        let bodies = server.join();
        let body: serde_json::Value = serde_json::from_str(&bodies[0]).unwrap();
        let content = body["messages"][0]["content"].as_array().unwrap();
        assert_eq!(content.len(), 3);
        assert_eq!(content[0]["text"], "describe");
        assert!(content[1]["image_url"]["url"].as_str().unwrap().starts_with("data:image/png;base64,"));
    }

    #[test]
    fn status_codes_classify_retryability() {
        let server = MockServer::start(vec![(503, "{}".into()), (400, "{}".into())]);
        let cfg = ServiceConfig { endpoint: server.url.clone(), ..Default::default() };
        let client = HttpDescriptionClient::with_key(cfg, None);
        assert!(client.describe(&[frame()], "p").unwrap_err().retryable);
        assert!(!client.describe(&[frame()], "p").unwrap_err().retryable);
        server.join();
    }
}
