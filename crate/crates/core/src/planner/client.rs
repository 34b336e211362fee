use std::path::Path;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::prompt::{Part, Prompt, Role};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("endpoint returned HTTP {0}")]
    Status(u16),
    #[error("malformed reply: {0}")]
    Protocol(String),
    #[error("cannot attach {path}: {message}")]
    Attachment { path: String, message: String },
    #[error("stub endpoint configured as unreachable")]
    StubUnreachable,
}

/// A chat endpoint that turns a prompt into reply text.
pub trait LvlmClient: Send + Sync {
    fn complete(&self, prompt: &Prompt) -> Result<String, ClientError>;
}

/// Scripted replies for tests and offline runs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StubFixture {
    #[serde(default)]
    pub responses: Vec<String>,
    #[serde(default)]
    pub unreachable: bool,
}

/// Returns the fixture's replies in order, repeating the last one.
#[derive(Debug)]
pub struct StubClient {
    fixture: StubFixture,
    calls: Mutex<Vec<Prompt>>,
}

impl StubClient {
    pub fn new(fixture: StubFixture) -> Self {
        Self {
            fixture,
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn from_path(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let fixture = serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        Ok(Self::new(fixture))
    }

    /// Prompts received so far.
    pub fn prompts(&self) -> Vec<Prompt> {
        self.calls.lock().expect("stub lock").clone()
    }
}

impl LvlmClient for StubClient {
    fn complete(&self, prompt: &Prompt) -> Result<String, ClientError> {
        let mut calls = self.calls.lock().expect("stub lock");
        let i = calls.len();
        calls.push(prompt.clone());
        if self.fixture.unreachable {
            return Err(ClientError::StubUnreachable);
        }
        let r = &self.fixture.responses;
        Ok(r.get(i).or(r.last()).cloned().unwrap_or_default())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HttpConfig {
    /// Chat-completions URL.
    pub url: String,
    pub token: Option<String>,
    pub model: Option<String>,
    pub timeout: Duration,
    pub max_in_flight: usize,
}

impl HttpConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            token: None,
            model: None,
            timeout: Duration::from_secs(120),
            max_in_flight: 4,
        }
    }

    /// `COMPCOND_LVLM_URL` (required), `COMPCOND_LVLM_TOKEN`, `COMPCOND_LVLM_MODEL`.
    pub fn from_env() -> Option<Self> {
        let url = std::env::var("COMPCOND_LVLM_URL").ok().filter(|s| !s.is_empty())?;
        Some(Self {
            token: std::env::var("COMPCOND_LVLM_TOKEN").ok().filter(|s| !s.is_empty()),
            model: std::env::var("COMPCOND_LVLM_MODEL").ok().filter(|s| !s.is_empty()),
            ..Self::new(url)
        })
    }
}

struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

struct SlotGuard<'a>(&'a Slots);

impl Slots {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().expect("slot lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("slot lock");
        }
        *free -= 1;
        SlotGuard(self)
    }
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("slot lock") += 1;
        self.0.cv.notify_one();
    }
}

/// OpenAI-style chat-completions client. At most `max_in_flight` requests
/// run at once across threads sharing the client.
pub struct HttpClient {
    cfg: HttpConfig,
    agent: ureq::Agent,
    slots: Slots,
}

fn mime_for(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("webp") => "image/webp",
        Some("gif") => "image/gif",
        _ => "image/png",
    }
}

/// Request body with images inlined as data URLs.
pub(crate) fn request_body(prompt: &Prompt, model: Option<&str>) -> Result<Value, ClientError> {
    let mut messages = Vec::with_capacity(prompt.messages.len());
    for m in &prompt.messages {
        let role = match m.role {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        };
        let mut content = Vec::with_capacity(m.content.len());
        for p in &m.content {
            content.push(match p {
                Part::Text { text } => json!({"type": "text", "text": text}),
                Part::Image { path } => {
                    let bytes = std::fs::read(path).map_err(|e| ClientError::Attachment {
                        path: path.display().to_string(),
                        message: e.to_string(),
                    })?;
                    let url = format!("data:{};base64,{}", mime_for(path), STANDARD.encode(bytes));
                    json!({"type": "image_url", "image_url": {"url": url}})
                }
            });
        }
        messages.push(json!({"role": role, "content": content}));
    }
    let mut body = json!({"messages": messages, "temperature": 0});
    if let Some(model) = model {
        body["model"] = json!(model);
    }
    Ok(body)
}

pub(crate) fn reply_text(v: &Value) -> Result<String, ClientError> {
    let content = &v["choices"][0]["message"]["content"];
    match content {
        Value::String(s) => Ok(s.clone()),
        // Some servers return content parts.
        Value::Array(parts) => Ok(parts
            .iter()
            .filter_map(|p| p["text"].as_str())
            .collect::<Vec<_>>()
            .join("")),
        _ => Err(ClientError::Protocol("missing choices[0].message.content".into())),
    }
}

impl HttpClient {
    pub fn new(cfg: HttpConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(cfg.timeout))
            .build()
            .into();
        let slots = Slots {
            free: Mutex::new(cfg.max_in_flight.max(1)),
            cv: Condvar::new(),
        };
        Self { cfg, agent, slots }
    }

    pub fn config(&self) -> &HttpConfig {
        &self.cfg
    }
}

impl LvlmClient for HttpClient {
    fn complete(&self, prompt: &Prompt) -> Result<String, ClientError> {
        let body = request_body(prompt, self.cfg.model.as_deref())?;
        log::debug!("request to {}: {}", self.cfg.url, prompt.to_json());
        let _slot = self.slots.acquire();
        let mut req = self.agent.post(&self.cfg.url);
        if let Some(t) = &self.cfg.token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| match e {
            ureq::Error::StatusCode(code) => ClientError::Status(code),
            other => ClientError::Transport(other.to_string()),
        })?;
        let v: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| ClientError::Protocol(e.to_string()))?;
        log::debug!("response: {v}");
        reply_text(&v)
    }
}
