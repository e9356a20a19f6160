use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::digest::sha256_hex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ClientError {
    #[error("generation service unavailable: {0}")]
    Unavailable(String),
    #[error("malformed generation response: {0}")]
    MalformedResponse(String),
    #[error("no scripted response for transcript {digest}")]
    NoScriptEntry { digest: String },
    #[error("script file {path}: {reason}")]
    Script { path: String, reason: String },
    #[error("invalid client config: {0}")]
    InvalidConfig(String),
}

/// A chat-completion backend. Implementations must be usable from many
/// inferences at once.
pub trait ChatClient: Send + Sync {
    fn id(&self) -> String;
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, ClientError>;
}

/// SHA-256 over the JSON encoding of the transcript. Scripts key their
/// responses by this value.
pub fn transcript_digest(messages: &[ChatMessage]) -> String {
    let bytes = serde_json::to_vec(messages).expect("chat messages serialize");
    sha256_hex(&bytes)
}

/// Replayable script. Lookup order: exact transcript digest, then the next
/// unused `sequence` entry, then `fallback`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptFile {
    #[serde(default)]
    pub responses: BTreeMap<String, String>,
    #[serde(default)]
    pub sequence: Vec<String>,
    #[serde(default)]
    pub fallback: Option<String>,
}

impl ScriptFile {
    pub fn load(path: &Path) -> Result<Self, ClientError> {
        let err = |reason: String| ClientError::Script {
            path: path.display().to_string(),
            reason,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| err(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), ClientError> {
        let text = serde_json::to_string_pretty(self).expect("script serializes");
        std::fs::write(path, text).map_err(|e| ClientError::Script {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }
}

#[derive(Debug, Default)]
pub struct ScriptedClient {
    script: ScriptFile,
    cursor: AtomicUsize,
}

impl ScriptedClient {
    pub fn new(script: ScriptFile) -> Self {
        Self {
            script,
            cursor: AtomicUsize::new(0),
        }
    }

    /// Replies `text` to every transcript.
    pub fn constant(text: impl Into<String>) -> Self {
        Self::new(ScriptFile {
            fallback: Some(text.into()),
            ..Default::default()
        })
    }

    /// Replies with `replies` in order, one per call.
    pub fn sequence<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        Self::new(ScriptFile {
            sequence: replies.into_iter().map(Into::into).collect(),
            ..Default::default()
        })
    }

    pub fn from_path(path: &Path) -> Result<Self, ClientError> {
        Ok(Self::new(ScriptFile::load(path)?))
    }

    pub fn calls(&self) -> usize {
        self.cursor.load(Ordering::SeqCst)
    }
}

impl ChatClient for ScriptedClient {
    fn id(&self) -> String {
        "scripted".into()
    }

    fn complete(&self, messages: &[ChatMessage]) -> Result<String, ClientError> {
        let digest = transcript_digest(messages);
        let n = self.cursor.fetch_add(1, Ordering::SeqCst);
        if let Some(r) = self.script.responses.get(&digest) {
            return Ok(r.clone());
        }
        if let Some(r) = self.script.sequence.get(n) {
            return Ok(r.clone());
        }
        self.script
            .fallback
            .clone()
            .ok_or(ClientError::NoScriptEntry { digest })
    }
}

/// Answers "see doc" naming the first document block of the prompt, and
/// optionally the matching `SOURCE:` line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EchoClient {
    pub with_source: bool,
}

impl EchoClient {
    fn top_doc(prompt: &str) -> Option<&str> {
        prompt.lines().find_map(|line| {
            let rest = line.strip_prefix('[')?;
            let end = rest.find("] ")?;
            let id = &rest[..end];
            (!id.is_empty()).then_some(id)
        })
    }
}

impl ChatClient for EchoClient {
    fn id(&self) -> String {
        format!("echo(source={})", self.with_source)
    }

    fn complete(&self, messages: &[ChatMessage]) -> Result<String, ClientError> {
        let prompt = messages
            .iter()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or_default();
        Ok(match Self::top_doc(prompt) {
            Some(id) if self.with_source => format!("see doc {id}\nSOURCE: {id}"),
            Some(id) => format!("see doc {id}"),
            None => "No documents retrieved.".into(),
        })
    }
}

/// Always fails, standing in for an unreachable generation service.
#[derive(Debug, Clone, Default)]
pub struct UnavailableClient;

impl ChatClient for UnavailableClient {
    fn id(&self) -> String {
        "unavailable".into()
    }

    fn complete(&self, _messages: &[ChatMessage]) -> Result<String, ClientError> {
        Err(ClientError::Unavailable("connection refused".into()))
    }
}

#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpClientConfig {
    pub endpoint: String,
    #[serde(default)]
    pub model: Option<String>,
    /// Name of the environment variable holding the bearer token.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_timeout_secs() -> u64 {
    60
}

impl fmt::Debug for HttpClientConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpClientConfig")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .field("timeout_secs", &self.timeout_secs)
            .finish_non_exhaustive()
    }
}

/// Chat-completion client. Native `tool_calls` in the response are rewritten
/// into the `{"tool": name, "arguments": {...}}` request object.
pub struct HttpChatClient {
    config: HttpClientConfig,
    agent: ureq::Agent,
}

impl fmt::Debug for HttpChatClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpChatClient")
            .field("config", &self.config)
            .finish()
    }
}

impl HttpChatClient {
    pub fn new(config: HttpClientConfig) -> Result<Self, ClientError> {
        if config.endpoint.trim().is_empty() {
            return Err(ClientError::InvalidConfig("endpoint is empty".into()));
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs.max(1))))
            .http_status_as_error(true)
            .build()
            .into();
        Ok(Self { config, agent })
    }

    fn wire_messages(messages: &[ChatMessage]) -> Vec<Value> {
        messages
            .iter()
            .map(|m| match m.role {
                Role::System => json!({"role": "system", "content": m.content}),
                Role::User => json!({"role": "user", "content": m.content}),
                Role::Assistant => json!({"role": "assistant", "content": m.content}),
                Role::Tool => json!({"role": "user", "content": m.content}),
            })
            .collect()
    }

    fn extract(body: &Value) -> Result<String, ClientError> {
        let message = body
            .pointer("/choices/0/message")
            .ok_or_else(|| ClientError::MalformedResponse("missing choices[0].message".into()))?;
        if let Some(call) = message.pointer("/tool_calls/0/function") {
            let name = call.get("name").and_then(Value::as_str).unwrap_or_default();
            let arguments = match call.get("arguments") {
                Some(Value::String(s)) => {
                    serde_json::from_str(s).unwrap_or(Value::String(s.clone()))
                }
                Some(v) => v.clone(),
                None => json!({}),
            };
            return Ok(json!({"tool": name, "arguments": arguments}).to_string());
        }
        message
            .get("content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| ClientError::MalformedResponse("message has no content".into()))
    }
}

impl ChatClient for HttpChatClient {
    fn id(&self) -> String {
        format!(
            "http:{}",
            self.config
                .model
                .as_deref()
                .unwrap_or(&self.config.endpoint)
        )
    }

    fn complete(&self, messages: &[ChatMessage]) -> Result<String, ClientError> {
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(var) = &self.config.api_key_env {
            if let Ok(key) = std::env::var(var) {
                req = req.header("Authorization", &format!("Bearer {key}"));
            }
        }
        let mut body = json!({ "messages": Self::wire_messages(messages) });
        if let Some(model) = &self.config.model {
            body["model"] = json!(model);
        }
        let mut resp = req
            .send_json(&body)
            .map_err(|e| ClientError::Unavailable(e.to_string()))?;
        let parsed: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| ClientError::MalformedResponse(e.to_string()))?;
        Self::extract(&parsed)
    }
}
