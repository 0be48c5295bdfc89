//! Chat-completion backends: an HTTP client for chat-completions style
//! servers and a scripted mock for offline runs.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use tracing::{debug, warn};

use crate::domain::{AgentId, Labels};
use crate::prompts::TemplateId;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("HTTP status {code} after {attempts} attempt(s)")]
    HttpStatus { code: u16, attempts: u32 },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("mock script has no entry for agent `{agent_id}`, step {step:?}, template `{template_id}`")]
    ScriptMiss {
        agent_id: AgentId,
        step: Option<u64>,
        template_id: TemplateId,
    },
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { message: String, attempts: u32 },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend configuration error: {0}")]
    Config(String),
}

impl BackendError {
    /// Number of attempts made before giving up, where applicable.
    pub fn attempts(&self) -> Option<u32> {
        match self {
            BackendError::Timeout { attempts }
            | BackendError::HttpStatus { attempts, .. }
            | BackendError::Transport { attempts, .. } => Some(*attempts),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }
}

/// Who is asking and for which prompt; used by the mock to look up responses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestTag {
    pub agent_id: AgentId,
    pub step: Option<u64>,
    pub template_id: TemplateId,
    pub item_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip)]
    pub tag: Option<RequestTag>,
}

impl ChatRequest {
    pub fn new(model: impl Into<String>, messages: Vec<ChatMessage>, temperature: f64) -> Self {
        Self {
            model: model.into(),
            messages,
            temperature,
            seed: None,
            tag: None,
        }
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }

    pub fn tagged(mut self, tag: RequestTag) -> Self {
        self.tag = Some(tag);
        self
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.messages.is_empty() {
            return Err(BackendError::InvalidRequest("no messages".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(BackendError::InvalidRequest(format!(
                "temperature {} is negative",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// A chat-completion service. Implementations must accept concurrent calls.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError>;
}

impl<T: ChatBackend + ?Sized> ChatBackend for &T {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<T> {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Mock,
}

fn default_timeout() -> f64 {
    60.0
}
fn default_retries() -> u32 {
    3
}
fn default_retry_base_ms() -> u64 {
    500
}
fn default_parallel() -> usize {
    4
}
fn default_api_key_env() -> String {
    "OPENAI_API_KEY".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default)]
    pub endpoint_url: Option<String>,
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    /// First backoff delay; doubles on each retry.
    #[serde(default = "default_retry_base_ms")]
    pub retry_base_ms: u64,
    #[serde(default = "default_parallel")]
    pub max_parallel: usize,
    #[serde(default)]
    pub script: Option<PathBuf>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Mock,
            endpoint_url: None,
            api_key_env: default_api_key_env(),
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            retry_base_ms: default_retry_base_ms(),
            max_parallel: default_parallel(),
            script: None,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.max_parallel == 0 {
            return Err(BackendError::Config("max_parallel must be at least 1".into()));
        }
        if self.timeout_secs.is_nan() || self.timeout_secs <= 0.0 {
            return Err(BackendError::Config("timeout_secs must be positive".into()));
        }
        match self.kind {
            BackendKind::Http if self.endpoint_url.is_none() => {
                Err(BackendError::Config("http backend needs endpoint_url".into()))
            }
            BackendKind::Mock if self.script.is_none() => {
                Err(BackendError::Config("mock backend needs a script path".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Client for a chat-completions endpoint with retry on 429, 5xx and timeouts.
pub struct HttpBackend {
    client: reqwest::blocking::Client,
    url: String,
    api_key: Option<String>,
    max_retries: u32,
    retry_base: Duration,
}

impl HttpBackend {
    pub fn new(config: &BackendConfig) -> Result<Self, BackendError> {
        config.validate()?;
        let url = config
            .endpoint_url
            .clone()
            .ok_or_else(|| BackendError::Config("http backend needs endpoint_url".into()))?;
        let api_key = std::env::var(&config.api_key_env).ok();
        if api_key.is_none() {
            warn!(env = %config.api_key_env, "API key variable not set; sending unauthenticated requests");
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self {
            client,
            url,
            api_key,
            max_retries: config.max_retries,
            retry_base: Duration::from_millis(config.retry_base_ms),
        })
    }

    fn attempt(&self, body: &Value, attempts: u32) -> Result<String, (BackendError, bool)> {
        let mut req = self.client.post(&self.url).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                (BackendError::Timeout { attempts }, true)
            } else {
                (
                    BackendError::Transport {
                        message: e.to_string(),
                        attempts,
                    },
                    e.is_connect(),
                )
            }
        })?;
        let status = resp.status();
        if !status.is_success() {
            let retry = status.as_u16() == 429 || status.is_server_error();
            return Err((
                BackendError::HttpStatus {
                    code: status.as_u16(),
                    attempts,
                },
                retry,
            ));
        }
        let value: Value = resp.json().map_err(|e| {
            if e.is_timeout() {
                (BackendError::Timeout { attempts }, true)
            } else {
                (BackendError::MalformedResponse(e.to_string()), false)
            }
        })?;
        extract_content(&value).map_err(|e| (e, false))
    }
}

/// `choices[0].message.content` of a chat-completions response.
pub fn extract_content(value: &Value) -> Result<String, BackendError> {
    value
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| BackendError::MalformedResponse("missing choices[0].message.content".into()))
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        request.validate()?;
        let mut body = json!({
            "model": request.model,
            "messages": request.messages,
            "temperature": request.temperature,
        });
        if let Some(seed) = request.seed {
            body["seed"] = json!(seed);
        }
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&body, attempts) {
                Ok(text) => return Ok(text),
                Err((err, retryable)) => {
                    if !retryable || attempts > self.max_retries {
                        return Err(err);
                    }
                    let delay = self.retry_base * 2u32.saturating_pow(attempts - 1);
                    debug!(%err, ?delay, "retrying backend request");
                    std::thread::sleep(delay);
                }
            }
        }
    }
}

/// Wildcard agent id in mock scripts.
pub const ANY_AGENT: &str = "*";

fn any_agent() -> String {
    ANY_AGENT.to_string()
}

/// One scripted response. `agent_id = "*"` and `step = null` act as wildcards.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockRecord {
    #[serde(default = "any_agent")]
    pub agent_id: String,
    #[serde(default)]
    pub step: Option<u64>,
    pub template_id: TemplateId,
    /// Restricts a questionnaire response to one item.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item_id: Option<String>,
    pub response: String,
    /// Ground-truth labels for the content produced by this response.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Labels>,
}

impl MockRecord {
    fn matches(&self, agent: &str, step: Option<u64>, template: TemplateId, item: Option<&str>) -> Option<u8> {
        if self.template_id != template {
            return None;
        }
        let agent_exact = self.agent_id == agent;
        if !agent_exact && self.agent_id != ANY_AGENT {
            return None;
        }
        let step_exact = match self.step {
            None => false,
            Some(s) if Some(s) == step => true,
            Some(_) => return None,
        };
        let item_exact = match &self.item_id {
            None => false,
            Some(i) if Some(i.as_str()) == item => true,
            Some(_) => return None,
        };
        Some(u8::from(agent_exact) + u8::from(step_exact) + u8::from(item_exact))
    }
}

/// Deterministic backend answering from a script. The most specific matching
/// record wins; ties go to the earliest record.
#[derive(Debug, Default)]
pub struct MockBackend {
    records: Vec<MockRecord>,
    calls: AtomicUsize,
}

impl Clone for MockBackend {
    fn clone(&self) -> Self {
        Self::new(self.records.clone())
    }
}

impl MockBackend {
    pub fn new(records: Vec<MockRecord>) -> Self {
        Self {
            records,
            calls: AtomicUsize::new(0),
        }
    }

    /// A backend that gives the same answer to every template.
    pub fn constant(response: impl Into<String>) -> Self {
        let response = response.into();
        Self::new(
            TemplateId::ALL
                .iter()
                .map(|&t| MockRecord {
                    agent_id: any_agent(),
                    step: None,
                    template_id: t,
                    item_id: None,
                    response: response.clone(),
                    labels: None,
                })
                .collect(),
        )
    }

    pub fn parse_jsonl(text: &str) -> Result<Self, BackendError> {
        let mut records = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: MockRecord = serde_json::from_str(line)
                .map_err(|e| BackendError::Config(format!("mock script line {}: {e}", n + 1)))?;
            records.push(rec);
        }
        Ok(Self::new(records))
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = fs::read_to_string(path).map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
        Self::parse_jsonl(&text)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("mock record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn records(&self) -> &[MockRecord] {
        &self.records
    }

    pub fn push(&mut self, record: MockRecord) {
        self.records.push(record);
    }

    pub fn lookup(
        &self,
        agent: &str,
        step: Option<u64>,
        template: TemplateId,
        item: Option<&str>,
    ) -> Option<&MockRecord> {
        let mut best: Option<(u8, &MockRecord)> = None;
        for r in &self.records {
            if let Some(score) = r.matches(agent, step, template, item) {
                if best.is_none_or(|(b, _)| score > b) {
                    best = Some((score, r));
                }
            }
        }
        best.map(|(_, r)| r)
    }

    /// Number of `complete` calls served so far.
    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

impl ChatBackend for MockBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        request.validate()?;
        self.calls.fetch_add(1, Ordering::Relaxed);
        let tag = request
            .tag
            .as_ref()
            .ok_or_else(|| BackendError::InvalidRequest("mock backend needs a request tag".into()))?;
        self.lookup(&tag.agent_id, tag.step, tag.template_id, tag.item_id.as_deref())
            .map(|r| r.response.clone())
            .ok_or_else(|| BackendError::ScriptMiss {
                agent_id: tag.agent_id.clone(),
                step: tag.step,
                template_id: tag.template_id,
            })
    }
}

/// Builds the backend described by a config.
pub fn build_backend(config: &BackendConfig) -> Result<Box<dyn ChatBackend>, BackendError> {
    config.validate()?;
    Ok(match config.kind {
        BackendKind::Http => Box::new(HttpBackend::new(config)?),
        BackendKind::Mock => Box::new(MockBackend::load(
            config.script.as_deref().expect("validated mock config has a script"),
        )?),
    })
}
