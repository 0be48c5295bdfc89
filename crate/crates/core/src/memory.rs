//! Per-agent social memory: long-term cognitive and behavior stores plus a
//! bounded interaction buffer.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::debug;

use crate::backend::{BackendError, ChatBackend, ChatMessage, ChatRequest, RequestTag};
use crate::domain::{AgentAction, AgentId, AgentProfile, ContentItem, Notification, NotificationKind};
use crate::parser::{render_action, SipAnalysis};
use crate::prompts::{ContextBundle, PromptError, TemplateId, TemplateSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MemoryError {
    #[error("retrieval needs k >= 1")]
    InvalidK,
    #[error("interaction buffer is empty")]
    EmptyBuffer,
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("memory record line {line}: {message}")]
    Serde { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CognitiveKind {
    Norm,
    Role,
    Schema,
    Rule,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CognitiveEntry {
    pub entry_id: String,
    pub kind: CognitiveKind,
    pub text: String,
    pub tags: BTreeSet<String>,
    pub created_step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorEpisode {
    pub episode_id: String,
    pub step: u64,
    pub counterpart_id: Option<AgentId>,
    pub action: String,
    pub outcome: String,
    pub salience: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BufferSource {
    Grounded,
    Reasoned,
    Retrieved,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BufferEntry {
    pub source: BufferSource,
    pub text: String,
    pub step: u64,
}

/// Short-term memory with strict oldest-first eviction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionBuffer {
    entries: VecDeque<BufferEntry>,
    capacity: usize,
}

impl InteractionBuffer {
    /// Panics if `capacity` is zero.
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "buffer capacity must be positive");
        Self {
            entries: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn push(&mut self, source: BufferSource, text: impl Into<String>, step: u64) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(BufferEntry {
            source,
            text: text.into(),
            step,
        });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &BufferEntry> {
        self.entries.iter()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    /// One line per entry, oldest first, optionally restricted to some sources.
    pub fn render(&self, sources: &[BufferSource]) -> String {
        self.entries
            .iter()
            .filter(|e| sources.is_empty() || sources.contains(&e.source))
            .map(|e| e.text.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

fn default_capacity() -> usize {
    20
}
fn default_weight() -> f64 {
    0.5
}
fn default_decay() -> f64 {
    0.99
}
fn default_k() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryConfig {
    #[serde(default = "default_capacity")]
    pub capacity: usize,
    #[serde(default = "default_weight")]
    pub w_rel: f64,
    #[serde(default = "default_weight")]
    pub w_rec: f64,
    /// Per-step recency decay factor.
    #[serde(default = "default_decay")]
    pub decay: f64,
    /// Entries retrieved from each store per decision.
    #[serde(default = "default_k")]
    pub k: usize,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self {
            capacity: default_capacity(),
            w_rel: default_weight(),
            w_rec: default_weight(),
            decay: default_decay(),
            k: default_k(),
        }
    }
}

impl MemoryConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.capacity == 0 {
            return Err("memory.capacity must be at least 1".into());
        }
        if self.k == 0 {
            return Err("memory.k must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.decay) || self.decay == 0.0 {
            return Err("memory.decay must be in (0, 1]".into());
        }
        if self.w_rel < 0.0 || self.w_rec < 0.0 {
            return Err("memory weights must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StoreKind {
    Cognitive,
    Behavior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Retrieved {
    pub entry_id: String,
    pub text: String,
    pub step: u64,
    pub score: f64,
}

/// Lowercase alphanumeric tokens.
pub fn tokens(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Jaccard overlap of two token sets; 0 when both are empty.
pub fn token_overlap(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        0.0
    } else {
        a.intersection(b).count() as f64 / union as f64
    }
}

/// Text of an observed item as one line: `author: text (step s)`.
pub fn ground_item(item: &ContentItem) -> String {
    format!(
        "{}: {} (step {})",
        item.author_id,
        single_line(&item.text),
        item.step.unwrap_or(0)
    )
}

pub fn ground_notification(n: &Notification) -> String {
    let what = match n.kind {
        NotificationKind::Reply => "replied to your post",
        NotificationKind::Retweet => "retweeted your post",
        NotificationKind::Like => "liked your post",
    };
    match &n.text {
        Some(t) => format!(
            "{}: {what} {}: {} (step {})",
            n.actor_id,
            n.target_item_id,
            single_line(t),
            n.step
        ),
        None => format!("{}: {what} {} (step {})", n.actor_id, n.target_item_id, n.step),
    }
}

fn single_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

const BASE_NORMS: [(&str, CognitiveKind, &str); 3] = [
    (
        "be courteous and respectful to other users",
        CognitiveKind::Norm,
        "norm courtesy",
    ),
    ("stay on topic of the trigger news", CognitiveKind::Rule, "rule topic"),
    (
        "avoid quarrels and discuss rationally",
        CognitiveKind::Norm,
        "norm conflict",
    ),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocialMemory {
    pub config: MemoryConfig,
    pub cognitive: Vec<CognitiveEntry>,
    pub behavior: Vec<BehaviorEpisode>,
    pub buffer: InteractionBuffer,
}

/// One line of a memory persistence file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "store", rename_all = "lowercase")]
enum MemoryLine {
    Config(MemoryConfig),
    Cognitive(CognitiveEntry),
    Behavior(BehaviorEpisode),
    Buffer(BufferEntry),
}

impl SocialMemory {
    pub fn new(config: MemoryConfig) -> Self {
        let buffer = InteractionBuffer::new(config.capacity);
        Self {
            config,
            cognitive: Vec::new(),
            behavior: Vec::new(),
            buffer,
        }
    }

    /// Memory pre-loaded with the agent's role and the platform norms.
    pub fn seeded(profile: &AgentProfile, config: MemoryConfig) -> Self {
        let mut m = Self::new(config);
        m.add_cognitive(CognitiveKind::Role, profile.role_description(), tokens("role self"), 0);
        for (text, kind, tags) in BASE_NORMS {
            m.add_cognitive(kind, text, tokens(tags), 0);
        }
        m
    }

    pub fn add_cognitive(
        &mut self,
        kind: CognitiveKind,
        text: impl Into<String>,
        tags: BTreeSet<String>,
        step: u64,
    ) -> &CognitiveEntry {
        let entry_id = format!("cog-{:05}", self.cognitive.len());
        self.cognitive.push(CognitiveEntry {
            entry_id,
            kind,
            text: text.into(),
            tags: tags.into_iter().map(|t| t.to_lowercase()).collect(),
            created_step: step,
        });
        self.cognitive.last().expect("just pushed")
    }

    /// Scores every entry of a store without touching the buffer.
    pub fn rank(
        &self,
        query: &str,
        store: StoreKind,
        k: usize,
        current_step: u64,
    ) -> Result<Vec<Retrieved>, MemoryError> {
        if k == 0 {
            return Err(MemoryError::InvalidK);
        }
        let q = tokens(query);
        let score = |text: &str, tags: Option<&BTreeSet<String>>, step: u64| {
            let mut t = tokens(text);
            if let Some(tags) = tags {
                t.extend(tags.iter().cloned());
            }
            let age = current_step.saturating_sub(step);
            let recency = self.config.decay.powi(age.min(i32::MAX as u64) as i32);
            self.config.w_rel * token_overlap(&q, &t) + self.config.w_rec * recency
        };
        let mut scored: Vec<Retrieved> = match store {
            StoreKind::Cognitive => self
                .cognitive
                .iter()
                .map(|e| Retrieved {
                    entry_id: e.entry_id.clone(),
                    text: e.text.clone(),
                    step: e.created_step,
                    score: score(&e.text, Some(&e.tags), e.created_step),
                })
                .collect(),
            StoreKind::Behavior => self
                .behavior
                .iter()
                .map(|e| {
                    let text = format!("{} {}", e.action, e.outcome);
                    Retrieved {
                        entry_id: e.episode_id.clone(),
                        score: score(&text, None, e.step),
                        text,
                        step: e.step,
                    }
                })
                .collect(),
        };
        if scored.is_empty() {
            debug!(?store, "retrieval from empty store");
        }
        scored.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.entry_id.cmp(&b.entry_id)));
        scored.truncate(k);
        Ok(scored)
    }

    /// Top-k entries of a store; each is also appended to the buffer.
    pub fn retrieve(
        &mut self,
        query: &str,
        store: StoreKind,
        k: usize,
        current_step: u64,
    ) -> Result<Vec<Retrieved>, MemoryError> {
        let out = self.rank(query, store, k, current_step)?;
        for r in &out {
            self.buffer.push(BufferSource::Retrieved, r.text.clone(), current_step);
        }
        Ok(out)
    }

    /// Asks the backend to reflect on the buffer and stores the answer as a reasoned entry.
    pub fn reason(
        &mut self,
        backend: &dyn ChatBackend,
        templates: &TemplateSet,
        agent: &AgentProfile,
        model: &str,
        temperature: f64,
        step: u64,
    ) -> Result<String, MemoryError> {
        if self.buffer.is_empty() {
            return Err(MemoryError::EmptyBuffer);
        }
        let prompt = templates.render(
            TemplateId::Reflect,
            &ContextBundle::new()
                .bind("agent_name", agent.name.as_str())
                .bind("chat_history", self.buffer.render(&[])),
        )?;
        let request = ChatRequest::new(model, vec![ChatMessage::user(prompt)], temperature).tagged(RequestTag {
            agent_id: agent.agent_id.clone(),
            step: Some(step),
            template_id: TemplateId::Reflect,
            item_id: None,
        });
        let text = backend.complete(&request)?.trim().to_string();
        self.buffer.push(BufferSource::Reasoned, text.clone(), step);
        Ok(text)
    }

    /// Records a decision as an episode and keeps novel interpretations as schemas.
    pub fn learn(
        &mut self,
        analysis: &SipAnalysis,
        action: &AgentAction,
        outcome: impl Into<String>,
        counterpart: Option<AgentId>,
        step: u64,
    ) {
        self.behavior.push(BehaviorEpisode {
            episode_id: format!("ep-{:05}", self.behavior.len()),
            step,
            counterpart_id: counterpart,
            action: render_action(action),
            outcome: outcome.into(),
            salience: 0.5,
        });
        let schema = tokens(&analysis.interpret);
        let known = self.cognitive.iter().any(|e| tokens(&e.text) == schema);
        if !schema.is_empty() && !known {
            self.add_cognitive(CognitiveKind::Schema, analysis.interpret.clone(), BTreeSet::new(), step);
        }
    }

    /// Appends notifications, then feed items from oldest to newest so the newest survive eviction.
    pub fn ground(&mut self, notifications: &[Notification], feed: &[ContentItem], step: u64) {
        for n in notifications {
            self.buffer.push(BufferSource::Grounded, ground_notification(n), step);
        }
        for item in feed.iter().rev() {
            self.buffer.push(BufferSource::Grounded, ground_item(item), step);
        }
    }

    pub fn to_jsonl(&self) -> String {
        let lines = std::iter::once(MemoryLine::Config(self.config.clone()))
            .chain(self.cognitive.iter().cloned().map(MemoryLine::Cognitive))
            .chain(self.behavior.iter().cloned().map(MemoryLine::Behavior))
            .chain(self.buffer.iter().cloned().map(MemoryLine::Buffer));
        let mut out = String::new();
        for l in lines {
            out.push_str(&serde_json::to_string(&l).expect("memory line serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, MemoryError> {
        let mut memory: Option<SocialMemory> = None;
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: MemoryLine = serde_json::from_str(line).map_err(|e| MemoryError::Serde {
                line: n + 1,
                message: e.to_string(),
            })?;
            let err = |message: &str| MemoryError::Serde {
                line: n + 1,
                message: message.to_string(),
            };
            match (parsed, memory.as_mut()) {
                (MemoryLine::Config(c), None) => memory = Some(SocialMemory::new(c)),
                (MemoryLine::Config(_), Some(_)) => return Err(err("duplicate config line")),
                (_, None) => return Err(err("config line must come first")),
                (MemoryLine::Cognitive(e), Some(m)) => m.cognitive.push(e),
                (MemoryLine::Behavior(e), Some(m)) => m.behavior.push(e),
                (MemoryLine::Buffer(e), Some(m)) => m.buffer.push(e.source, e.text, e.step),
            }
        }
        memory.ok_or(MemoryError::Serde {
            line: 0,
            message: "no config line".into(),
        })
    }
}
