//! Time-step simulation over a frozen-snapshot world.
//!
//! Each step, every active agent decides against the world as it was at the
//! start of the step. Actions are then applied in agent-id order.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use chrono::{DateTime, Utc};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

use crate::agent::{decide, AgentConfig, AgentState, Decision, Observation, ParseStatus};
use crate::backend::{ChatBackend, ChatMessage, ChatRequest, MockBackend, RequestTag};
use crate::dataset::{DatasetError, EventCorpus};
use crate::domain::{
    ActionKind, AgentAction, AgentId, ContentItem, ContentStore, ContentTypeLabel, DomainError, EmotionLabel, ItemId,
    LabelSet, Labels, Notification, NotificationKind, SimulationClock, SocialGraph, Stance,
};
use crate::parser::{render_action, SipAnalysis};
use crate::prompts::{ContextBundle, TemplateId, TemplateSet};
use crate::synth::step_item_id;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("corpus has no users")]
    EmptyCorpus,
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("unknown agent `{0}`")]
    UnknownAgent(AgentId),
    #[error("step count must be at least 1")]
    InvalidSteps,
    #[error("step {step}: {failed} of {total} agents hit backend failures")]
    SystemicFailure { step: u64, failed: usize, total: usize },
    #[error("invalid engine config: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

/// Which agents act in a step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activity {
    #[default]
    All,
    /// Each agent acts independently with this probability.
    Fraction(f64),
}

fn default_seconds_per_step() -> i64 {
    3600
}
fn default_feed_size() -> usize {
    10
}
fn default_threshold() -> f64 {
    0.5
}
fn default_parallel() -> usize {
    4
}
fn uniform_stances() -> BTreeMap<Stance, f64> {
    Stance::ALL.iter().map(|s| (*s, 1.0)).collect()
}
fn uniform_emotions() -> BTreeMap<String, f64> {
    LabelSet::default_emotions()
        .labels()
        .iter()
        .map(|e| (e.clone(), 1.0))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_seconds_per_step")]
    pub seconds_per_step: i64,
    /// Simulated time of step 0; defaults to the newest seed item.
    #[serde(default)]
    pub origin: Option<DateTime<Utc>>,
    #[serde(default = "default_feed_size")]
    pub feed_size: usize,
    #[serde(default)]
    pub activity: Activity,
    /// Share of backend failures in one step above which the run aborts.
    #[serde(default = "default_threshold")]
    pub failure_threshold: f64,
    #[serde(default = "default_parallel")]
    pub max_parallel: usize,
    /// Relative weights for agents without a stance in their profile.
    #[serde(default = "uniform_stances")]
    pub stance_distribution: BTreeMap<Stance, f64>,
    #[serde(default = "uniform_emotions")]
    pub emotion_distribution: BTreeMap<String, f64>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            seconds_per_step: default_seconds_per_step(),
            origin: None,
            feed_size: default_feed_size(),
            activity: Activity::All,
            failure_threshold: default_threshold(),
            max_parallel: default_parallel(),
            stance_distribution: uniform_stances(),
            emotion_distribution: uniform_emotions(),
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: &str| Err(EngineError::Config(m.to_string()));
        if self.seconds_per_step <= 0 {
            return bad("seconds_per_step must be positive");
        }
        if self.feed_size == 0 {
            return bad("feed_size must be at least 1");
        }
        if self.max_parallel == 0 {
            return bad("max_parallel must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.failure_threshold) {
            return bad("failure_threshold must be in [0, 1]");
        }
        if let Activity::Fraction(p) = self.activity {
            if !(0.0..=1.0).contains(&p) {
                return bad("activity fraction must be in [0, 1]");
            }
        }
        let weights_ok = |w: &mut dyn Iterator<Item = f64>| {
            let v: Vec<f64> = w.collect();
            !v.is_empty() && v.iter().all(|x| *x >= 0.0 && x.is_finite()) && v.iter().sum::<f64>() > 0.0
        };
        if !weights_ok(&mut self.stance_distribution.values().copied()) {
            return bad("stance_distribution needs non-negative weights with a positive sum");
        }
        if !weights_ok(&mut self.emotion_distribution.values().copied()) {
            return bad("emotion_distribution needs non-negative weights with a positive sum");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LikeRecord {
    pub agent_id: AgentId,
    pub item_id: ItemId,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: u64,
    pub agent_id: AgentId,
    pub action: AgentAction,
    pub parse_status: ParseStatus,
    /// Item created by the action, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item_id: Option<ItemId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub graph: SocialGraph,
    pub items: BTreeMap<ItemId, ContentItem>,
    pub likes: Vec<LikeRecord>,
    pub clock: SimulationClock,
    pub event_log: Vec<LogEntry>,
}

impl ContentStore for WorldState {
    fn get_item(&self, id: &str) -> Option<&ContentItem> {
        self.items.get(id)
    }
}

impl WorldState {
    fn root_of<'a>(&'a self, item: &'a ContentItem) -> &'a ContentItem {
        let mut cur = item;
        let mut guard = 0;
        while let Some(p) = cur.parent_id.as_deref().and_then(|p| self.items.get(p)) {
            cur = p;
            guard += 1;
            if guard > self.items.len() {
                break;
            }
        }
        cur
    }

    /// Likes plus direct replies per item.
    pub fn engagement(&self) -> HashMap<&str, usize> {
        let mut e: HashMap<&str, usize> = HashMap::new();
        for l in &self.likes {
            *e.entry(l.item_id.as_str()).or_default() += 1;
        }
        for i in self.items.values() {
            if let Some(p) = &i.parent_id {
                *e.entry(p.as_str()).or_default() += 1;
            }
        }
        e
    }

    pub fn has_like(&self, agent: &str, item: &str) -> bool {
        self.likes.iter().any(|l| l.agent_id == agent && l.item_id == item)
    }
}

/// Corpus users and follow edges; seed posts placed at step 0.
pub fn construct_environment(corpus: &EventCorpus, config: &EngineConfig) -> Result<WorldState, EngineError> {
    if corpus.users.is_empty() {
        return Err(EngineError::EmptyCorpus);
    }
    corpus.validate()?;
    let graph = SocialGraph::new(corpus.users.iter().cloned(), corpus.follows.iter().cloned())?;
    let mut items = BTreeMap::new();
    for seed in corpus.seed_items() {
        let mut s = seed.clone();
        s.step = Some(0);
        items.insert(s.item_id.clone(), s);
    }
    let origin = config
        .origin
        .or_else(|| items.values().map(|i| i.timestamp).max())
        .or_else(|| corpus.items.first().map(|i| i.timestamp))
        .unwrap_or(DateTime::<Utc>::UNIX_EPOCH);
    Ok(WorldState {
        graph,
        items,
        likes: Vec::new(),
        clock: SimulationClock::new(origin, config.seconds_per_step),
        event_log: Vec::new(),
    })
}

/// Fills missing initial stances and emotions by seeded sampling.
pub fn initialize(world: &mut WorldState, config: &EngineConfig) -> Result<(), EngineError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let stances: Vec<(Stance, f64)> = config.stance_distribution.iter().map(|(s, w)| (*s, *w)).collect();
    let emotions: Vec<(String, f64)> = config
        .emotion_distribution
        .iter()
        .map(|(e, w)| (e.clone(), *w))
        .collect();
    let stance_dist =
        WeightedIndex::new(stances.iter().map(|s| s.1)).map_err(|e| EngineError::Config(e.to_string()))?;
    let emotion_dist =
        WeightedIndex::new(emotions.iter().map(|e| e.1)).map_err(|e| EngineError::Config(e.to_string()))?;
    for profile in world.graph.agents_mut() {
        if profile.initial_stance.is_none() {
            profile.initial_stance = Some(stances[stance_dist.sample(&mut rng)].0);
        }
        if profile.initial_emotion.is_none() {
            profile.initial_emotion = Some(EmotionLabel(emotions[emotion_dist.sample(&mut rng)].0.clone()));
        }
    }
    Ok(())
}

/// Items from followees and roots of threads the viewer took part in,
/// newest first, then by engagement, then by id.
pub fn build_feed(world: &WorldState, viewer: &str, n: usize) -> Result<Vec<ContentItem>, EngineError> {
    if world.graph.agent(viewer).is_none() {
        return Err(EngineError::UnknownAgent(viewer.to_string()));
    }
    let followees: HashSet<&str> = world.graph.followees(viewer).map(String::as_str).collect();
    let participated: HashSet<&str> = world
        .items
        .values()
        .filter(|i| i.author_id == viewer)
        .map(|i| world.root_of(i).item_id.as_str())
        .collect();
    let engagement = world.engagement();
    let mut feed: Vec<&ContentItem> = world
        .items
        .values()
        .filter(|i| followees.contains(i.author_id.as_str()) || participated.contains(i.item_id.as_str()))
        .collect();
    let eng = |i: &ContentItem| engagement.get(i.item_id.as_str()).copied().unwrap_or(0);
    feed.sort_by(|a, b| {
        b.timestamp
            .cmp(&a.timestamp)
            .then_with(|| eng(b).cmp(&eng(a)))
            .then_with(|| a.item_id.cmp(&b.item_id))
    });
    Ok(feed.into_iter().take(n).cloned().collect())
}

/// Replies, retweets and likes on the viewer's items made at or after `since_step`, by step.
pub fn collect_notifications(
    world: &WorldState,
    viewer: &str,
    since_step: u64,
) -> Result<Vec<Notification>, EngineError> {
    if world.graph.agent(viewer).is_none() {
        return Err(EngineError::UnknownAgent(viewer.to_string()));
    }
    let mine: HashSet<&str> = world
        .items
        .values()
        .filter(|i| i.author_id == viewer)
        .map(|i| i.item_id.as_str())
        .collect();
    let mut out = Vec::new();
    for i in world.items.values() {
        if i.author_id == viewer || i.step.unwrap_or(0) < since_step {
            continue;
        }
        let (kind, target) = match (&i.parent_id, &i.retweet_of) {
            (Some(p), _) if mine.contains(p.as_str()) => (NotificationKind::Reply, p),
            (_, Some(r)) if mine.contains(r.as_str()) => (NotificationKind::Retweet, r),
            _ => continue,
        };
        out.push(Notification {
            kind,
            actor_id: i.author_id.clone(),
            target_item_id: target.clone(),
            item_id: Some(i.item_id.clone()),
            text: Some(i.text.clone()),
            step: i.step.unwrap_or(0),
        });
    }
    for l in &world.likes {
        if l.agent_id != viewer && l.step >= since_step && mine.contains(l.item_id.as_str()) {
            out.push(Notification {
                kind: NotificationKind::Like,
                actor_id: l.agent_id.clone(),
                target_item_id: l.item_id.clone(),
                item_id: None,
                text: None,
                step: l.step,
            });
        }
    }
    out.sort_by(|a, b| {
        (a.step, a.kind, &a.actor_id, &a.target_item_id).cmp(&(b.step, b.kind, &b.actor_id, &b.target_item_id))
    });
    Ok(out)
}

/// Assigns stance, content-type and emotion labels to generated content.
pub trait Annotator: Send + Sync {
    fn annotate(&self, agent_id: &str, step: u64, action: &AgentAction, backend: &dyn ChatBackend) -> Option<Labels>;
}

/// Leaves content unlabeled.
pub struct NoAnnotator;

impl Annotator for NoAnnotator {
    fn annotate(&self, _: &str, _: u64, _: &AgentAction, _: &dyn ChatBackend) -> Option<Labels> {
        None
    }
}

/// Takes labels from the `labels` field of the mock script's action records.
pub struct ScriptedAnnotator {
    script: MockBackend,
}

impl ScriptedAnnotator {
    pub fn new(script: MockBackend) -> Self {
        Self { script }
    }
}

impl Annotator for ScriptedAnnotator {
    fn annotate(&self, agent_id: &str, step: u64, action: &AgentAction, _: &dyn ChatBackend) -> Option<Labels> {
        if !action.creates_item() {
            return None;
        }
        self.script
            .lookup(agent_id, Some(step), TemplateId::ActionSelect, None)
            .and_then(|r| r.labels.clone())
    }
}

/// Asks the chat backend to classify generated text.
pub struct LlmAnnotator {
    pub templates: TemplateSet,
    pub model: String,
    pub content_types: LabelSet,
    pub emotions: LabelSet,
}

/// Reads `stance: x`, `content_type: y`, `emotion: z` lines.
pub fn parse_annotation(raw: &str, content_types: &LabelSet, emotions: &LabelSet) -> Option<Labels> {
    let mut stance = None;
    let mut content = None;
    let mut emotion = None;
    for line in raw.lines() {
        let Some((key, value)) = line.split_once(':') else {
            continue;
        };
        let value = value
            .trim()
            .trim_matches(|c: char| c == '"' || c == '`' || c == '.')
            .to_lowercase();
        match key.trim().to_lowercase().as_str() {
            "stance" => stance = value.parse::<Stance>().ok(),
            "content_type" | "content type" => content = content_types.contains(&value).then_some(value),
            "emotion" => emotion = emotions.contains(&value).then_some(value),
            _ => {}
        }
    }
    Some(Labels {
        stance: stance?,
        content_type: ContentTypeLabel(content?),
        emotion: EmotionLabel(emotion?),
    })
}

impl Annotator for LlmAnnotator {
    fn annotate(&self, agent_id: &str, step: u64, action: &AgentAction, backend: &dyn ChatBackend) -> Option<Labels> {
        let text = action.content()?;
        let prompt = self
            .templates
            .render(
                TemplateId::Annotate,
                &ContextBundle::new()
                    .bind("message", text)
                    .bind("stance_labels", LabelSet::stances().labels().join(", "))
                    .bind("content_type_labels", self.content_types.labels().join(", "))
                    .bind("emotion_labels", self.emotions.labels().join(", ")),
            )
            .ok()?;
        let request = ChatRequest::new(&self.model, vec![ChatMessage::user(prompt)], 0.0).tagged(RequestTag {
            agent_id: agent_id.to_string(),
            step: Some(step),
            template_id: TemplateId::Annotate,
            item_id: None,
        });
        match backend.complete(&request) {
            Ok(raw) => {
                let labels = parse_annotation(&raw, &self.content_types, &self.emotions);
                if labels.is_none() {
                    warn!(agent = agent_id, step, "unparseable annotation");
                }
                labels
            }
            Err(e) => {
                warn!(agent = agent_id, step, error = %e, "annotation failed");
                None
            }
        }
    }
}

/// One decision in the trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: u64,
    pub agent_id: AgentId,
    pub sip: Option<SipAnalysis>,
    /// Canonical call text.
    pub action: String,
    pub kind: ActionKind,
    #[serde(default)]
    pub item_id: Option<ItemId>,
    #[serde(default)]
    pub parent_id: Option<ItemId>,
    pub labels: Option<Labels>,
    pub parse_status: ParseStatus,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimulationTrace {
    pub records: Vec<TraceRecord>,
}

impl SimulationTrace {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("trace record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn parse_jsonl(text: &str) -> Result<Self, EngineError> {
        let mut records = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(line).map_err(|e| EngineError::Io {
                path: format!("trace line {}", n + 1),
                message: e.to_string(),
            })?);
        }
        Ok(Self { records })
    }

    pub fn load(path: &Path) -> Result<Self, EngineError> {
        let text = std::fs::read_to_string(path).map_err(|e| EngineError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse_jsonl(&text)
    }

    /// Number of steps covered, counting from step 0.
    pub fn steps(&self) -> u64 {
        self.records.iter().map(|r| r.step + 1).max().unwrap_or(0)
    }
}

/// Full resumable state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub world: WorldState,
    pub agents: BTreeMap<AgentId, AgentState>,
}

pub struct Simulation {
    pub world: WorldState,
    pub agents: BTreeMap<AgentId, AgentState>,
    config: EngineConfig,
    agent_config: AgentConfig,
    templates: TemplateSet,
    annotator: Box<dyn Annotator>,
    rng: ChaCha8Rng,
    pool: rayon::ThreadPool,
}

struct Outcome {
    agent_id: AgentId,
    decision: Decision,
    labels: Option<Labels>,
}

impl Simulation {
    /// Agents are created from the (initialized) graph profiles.
    pub fn new(
        world: WorldState,
        config: EngineConfig,
        mut agent_config: AgentConfig,
        templates: TemplateSet,
        annotator: Box<dyn Annotator>,
    ) -> Result<Self, EngineError> {
        config.validate()?;
        agent_config.memory.validate().map_err(EngineError::Config)?;
        if agent_config.trigger_news.is_empty() {
            if let Some(first) = world
                .items
                .values()
                .min_by(|a, b| (a.timestamp, &a.item_id).cmp(&(b.timestamp, &b.item_id)))
            {
                agent_config.trigger_news = first.text.clone();
            }
        }
        let agents = world
            .graph
            .agents()
            .map(|p| {
                (
                    p.agent_id.clone(),
                    AgentState::new(p.clone(), agent_config.memory.clone()),
                )
            })
            .collect();
        Self::assemble(world, agents, config, agent_config, templates, annotator)
    }

    pub fn from_checkpoint(
        checkpoint: Checkpoint,
        config: EngineConfig,
        agent_config: AgentConfig,
        templates: TemplateSet,
        annotator: Box<dyn Annotator>,
    ) -> Result<Self, EngineError> {
        config.validate()?;
        Self::assemble(
            checkpoint.world,
            checkpoint.agents,
            config,
            agent_config,
            templates,
            annotator,
        )
    }

    fn assemble(
        world: WorldState,
        agents: BTreeMap<AgentId, AgentState>,
        config: EngineConfig,
        agent_config: AgentConfig,
        templates: TemplateSet,
        annotator: Box<dyn Annotator>,
    ) -> Result<Self, EngineError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.max_parallel)
            .build()
            .map_err(|e| EngineError::Config(e.to_string()))?;
        // distinct stream from the initialization sampler
        let rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_5eed_5eed_5eed);
        Ok(Self {
            world,
            agents,
            config,
            agent_config,
            templates,
            annotator,
            rng,
            pool,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            world: self.world.clone(),
            agents: self.agents.clone(),
        }
    }

    pub fn agent_config(&self) -> &AgentConfig {
        &self.agent_config
    }

    fn active_agents(&mut self) -> BTreeSet<AgentId> {
        match self.config.activity {
            Activity::All => self.agents.keys().cloned().collect(),
            Activity::Fraction(p) => {
                let ids: Vec<AgentId> = self.agents.keys().cloned().collect();
                ids.into_iter().filter(|_| self.rng.random_bool(p)).collect()
            }
        }
    }

    fn fresh_item_id(&self, step: u64, agent: &str) -> ItemId {
        let base = step_item_id(step, agent);
        if !self.world.items.contains_key(&base) {
            return base;
        }
        (2..)
            .map(|n| format!("{base}-{n}"))
            .find(|id| !self.world.items.contains_key(id))
            .expect("unbounded suffixes")
    }

    /// Runs one step and returns its trace records.
    pub fn step(&mut self, backend: &dyn ChatBackend) -> Result<Vec<TraceRecord>, EngineError> {
        let step = self.world.clock.step;
        let active = self.active_agents();
        let time = self.world.clock.current_time();
        let snapshot = &self.world;
        let feed_size = self.config.feed_size;
        let templates = &self.templates;
        let agent_config = &self.agent_config;
        let annotator = self.annotator.as_ref();
        let mut states: Vec<&mut AgentState> = self
            .agents
            .values_mut()
            .filter(|s| active.contains(&s.profile.agent_id))
            .collect();

        let outcomes: Vec<Outcome> = self.pool.install(|| {
            states
                .par_iter_mut()
                .map(|state| {
                    let id = state.profile.agent_id.clone();
                    let since = state.last_step.unwrap_or(0);
                    let obs = Observation {
                        step,
                        time,
                        feed: build_feed(snapshot, &id, feed_size).expect("registered agent"),
                        notifications: collect_notifications(snapshot, &id, since).expect("registered agent"),
                    };
                    let decision = decide(state, &obs, snapshot, backend, templates, agent_config);
                    let labels = annotator.annotate(&id, step, &decision.action, backend);
                    Outcome {
                        agent_id: id,
                        decision,
                        labels,
                    }
                })
                .collect()
        });

        let failed = outcomes
            .iter()
            .filter(|o| o.decision.status.is_backend_failure())
            .count();
        let total = outcomes.len();
        if total > 0 && failed as f64 / total as f64 > self.config.failure_threshold {
            return Err(EngineError::SystemicFailure { step, failed, total });
        }

        let created_at = self.world.clock.time_at(step + 1);
        let mut records = Vec::with_capacity(total);
        for o in outcomes {
            let action = o.decision.action.clone();
            let (parent_id, retweet_of) = match &action {
                AgentAction::Reply { original_tweet_id, .. } => (Some(original_tweet_id.clone()), None),
                AgentAction::Retweet { original_tweet_id, .. } => (None, Some(original_tweet_id.clone())),
                _ => (None, None),
            };
            let mut item_id = None;
            match &action {
                AgentAction::Like { item_id: target } => {
                    if !self.world.has_like(&o.agent_id, target) {
                        self.world.likes.push(LikeRecord {
                            agent_id: o.agent_id.clone(),
                            item_id: target.clone(),
                            step,
                        });
                    }
                }
                a if a.creates_item() => {
                    let id = self.fresh_item_id(step, &o.agent_id);
                    self.world.items.insert(
                        id.clone(),
                        ContentItem {
                            item_id: id.clone(),
                            author_id: o.agent_id.clone(),
                            parent_id: parent_id.clone(),
                            text: a.content().expect("creates_item").to_string(),
                            timestamp: created_at,
                            step: Some(step),
                            labels: o.labels.clone(),
                            retweet_of,
                        },
                    );
                    item_id = Some(id);
                }
                _ => {}
            }
            self.world.event_log.push(LogEntry {
                step,
                agent_id: o.agent_id.clone(),
                action: action.clone(),
                parse_status: o.decision.status.clone(),
                item_id: item_id.clone(),
            });
            records.push(TraceRecord {
                step,
                agent_id: o.agent_id,
                sip: o.decision.analysis,
                action: render_action(&action),
                kind: action.kind(),
                item_id,
                parent_id,
                labels: o.labels,
                parse_status: o.decision.status,
            });
        }
        self.world.clock.tick();
        info!(step, agents = total, backend_failures = failed, "step complete");
        Ok(records)
    }

    /// Runs `steps` consecutive steps.
    pub fn run(&mut self, backend: &dyn ChatBackend, steps: u64) -> Result<SimulationTrace, EngineError> {
        if steps == 0 {
            return Err(EngineError::InvalidSteps);
        }
        let mut trace = SimulationTrace::default();
        for _ in 0..steps {
            trace.records.extend(self.step(backend)?);
        }
        Ok(trace)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::MockRecord;
    use crate::domain::AgentProfile;
    use crate::synth::{synth_event, SynthScript};
    use chrono::TimeZone;

    const ANALYSIS: &str = "[Cue] Enough.\n[Interpret] Calm.\n[Goal] Engage.\n[Retrieve] Reply.\n[Evaluate] Fine.";

    fn rec(agent: &str, step: Option<u64>, t: TemplateId, response: &str) -> MockRecord {
        MockRecord {
            agent_id: agent.into(),
            step,
            template_id: t,
            item_id: None,
            response: response.into(),
            labels: None,
        }
    }

    fn nothing() -> MockRecord {
        rec(
            "*",
            None,
            TemplateId::ActionSelect,
            "[OPTION 1] Thought: [Cue] quiet. Action: do_nothing()",
        )
    }

    fn corpus(users: &[&str], follows: &[(&str, &str)], seeds: usize) -> EventCorpus {
        let t0 = Utc.with_ymd_and_hms(2024, 5, 1, 0, 0, 0).unwrap();
        let items = (0..seeds)
            .map(|i| ContentItem {
                item_id: format!("seed{i}"),
                author_id: users[0].to_string(),
                parent_id: None,
                text: format!("Seed post {i}"),
                timestamp: t0 + chrono::Duration::minutes(i as i64),
                step: None,
                labels: None,
                retweet_of: None,
            })
            .collect();
        EventCorpus::new(
            "e",
            items,
            users.iter().map(|u| AgentProfile::new(*u, u.to_uppercase())).collect(),
            follows.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
        )
        .unwrap()
    }

    fn sim(c: &EventCorpus, config: EngineConfig) -> Simulation {
        let mut w = construct_environment(c, &config).unwrap();
        initialize(&mut w, &config).unwrap();
        Simulation::new(
            w,
            config,
            AgentConfig::default(),
            TemplateSet::defaults(),
            Box::new(NoAnnotator),
        )
        .unwrap()
    }

    #[test]
    fn construct_small_world() {
        let c = corpus(&["a", "b"], &[("a", "b")], 1);
        let w = construct_environment(&c, &EngineConfig::default()).unwrap();
        assert_eq!(w.items.len(), 1);
        assert_eq!(w.graph.edge_count(), 1);
        assert_eq!(w.clock.step, 0);
        assert_eq!(w.items["seed0"].step, Some(0));

        let empty = EventCorpus {
            event_id: "x".into(),
            items: vec![],
            users: vec![],
            follows: vec![],
        };
        assert!(matches!(
            construct_environment(&empty, &EngineConfig::default()),
            Err(EngineError::EmptyCorpus)
        ));
    }

    #[test]
    fn synthetic_degrees_preserved() {
        let c = synth_event(3, 100, 2, &SynthScript::random_activity(5, 0.2, 0.5)).unwrap();
        let w = construct_environment(&c, &EngineConfig::default()).unwrap();
        let mut expected: BTreeMap<String, (usize, usize)> =
            c.users.iter().map(|u| (u.agent_id.clone(), (0, 0))).collect();
        for (f, t) in &c.follows {
            expected.get_mut(f).unwrap().0 += 1;
            expected.get_mut(t).unwrap().1 += 1;
        }
        assert_eq!(w.graph.degrees(), expected);
    }

    #[test]
    fn initialization_precedence_and_determinism() {
        let c = corpus(&["a", "b", "c", "d"], &[], 0);
        let mut w = construct_environment(&c, &EngineConfig::default()).unwrap();
        w.graph.agent_mut("a").unwrap().initial_stance = Some(Stance::Oppose);
        let cfg = EngineConfig {
            stance_distribution: [(Stance::Support, 1.0)].into(),
            ..EngineConfig::default()
        };
        initialize(&mut w, &cfg).unwrap();
        let s: Vec<Stance> = w.graph.agents().map(|p| p.initial_stance.unwrap()).collect();
        assert_eq!(
            s,
            vec![Stance::Oppose, Stance::Support, Stance::Support, Stance::Support]
        );

        let cfg = EngineConfig {
            stance_distribution: [(Stance::Support, 0.5), (Stance::Oppose, 0.5)].into(),
            seed: 11,
            ..EngineConfig::default()
        };
        let assign = || {
            let mut w = construct_environment(&c, &EngineConfig::default()).unwrap();
            initialize(&mut w, &cfg).unwrap();
            w.graph.agents().map(|p| p.initial_stance.unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(assign(), assign());
    }

    #[test]
    fn feed_rules() {
        let c = corpus(&["a", "b", "v"], &[("v", "a")], 12);
        let w = construct_environment(&c, &EngineConfig::default()).unwrap();
        let feed = build_feed(&w, "v", 10).unwrap();
        assert_eq!(feed.len(), 10);
        assert_eq!(feed[0].item_id, "seed11");
        assert_eq!(feed[9].item_id, "seed2");
        assert!(build_feed(&w, "b", 10).unwrap().is_empty());
        assert!(matches!(build_feed(&w, "zz", 10), Err(EngineError::UnknownAgent(_))));
    }

    #[test]
    fn feed_tie_breaks_by_engagement_then_id() {
        let c = corpus(&["a", "v"], &[("v", "a")], 0);
        let mut w = construct_environment(&c, &EngineConfig::default()).unwrap();
        let t = w.clock.origin;
        for id in ["x", "y", "z"] {
            w.items.insert(
                id.into(),
                ContentItem {
                    item_id: id.into(),
                    author_id: "a".into(),
                    parent_id: None,
                    text: id.into(),
                    timestamp: t,
                    step: Some(0),
                    labels: None,
                    retweet_of: None,
                },
            );
        }
        w.likes.push(LikeRecord {
            agent_id: "v".into(),
            item_id: "z".into(),
            step: 0,
        });
        let ids: Vec<String> = build_feed(&w, "v", 10)
            .unwrap()
            .into_iter()
            .map(|i| i.item_id)
            .collect();
        assert_eq!(ids, vec!["z", "x", "y"]);
    }

    #[test]
    fn one_agent_do_nothing() {
        let c = corpus(&["a"], &[], 1);
        let mut s = sim(&c, EngineConfig::default());
        let backend = MockBackend::new(vec![rec("*", None, TemplateId::SipAnalysis, ANALYSIS), nothing()]);
        let items_before = s.world.items.clone();
        let recs = s.step(&backend).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].kind, ActionKind::Nothing);
        assert_eq!(s.world.items, items_before);
        assert_eq!(s.world.clock.step, 1);
        assert_eq!(s.world.event_log.len(), 1);
    }

    #[test]
    fn post_then_reply_with_notification() {
        let c = corpus(&["a", "b"], &[("b", "a")], 0);
        let mut s = sim(&c, EngineConfig::default());
        let backend =
            MockBackend::new(vec![
            rec("*", None, TemplateId::SipAnalysis, ANALYSIS),
            nothing(),
            rec("a", Some(0), TemplateId::ActionSelect, "[OPTION 2] Thought: [Goal]. Action: post(content=\"Hi all\")"),
            rec(
                "b",
                Some(1),
                TemplateId::ActionSelect,
                "[OPTION 4] Thought: [Goal]. Action: reply(content=\"Hi a\", author=\"a\", original_tweet_id=\"s0-a\")",
            ),
        ]);
        s.step(&backend).unwrap();
        assert_eq!(s.world.items.len(), 1);
        assert_eq!(s.world.items["s0-a"].author_id, "a");
        assert_eq!(build_feed(&s.world, "b", 10).unwrap()[0].item_id, "s0-a");
        s.step(&backend).unwrap();
        let reply = &s.world.items["s1-b"];
        assert_eq!(reply.parent_id.as_deref(), Some("s0-a"));
        assert!(reply.timestamp > s.world.items["s0-a"].timestamp);

        let notes = collect_notifications(&s.world, "a", 1).unwrap();
        assert_eq!(notes.len(), 1);
        assert_eq!(notes[0].kind, NotificationKind::Reply);
        assert!(collect_notifications(&s.world, "a", 2).unwrap().is_empty());
    }

    #[test]
    fn same_step_content_is_invisible() {
        // b tries to reply to a's post from the same step
        let c = corpus(&["a", "b"], &[("b", "a")], 0);
        let mut s = sim(&c, EngineConfig::default());
        let backend =
            MockBackend::new(vec![
            rec("*", None, TemplateId::SipAnalysis, ANALYSIS),
            rec("a", None, TemplateId::ActionSelect, "[OPTION 2] Thought: [Goal]. Action: post(content=\"Now\")"),
            rec(
                "b",
                None,
                TemplateId::ActionSelect,
                "[OPTION 4] Thought: [Goal]. Action: reply(content=\"Re\", author=\"a\", original_tweet_id=\"s0-a\")",
            ),
        ]);
        let recs = s.step(&backend).unwrap();
        assert!(matches!(recs[1].parse_status, ParseStatus::Rejected(_)));
        assert_eq!(s.world.items.len(), 1);
    }

    #[test]
    fn run_bounds_and_zero_steps() {
        let c = corpus(&["a", "b", "c"], &[("a", "b")], 1);
        let backend = MockBackend::new(vec![rec("*", None, TemplateId::SipAnalysis, ANALYSIS), nothing()]);
        let mut s = sim(&c, EngineConfig::default());
        assert!(matches!(s.run(&backend, 0), Err(EngineError::InvalidSteps)));
        let t = s.run(&backend, 7).unwrap();
        assert!(t.records.len() <= 21);
        assert_eq!(t.steps(), 7);
        let again = sim(&c, EngineConfig::default()).run(&backend, 7).unwrap();
        assert_eq!(t.to_jsonl(), again.to_jsonl());
        assert_eq!(SimulationTrace::parse_jsonl(&t.to_jsonl()).unwrap(), t);
    }

    #[test]
    fn systemic_failure_aborts() {
        let c = corpus(&["a", "b"], &[], 1);
        let mut s = sim(&c, EngineConfig::default());
        let backend = MockBackend::new(vec![]);
        assert!(matches!(
            s.step(&backend),
            Err(EngineError::SystemicFailure {
                failed: 2,
                total: 2,
                ..
            })
        ));
        assert_eq!(s.world.clock.step, 0);
    }

    #[test]
    fn likes_and_annotation() {
        let c = corpus(&["a", "b"], &[("b", "a")], 1);
        let mut s = sim(&c, EngineConfig::default());
        let labels = Labels {
            stance: Stance::Support,
            content_type: ContentTypeLabel("testimony".into()),
            emotion: EmotionLabel("positive".into()),
        };
        let mut script = vec![
            rec("*", None, TemplateId::SipAnalysis, ANALYSIS),
            nothing(),
            rec(
                "b",
                Some(0),
                TemplateId::ActionSelect,
                "[OPTION 1] Thought: [Cue]. Action: like(item_id=\"seed0\")",
            ),
        ];
        let mut post = rec(
            "a",
            Some(0),
            TemplateId::ActionSelect,
            "[OPTION 2] Thought: [Goal]. Action: post(content=\"x\")",
        );
        post.labels = Some(labels.clone());
        script.push(post);
        let backend = MockBackend::new(script);
        s.annotator = Box::new(ScriptedAnnotator::new(backend.clone()));
        let recs = s.step(&backend).unwrap();
        assert_eq!(recs[0].labels, Some(labels.clone()));
        assert_eq!(s.world.items["s0-a"].labels, Some(labels));
        assert_eq!(recs[1].labels, None);
        assert_eq!(s.world.likes.len(), 1);
        let n = collect_notifications(&s.world, "a", 0).unwrap();
        assert_eq!(n.len(), 1);
        assert_eq!(n[0].kind, NotificationKind::Like);
    }

    #[test]
    fn annotation_parsing() {
        let ct = LabelSet::default_content_types();
        let em = LabelSet::default_emotions();
        let l = parse_annotation("stance: Oppose\ncontent_type: testimony\nemotion: negative.", &ct, &em).unwrap();
        assert_eq!(l.stance, Stance::Oppose);
        assert!(parse_annotation("stance: angry\ncontent_type: testimony\nemotion: negative", &ct, &em).is_none());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let c = corpus(&["a", "b"], &[("b", "a")], 1);
        let mut s = sim(&c, EngineConfig::default());
        let backend = MockBackend::new(vec![rec("*", None, TemplateId::SipAnalysis, ANALYSIS), nothing()]);
        s.step(&backend).unwrap();
        let cp = s.checkpoint();
        let json = serde_json::to_string(&cp).unwrap();
        let back: Checkpoint = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cp);
    }
}
