//! Core vocabulary: agents, content, labels, actions and simulated time.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type AgentId = String;
pub type ItemId = String;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DomainError {
    #[error("item `{item}` references missing parent `{parent}`")]
    MissingParent { item: ItemId, parent: ItemId },
    #[error("parent chain of item `{0}` contains a cycle")]
    CycleDetected(ItemId),
    #[error("unknown item `{0}`")]
    UnknownItem(ItemId),
    #[error("unknown agent `{0}`")]
    UnknownAgent(AgentId),
    #[error("duplicate agent id `{0}`")]
    DuplicateAgent(AgentId),
    #[error("agent `{0}` has an empty name")]
    EmptyName(AgentId),
    #[error("self-follow edge on `{0}`")]
    SelfEdge(AgentId),
    #[error("invalid label set: {0}")]
    InvalidLabelSet(String),
    #[error("unknown stance `{0}`")]
    UnknownStance(String),
}

/// Expressed position toward the event topic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stance {
    Support,
    Neutral,
    Oppose,
}

impl Stance {
    pub const ALL: [Stance; 3] = [Stance::Support, Stance::Neutral, Stance::Oppose];

    pub fn as_str(self) -> &'static str {
        match self {
            Stance::Support => "support",
            Stance::Neutral => "neutral",
            Stance::Oppose => "oppose",
        }
    }
}

impl fmt::Display for Stance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stance {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "support" => Ok(Stance::Support),
            "neutral" => Ok(Stance::Neutral),
            "oppose" => Ok(Stance::Oppose),
            other => Err(DomainError::UnknownStance(other.to_string())),
        }
    }
}

/// Numeric attitude with a neutral baseline of zero.
pub fn attitude_of(stance: Stance) -> i8 {
    match stance {
        Stance::Support => 1,
        Stance::Neutral => 0,
        Stance::Oppose => -1,
    }
}

/// Content-type label drawn from a configurable taxonomy.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ContentTypeLabel(pub String);

/// Emotion label drawn from a configurable taxonomy.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmotionLabel(pub String);

impl ContentTypeLabel {
    pub fn new(s: impl Into<String>) -> Self {
        Self(s.into())
    }
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl EmotionLabel {
    pub fn new(s: impl Into<String>) -> Self {
        Self(s.into())
    }
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ContentTypeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub const OTHER_CONTENT_TYPE: &str = "other";

/// Ordered, duplicate-free set of label names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct LabelSet(Vec<String>);

impl LabelSet {
    pub fn new(labels: Vec<String>) -> Result<Self, DomainError> {
        if labels.is_empty() {
            return Err(DomainError::InvalidLabelSet("label set is empty".into()));
        }
        let mut seen = HashSet::new();
        for l in &labels {
            if l.trim().is_empty() {
                return Err(DomainError::InvalidLabelSet("blank label".into()));
            }
            if !seen.insert(l.as_str()) {
                return Err(DomainError::InvalidLabelSet(format!("duplicate label `{l}`")));
            }
        }
        Ok(Self(labels))
    }

    /// Content-type taxonomies must keep the `other` fallback.
    pub fn content_types(labels: Vec<String>) -> Result<Self, DomainError> {
        let set = Self::new(labels)?;
        if !set.contains(OTHER_CONTENT_TYPE) {
            return Err(DomainError::InvalidLabelSet(format!(
                "content-type labels must include `{OTHER_CONTENT_TYPE}`"
            )));
        }
        Ok(set)
    }

    pub fn default_content_types() -> Self {
        Self(
            ["call_for_action", "sharing_of_opinion", "testimony", OTHER_CONTENT_TYPE]
                .map(String::from)
                .to_vec(),
        )
    }

    pub fn default_emotions() -> Self {
        Self(["positive", "neutral", "negative"].map(String::from).to_vec())
    }

    pub fn stances() -> Self {
        Self(Stance::ALL.iter().map(|s| s.as_str().to_string()).collect())
    }

    pub fn contains(&self, label: &str) -> bool {
        self.0.iter().any(|l| l == label)
    }

    pub fn labels(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<String>> for LabelSet {
    type Error = DomainError;
    fn try_from(v: Vec<String>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<LabelSet> for Vec<String> {
    fn from(s: LabelSet) -> Self {
        s.0
    }
}

/// Ground-truth or annotated labels carried by a content item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Labels {
    pub stance: Stance,
    pub content_type: ContentTypeLabel,
    pub emotion: EmotionLabel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub agent_id: AgentId,
    pub name: String,
    #[serde(default)]
    pub country: String,
    #[serde(default)]
    pub gender: String,
    #[serde(default)]
    pub signature: String,
    #[serde(default)]
    pub initial_stance: Option<Stance>,
    #[serde(default)]
    pub initial_emotion: Option<EmotionLabel>,
}

impl AgentProfile {
    pub fn new(agent_id: impl Into<String>, name: impl Into<String>) -> Self {
        Self {
            agent_id: agent_id.into(),
            name: name.into(),
            country: String::new(),
            gender: String::new(),
            signature: String::new(),
            initial_stance: None,
            initial_emotion: None,
        }
    }

    /// One-paragraph role description used in prompts.
    pub fn role_description(&self) -> String {
        let mut parts = vec![format!("You are {}", self.name)];
        if !self.country.is_empty() {
            parts.push(format!("from {}", self.country));
        }
        let mut out = parts.join(" ");
        if !self.gender.is_empty() {
            out.push_str(&format!(", gender {}", self.gender));
        }
        out.push('.');
        if !self.signature.is_empty() {
            out.push_str(&format!(" Signature: \"{}\".", self.signature));
        }
        if let Some(s) = self.initial_stance {
            out.push_str(&format!(" Your initial stance on the event: {s}."));
        }
        if let Some(e) = &self.initial_emotion {
            out.push_str(&format!(" Your current mood: {e}."));
        }
        out
    }
}

/// Agents plus directed follow edges `(follower, followee)`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SocialGraph {
    agents: BTreeMap<AgentId, AgentProfile>,
    follows: BTreeSet<(AgentId, AgentId)>,
}

impl SocialGraph {
    pub fn new(
        agents: impl IntoIterator<Item = AgentProfile>,
        follows: impl IntoIterator<Item = (AgentId, AgentId)>,
    ) -> Result<Self, DomainError> {
        let mut graph = SocialGraph::default();
        for a in agents {
            graph.add_agent(a)?;
        }
        for (f, t) in follows {
            graph.add_follow(f, t)?;
        }
        Ok(graph)
    }

    pub fn add_agent(&mut self, profile: AgentProfile) -> Result<(), DomainError> {
        if profile.name.trim().is_empty() {
            return Err(DomainError::EmptyName(profile.agent_id));
        }
        if self.agents.contains_key(&profile.agent_id) {
            return Err(DomainError::DuplicateAgent(profile.agent_id));
        }
        self.agents.insert(profile.agent_id.clone(), profile);
        Ok(())
    }

    pub fn add_follow(&mut self, follower: AgentId, followee: AgentId) -> Result<(), DomainError> {
        if follower == followee {
            return Err(DomainError::SelfEdge(follower));
        }
        for id in [&follower, &followee] {
            if !self.agents.contains_key(id) {
                return Err(DomainError::UnknownAgent(id.clone()));
            }
        }
        self.follows.insert((follower, followee));
        Ok(())
    }

    pub fn agent(&self, id: &str) -> Option<&AgentProfile> {
        self.agents.get(id)
    }

    pub fn agent_mut(&mut self, id: &str) -> Option<&mut AgentProfile> {
        self.agents.get_mut(id)
    }

    /// Agents in ascending id order.
    pub fn agents(&self) -> impl Iterator<Item = &AgentProfile> {
        self.agents.values()
    }

    pub fn agents_mut(&mut self) -> impl Iterator<Item = &mut AgentProfile> {
        self.agents.values_mut()
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn edges(&self) -> impl Iterator<Item = &(AgentId, AgentId)> {
        self.follows.iter()
    }

    pub fn edge_count(&self) -> usize {
        self.follows.len()
    }

    pub fn follows(&self, follower: &str, followee: &str) -> bool {
        self.follows.contains(&(follower.to_string(), followee.to_string()))
    }

    pub fn followees<'a>(&'a self, follower: &'a str) -> impl Iterator<Item = &'a AgentId> + 'a {
        self.follows.iter().filter(move |(f, _)| f == follower).map(|(_, t)| t)
    }

    /// `(out_degree, in_degree)` per agent.
    pub fn degrees(&self) -> BTreeMap<AgentId, (usize, usize)> {
        let mut out: BTreeMap<AgentId, (usize, usize)> = self.agents.keys().map(|k| (k.clone(), (0, 0))).collect();
        for (f, t) in &self.follows {
            out.get_mut(f).expect("edge endpoint").0 += 1;
            out.get_mut(t).expect("edge endpoint").1 += 1;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContentItem {
    pub item_id: ItemId,
    pub author_id: AgentId,
    #[serde(default)]
    pub parent_id: Option<ItemId>,
    pub text: String,
    pub timestamp: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<u64>,
    #[serde(default)]
    pub labels: Option<Labels>,
    /// Set on items created by a retweet action.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retweet_of: Option<ItemId>,
}

impl ContentItem {
    pub fn is_root(&self) -> bool {
        self.parent_id.is_none()
    }
}

/// Anything that can look items up by id.
pub trait ContentStore {
    fn get_item(&self, id: &str) -> Option<&ContentItem>;
}

impl ContentStore for BTreeMap<ItemId, ContentItem> {
    fn get_item(&self, id: &str) -> Option<&ContentItem> {
        self.get(id)
    }
}

impl ContentStore for std::collections::HashMap<ItemId, ContentItem> {
    fn get_item(&self, id: &str) -> Option<&ContentItem> {
        self.get(id)
    }
}

/// Thread depth: 0 for roots, parent depth + 1 otherwise.
pub fn depth_of<S: ContentStore + ?Sized>(item: &ContentItem, corpus: &S) -> Result<usize, DomainError> {
    let mut depth = 0usize;
    let mut seen: HashSet<&str> = HashSet::new();
    seen.insert(item.item_id.as_str());
    let mut current = item;
    while let Some(parent_id) = current.parent_id.as_deref() {
        let parent = corpus.get_item(parent_id).ok_or_else(|| DomainError::MissingParent {
            item: current.item_id.clone(),
            parent: parent_id.to_string(),
        })?;
        if !seen.insert(parent.item_id.as_str()) {
            return Err(DomainError::CycleDetected(item.item_id.clone()));
        }
        depth += 1;
        current = parent;
    }
    Ok(depth)
}

/// The single world action an agent chooses in a step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgentAction {
    DoNothing,
    Post {
        content: String,
    },
    Retweet {
        content: String,
        author: String,
        original_tweet_id: String,
        original_tweet: String,
    },
    Reply {
        content: String,
        author: String,
        original_tweet_id: String,
    },
    Like {
        item_id: String,
    },
}

impl AgentAction {
    pub fn kind(&self) -> ActionKind {
        match self {
            AgentAction::DoNothing => ActionKind::Nothing,
            AgentAction::Post { .. } => ActionKind::Post,
            AgentAction::Retweet { .. } => ActionKind::Retweet,
            AgentAction::Reply { .. } => ActionKind::Reply,
            AgentAction::Like { .. } => ActionKind::Like,
        }
    }

    /// Text content for actions that create an item.
    pub fn content(&self) -> Option<&str> {
        match self {
            AgentAction::Post { content }
            | AgentAction::Retweet { content, .. }
            | AgentAction::Reply { content, .. } => Some(content),
            _ => None,
        }
    }

    pub fn creates_item(&self) -> bool {
        self.content().is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionKind {
    Post,
    Reply,
    Retweet,
    Like,
    Nothing,
}

impl ActionKind {
    pub const ALL: [ActionKind; 5] = [
        ActionKind::Post,
        ActionKind::Reply,
        ActionKind::Retweet,
        ActionKind::Like,
        ActionKind::Nothing,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ActionKind::Post => "post",
            ActionKind::Reply => "reply",
            ActionKind::Retweet => "retweet",
            ActionKind::Like => "like",
            ActionKind::Nothing => "nothing",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NotificationKind {
    Reply,
    Retweet,
    Like,
}

/// Something another agent did to one of the viewer's items.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Notification {
    pub kind: NotificationKind,
    pub actor_id: AgentId,
    /// The viewer's item that was replied to, retweeted or liked.
    pub target_item_id: ItemId,
    /// The reply or retweet item; absent for likes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item_id: Option<ItemId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimulationClock {
    pub step: u64,
    /// Seconds of simulated wall time per step.
    pub seconds_per_step: i64,
    pub origin: DateTime<Utc>,
}

impl SimulationClock {
    pub fn new(origin: DateTime<Utc>, seconds_per_step: i64) -> Self {
        Self {
            step: 0,
            seconds_per_step,
            origin,
        }
    }

    pub fn time_at(&self, step: u64) -> DateTime<Utc> {
        self.origin + Duration::seconds(self.seconds_per_step * step as i64)
    }

    pub fn current_time(&self) -> DateTime<Utc> {
        self.time_at(self.step)
    }

    pub fn tick(&mut self) {
        self.step += 1;
    }
}
