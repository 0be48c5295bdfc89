//! Event corpora on disk (JSON lines), integrity checks and corpus statistics.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use chrono::{DateTime, Duration, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::domain::{
    depth_of, AgentId, AgentProfile, ContentItem, ContentTypeLabel, DomainError, EmotionLabel, ItemId, Labels, Stance,
};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("schema error at line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("corpus has no items")]
    EmptyCorpus,
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl From<DomainError> for DatasetError {
    fn from(e: DomainError) -> Self {
        DatasetError::Integrity(e.to_string())
    }
}

/// How unknown record fields are treated while loading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FieldPolicy {
    Strict,
    #[default]
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCorpus {
    pub event_id: String,
    /// Sorted by `(timestamp, item_id)`.
    pub items: Vec<ContentItem>,
    pub users: Vec<AgentProfile>,
    /// Sorted `(follower, followee)` pairs.
    pub follows: Vec<(AgentId, AgentId)>,
}

#[derive(Debug, Clone, Default)]
pub struct LoadOutcome {
    pub corpus: Option<EventCorpus>,
    pub warnings: Vec<String>,
}

impl EventCorpus {
    /// Validates integrity and puts items and edges in canonical order.
    pub fn new(
        event_id: impl Into<String>,
        mut items: Vec<ContentItem>,
        users: Vec<AgentProfile>,
        mut follows: Vec<(AgentId, AgentId)>,
    ) -> Result<Self, DatasetError> {
        items.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.item_id.cmp(&b.item_id)));
        follows.sort();
        follows.dedup();
        let corpus = Self {
            event_id: event_id.into(),
            items,
            users,
            follows,
        };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let mut user_ids = HashSet::new();
        for u in &self.users {
            if u.name.trim().is_empty() {
                return Err(DomainError::EmptyName(u.agent_id.clone()).into());
            }
            if !user_ids.insert(u.agent_id.as_str()) {
                return Err(DomainError::DuplicateAgent(u.agent_id.clone()).into());
            }
        }
        for (f, t) in &self.follows {
            if f == t {
                return Err(DomainError::SelfEdge(f.clone()).into());
            }
            for id in [f, t] {
                if !user_ids.contains(id.as_str()) {
                    return Err(DatasetError::Integrity(format!(
                        "follow edge references unknown user `{id}`"
                    )));
                }
            }
        }
        let index = self.index();
        if index.len() != self.items.len() {
            let mut seen = HashSet::new();
            let dup = self
                .items
                .iter()
                .find(|i| !seen.insert(i.item_id.as_str()))
                .map(|i| i.item_id.clone())
                .unwrap_or_default();
            return Err(DatasetError::Integrity(format!("duplicate item id `{dup}`")));
        }
        for item in &self.items {
            if !user_ids.contains(item.author_id.as_str()) {
                return Err(DatasetError::Integrity(format!(
                    "item `{}` has unknown author `{}`",
                    item.item_id, item.author_id
                )));
            }
            depth_of(item, &index)?;
        }
        Ok(())
    }

    pub fn index(&self) -> HashMap<ItemId, ContentItem> {
        self.items.iter().map(|i| (i.item_id.clone(), i.clone())).collect()
    }

    pub fn item(&self, id: &str) -> Option<&ContentItem> {
        self.items.iter().find(|i| i.item_id == id)
    }

    pub fn roots(&self) -> impl Iterator<Item = &ContentItem> {
        self.items.iter().filter(|i| i.is_root())
    }

    /// Roots without a step index: the pre-existing content a simulation starts from.
    pub fn seed_items(&self) -> impl Iterator<Item = &ContentItem> {
        self.items.iter().filter(|i| i.is_root() && i.step.is_none())
    }

    pub fn has_steps(&self) -> bool {
        self.items.iter().any(|i| i.step.is_some())
    }

    /// Depth for every item, keyed by id.
    pub fn depths(&self) -> Result<HashMap<ItemId, usize>, DatasetError> {
        let index = self.index();
        self.items
            .iter()
            .map(|i| Ok((i.item_id.clone(), depth_of(i, &index)?)))
            .collect()
    }

    /// JSON-lines serialization: user records first, then items.
    pub fn to_jsonl(&self) -> String {
        let mut followees: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for (f, t) in &self.follows {
            followees.entry(f.as_str()).or_default().push(t.as_str());
        }
        let mut out = String::new();
        for u in &self.users {
            let mut rec = Map::new();
            rec.insert("kind".into(), "user".into());
            rec.insert("user_id".into(), u.agent_id.clone().into());
            rec.insert("name".into(), u.name.clone().into());
            rec.insert("country".into(), u.country.clone().into());
            rec.insert("gender".into(), u.gender.clone().into());
            rec.insert("signature".into(), u.signature.clone().into());
            rec.insert(
                "followees".into(),
                followees
                    .get(u.agent_id.as_str())
                    .map(|v| v.iter().map(|s| Value::from(*s)).collect())
                    .unwrap_or_else(|| Value::Array(vec![])),
            );
            if let Some(s) = u.initial_stance {
                rec.insert("stance".into(), s.as_str().into());
            }
            if let Some(e) = &u.initial_emotion {
                rec.insert("emotion".into(), e.as_str().into());
            }
            out.push_str(&Value::Object(rec).to_string());
            out.push('\n');
        }
        for i in &self.items {
            let mut rec = Map::new();
            rec.insert("kind".into(), "item".into());
            rec.insert("item_id".into(), i.item_id.clone().into());
            rec.insert("author_id".into(), i.author_id.clone().into());
            rec.insert(
                "parent_id".into(),
                i.parent_id.clone().map(Value::from).unwrap_or(Value::Null),
            );
            rec.insert("timestamp".into(), format_timestamp(&i.timestamp).into());
            rec.insert("text".into(), i.text.clone().into());
            rec.insert(
                "labels".into(),
                match &i.labels {
                    Some(l) => serde_json::json!({
                        "stance": l.stance.as_str(),
                        "content_type": l.content_type.as_str(),
                        "emotion": l.emotion.as_str(),
                    }),
                    None => Value::Null,
                },
            );
            if let Some(step) = i.step {
                rec.insert("step".into(), step.into());
            }
            if let Some(rt) = &i.retweet_of {
                rec.insert("retweet_of".into(), rt.clone().into());
            }
            out.push_str(&Value::Object(rec).to_string());
            out.push('\n');
        }
        out
    }
}

pub fn format_timestamp(ts: &DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s).ok().map(|d| d.with_timezone(&Utc))
}

/// Reads and validates an event file. The event id is the file stem.
pub fn load_event(path: impl AsRef<Path>, policy: FieldPolicy) -> Result<(EventCorpus, Vec<String>), DatasetError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let event_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "event".into());
    parse_event(&event_id, &text, policy)
}

const USER_FIELDS: &[&str] = &[
    "kind",
    "user_id",
    "name",
    "country",
    "gender",
    "signature",
    "followees",
    "stance",
    "emotion",
];
const ITEM_FIELDS: &[&str] = &[
    "kind",
    "item_id",
    "author_id",
    "parent_id",
    "timestamp",
    "text",
    "labels",
    "step",
    "retweet_of",
];
const LABEL_FIELDS: &[&str] = &["stance", "content_type", "emotion"];

struct Record<'a> {
    line: usize,
    obj: &'a Map<String, Value>,
}

impl Record<'_> {
    fn err(&self, message: impl Into<String>) -> DatasetError {
        DatasetError::Schema {
            line: self.line,
            message: message.into(),
        }
    }

    fn req_str(&self, key: &str) -> Result<String, DatasetError> {
        match self.obj.get(key) {
            Some(Value::String(s)) => Ok(s.clone()),
            Some(_) => Err(self.err(format!("field `{key}` must be a string"))),
            None => Err(self.err(format!("missing field `{key}`"))),
        }
    }

    fn opt_str(&self, key: &str) -> Result<Option<String>, DatasetError> {
        match self.obj.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(self.err(format!("field `{key}` must be a string or null"))),
        }
    }

    fn check_unknown(
        &self,
        allowed: &[&str],
        obj: &Map<String, Value>,
        policy: FieldPolicy,
        warnings: &mut Vec<String>,
    ) -> Result<(), DatasetError> {
        for k in obj.keys() {
            if !allowed.contains(&k.as_str()) {
                match policy {
                    FieldPolicy::Strict => return Err(self.err(format!("unknown field `{k}`"))),
                    FieldPolicy::Lenient => {
                        let msg = format!("line {}: ignoring unknown field `{k}`", self.line);
                        tracing::warn!("{msg}");
                        warnings.push(msg);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Parses JSON-lines event text.
pub fn parse_event(
    event_id: &str,
    text: &str,
    policy: FieldPolicy,
) -> Result<(EventCorpus, Vec<String>), DatasetError> {
    let mut warnings = Vec::new();
    let mut users = Vec::new();
    let mut follows = Vec::new();
    let mut items = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(raw).map_err(|e| DatasetError::Schema {
            line,
            message: format!("invalid JSON: {e}"),
        })?;
        let Value::Object(obj) = &value else {
            return Err(DatasetError::Schema {
                line,
                message: "record must be a JSON object".into(),
            });
        };
        let rec = Record { line, obj };
        match rec.req_str("kind")?.as_str() {
            "user" => {
                rec.check_unknown(USER_FIELDS, obj, policy, &mut warnings)?;
                let user_id = rec.req_str("user_id")?;
                let mut profile = AgentProfile::new(user_id.clone(), rec.req_str("name")?);
                profile.country = rec.opt_str("country")?.unwrap_or_default();
                profile.gender = rec.opt_str("gender")?.unwrap_or_default();
                profile.signature = rec.opt_str("signature")?.unwrap_or_default();
                if let Some(s) = rec.opt_str("stance")? {
                    profile.initial_stance = Some(s.parse::<Stance>().map_err(|e| rec.err(e.to_string()))?);
                }
                profile.initial_emotion = rec.opt_str("emotion")?.map(EmotionLabel);
                match obj.get("followees") {
                    None | Some(Value::Null) => {}
                    Some(Value::Array(arr)) => {
                        for v in arr {
                            let Value::String(t) = v else {
                                return Err(rec.err("`followees` must be an array of strings"));
                            };
                            follows.push((user_id.clone(), t.clone()));
                        }
                    }
                    Some(_) => return Err(rec.err("`followees` must be an array of strings")),
                }
                users.push(profile);
            }
            "item" => {
                rec.check_unknown(ITEM_FIELDS, obj, policy, &mut warnings)?;
                let ts_raw = rec.req_str("timestamp")?;
                let timestamp = parse_timestamp(&ts_raw)
                    .ok_or_else(|| rec.err(format!("invalid ISO-8601 timestamp `{ts_raw}`")))?;
                let labels = match obj.get("labels") {
                    None | Some(Value::Null) => None,
                    Some(Value::Object(lobj)) => {
                        let lrec = Record { line, obj: lobj };
                        lrec.check_unknown(LABEL_FIELDS, lobj, policy, &mut warnings)?;
                        let stance = lrec
                            .req_str("stance")?
                            .parse::<Stance>()
                            .map_err(|e| lrec.err(e.to_string()))?;
                        Some(Labels {
                            stance,
                            content_type: ContentTypeLabel(lrec.req_str("content_type")?),
                            emotion: EmotionLabel(lrec.req_str("emotion")?),
                        })
                    }
                    Some(_) => return Err(rec.err("`labels` must be an object or null")),
                };
                let step = match obj.get("step") {
                    None | Some(Value::Null) => None,
                    Some(v) => Some(
                        v.as_u64()
                            .ok_or_else(|| rec.err("`step` must be a non-negative integer"))?,
                    ),
                };
                items.push(ContentItem {
                    item_id: rec.req_str("item_id")?,
                    author_id: rec.req_str("author_id")?,
                    parent_id: rec.opt_str("parent_id")?,
                    text: rec.req_str("text")?,
                    timestamp,
                    step,
                    labels,
                    retweet_of: rec.opt_str("retweet_of")?,
                });
            }
            other => return Err(rec.err(format!("unknown record kind `{other}`"))),
        }
    }

    let corpus = EventCorpus::new(event_id, items, users, follows)?;
    Ok((corpus, warnings))
}

/// Table-style statistics over a corpus. Comment statistics exclude roots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub first_comments: usize,
    pub nested_comments: usize,
    pub avg_depth: f64,
    pub avg_length: f64,
    pub total_users: usize,
    pub active_users: usize,
    pub avg_freq: f64,
    pub time_span_secs: i64,
    pub avg_span_secs: f64,
    /// False when the corpus has no parent-child pairs; `avg_span_secs` is then 0.
    pub avg_span_defined: bool,
}

impl CorpusStats {
    pub fn time_span(&self) -> Duration {
        Duration::seconds(self.time_span_secs)
    }
}

/// Minimum comment count for a user to count as active.
pub const ACTIVE_USER_MIN_COMMENTS: usize = 2;

pub fn compute_stats(corpus: &EventCorpus) -> Result<CorpusStats, DatasetError> {
    if corpus.items.is_empty() {
        return Err(DatasetError::EmptyCorpus);
    }
    let depths = corpus.depths()?;
    let index: HashMap<&str, &ContentItem> = corpus.items.iter().map(|i| (i.item_id.as_str(), i)).collect();

    let comments: Vec<&ContentItem> = corpus.items.iter().filter(|i| !i.is_root()).collect();
    let depth = |i: &ContentItem| depths[&i.item_id];
    let first_comments = comments.iter().filter(|i| depth(i) == 1).count();
    let nested_comments = comments.iter().filter(|i| depth(i) >= 2).count();
    let n = comments.len() as f64;
    let (avg_depth, avg_length) = if comments.is_empty() {
        (0.0, 0.0)
    } else {
        (
            comments.iter().map(|i| depth(i) as f64).sum::<f64>() / n,
            comments.iter().map(|i| i.text.chars().count() as f64).sum::<f64>() / n,
        )
    };

    let mut per_user: BTreeMap<&str, usize> = BTreeMap::new();
    for c in &comments {
        *per_user.entry(c.author_id.as_str()).or_default() += 1;
    }
    let active: Vec<usize> = per_user
        .values()
        .copied()
        .filter(|&c| c >= ACTIVE_USER_MIN_COMMENTS)
        .collect();
    let avg_freq = if active.is_empty() {
        0.0
    } else {
        active.iter().sum::<usize>() as f64 / active.len() as f64
    };

    let min_ts = corpus.items.iter().map(|i| i.timestamp).min().expect("non-empty");
    let max_ts = corpus.items.iter().map(|i| i.timestamp).max().expect("non-empty");

    let spans: Vec<i64> = comments
        .iter()
        .map(|c| {
            let parent = index[c.parent_id.as_deref().expect("comment has parent")];
            (c.timestamp - parent.timestamp).num_seconds()
        })
        .collect();
    let (avg_span_secs, avg_span_defined) = if spans.is_empty() {
        (0.0, false)
    } else {
        (spans.iter().sum::<i64>() as f64 / spans.len() as f64, true)
    };

    Ok(CorpusStats {
        first_comments,
        nested_comments,
        avg_depth,
        avg_length,
        total_users: corpus.users.len(),
        active_users: active.len(),
        avg_freq,
        time_span_secs: (max_ts - min_ts).num_seconds(),
        avg_span_secs,
        avg_span_defined,
    })
}
