//! The per-agent decision pipeline and questionnaire answering.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, warn};

use crate::backend::{BackendError, ChatBackend, ChatMessage, ChatRequest, RequestTag};
use crate::dataset::format_timestamp;
use crate::domain::{AgentAction, AgentId, AgentProfile, ContentItem, ContentStore, Notification};
use crate::memory::{ground_notification, MemoryConfig, SocialMemory, StoreKind};
use crate::parser::{
    parse_action_selection, parse_likert, parse_sip_analysis, ActionSelection, ParseError, SipAnalysis, TagDialect,
};
use crate::prompts::{render_questionnaire, ContextBundle, PromptError, TemplateId, TemplateSet};
use crate::siptest::{QuestionnaireItem, Scenario};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("invalid response ({error}): {raw:?}")]
    InvalidResponse { raw: String, error: ParseError },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

fn default_model() -> String {
    "gpt-4o-mini".to_string()
}
fn default_temperature() -> f64 {
    0.7
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Run the memory reflection call before each analysis.
    #[serde(default)]
    pub reasoning: bool,
    #[serde(default)]
    pub trigger_news: String,
    #[serde(default)]
    pub memory: MemoryConfig,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            model: default_model(),
            temperature: default_temperature(),
            seed: None,
            reasoning: false,
            trigger_news: String::new(),
            memory: MemoryConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub profile: AgentProfile,
    pub memory: SocialMemory,
    /// Step of the agent's previous decision.
    pub last_step: Option<u64>,
}

impl AgentState {
    pub fn new(profile: AgentProfile, memory: MemoryConfig) -> Self {
        let memory = SocialMemory::seeded(&profile, memory);
        Self {
            profile,
            memory,
            last_step: None,
        }
    }
}

/// What an agent sees when it decides.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub step: u64,
    pub time: DateTime<Utc>,
    /// Ranked newest first.
    pub feed: Vec<ContentItem>,
    pub notifications: Vec<Notification>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "detail", rename_all = "snake_case")]
pub enum ParseStatus {
    Ok,
    AnalysisParseFailure(String),
    ActionParseFailure(String),
    BackendFailure(String),
    /// The action parsed but referenced content the agent could not see.
    Rejected(String),
}

impl ParseStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, ParseStatus::Ok)
    }

    pub fn is_backend_failure(&self) -> bool {
        matches!(self, ParseStatus::BackendFailure(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub analysis: Option<SipAnalysis>,
    pub selection: Option<ActionSelection>,
    /// The action to apply; `DoNothing` whenever the pipeline failed.
    pub action: AgentAction,
    pub status: ParseStatus,
    pub backend_calls: u32,
}

/// Feed lines with item ids so the agent can target them.
pub fn render_feed(feed: &[ContentItem]) -> String {
    feed.iter()
        .map(|i| {
            let text = i.text.split_whitespace().collect::<Vec<_>>().join(" ");
            match &i.parent_id {
                Some(p) => format!("[id {}] {} (reply to {}): {}", i.item_id, i.author_id, p, text),
                None => format!("[id {}] {}: {}", i.item_id, i.author_id, text),
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn tag(agent: &AgentId, step: u64, template_id: TemplateId) -> RequestTag {
    RequestTag {
        agent_id: agent.clone(),
        step: Some(step),
        template_id,
        item_id: None,
    }
}

/// Item an action refers to, if any.
fn target_of(action: &AgentAction) -> Option<&str> {
    match action {
        AgentAction::Reply { original_tweet_id, .. } | AgentAction::Retweet { original_tweet_id, .. } => {
            Some(original_tweet_id)
        }
        AgentAction::Like { item_id } => Some(item_id),
        _ => None,
    }
}

/// Observe, analyse, select an action and learn from it.
///
/// `snapshot` is the world as frozen at the start of the step; actions that
/// target items outside it are rejected.
pub fn decide(
    state: &mut AgentState,
    obs: &Observation,
    snapshot: &dyn ContentStore,
    backend: &dyn ChatBackend,
    templates: &TemplateSet,
    config: &AgentConfig,
) -> Decision {
    let agent_id = state.profile.agent_id.clone();
    let step = obs.step;
    state.last_step = Some(step);
    let mut calls = 0u32;
    let fail = |status: ParseStatus, analysis: Option<SipAnalysis>, calls: u32| Decision {
        analysis,
        selection: None,
        action: AgentAction::DoNothing,
        status,
        backend_calls: calls,
    };

    state.memory.ground(&obs.notifications, &obs.feed, step);
    let query = match obs.feed.first() {
        Some(latest) => format!("{} {}", config.trigger_news, latest.text),
        None => config.trigger_news.clone(),
    };
    let k = config.memory.k;
    let mut personal = Vec::new();
    for store in [StoreKind::Cognitive, StoreKind::Behavior] {
        match state.memory.retrieve(&query, store, k, step) {
            Ok(hits) => personal.extend(hits.into_iter().map(|h| h.text)),
            Err(e) => warn!(agent = %agent_id, error = %e, "retrieval failed"),
        }
    }
    if config.reasoning && !state.memory.buffer.is_empty() {
        calls += 1;
        if let Err(e) = state.memory.reason(
            backend,
            templates,
            &state.profile,
            &config.model,
            config.temperature,
            step,
        ) {
            warn!(agent = %agent_id, error = %e, "reflection failed");
        }
    }

    let info_box = obs
        .notifications
        .iter()
        .map(ground_notification)
        .collect::<Vec<_>>()
        .join("\n");
    let bundle = ContextBundle::new()
        .bind("agent_name", state.profile.name.as_str())
        .bind("current_time", format_timestamp(&obs.time))
        .bind("role_description", state.profile.role_description())
        .bind("trigger_news", config.trigger_news.as_str())
        .bind("personal_history", personal.join("\n"))
        .bind(
            "chat_history",
            state.memory.buffer.render(&[
                crate::memory::BufferSource::Grounded,
                crate::memory::BufferSource::Reasoned,
            ]),
        )
        .bind("reddit_feed", render_feed(&obs.feed))
        .bind("info_box", info_box);
    let sip_prompt = match templates.render(TemplateId::SipAnalysis, &bundle) {
        Ok(p) => p,
        Err(e) => return fail(ParseStatus::AnalysisParseFailure(e.to_string()), None, calls),
    };

    calls += 1;
    let request = ChatRequest::new(
        &config.model,
        vec![ChatMessage::user(sip_prompt.clone())],
        config.temperature,
    )
    .with_seed(config.seed)
    .tagged(tag(&agent_id, step, TemplateId::SipAnalysis));
    let raw_analysis = match backend.complete(&request) {
        Ok(r) => r,
        Err(e) => {
            warn!(agent = %agent_id, step, error = %e, "backend failure during analysis");
            return fail(ParseStatus::BackendFailure(e.to_string()), None, calls);
        }
    };
    let analysis = match parse_sip_analysis(&raw_analysis, TagDialect::SipTags) {
        Ok(a) => a,
        Err(e) => {
            warn!(agent = %agent_id, step, error = %e, "unparseable analysis");
            return fail(ParseStatus::AnalysisParseFailure(e.to_string()), None, calls);
        }
    };

    let action_prompt = match templates.render(
        TemplateId::ActionSelect,
        &ContextBundle::new().bind("sip_analysis", raw_analysis.trim()),
    ) {
        Ok(p) => p,
        Err(e) => return fail(ParseStatus::ActionParseFailure(e.to_string()), Some(analysis), calls),
    };
    calls += 1;
    let request = ChatRequest::new(
        &config.model,
        vec![
            ChatMessage::user(sip_prompt),
            ChatMessage::assistant(raw_analysis.trim()),
            ChatMessage::user(action_prompt),
        ],
        config.temperature,
    )
    .with_seed(config.seed)
    .tagged(tag(&agent_id, step, TemplateId::ActionSelect));
    let raw_action = match backend.complete(&request) {
        Ok(r) => r,
        Err(e) => {
            warn!(agent = %agent_id, step, error = %e, "backend failure during action selection");
            return fail(ParseStatus::BackendFailure(e.to_string()), Some(analysis), calls);
        }
    };
    let selection = match parse_action_selection(&raw_action) {
        Ok(s) => s,
        Err(e) => {
            warn!(agent = %agent_id, step, error = %e, "unparseable action");
            return fail(ParseStatus::ActionParseFailure(e.to_string()), Some(analysis), calls);
        }
    };
    for w in selection.warnings.iter().chain(&analysis.warnings) {
        debug!(agent = %agent_id, step, warning = %w);
    }

    let (action, status) = match target_of(&selection.action) {
        Some(target) if snapshot.get_item(target).is_none() => {
            warn!(agent = %agent_id, step, target, "action targets unknown item");
            (
                AgentAction::DoNothing,
                ParseStatus::Rejected(format!("unknown target item `{target}`")),
            )
        }
        _ => (selection.action.clone(), ParseStatus::Ok),
    };
    let counterpart = target_of(&action)
        .and_then(|t| snapshot.get_item(t))
        .map(|i| i.author_id.clone());
    let outcome = match &status {
        ParseStatus::Ok => format!("selected option {}", selection.option_number),
        other => format!(
            "selected option {} but it was rejected: {other:?}",
            selection.option_number
        ),
    };
    state.memory.learn(&analysis, &action, outcome, counterpart, step);

    Decision {
        analysis: Some(analysis),
        selection: Some(selection),
        action,
        status,
        backend_calls: calls,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuestionnaireSettings {
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl Default for QuestionnaireSettings {
    fn default() -> Self {
        Self {
            model: default_model(),
            temperature: 0.0,
            seed: None,
        }
    }
}

/// Asks one questionnaire item about one scenario and parses the 1-5 rating.
pub fn answer_questionnaire(
    profile: &AgentProfile,
    framing: Option<&str>,
    scenario: &Scenario,
    item: &QuestionnaireItem,
    backend: &dyn ChatBackend,
    templates: &TemplateSet,
    settings: &QuestionnaireSettings,
) -> Result<u8, AgentError> {
    let question = render_questionnaire(item, scenario)?;
    let mut role = profile.role_description();
    if let Some(f) = framing {
        role.push(' ');
        role.push_str(f);
    }
    let prompt = templates.render(
        TemplateId::Questionnaire,
        &ContextBundle::new()
            .bind("agent_name", profile.name.as_str())
            .bind("role_description", role)
            .bind("story_title", scenario.title.as_str())
            .bind("story", scenario.situation_text.as_str())
            .bind("question", question),
    )?;
    let request = ChatRequest::new(&settings.model, vec![ChatMessage::user(prompt)], settings.temperature)
        .with_seed(settings.seed)
        .tagged(RequestTag {
            agent_id: profile.agent_id.clone(),
            step: None,
            template_id: TemplateId::Questionnaire,
            item_id: Some(item.item_id.clone()),
        });
    let raw = backend.complete(&request)?;
    parse_likert(&raw).map_err(|error| AgentError::InvalidResponse { raw, error })
}
