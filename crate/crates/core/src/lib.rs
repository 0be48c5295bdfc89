//! Social agents that reason through social information processing stages
//! before acting, plus the simulation engine and evaluation metrics around them.

pub mod agent;
pub mod backend;
pub mod dataset;
pub mod domain;
pub mod engine;
pub mod eval;
pub mod memory;
pub mod metrics;
pub mod parser;
pub mod prompts;
pub mod replay;
pub mod siptest;
pub mod synth;

pub use agent::{decide, AgentConfig, AgentState, Decision, Observation, ParseStatus, QuestionnaireSettings};
pub use backend::{build_backend, BackendConfig, BackendError, BackendKind, ChatBackend, MockBackend, MockRecord};
pub use dataset::{load_event, DatasetError, EventCorpus, FieldPolicy};
pub use domain::{
    ActionKind, AgentAction, AgentId, AgentProfile, ContentItem, ContentTypeLabel, EmotionLabel, ItemId, LabelSet,
    Labels, SocialGraph, Stance,
};
pub use engine::{
    construct_environment, initialize, Annotator, EngineConfig, EngineError, Simulation, SimulationTrace, TraceRecord,
    WorldState,
};
pub use eval::{evaluate, EvalConfig, EvalError, EvalReport};
pub use memory::{MemoryConfig, SocialMemory};
pub use parser::{
    parse_action_call, parse_action_selection, parse_sip_analysis, render_action, ParseError, SipAnalysis,
};
pub use prompts::{TemplateId, TemplateSet};
pub use siptest::{Cohort, QuestionnairePack, ResponseRecord, ScenarioPack};
