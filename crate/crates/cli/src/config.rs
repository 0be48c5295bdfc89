//! Run configuration files (TOML or JSON) and run manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sipsim_core::{
    AgentConfig, BackendConfig, BackendKind, Cohort, EngineConfig, EvalConfig, LabelSet, QuestionnairePack,
    QuestionnaireSettings, ScenarioPack, TemplateSet,
};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AnnotatorKind {
    /// Scripted labels with the mock backend, the LLM annotator otherwise.
    #[default]
    Auto,
    Scripted,
    Llm,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelConfig {
    #[serde(default = "LabelSet::default_content_types")]
    pub content_types: LabelSet,
    #[serde(default = "LabelSet::default_emotions")]
    pub emotions: LabelSet,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self {
            content_types: LabelSet::default_content_types(),
            emotions: LabelSet::default_emotions(),
        }
    }
}

fn default_respondents() -> usize {
    2
}
fn default_cohorts() -> Vec<Cohort> {
    vec![Cohort::AgentBaseline, Cohort::AgentSip]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuestionnaireConfig {
    #[serde(default)]
    pub pack: QuestionnairePack,
    #[serde(default)]
    pub scenarios: ScenarioPack,
    /// Number of agent respondents per cohort.
    #[serde(default = "default_respondents")]
    pub respondents: usize,
    #[serde(default = "default_cohorts")]
    pub cohorts: Vec<Cohort>,
    /// CSV of human responses to include in the comparison.
    #[serde(default)]
    pub human_responses: Option<PathBuf>,
    #[serde(default)]
    pub settings: QuestionnaireSettings,
}

impl Default for QuestionnaireConfig {
    fn default() -> Self {
        Self {
            pack: QuestionnairePack::default(),
            scenarios: ScenarioPack::default(),
            respondents: default_respondents(),
            cohorts: default_cohorts(),
            human_responses: None,
            settings: QuestionnaireSettings::default(),
        }
    }
}

fn default_steps() -> u64 {
    7
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub event_path: Option<PathBuf>,
    #[serde(default = "default_steps")]
    pub steps: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Directory with a template `manifest.json`; built-in templates otherwise.
    #[serde(default)]
    pub templates_dir: Option<PathBuf>,
    /// Write a checkpoint every this many steps; 0 writes only the final one.
    #[serde(default)]
    pub checkpoint_every: u64,
    #[serde(default)]
    pub annotator: AnnotatorKind,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default)]
    pub simulation: EngineConfig,
    #[serde(default)]
    pub agent: AgentConfig,
    #[serde(default)]
    pub labels: LabelConfig,
    #[serde(default)]
    pub questionnaire: QuestionnaireConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            event_path: None,
            steps: default_steps(),
            output_dir: None,
            templates_dir: None,
            checkpoint_every: 0,
            annotator: AnnotatorKind::Auto,
            backend: BackendConfig::default(),
            simulation: EngineConfig::default(),
            agent: AgentConfig::default(),
            labels: LabelConfig::default(),
            questionnaire: QuestionnaireConfig::default(),
        }
    }
}

/// Settings for one run, written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config: RunConfig,
    pub template_hashes: BTreeMap<String, String>,
    /// SHA-256 of each output file, keyed by file name.
    #[serde(default)]
    pub outputs: BTreeMap<String, String>,
}

fn absolutize(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl RunConfig {
    /// Parses TOML, or JSON when the file name ends in `.json`. A run manifest
    /// is accepted too, in which case its recorded config is used.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let mut cfg = if is_json {
            let value: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            if value.get("template_hashes").is_some() {
                let manifest: RunManifest =
                    serde_json::from_value(value).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                let cfg = manifest.config;
                let hashes = cfg.templates()?.hashes();
                if hashes != manifest.template_hashes {
                    return Err(CliError::Config(format!(
                        "{}: prompt templates differ from the ones recorded in the manifest",
                        path.display()
                    )));
                }
                return Ok(cfg);
            }
            serde_json::from_value(value).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        } else {
            Self::from_toml(&text).map_err(|e| match e {
                CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
                other => other,
            })?
        };
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.resolve_paths(&base);
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))
    }

    /// Makes relative paths relative to `base` so the config can be replayed from anywhere.
    pub fn resolve_paths(&mut self, base: &Path) {
        absolutize(base, &mut self.event_path);
        absolutize(base, &mut self.output_dir);
        absolutize(base, &mut self.templates_dir);
        absolutize(base, &mut self.backend.script);
        absolutize(base, &mut self.questionnaire.human_responses);
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.steps == 0 {
            return bad("steps must be at least 1".into());
        }
        if !(0.0..=2.0).contains(&self.agent.temperature) {
            return bad("agent.temperature must be in [0, 2]".into());
        }
        if self.questionnaire.respondents == 0 {
            return bad("questionnaire.respondents must be at least 1".into());
        }
        if self.annotator == AnnotatorKind::Scripted && self.backend.kind != BackendKind::Mock {
            return bad("annotator = \"scripted\" needs the mock backend".into());
        }
        self.backend.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.simulation
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.agent.memory.validate().map_err(CliError::Config)?;
        Ok(())
    }

    pub fn templates(&self) -> Result<TemplateSet, CliError> {
        match &self.templates_dir {
            Some(dir) => TemplateSet::load_dir(dir).map_err(|e| CliError::Config(e.to_string())),
            None => Ok(TemplateSet::defaults()),
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            content_types: self.labels.content_types.clone(),
            emotions: self.labels.emotions.clone(),
            steps: None,
        }
    }

    pub fn manifest(&self, command: &str, outputs: BTreeMap<String, String>) -> Result<RunManifest, CliError> {
        Ok(RunManifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed: self.simulation.seed,
            config: self.clone(),
            template_hashes: self.templates()?.hashes(),
            outputs,
        })
    }
}
