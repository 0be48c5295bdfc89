//! Prompt templates with `{name}` placeholders, shipped as data files.
//!
//! Literal braces are written doubled (`{{`, `}}`). Every placeholder in a
//! template body must be declared in the manifest and vice versa.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::siptest::{QuestionnaireItem, Scenario};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("missing placeholder binding `{0}`")]
    MissingPlaceholder(String),
    #[error("binding `{0}` does not appear in the template")]
    UnknownPlaceholder(String),
    #[error("malformed template {template}: {message}")]
    MalformedTemplate { template: String, message: String },
    #[error("template manifest error: {0}")]
    Manifest(String),
    #[error("unknown template id `{0}`")]
    UnknownTemplate(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    SipAnalysis,
    ActionSelect,
    MicroReply,
    Questionnaire,
    Reflect,
    Annotate,
}

impl TemplateId {
    pub const ALL: [TemplateId; 6] = [
        TemplateId::SipAnalysis,
        TemplateId::ActionSelect,
        TemplateId::MicroReply,
        TemplateId::Questionnaire,
        TemplateId::Reflect,
        TemplateId::Annotate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::SipAnalysis => "sip_analysis",
            TemplateId::ActionSelect => "action_select",
            TemplateId::MicroReply => "micro_reply",
            TemplateId::Questionnaire => "questionnaire",
            TemplateId::Reflect => "reflect",
            TemplateId::Annotate => "annotate",
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateId {
    type Err = PromptError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TemplateId::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| PromptError::UnknownTemplate(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Placeholder(String),
}

fn is_name_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_name_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

fn tokenize(name: &str, body: &str) -> Result<Vec<Segment>, PromptError> {
    let malformed = |message: String| PromptError::MalformedTemplate {
        template: name.to_string(),
        message,
    };
    let mut segments = Vec::new();
    let mut literal = String::new();
    let mut chars = body.char_indices().peekable();
    while let Some((pos, c)) = chars.next() {
        match c {
            '{' => {
                if chars.peek().map(|&(_, n)| n) == Some('{') {
                    chars.next();
                    literal.push('{');
                    continue;
                }
                let mut ident = String::new();
                loop {
                    match chars.next() {
                        Some((_, '}')) => break,
                        Some((_, ch))
                            if (ident.is_empty() && is_name_start(ch)) || (!ident.is_empty() && is_name_char(ch)) =>
                        {
                            ident.push(ch)
                        }
                        _ => return Err(malformed(format!("invalid placeholder at byte {pos}"))),
                    }
                }
                if ident.is_empty() {
                    return Err(malformed(format!("empty placeholder at byte {pos}")));
                }
                if !literal.is_empty() {
                    segments.push(Segment::Literal(std::mem::take(&mut literal)));
                }
                segments.push(Segment::Placeholder(ident));
            }
            '}' => {
                if chars.peek().map(|&(_, n)| n) == Some('}') {
                    chars.next();
                    literal.push('}');
                } else {
                    return Err(malformed(format!("unmatched `}}` at byte {pos}")));
                }
            }
            _ => literal.push(c),
        }
    }
    if !literal.is_empty() {
        segments.push(Segment::Literal(literal));
    }
    Ok(segments)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    name: String,
    body: String,
    segments: Vec<Segment>,
    required: BTreeSet<String>,
}

impl PromptTemplate {
    /// Parses a body; placeholders found in it become the required set.
    pub fn parse(name: impl Into<String>, body: impl Into<String>) -> Result<Self, PromptError> {
        let name = name.into();
        let body = body.into();
        let segments = tokenize(&name, &body)?;
        let required = segments
            .iter()
            .filter_map(|s| match s {
                Segment::Placeholder(p) => Some(p.clone()),
                Segment::Literal(_) => None,
            })
            .collect();
        Ok(Self {
            name,
            body,
            segments,
            required,
        })
    }

    /// Parses a body and checks it against a declared placeholder set.
    pub fn with_declared(
        name: impl Into<String>,
        body: impl Into<String>,
        declared: &BTreeSet<String>,
    ) -> Result<Self, PromptError> {
        let t = Self::parse(name, body)?;
        if &t.required != declared {
            return Err(PromptError::Manifest(format!(
                "template `{}` uses {:?} but declares {:?}",
                t.name, t.required, declared
            )));
        }
        Ok(t)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    pub fn required_placeholders(&self) -> &BTreeSet<String> {
        &self.required
    }

    /// SHA-256 of the raw template body, hex encoded.
    pub fn body_hash(&self) -> String {
        hex::encode(Sha256::digest(self.body.as_bytes()))
    }

    /// Substitutes every placeholder. In strict mode a binding the template
    /// does not use is an error.
    pub fn render(&self, bundle: &ContextBundle, strict: bool) -> Result<String, PromptError> {
        if strict {
            if let Some(extra) = bundle.0.keys().find(|k| !self.required.contains(*k)) {
                return Err(PromptError::UnknownPlaceholder(extra.clone()));
            }
        }
        if let Some(missing) = self.required.iter().find(|r| !bundle.0.contains_key(*r)) {
            return Err(PromptError::MissingPlaceholder(missing.clone()));
        }
        let mut out = String::with_capacity(self.body.len());
        for seg in &self.segments {
            match seg {
                Segment::Literal(l) => out.push_str(l),
                Segment::Placeholder(p) => out.push_str(&bundle.0[p]),
            }
        }
        Ok(out)
    }
}

/// Named text values bound into a template.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextBundle(BTreeMap<String, String>);

impl ContextBundle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(mut self, name: impl Into<String>, value: impl Into<String>) -> Self {
        self.0.insert(name.into(), value.into());
        self
    }

    pub fn set(&mut self, name: impl Into<String>, value: impl Into<String>) {
        self.0.insert(name.into(), value.into());
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.0.get(name).map(String::as_str)
    }

    pub fn remove(&mut self, name: &str) -> Option<String> {
        self.0.remove(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.0.keys()
    }
}

#[derive(Debug, Deserialize)]
struct Manifest {
    #[allow(dead_code)]
    version: u32,
    templates: Vec<ManifestEntry>,
}

#[derive(Debug, Deserialize)]
struct ManifestEntry {
    template_id: String,
    file: String,
    placeholders: Vec<String>,
}

const DEFAULT_MANIFEST: &str = include_str!("../assets/templates/manifest.json");
const DEFAULT_FILES: &[(&str, &str)] = &[
    ("sip_analysis.txt", include_str!("../assets/templates/sip_analysis.txt")),
    (
        "action_select.txt",
        include_str!("../assets/templates/action_select.txt"),
    ),
    ("micro_reply.txt", include_str!("../assets/templates/micro_reply.txt")),
    (
        "questionnaire.txt",
        include_str!("../assets/templates/questionnaire.txt"),
    ),
    ("reflect.txt", include_str!("../assets/templates/reflect.txt")),
    ("annotate.txt", include_str!("../assets/templates/annotate.txt")),
];

/// All templates used by the agents, keyed by id.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: BTreeMap<TemplateId, PromptTemplate>,
}

impl TemplateSet {
    /// The templates bundled with the crate.
    pub fn defaults() -> Self {
        Self::from_manifest(DEFAULT_MANIFEST, |file| {
            DEFAULT_FILES
                .iter()
                .find(|(f, _)| *f == file)
                .map(|(_, body)| body.to_string())
                .ok_or_else(|| PromptError::Manifest(format!("bundled file `{file}` missing")))
        })
        .expect("bundled templates are valid")
    }

    /// Loads `manifest.json` and the template files it lists from a directory.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, PromptError> {
        let dir = dir.as_ref();
        let manifest = fs::read_to_string(dir.join("manifest.json"))
            .map_err(|e| PromptError::Manifest(format!("{}: {e}", dir.join("manifest.json").display())))?;
        Self::from_manifest(&manifest, |file| {
            fs::read_to_string(dir.join(file)).map_err(|e| PromptError::Manifest(format!("{file}: {e}")))
        })
    }

    fn from_manifest(
        manifest: &str,
        mut read: impl FnMut(&str) -> Result<String, PromptError>,
    ) -> Result<Self, PromptError> {
        let manifest: Manifest = serde_json::from_str(manifest).map_err(|e| PromptError::Manifest(e.to_string()))?;
        let mut templates = BTreeMap::new();
        for entry in manifest.templates {
            let id: TemplateId = entry.template_id.parse()?;
            let declared: BTreeSet<String> = entry.placeholders.into_iter().collect();
            let body = read(&entry.file)?;
            templates.insert(id, PromptTemplate::with_declared(id.as_str(), body, &declared)?);
        }
        for id in TemplateId::ALL {
            if !templates.contains_key(&id) {
                return Err(PromptError::Manifest(format!("template `{id}` not listed")));
            }
        }
        Ok(Self { templates })
    }

    pub fn get(&self, id: TemplateId) -> &PromptTemplate {
        &self.templates[&id]
    }

    pub fn render(&self, id: TemplateId, bundle: &ContextBundle) -> Result<String, PromptError> {
        self.get(id).render(bundle, true)
    }

    /// Template id to body hash, recorded in run manifests.
    pub fn hashes(&self) -> BTreeMap<String, String> {
        self.templates
            .iter()
            .map(|(id, t)| (id.as_str().to_string(), t.body_hash()))
            .collect()
    }
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::defaults()
    }
}

/// Item prompt with `{SITUATION}`/`{PERSON}` filled from the scenario, followed by the anchor line.
pub fn render_questionnaire(item: &QuestionnaireItem, scenario: &Scenario) -> Result<String, PromptError> {
    let template = PromptTemplate::parse(item.item_id.as_str(), item.prompt_template.as_str())?;
    let mut bundle = ContextBundle::new();
    for name in template.required_placeholders() {
        let value = match name.as_str() {
            "SITUATION" => scenario.situation_text.as_str(),
            "PERSON" => scenario.person_label.as_str(),
            other => return Err(PromptError::MissingPlaceholder(other.to_string())),
        };
        if value.trim().is_empty() {
            return Err(PromptError::MissingPlaceholder(name.clone()));
        }
        bundle.set(name.clone(), value);
    }
    let question = template.render(&bundle, true)?;
    Ok(format!("{question}\n{}", item.anchor_line()))
}
