//! Prompt templates: plain text with `{name}` placeholders. A line holding
//! only `---` separates the system message from the user message.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::provider::ChatMessage;

const SEPARATOR: &str = "---";

/// Built-in templates and the placeholders each may use.
const BUILTIN: &[(&str, &str, &[&str])] = &[
    ("initial_doctor", include_str!("../../templates/initial_doctor.txt"), &["caption", "clinical_data"]),
    (
        "query_generator",
        include_str!("../../templates/query_generator.txt"),
        &["caption", "clinical_data", "candidates", "n"],
    ),
    ("answer_generator", include_str!("../../templates/answer_generator.txt"), &["question", "chunks"]),
    (
        "final_doctor",
        include_str!("../../templates/final_doctor.txt"),
        &["caption", "clinical_data", "candidates", "evidence"],
    ),
    ("single_doctor", include_str!("../../templates/single_doctor.txt"), &["caption", "clinical_data"]),
    (
        "collaborator",
        include_str!("../../templates/collaborator.txt"),
        &["agent", "n_agents", "caption", "clinical_data"],
    ),
    (
        "collaborator_discuss",
        include_str!("../../templates/collaborator_discuss.txt"),
        &["agent", "n_agents", "caption", "clinical_data", "round", "own_report", "reports"],
    ),
    ("challenger", include_str!("../../templates/challenger.txt"), &["caption", "clinical_data", "draft"]),
    ("revise", include_str!("../../templates/revise.txt"), &["caption", "clinical_data", "draft", "critique"]),
    ("normalizer", include_str!("../../templates/normalizer.txt"), &["label"]),
];

static PLACEHOLDER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\{([a-z_]+)\}").unwrap());

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("unknown template {0:?}")]
    Unknown(String),
    #[error("template {id}: {message}")]
    Invalid { id: String, message: String },
    #[error("template {id}: no value for placeholder {{{name}}}")]
    MissingValue { id: String, name: String },
    #[error("reading template {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Template {
    system: String,
    user: String,
}

impl Template {
    fn parse(id: &str, text: &str, allowed: &[&str]) -> Result<Self, TemplateError> {
        let invalid = |message: String| TemplateError::Invalid {
            id: id.to_string(),
            message,
        };
        let mut system = Vec::new();
        let mut user = Vec::new();
        let mut seen_separator = false;
        for line in text.lines() {
            if !seen_separator && line.trim_end() == SEPARATOR {
                seen_separator = true;
            } else if seen_separator {
                user.push(line);
            } else {
                system.push(line);
            }
        }
        if !seen_separator {
            return Err(invalid(format!("missing a '{SEPARATOR}' line between system and user parts")));
        }
        let t = Self {
            system: system.join("\n").trim().to_string(),
            user: user.join("\n").trim().to_string(),
        };
        if t.user.is_empty() {
            return Err(invalid("user part is empty".into()));
        }
        for cap in PLACEHOLDER.captures_iter(&t.system).chain(PLACEHOLDER.captures_iter(&t.user)) {
            if !allowed.contains(&&cap[1]) {
                return Err(invalid(format!("unknown placeholder {{{}}} (allowed: {})", &cap[1], allowed.join(", "))));
            }
        }
        Ok(t)
    }
}

/// The prompt templates in use, keyed by template id.
#[derive(Debug, Clone)]
pub struct TemplateRegistry {
    templates: BTreeMap<String, (String, Template)>,
}

impl Default for TemplateRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl TemplateRegistry {
    pub fn builtin() -> Self {
        let templates = BUILTIN
            .iter()
            .map(|(id, text, allowed)| {
                let t = Template::parse(id, text, allowed).expect("built-in template is valid");
                (id.to_string(), (text.to_string(), t))
            })
            .collect();
        Self { templates }
    }

    /// Built-ins, with any `<id>.txt` found in `dir` replacing the built-in
    /// of the same id. Files with other names are ignored.
    pub fn with_overrides(dir: impl AsRef<Path>) -> Result<Self, TemplateError> {
        let dir = dir.as_ref();
        let mut reg = Self::builtin();
        for (id, _, allowed) in BUILTIN {
            let path = dir.join(format!("{id}.txt"));
            if !path.exists() {
                continue;
            }
            let text = fs::read_to_string(&path).map_err(|e| TemplateError::Io {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            let t = Template::parse(id, &text, allowed)?;
            reg.templates.insert(id.to_string(), (text, t));
        }
        Ok(reg)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.templates.contains_key(id)
    }

    /// SHA-256 over every template id and text, for run manifests.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (id, (text, _)) in &self.templates {
            h.update(id.as_bytes());
            h.update([0]);
            h.update(text.as_bytes());
            h.update([0]);
        }
        hex::encode(h.finalize())
    }

    /// System and user messages with every placeholder filled from `vars`.
    pub fn render(&self, id: &str, vars: &HashMap<&str, String>) -> Result<Vec<ChatMessage>, TemplateError> {
        let (_, t) = self.templates.get(id).ok_or_else(|| TemplateError::Unknown(id.to_string()))?;
        let fill = |text: &str| -> Result<String, TemplateError> {
            let mut missing = None;
            let out = PLACEHOLDER.replace_all(text, |c: &regex::Captures| match vars.get(&c[1]) {
                Some(v) => v.clone(),
                None => {
                    missing.get_or_insert_with(|| c[1].to_string());
                    String::new()
                }
            });
            match missing {
                Some(name) => Err(TemplateError::MissingValue { id: id.to_string(), name }),
                None => Ok(out.into_owned()),
            }
        };
        let mut messages = Vec::with_capacity(2);
        if !t.system.is_empty() {
            messages.push(ChatMessage::system(fill(&t.system)?));
        }
        messages.push(ChatMessage::user(fill(&t.user)?));
        Ok(messages)
    }
}
