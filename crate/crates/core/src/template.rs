//! Versioned prompt templates with `{{name}}` placeholders.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::hash::{content_hash, short};

pub const BUILTIN_VERSION: &str = "v1";

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template `{template}` references undefined placeholder `{name}`")]
    MissingValue { template: String, name: String },
    #[error("template `{template}` has an unterminated placeholder")]
    Unterminated { template: String },
    #[error("reading template {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// The prompt templates used by the audit and alignment protocols.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    pub version: String,
    pub definition_system: String,
    pub definition_user: String,
    pub agent_evidence: String,
    pub agent_phase1: String,
    pub judge_system: String,
    pub judge_user: String,
}

const FILES: [&str; 6] = [
    "definition_system.txt",
    "definition_user.txt",
    "agent_evidence.txt",
    "agent_phase1.txt",
    "judge_system.txt",
    "judge_user.txt",
];

impl TemplateSet {
    pub fn builtin() -> TemplateSet {
        TemplateSet {
            version: BUILTIN_VERSION.to_string(),
            definition_system: include_str!("../templates/definition_system.txt").to_string(),
            definition_user: include_str!("../templates/definition_user.txt").to_string(),
            agent_evidence: include_str!("../templates/agent_evidence.txt").to_string(),
            agent_phase1: include_str!("../templates/agent_phase1.txt").to_string(),
            judge_system: include_str!("../templates/judge_system.txt").to_string(),
            judge_user: include_str!("../templates/judge_user.txt").to_string(),
        }
    }

    /// Loads overrides from `dir`; files that are absent fall back to the
    /// built-in text. The version becomes `custom-<hash>` of all six texts.
    pub fn from_dir(dir: &Path) -> Result<TemplateSet, TemplateError> {
        let mut set = TemplateSet::builtin();
        for name in FILES {
            let path = dir.join(name);
            if !path.is_file() {
                continue;
            }
            let text = fs::read_to_string(&path)
                .map_err(|source| TemplateError::Io { path: path.display().to_string(), source })?;
            *set.slot(name) = text;
        }
        let digest = content_hash(&[
            &set.definition_system,
            &set.definition_user,
            &set.agent_evidence,
            &set.agent_phase1,
            &set.judge_system,
            &set.judge_user,
        ]);
        if set != TemplateSet::builtin() {
            set.version = format!("custom-{}", short(&digest));
        }
        Ok(set)
    }

    fn slot(&mut self, file: &str) -> &mut String {
        match file {
            "definition_system.txt" => &mut self.definition_system,
            "definition_user.txt" => &mut self.definition_user,
            "agent_evidence.txt" => &mut self.agent_evidence,
            "agent_phase1.txt" => &mut self.agent_phase1,
            "judge_system.txt" => &mut self.judge_system,
            _ => &mut self.judge_user,
        }
    }
}

/// Substitutes every `{{name}}` in `template`. Substituted values are not
/// rescanned, so artifact text containing braces passes through untouched.
pub fn render(template_name: &str, template: &str, vars: &BTreeMap<&str, String>) -> Result<String, TemplateError> {
    let mut out = String::with_capacity(template.len() + vars.values().map(String::len).sum::<usize>());
    let mut rest = template;
    while let Some(open) = rest.find("{{") {
        out.push_str(&rest[..open]);
        let after = &rest[open + 2..];
        let close = after
            .find("}}")
            .ok_or_else(|| TemplateError::Unterminated { template: template_name.to_string() })?;
        let name = after[..close].trim();
        let value = vars.get(name).ok_or_else(|| TemplateError::MissingValue {
            template: template_name.to_string(),
            name: name.to_string(),
        })?;
        out.push_str(value);
        rest = &after[close + 2..];
    }
    out.push_str(rest);
    Ok(out)
}
