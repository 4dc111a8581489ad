//! Prompt templates with named `{placeholder}` slots.
//!
//! Each template lives in its own `<name>.txt` file. A template directory may
//! override any subset of the shipped defaults; missing files fall back to the
//! defaults compiled into the crate.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("unknown template file `{0}`")]
    UnknownTemplate(String),
    #[error("template `{template}` uses unknown placeholder `{{{placeholder}}}`")]
    UnknownPlaceholder { template: String, placeholder: String },
    #[error("reading templates: {0}")]
    Io(#[from] std::io::Error),
}

struct TemplateDef {
    name: &'static str,
    placeholders: &'static [&'static str],
    default: &'static str,
}

const TEMPLATE_DEFS: &[TemplateDef] = &[
    TemplateDef {
        name: "persona",
        placeholders: &["role_name", "instruction_preamble"],
        default: include_str!("../../templates/persona.txt"),
    },
    TemplateDef {
        name: "title_section",
        placeholders: &["title"],
        default: include_str!("../../templates/title_section.txt"),
    },
    TemplateDef {
        name: "description_section",
        placeholders: &["description"],
        default: include_str!("../../templates/description_section.txt"),
    },
    TemplateDef {
        name: "narrative_section",
        placeholders: &["narrative"],
        default: include_str!("../../templates/narrative_section.txt"),
    },
    TemplateDef {
        name: "relevant_summary_section",
        placeholders: &["relevant_summary"],
        default: include_str!("../../templates/relevant_summary_section.txt"),
    },
    TemplateDef {
        name: "irrelevant_summary_section",
        placeholders: &["irrelevant_summary"],
        default: include_str!("../../templates/irrelevant_summary_section.txt"),
    },
    TemplateDef {
        name: "query_generation",
        placeholders: &["context", "n_queries", "title", "description", "narrative"],
        default: include_str!("../../templates/query_generation.txt"),
    },
    TemplateDef {
        name: "query_generation_retry",
        placeholders: &["n_queries"],
        default: include_str!("../../templates/query_generation_retry.txt"),
    },
    TemplateDef {
        name: "relevance_judgment",
        placeholders: &["context", "document", "title", "description", "narrative"],
        default: include_str!("../../templates/relevance_judgment.txt"),
    },
    TemplateDef {
        name: "relevance_judgment_retry",
        placeholders: &[],
        default: include_str!("../../templates/relevance_judgment_retry.txt"),
    },
    TemplateDef {
        name: "followup_query",
        placeholders: &["context", "past_queries", "title", "description", "narrative"],
        default: include_str!("../../templates/followup_query.txt"),
    },
    TemplateDef {
        name: "followup_query_retry",
        placeholders: &["past_queries"],
        default: include_str!("../../templates/followup_query_retry.txt"),
    },
    TemplateDef {
        name: "summarization",
        placeholders: &["topic", "title", "documents", "polarity", "max_words"],
        default: include_str!("../../templates/summarization.txt"),
    },
];

/// Substitutes `{name}` slots in one pass. Substituted values are never
/// rescanned, and slots without a value are left as written.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 64);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if is_ident(&after[..close]) => {
                let name = &after[..close];
                match vars.iter().find(|(k, _)| *k == name) {
                    Some((_, v)) => out.push_str(v),
                    None => out.push_str(&rest[open..open + close + 2]),
                }
                rest = &after[close + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

fn is_ident(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn placeholders(template: &str) -> Vec<&str> {
    let mut found = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if is_ident(&after[..close]) => {
                found.push(&after[..close]);
                rest = &after[close + 1..];
            }
            _ => rest = after,
        }
    }
    found
}

/// The full template set used by the agents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplates {
    templates: BTreeMap<String, String>,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            templates: TEMPLATE_DEFS
                .iter()
                .map(|s| (s.name.to_string(), s.default.trim_end_matches('\n').to_string()))
                .collect(),
        }
    }
}

impl PromptTemplates {
    pub fn names() -> impl Iterator<Item = &'static str> {
        TEMPLATE_DEFS.iter().map(|s| s.name)
    }

    /// Loads `<name>.txt` files from `dir` over the defaults. Any other
    /// `.txt` file is rejected so typos do not go unnoticed.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut set = Self::default();
        let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<Result<_, _>>()?;
        entries.sort_by_key(|e| e.file_name());
        for entry in entries {
            let path = entry.path();
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            let text = std::fs::read_to_string(&path)?;
            set.set(&stem, text.trim_end_matches('\n'))?;
        }
        Ok(set)
    }

    /// Replaces one template after checking its placeholders.
    pub fn set(&mut self, name: &str, template: &str) -> Result<(), PromptError> {
        let def = TEMPLATE_DEFS
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| PromptError::UnknownTemplate(name.to_string()))?;
        if let Some(bad) = placeholders(template).into_iter().find(|p| !def.placeholders.contains(p)) {
            return Err(PromptError::UnknownPlaceholder {
                template: name.to_string(),
                placeholder: bad.to_string(),
            });
        }
        self.templates.insert(name.to_string(), template.to_string());
        Ok(())
    }

    pub fn get(&self, name: &str) -> &str {
        self.templates.get(name).map(String::as_str).unwrap_or_else(|| panic!("no template `{name}`"))
    }

    pub fn render(&self, name: &str, vars: &[(&str, &str)]) -> String {
        render(self.get(name), vars)
    }

    /// Writes every template into `dir`, one file each.
    pub fn write_dir(&self, dir: &Path) -> Result<(), PromptError> {
        std::fs::create_dir_all(dir)?;
        for (name, text) in &self.templates {
            std::fs::write(dir.join(format!("{name}.txt")), text)?;
        }
        Ok(())
    }
}
