use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::AgentError;

/// What a simulated user has learned so far in a session: which documents it
/// judged on each side and a running summary per side.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeState {
    pub relevant_docs_seen: Vec<String>,
    pub irrelevant_docs_seen: Vec<String>,
    pub relevant_summary: Option<String>,
    pub irrelevant_summary: Option<String>,
    pub judged: BTreeMap<String, bool>,
}

impl KnowledgeState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn has_judgments(&self) -> bool {
        !self.judged.is_empty()
    }

    pub fn is_judged(&self, doc_id: &str) -> bool {
        self.judged.contains_key(doc_id)
    }

    /// Appends a judgment to the matching seen-list.
    pub fn record(&mut self, doc_id: &str, relevant: bool) -> Result<(), AgentError> {
        if self.judged.contains_key(doc_id) {
            return Err(AgentError::AlreadyJudged(doc_id.to_string()));
        }
        self.judged.insert(doc_id.to_string(), relevant);
        if relevant {
            self.relevant_docs_seen.push(doc_id.to_string());
        } else {
            self.irrelevant_docs_seen.push(doc_id.to_string());
        }
        Ok(())
    }

    pub fn seen(&self, relevant: bool) -> &[String] {
        if relevant {
            &self.relevant_docs_seen
        } else {
            &self.irrelevant_docs_seen
        }
    }

    pub fn summary(&self, relevant: bool) -> Option<&str> {
        if relevant {
            self.relevant_summary.as_deref()
        } else {
            self.irrelevant_summary.as_deref()
        }
    }

    pub fn set_summary(&mut self, relevant: bool, summary: String) {
        if relevant {
            self.relevant_summary = Some(summary);
        } else {
            self.irrelevant_summary = Some(summary);
        }
    }
}
