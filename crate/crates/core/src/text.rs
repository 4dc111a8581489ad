//! Tokenization shared by the index, snippets and naive query generation.

use rust_stemmers::{Algorithm, Stemmer};
use serde::{Deserialize, Serialize};

/// A small English stopword list (the classic SMART/Lucene core set).
pub const STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "also", "am", "an", "and", "any",
    "are", "as", "at", "be", "because", "been", "before", "being", "below", "between", "both",
    "but", "by", "can", "could", "did", "do", "does", "doing", "down", "during", "each", "either",
    "etc", "few", "find", "for", "from", "further", "had", "has", "have", "having", "he", "her",
    "here", "hers", "herself", "him", "himself", "his", "how", "i", "if", "in", "into", "is", "it",
    "its", "itself", "just", "may", "me", "might", "more", "most", "must", "my", "myself", "no",
    "nor", "not", "of", "off", "on", "once", "only", "or", "other", "our", "ours", "ourselves",
    "out", "over", "own", "same", "she", "should", "so", "some", "such", "than", "that", "the",
    "their", "theirs", "them", "themselves", "then", "there", "these", "they", "this", "those",
    "through", "to", "too", "under", "until", "up", "very", "was", "we", "were", "what", "when",
    "where", "which", "while", "who", "whom", "why", "will", "with", "would", "you", "your",
    "yours", "yourself", "yourselves",
];

pub fn is_stopword(term: &str) -> bool {
    STOPWORDS.binary_search(&term).is_ok()
}

/// Lowercases and splits on every non-alphanumeric character.
pub fn tokenize(text: &str) -> Vec<String> {
    token_spans(text)
        .into_iter()
        .map(|(s, e)| text[s..e].to_lowercase())
        .collect()
}

/// Byte spans of the raw (not yet lowercased) tokens of `text`.
pub fn token_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        if c.is_alphanumeric() {
            start.get_or_insert(i);
        } else if let Some(s) = start.take() {
            spans.push((s, i));
        }
    }
    if let Some(s) = start {
        spans.push((s, text.len()));
    }
    spans
}

/// Term normalization switches. Both default off.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalyzerOptions {
    #[serde(default)]
    pub stopwords: bool,
    #[serde(default)]
    pub stemming: bool,
}

/// Applies [`tokenize`] followed by the configured stopword removal and
/// English Snowball stemming.
pub struct Analyzer {
    options: AnalyzerOptions,
    stemmer: Option<Stemmer>,
}

impl Analyzer {
    pub fn new(options: AnalyzerOptions) -> Self {
        Self {
            options,
            stemmer: options.stemming.then(|| Stemmer::create(Algorithm::English)),
        }
    }

    pub fn options(&self) -> AnalyzerOptions {
        self.options
    }

    /// Normalizes one already-lowercased token. `None` when it is a stopword.
    pub fn term(&self, token: &str) -> Option<String> {
        if self.options.stopwords && is_stopword(token) {
            return None;
        }
        Some(match &self.stemmer {
            Some(s) => s.stem(token).into_owned(),
            None => token.to_string(),
        })
    }

    pub fn analyze(&self, text: &str) -> Vec<String> {
        tokenize(text).iter().filter_map(|t| self.term(t)).collect()
    }
}

impl std::fmt::Debug for Analyzer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Analyzer").field("options", &self.options).finish()
    }
}
