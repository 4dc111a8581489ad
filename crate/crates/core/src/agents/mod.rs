//! The eight simulated user configurations.
//!
//! | kind        | topic fields in prompt | summaries          | queries                 | judgments |
//! |-------------|------------------------|--------------------|-------------------------|-----------|
//! | `RND`       | none (vocabulary only) | none               | random 3-term           | random    |
//! | `RND_STAR`  | none                   | none               | FTTC's queries          | random    |
//! | `TTT`       | title                  | none               | LLM, once               | LLM       |
//! | `FTTC`      | title, desc, narr      | none               | LLM, once               | LLM       |
//! | `PRF`       | title, desc, narr      | relevant           | LLM, then follow-ups    | LLM       |
//! | `NRF`       | title, desc, narr      | not relevant       | LLM, then follow-ups    | LLM       |
//! | `CRF`       | title, desc, narr      | both               | LLM, then follow-ups    | LLM       |
//! | `CRF_PRIME` | title                  | both               | LLM, then follow-ups    | LLM       |
//!
//! Feedback users start with exactly the prompts of FTTC (or TTT for
//! `CRF_PRIME`) because their summary sections stay empty until the first
//! judgment.

mod prompts;
mod state;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Topic;
use crate::index::InvertedIndex;
use crate::llm::{ChatBackend, ChatMessage, ChatRequest, LlmError, Task};
use crate::text::{is_stopword, tokenize};

pub use prompts::{render, PromptError, PromptTemplates};
pub use state::KnowledgeState;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Backend(#[from] LlmError),
    #[error("unparseable model output for {task}: {reply:?}")]
    Unparseable { task: &'static str, reply: String },
    #[error("document `{0}` already judged")]
    AlreadyJudged(String),
    #[error("document `{0}` not in the index")]
    UnknownDocument(String),
    #[error("{op} is not available for user kind {kind}")]
    WrongKind { op: &'static str, kind: UserConfigKind },
    #[error("topic {0} has no usable vocabulary")]
    EmptyVocabulary(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum UserConfigKind {
    #[serde(rename = "RND")]
    Rnd,
    #[serde(rename = "RND_STAR")]
    RndStar,
    #[serde(rename = "TTT")]
    Ttt,
    #[serde(rename = "FTTC")]
    Fttc,
    #[serde(rename = "PRF")]
    Prf,
    #[serde(rename = "NRF")]
    Nrf,
    #[serde(rename = "CRF")]
    Crf,
    #[serde(rename = "CRF_PRIME")]
    CrfPrime,
}

/// Which summaries a user keeps in its prompts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeedbackPolarity {
    None,
    Positive,
    Negative,
    Contrastive,
}

impl FeedbackPolarity {
    pub fn uses(self, relevant: bool) -> bool {
        match self {
            FeedbackPolarity::None => false,
            FeedbackPolarity::Positive => relevant,
            FeedbackPolarity::Negative => !relevant,
            FeedbackPolarity::Contrastive => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicContext {
    pub include_title: bool,
    pub include_description: bool,
    pub include_narrative: bool,
}

impl TopicContext {
    pub const TITLE_ONLY: Self =
        Self { include_title: true, include_description: false, include_narrative: false };
    pub const FULL: Self =
        Self { include_title: true, include_description: true, include_narrative: true };
}

impl UserConfigKind {
    pub const ALL: [UserConfigKind; 8] = [
        Self::Rnd,
        Self::RndStar,
        Self::Ttt,
        Self::Fttc,
        Self::Prf,
        Self::Nrf,
        Self::Crf,
        Self::CrfPrime,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Rnd => "RND",
            Self::RndStar => "RND_STAR",
            Self::Ttt => "TTT",
            Self::Fttc => "FTTC",
            Self::Prf => "PRF",
            Self::Nrf => "NRF",
            Self::Crf => "CRF",
            Self::CrfPrime => "CRF_PRIME",
        }
    }

    /// Topic fields rendered into prompts. The random users never prompt; they
    /// report the full topic because RND samples from all of its fields.
    pub fn topic_context(self) -> TopicContext {
        match self {
            Self::Ttt | Self::CrfPrime => TopicContext::TITLE_ONLY,
            _ => TopicContext::FULL,
        }
    }

    pub fn polarity(self) -> FeedbackPolarity {
        match self {
            Self::Prf => FeedbackPolarity::Positive,
            Self::Nrf => FeedbackPolarity::Negative,
            Self::Crf | Self::CrfPrime => FeedbackPolarity::Contrastive,
            _ => FeedbackPolarity::None,
        }
    }

    pub fn is_random(self) -> bool {
        matches!(self, Self::Rnd | Self::RndStar)
    }

    pub fn is_feedback(self) -> bool {
        self.polarity() != FeedbackPolarity::None
    }
}

impl fmt::Display for UserConfigKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for UserConfigKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        let norm = match norm.as_str() {
            "RND*" => "RND_STAR",
            "CRF'" | "CRF′" => "CRF_PRIME",
            other => other,
        };
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == norm)
            .ok_or_else(|| format!("unknown user kind `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Persona {
    pub role_name: String,
    pub instruction_preamble: String,
}

impl Default for Persona {
    fn default() -> Self {
        Self {
            role_name: "journalist".into(),
            instruction_preamble: "You are researching a story and use a search engine over a \
                                   newspaper archive to find articles that satisfy your information \
                                   need. Follow the instructions exactly and answer only in the \
                                   requested format."
                .into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentSettings {
    pub queries_per_session: usize,
    pub summary_max_words: usize,
    pub random_relevance_p: f64,
    /// Document texts in prompts are cut to this many characters.
    pub document_max_chars: Option<usize>,
    pub persona: Persona,
}

impl Default for AgentSettings {
    fn default() -> Self {
        Self {
            queries_per_session: 10,
            summary_max_words: 200,
            random_relevance_p: 0.5,
            document_max_chars: Some(4000),
            persona: Persona::default(),
        }
    }
}

// ---------------------------------------------------------------------------
// Random users

/// Distinct non-stopword terms of title, description and narrative, in order
/// of first occurrence.
pub fn topic_vocabulary(topic: &Topic) -> Vec<String> {
    let mut vocab: Vec<String> = Vec::new();
    let fields = [Some(topic.title.as_str()), topic.description.as_deref(), topic.narrative.as_deref()];
    for text in fields.into_iter().flatten() {
        for term in tokenize(text) {
            if !is_stopword(&term) && !vocab.contains(&term) {
                vocab.push(term);
            }
        }
    }
    vocab
}

/// Three-term query sampled uniformly from the topic vocabulary.
///
/// Draw order: a partial Fisher–Yates shuffle over the vocabulary, one
/// `random_range(i..n)` per position i = 0, 1, 2; the terms are joined in the
/// order drawn. With fewer than three distinct terms the three positions are
/// drawn with replacement instead (`random_range(0..n)` each) and a warning
/// is logged.
pub fn generate_query_naive<R: Rng + ?Sized>(topic: &Topic, rng: &mut R) -> Result<String, AgentError> {
    let mut vocab = topic_vocabulary(topic);
    let n = vocab.len();
    if n == 0 {
        return Err(AgentError::EmptyVocabulary(topic.topic_id.clone()));
    }
    if n < 3 {
        log::warn!("topic {}: only {n} vocabulary term(s), sampling with replacement", topic.topic_id);
        let terms: Vec<&str> = (0..3).map(|_| vocab[rng.random_range(0..n)].as_str()).collect();
        return Ok(terms.join(" "));
    }
    for i in 0..3 {
        let j = rng.random_range(i..n);
        vocab.swap(i, j);
    }
    Ok(vocab[..3].join(" "))
}

/// Bernoulli(p) from one uniform `f64` draw.
pub fn decide_relevance_random<R: Rng + ?Sized>(rng: &mut R, p: f64) -> bool {
    rng.random::<f64>() < p
}

/// RND* replays FTTC's query sequence for the same topic unchanged.
pub fn queries_for_rnd_star(fttc_queries: &[String]) -> Vec<String> {
    fttc_queries.to_vec()
}

// ---------------------------------------------------------------------------
// Output parsing

fn strip_list_marker(line: &str) -> &str {
    let line = line.trim();
    let digits = line.chars().take_while(char::is_ascii_digit).count();
    if digits > 0 {
        let rest = &line[digits..];
        if let Some(r) = rest.strip_prefix(['.', ')', ':']) {
            return r.trim();
        }
    }
    for marker in ["- ", "* ", "• "] {
        if let Some(r) = line.strip_prefix(marker) {
            return r.trim();
        }
    }
    line
}

fn strip_quotes(s: &str) -> &str {
    let s = s.trim();
    for (open, close) in [('"', '"'), ('\'', '\''), ('`', '`'), ('“', '”')] {
        if s.len() >= 2 && s.starts_with(open) && s.ends_with(close) {
            return s[open.len_utf8()..s.len() - close.len_utf8()].trim();
        }
    }
    s
}

fn clean_query_line(line: &str) -> Option<String> {
    let line = line.trim();
    if line.is_empty() || line.ends_with(':') {
        return None;
    }
    let mut q = strip_quotes(strip_list_marker(line));
    if q.len() > 6 && q[..6].eq_ignore_ascii_case("query:") {
        q = strip_quotes(&q[6..]);
    }
    let q = crate::corpus::normalize_whitespace(q);
    (!q.is_empty()).then_some(q)
}

fn query_key(q: &str) -> String {
    crate::corpus::normalize_whitespace(q).to_lowercase()
}

/// Parses a numbered or bulleted list of queries, dropping preamble lines
/// (those ending in `:`) and case-insensitive duplicates.
pub fn parse_query_list(text: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for q in text.lines().filter_map(clean_query_line) {
        if !out.iter().any(|o| query_key(o) == query_key(&q)) {
            out.push(q);
        }
    }
    out
}

pub fn parse_single_query(text: &str) -> Option<String> {
    text.lines().find_map(clean_query_line)
}

/// Reads a binary relevance answer. Negative forms are checked first so that
/// "not relevant" is never read as "relevant".
pub fn parse_relevance(text: &str) -> Option<bool> {
    let lower = text.to_lowercase();
    let words: Vec<&str> = lower
        .split(|c: char| !c.is_alphanumeric() && c != '-' && c != '_')
        .filter(|w| !w.is_empty())
        .collect();
    match words.first().copied() {
        Some("yes") => return Some(true),
        Some("no") => return Some(false),
        _ => {}
    }
    let negatives = ["not relevant", "not_relevant", "irrelevant", "non-relevant", "nonrelevant", "not-relevant"];
    if negatives.iter().any(|n| lower.contains(n)) {
        Some(false)
    } else if lower.contains("relevant") {
        Some(true)
    } else {
        None
    }
}

// ---------------------------------------------------------------------------
// LLM users

/// What the relevance prompt shows: a SERP snippet or the full document.
#[derive(Debug, Clone, Copy)]
pub enum JudgedText<'a> {
    Snippet(&'a str),
    FullDocument,
}

/// Shared, read-only inputs for every agent of a campaign.
#[derive(Clone, Copy)]
pub struct AgentEnv<'a> {
    pub backend: &'a dyn ChatBackend,
    pub prompts: &'a PromptTemplates,
    pub settings: &'a AgentSettings,
    pub index: &'a InvertedIndex,
}

/// One simulated user for one session. Owns the session's knowledge state.
/// Non-fatal model misbehavior is collected as anomaly messages which the
/// caller drains with [`UserAgent::take_anomalies`].
pub struct UserAgent<'a> {
    env: AgentEnv<'a>,
    topic: &'a Topic,
    kind: UserConfigKind,
    state: KnowledgeState,
    anomalies: Vec<String>,
}

impl<'a> UserAgent<'a> {
    pub fn new(env: AgentEnv<'a>, topic: &'a Topic, kind: UserConfigKind) -> Self {
        Self { env, topic, kind, state: KnowledgeState::new(), anomalies: Vec::new() }
    }

    pub fn kind(&self) -> UserConfigKind {
        self.kind
    }

    pub fn state(&self) -> &KnowledgeState {
        &self.state
    }

    pub fn take_anomalies(&mut self) -> Vec<String> {
        std::mem::take(&mut self.anomalies)
    }

    fn system_message(&self) -> ChatMessage {
        let p = &self.env.settings.persona;
        ChatMessage::system(self.env.prompts.render(
            "persona",
            &[("role_name", &p.role_name), ("instruction_preamble", &p.instruction_preamble)],
        ))
    }

    fn field_values(&self) -> [(&'static str, &'a str); 3] {
        let ctx = self.kind.topic_context();
        let pick = |on: bool, v: Option<&'a str>| if on { v.unwrap_or("") } else { "" };
        [
            ("title", pick(ctx.include_title, Some(&self.topic.title))),
            ("description", pick(ctx.include_description, self.topic.description.as_deref())),
            ("narrative", pick(ctx.include_narrative, self.topic.narrative.as_deref())),
        ]
    }

    /// Topic sections allowed by the kind's context.
    pub fn topic_block(&self) -> String {
        self.topic_sections().join("\n\n")
    }

    fn topic_sections(&self) -> Vec<String> {
        self.field_values()
            .into_iter()
            .filter(|(_, value)| !value.is_empty())
            .map(|(name, value)| self.env.prompts.render(&format!("{name}_section"), &[(name, value)]))
            .collect()
    }

    /// [`Self::topic_block`] followed by the summary sections of the kind's
    /// polarity that exist so far.
    pub fn context_block(&self) -> String {
        let prompts = self.env.prompts;
        let mut sections = self.topic_sections();
        let polarity = self.kind.polarity();
        for (relevant, name) in [(true, "relevant_summary"), (false, "irrelevant_summary")] {
            if polarity.uses(relevant) {
                if let Some(summary) = self.state.summary(relevant) {
                    sections.push(prompts.render(&format!("{name}_section"), &[(name, summary)]));
                }
            }
        }
        sections.join("\n\n")
    }

    fn user_prompt(&self, template: &str, extra: &[(&str, &str)]) -> String {
        let context = self.context_block();
        let mut vars: Vec<(&str, &str)> = self.field_values().to_vec();
        vars.push(("context", &context));
        vars.extend_from_slice(extra);
        self.env.prompts.render(template, &vars)
    }

    fn truncate(&self, text: &str) -> String {
        match self.env.settings.document_max_chars {
            Some(max) if text.chars().count() > max => {
                let cut: String = text.chars().take(max).collect();
                format!("{cut}…")
            }
            _ => text.to_string(),
        }
    }

    /// `Document [id]`, an optional `Headline:` line, then a `Snippet:` or
    /// `Text:` line.
    pub fn document_block(&self, doc_id: &str, shown: JudgedText<'_>) -> Result<String, AgentError> {
        let doc = self
            .env
            .index
            .document(doc_id)
            .ok_or_else(|| AgentError::UnknownDocument(doc_id.to_string()))?;
        let mut block = format!("Document [{doc_id}]\n");
        if let Some(t) = &doc.title {
            block.push_str(&format!("Headline: {t}\n"));
        }
        match shown {
            JudgedText::Snippet(s) => {
                block.push_str("Snippet: ");
                block.push_str(s);
            }
            JudgedText::FullDocument => {
                block.push_str("Text: ");
                block.push_str(&self.truncate(&doc.body));
            }
        }
        Ok(block)
    }

    fn ask(&self, task: Task, messages: Vec<ChatMessage>) -> Result<String, LlmError> {
        let request = ChatRequest::for_task(task, messages);
        crate::llm::complete(self.env.backend, &request).map(|r| r.text)
    }

    /// Initial query list, generated once per session.
    pub fn generate_initial_queries(&mut self) -> Result<Vec<String>, AgentError> {
        if self.kind.is_random() {
            return Err(AgentError::WrongKind { op: "generate_initial_queries", kind: self.kind });
        }
        let n = self.env.settings.queries_per_session;
        let n_text = n.to_string();
        let prompt = self.user_prompt("query_generation", &[("n_queries", &n_text)]);
        let mut messages = vec![self.system_message(), ChatMessage::user(prompt)];
        let reply = self.ask(Task::QueryGeneration, messages.clone())?;
        let mut queries = parse_query_list(&reply);
        if queries.is_empty() {
            messages.push(ChatMessage::assistant(reply));
            messages.push(ChatMessage::user(
                self.env.prompts.render("query_generation_retry", &[("n_queries", &n_text)]),
            ));
            let retry = self.ask(Task::QueryGeneration, messages)?;
            queries = parse_query_list(&retry);
            if queries.is_empty() {
                return Err(AgentError::Unparseable { task: "query generation", reply: retry });
            }
        }
        if queries.len() < n {
            self.anomalies.push(format!("expected {n} initial queries, model returned {}", queries.len()));
        }
        queries.truncate(n);
        Ok(queries)
    }

    /// Binary relevance decision at temperature 0. An answer that is neither
    /// yes nor no gets one retry and then counts as not relevant.
    pub fn decide_relevance_llm(&mut self, doc_id: &str, shown: JudgedText<'_>) -> Result<bool, AgentError> {
        if self.kind.is_random() {
            return Err(AgentError::WrongKind { op: "decide_relevance_llm", kind: self.kind });
        }
        let document = self.document_block(doc_id, shown)?;
        let prompt = self.user_prompt("relevance_judgment", &[("document", &document)]);
        let mut messages = vec![self.system_message(), ChatMessage::user(prompt)];
        let reply = self.ask(Task::RelevanceJudgment, messages.clone())?;
        if let Some(decision) = parse_relevance(&reply) {
            return Ok(decision);
        }
        messages.push(ChatMessage::assistant(reply));
        messages.push(ChatMessage::user(self.env.prompts.get("relevance_judgment_retry")));
        let retry = self.ask(Task::RelevanceJudgment, messages)?;
        Ok(parse_relevance(&retry).unwrap_or_else(|| {
            self.anomalies
                .push(format!("unreadable relevance answer for {doc_id}: {retry:?}; treated as not relevant"));
            false
        }))
    }

    /// Records a judgment and regenerates that side's summary from all
    /// documents judged the same way so far. Sides the kind never shows in
    /// its prompts are recorded without a summarization call. A failed
    /// summarization keeps the previous summary and is reported as an anomaly.
    pub fn update_knowledge_state(&mut self, doc_id: &str, relevant: bool) -> Result<(), AgentError> {
        if self.env.index.document(doc_id).is_none() {
            return Err(AgentError::UnknownDocument(doc_id.to_string()));
        }
        self.state.record(doc_id, relevant)?;
        if !self.kind.polarity().uses(relevant) {
            return Ok(());
        }

        let blocks: Vec<String> = self
            .state
            .seen(relevant)
            .iter()
            .map(|d| self.document_block(d, JudgedText::FullDocument))
            .collect::<Result<_, _>>()?;
        let documents = blocks.join("\n\n");
        let polarity = if relevant { "relevant" } else { "not relevant" };
        let max_words = self.env.settings.summary_max_words.to_string();
        let topic = self.topic_block();
        let prompt = self.env.prompts.render(
            "summarization",
            &[
                ("topic", &topic),
                ("title", &self.topic.title),
                ("documents", &documents),
                ("polarity", polarity),
                ("max_words", &max_words),
            ],
        );
        match self.ask(Task::Summarization, vec![self.system_message(), ChatMessage::user(prompt)]) {
            Ok(text) if !text.trim().is_empty() => self.state.set_summary(relevant, text.trim().to_string()),
            Ok(_) => self.anomalies.push(format!("empty {polarity} summary; previous summary kept")),
            Err(e) => self.anomalies.push(format!("{polarity} summarization failed: {e}; previous summary kept")),
        }
        Ok(())
    }

    /// One new query for a feedback user, generated from the current
    /// knowledge state. A repeat of a past query gets one retry and is then
    /// accepted with an anomaly.
    pub fn generate_followup_query(&mut self, past_queries: &[String]) -> Result<String, AgentError> {
        if !self.kind.is_feedback() {
            return Err(AgentError::WrongKind { op: "generate_followup_query", kind: self.kind });
        }
        let past = past_queries.iter().map(|q| format!("- {q}")).collect::<Vec<_>>().join("\n");
        let prompt = self.user_prompt("followup_query", &[("past_queries", &past)]);
        let mut messages = vec![self.system_message(), ChatMessage::user(prompt)];
        let reply = self.ask(Task::QueryGeneration, messages.clone())?;
        let is_repeat = |q: &str| past_queries.iter().any(|p| query_key(p) == query_key(q));

        if let Some(q) = parse_single_query(&reply).filter(|q| !is_repeat(q)) {
            return Ok(q);
        }
        messages.push(ChatMessage::assistant(reply));
        messages.push(ChatMessage::user(
            self.env.prompts.render("followup_query_retry", &[("past_queries", &past)]),
        ));
        let retry = self.ask(Task::QueryGeneration, messages)?;
        match parse_single_query(&retry) {
            Some(q) => {
                if is_repeat(&q) {
                    self.anomalies.push(format!("follow-up query repeats a past query: {q:?}"));
                }
                Ok(q)
            }
            None => Err(AgentError::Unparseable { task: "follow-up query", reply: retry }),
        }
    }
}
