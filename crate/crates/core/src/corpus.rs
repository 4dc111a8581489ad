//! Test-collection parsing: TRECTEXT and line-delimited JSON corpora, TREC
//! topic files and 4-column qrels.
//!
//! Every parser takes raw bytes. Invalid UTF-8 is replaced lossily. Corpus
//! parsers run in [`ParseMode::Lenient`] by default: bad records are skipped
//! and reported in [`Parsed::issues`]. [`ParseMode::Strict`] aborts on the
//! first bad record instead.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorpusError {
    #[error("malformed document at byte {offset}: {message}")]
    MalformedDocument { offset: usize, message: String },
    #[error("line {line}: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("topic {topic}: {message}")]
    MalformedTopic { topic: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseMode {
    #[default]
    Lenient,
    Strict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum DocSource {
    Trectext,
    Jsonl,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub title: Option<String>,
    pub body: String,
    pub source: DocSource,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topic {
    pub topic_id: String,
    pub title: String,
    pub description: Option<String>,
    pub narrative: Option<String>,
}

/// A recoverable problem met while parsing. Skipped records and overwritten
/// qrels entries end up here.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseIssue {
    pub error: CorpusError,
    pub skipped: bool,
}

/// Parser output plus everything that was skipped or overwritten on the way.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub value: T,
    pub issues: Vec<ParseIssue>,
}

impl<T> Parsed<T> {
    pub fn skipped(&self) -> usize {
        self.issues.iter().filter(|i| i.skipped).count()
    }

    pub fn warnings(&self) -> usize {
        self.issues.iter().filter(|i| !i.skipped).count()
    }
}

/// Graded relevance judgments keyed by `(topic_id, doc_id)`.
///
/// An absent pair means "never judged", which is not the same as grade 0.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QrelSet {
    grades: HashMap<String, BTreeMap<String, u32>>,
    len: usize,
}

impl QrelSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores a grade, returning the previous one for the same pair.
    pub fn insert(&mut self, topic_id: &str, doc_id: &str, grade: u32) -> Option<u32> {
        let previous = self
            .grades
            .entry(topic_id.to_string())
            .or_default()
            .insert(doc_id.to_string(), grade);
        if previous.is_none() {
            self.len += 1;
        }
        previous
    }

    pub fn grade(&self, topic_id: &str, doc_id: &str) -> Option<u32> {
        self.grades.get(topic_id)?.get(doc_id).copied()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Judged documents for one topic, ordered by doc_id.
    pub fn judged_for(&self, topic_id: &str) -> impl Iterator<Item = (&str, u32)> {
        self.grades
            .get(topic_id)
            .into_iter()
            .flat_map(|m| m.iter().map(|(d, g)| (d.as_str(), *g)))
    }

    /// All entries ordered by topic then doc_id.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, u32)> {
        let mut topics: Vec<&String> = self.grades.keys().collect();
        topics.sort();
        topics.into_iter().flat_map(move |t| {
            self.grades[t]
                .iter()
                .map(move |(d, g)| (t.as_str(), d.as_str(), *g))
        })
    }
}

/// Free-function form of [`QrelSet::grade`].
pub fn grade(qrels: &QrelSet, topic_id: &str, doc_id: &str) -> Option<u32> {
    qrels.grade(topic_id, doc_id)
}

// ---------------------------------------------------------------------------
// SGML scanning helpers

fn find_ci(haystack: &str, needle: &str, from: usize) -> Option<usize> {
    let hay = haystack.as_bytes();
    let pat = needle.as_bytes();
    if pat.is_empty() || from >= hay.len() || pat.len() > hay.len() - from {
        return None;
    }
    (from..=hay.len() - pat.len()).find(|&i| hay[i..i + pat.len()].eq_ignore_ascii_case(pat))
}

/// One `<TAG ...>content</TAG>` element at the top level of a block.
struct Element<'a> {
    name: String,
    content: &'a str,
}

/// Splits the inside of a `<DOC>` block into its top-level elements.
/// Unclosed tags are ignored.
fn elements(block: &str) -> Vec<Element<'_>> {
    let mut out = Vec::new();
    let mut pos = 0;
    while let Some(rel) = block[pos..].find('<') {
        let open = pos + rel;
        let Some(close_rel) = block[open..].find('>') else {
            break;
        };
        let tag_end = open + close_rel;
        let inner = &block[open + 1..tag_end];
        if inner.starts_with('/') || inner.starts_with('!') || inner.starts_with('?') {
            pos = tag_end + 1;
            continue;
        }
        let name: String = inner
            .split(|c: char| c.is_whitespace() || c == '/')
            .next()
            .unwrap_or("")
            .to_ascii_uppercase();
        if name.is_empty() {
            pos = tag_end + 1;
            continue;
        }
        let closing = format!("</{name}>");
        match find_ci(block, &closing, tag_end + 1) {
            Some(end) => {
                out.push(Element {
                    name,
                    content: &block[tag_end + 1..end],
                });
                pos = end + closing.len();
            }
            None => pos = tag_end + 1,
        }
    }
    out
}

fn strip_markup(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut in_tag = false;
    for c in text.chars() {
        match c {
            '<' => in_tag = true,
            '>' if in_tag => in_tag = false,
            _ if !in_tag => out.push(c),
            _ => {}
        }
    }
    decode_entities(&out)
}

fn decode_entities(text: &str) -> String {
    if !text.contains('&') {
        return text.to_string();
    }
    text.replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&quot;", "\"")
        .replace("&apos;", "'")
        .replace("&amp;", "&")
}

fn encode_entities(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

const TITLE_TAGS: &[&str] = &["HEADLINE", "HL", "HEAD", "TITLE"];
const BODY_TAGS: &[&str] = &["TEXT", "LP", "LEADPARA", "BODY"];

/// Parses a TRECTEXT (SGML) corpus.
///
/// Each `<DOC>` block yields one document. Its id comes from `<DOCNO>`, the
/// title from the first headline-like tag, and the body is the markup-stripped
/// content of every text-bearing tag joined in document order.
pub fn parse_trectext(bytes: &[u8], mode: ParseMode) -> Result<Parsed<Vec<Document>>, CorpusError> {
    let text = String::from_utf8_lossy(bytes);
    let mut docs = Vec::new();
    let mut issues = Vec::new();
    let mut pos = 0;

    while let Some(start) = find_ci(&text, "<DOC>", pos) {
        let inner_start = start + "<DOC>".len();
        let (inner_end, next) = match find_ci(&text, "</DOC>", inner_start) {
            Some(end) => (end, end + "</DOC>".len()),
            None => {
                let err = CorpusError::MalformedDocument {
                    offset: start,
                    message: "unterminated <DOC> block".into(),
                };
                if mode == ParseMode::Strict {
                    return Err(err);
                }
                issues.push(ParseIssue { error: err, skipped: true });
                break;
            }
        };
        pos = next;

        let block = &text[inner_start..inner_end];
        let mut doc_id = None;
        let mut title = None;
        let mut body_parts = Vec::new();
        for el in elements(block) {
            if el.name == "DOCNO" {
                doc_id.get_or_insert_with(|| el.content.trim().to_string());
            } else if TITLE_TAGS.contains(&el.name.as_str()) {
                let t = strip_markup(el.content).trim().to_string();
                if title.is_none() && !t.is_empty() {
                    title = Some(t);
                }
            } else if BODY_TAGS.contains(&el.name.as_str()) {
                let part = strip_markup(el.content).trim().to_string();
                if !part.is_empty() {
                    body_parts.push(part);
                }
            }
        }

        match doc_id.filter(|id| !id.is_empty()) {
            Some(doc_id) => docs.push(Document {
                doc_id,
                title,
                body: body_parts.join("\n"),
                source: DocSource::Trectext,
            }),
            None => {
                let err = CorpusError::MalformedDocument {
                    offset: start,
                    message: "missing or empty <DOCNO>".into(),
                };
                if mode == ParseMode::Strict {
                    return Err(err);
                }
                issues.push(ParseIssue { error: err, skipped: true });
            }
        }
    }

    Ok(Parsed { value: docs, issues })
}

/// Writes documents in the canonical TRECTEXT form read by [`parse_trectext`].
pub fn write_trectext(docs: &[Document]) -> String {
    let mut out = String::new();
    for doc in docs {
        out.push_str("<DOC>\n<DOCNO> ");
        out.push_str(&encode_entities(&doc.doc_id));
        out.push_str(" </DOCNO>\n");
        if let Some(title) = &doc.title {
            out.push_str("<HEADLINE>\n");
            out.push_str(&encode_entities(title));
            out.push_str("\n</HEADLINE>\n");
        }
        out.push_str("<TEXT>\n");
        out.push_str(&encode_entities(&doc.body));
        out.push_str("\n</TEXT>\n</DOC>\n");
    }
    out
}

/// Names the record keys that hold the id, the title and the body of a
/// line-delimited corpus. Several body keys are concatenated in order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldMap {
    pub id: String,
    #[serde(default)]
    pub title: Option<String>,
    #[serde(default = "FieldMap::default_body")]
    pub body: Vec<String>,
}

impl FieldMap {
    fn default_body() -> Vec<String> {
        vec!["body".into()]
    }
}

impl Default for FieldMap {
    fn default() -> Self {
        Self {
            id: "id".into(),
            title: Some("title".into()),
            body: Self::default_body(),
        }
    }
}

/// Collects text from a JSON value. Arrays are flattened; objects contribute
/// their `content` string (the layout of WaPo `contents` entries).
fn collect_text(value: &serde_json::Value, out: &mut Vec<String>) {
    match value {
        serde_json::Value::String(s) => {
            let s = s.trim();
            if !s.is_empty() {
                out.push(s.to_string());
            }
        }
        serde_json::Value::Number(n) => out.push(n.to_string()),
        serde_json::Value::Array(items) => items.iter().for_each(|v| collect_text(v, out)),
        serde_json::Value::Object(map) => {
            if let Some(v @ serde_json::Value::String(_)) = map.get("content") {
                collect_text(v, out);
            }
        }
        _ => {}
    }
}

fn jsonl_record(line: &str, fields: &FieldMap, mode: ParseMode) -> Result<Document, String> {
    let value: serde_json::Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let obj = value.as_object().ok_or("record is not a JSON object")?;

    let doc_id = match obj.get(&fields.id) {
        Some(serde_json::Value::String(s)) => s.trim().to_string(),
        Some(serde_json::Value::Number(n)) => n.to_string(),
        _ => return Err(format!("missing id field `{}`", fields.id)),
    };
    if doc_id.is_empty() {
        return Err("empty document id".into());
    }

    let title = fields.title.as_ref().and_then(|key| {
        let mut parts = Vec::new();
        collect_text(obj.get(key)?, &mut parts);
        (!parts.is_empty()).then(|| parts.join(" "))
    });

    let mut parts = Vec::new();
    let mut found_body = false;
    for key in &fields.body {
        if let Some(v) = obj.get(key) {
            found_body = true;
            collect_text(v, &mut parts);
        }
    }
    if !found_body && mode == ParseMode::Strict {
        return Err(format!("missing body field(s) {:?}", fields.body));
    }

    Ok(Document {
        doc_id,
        title,
        body: parts.join("\n"),
        source: DocSource::Jsonl,
    })
}

/// Parses a line-delimited JSON corpus. Blank lines are ignored; line numbers
/// in errors are 1-based.
pub fn parse_jsonl_corpus(
    bytes: &[u8],
    fields: &FieldMap,
    mode: ParseMode,
) -> Result<Parsed<Vec<Document>>, CorpusError> {
    let text = String::from_utf8_lossy(bytes);
    let mut docs = Vec::new();
    let mut issues = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match jsonl_record(line, fields, mode) {
            Ok(doc) => docs.push(doc),
            Err(message) => {
                let err = CorpusError::MalformedLine { line: idx + 1, message };
                if mode == ParseMode::Strict {
                    return Err(err);
                }
                issues.push(ParseIssue { error: err, skipped: true });
            }
        }
    }
    Ok(Parsed { value: docs, issues })
}

/// Collapses whitespace runs to single spaces and trims.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn strip_label(text: &str, labels: &[&str]) -> String {
    let text = normalize_whitespace(text);
    for label in labels {
        if text.len() >= label.len() && text[..label.len()].eq_ignore_ascii_case(label) {
            return text[label.len()..].trim().to_string();
        }
    }
    text
}

/// Content of a topic section: runs from the opening tag up to the next tag.
fn topic_section<'a>(block: &'a str, tag: &str) -> Option<&'a str> {
    let open = format!("<{tag}>");
    let start = find_ci(block, &open, 0)? + open.len();
    let end = block[start..].find('<').map_or(block.len(), |e| start + e);
    Some(&block[start..end])
}

/// Parses a classic TREC topic file (`<top>`, `<num>`, `<title>`, `<desc>`,
/// `<narr>`). Labels such as `Number:` or `Description:` are removed
/// case-insensitively and whitespace is normalized.
pub fn parse_topics(bytes: &[u8]) -> Result<Vec<Topic>, CorpusError> {
    let text = String::from_utf8_lossy(bytes);
    let mut topics = Vec::new();
    let mut pos = 0;
    while let Some(start) = find_ci(&text, "<top>", pos) {
        let inner_start = start + "<top>".len();
        let inner_end = find_ci(&text, "</top>", inner_start).unwrap_or(text.len());
        pos = inner_end;
        let block = &text[inner_start..inner_end];

        let topic_id = topic_section(block, "num")
            .map(|s| strip_label(s, &["Number:"]))
            .filter(|s| !s.is_empty())
            .ok_or_else(|| CorpusError::MalformedTopic {
                topic: format!("#{}", topics.len() + 1),
                message: "missing <num>".into(),
            })?;
        let title = topic_section(block, "title")
            .map(|s| strip_label(s, &["Topic:", "Title:"]))
            .filter(|s| !s.is_empty())
            .ok_or_else(|| CorpusError::MalformedTopic {
                topic: topic_id.clone(),
                message: "missing or empty <title>".into(),
            })?;
        let optional = |tag: &str, label: &str| {
            topic_section(block, tag)
                .map(|s| strip_label(s, &[label]))
                .filter(|s| !s.is_empty())
        };
        topics.push(Topic {
            description: optional("desc", "Description:"),
            narrative: optional("narr", "Narrative:"),
            topic_id,
            title,
        });
    }
    Ok(topics)
}

/// Parses whitespace-separated `topic iteration doc grade` lines.
///
/// Later duplicates overwrite earlier ones and are reported as warnings.
/// Negative grades (spam markers in some collections) are clamped to 0 with a
/// warning.
pub fn parse_qrels(bytes: &[u8]) -> Result<Parsed<QrelSet>, CorpusError> {
    let text = String::from_utf8_lossy(bytes);
    let mut qrels = QrelSet::new();
    let mut issues = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() {
            continue;
        }
        if cols.len() != 4 {
            return Err(CorpusError::MalformedLine {
                line: line_no,
                message: format!("expected 4 columns, found {}", cols.len()),
            });
        }
        let raw: i64 = cols[3].parse().map_err(|_| CorpusError::MalformedLine {
            line: line_no,
            message: format!("grade `{}` is not an integer", cols[3]),
        })?;
        let grade = if raw < 0 {
            issues.push(ParseIssue {
                error: CorpusError::MalformedLine {
                    line: line_no,
                    message: format!("negative grade {raw} clamped to 0"),
                },
                skipped: false,
            });
            0
        } else {
            u32::try_from(raw).map_err(|_| CorpusError::MalformedLine {
                line: line_no,
                message: format!("grade {raw} out of range"),
            })?
        };
        if let Some(previous) = qrels.insert(cols[0], cols[2], grade) {
            issues.push(ParseIssue {
                error: CorpusError::MalformedLine {
                    line: line_no,
                    message: format!(
                        "duplicate judgment ({}, {}): {previous} replaced by {grade}",
                        cols[0], cols[2]
                    ),
                },
                skipped: false,
            });
        }
    }
    Ok(Parsed { value: qrels, issues })
}

impl fmt::Display for DocSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DocSource::Trectext => "TRECTEXT",
            DocSource::Jsonl => "JSONL",
            DocSource::Synthetic => "SYNTHETIC",
        })
    }
}
