//! In-memory inverted index with BM25 ranking, paging and query-biased
//! snippets.
//!
//! ```text
//! score(D, Q) = sum over q in Q of idf(q) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * |D| / avgdl))
//! idf(q)      = ln((N - df + 0.5) / (df + 0.5) + 1)
//! ```
//!
//! Query terms are summed per occurrence, so a repeated query term counts
//! twice. Ties are broken by ascending doc_id.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Document;
use crate::text::{token_spans, Analyzer, AnalyzerOptions};

pub const INDEX_FORMAT: &str = "usersim-index";
pub const INDEX_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("duplicate doc_id `{0}`")]
    DuplicateDocId(String),
    #[error("bm25 domain error: {0}")]
    Domain(String),
    #[error("unsupported index file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexOptions {
    #[serde(default)]
    pub bm25: Bm25Params,
    #[serde(default)]
    pub analyzer: AnalyzerOptions,
    #[serde(default = "IndexOptions::default_snippet_chars")]
    pub snippet_chars: usize,
}

impl IndexOptions {
    fn default_snippet_chars() -> usize {
        200
    }
}

impl Default for IndexOptions {
    fn default() -> Self {
        Self {
            bm25: Bm25Params::default(),
            analyzer: AnalyzerOptions::default(),
            snippet_chars: Self::default_snippet_chars(),
        }
    }
}

/// One BM25 term contribution.
pub fn bm25_score(
    tf: u32,
    df: u32,
    doc_len: u32,
    avg_doc_len: f64,
    n_docs: u32,
    params: Bm25Params,
) -> Result<f64, IndexError> {
    if tf == 0 {
        return Ok(0.0);
    }
    if df == 0 || n_docs < df {
        return Err(IndexError::Domain(format!("df={df} with n_docs={n_docs}")));
    }
    if avg_doc_len <= 0.0 {
        if doc_len > 0 {
            return Err(IndexError::Domain("avg_doc_len = 0 with non-empty document".into()));
        }
        return Ok(0.0);
    }
    let (n, df) = (f64::from(n_docs), f64::from(df));
    let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
    let tf = f64::from(tf);
    let norm = params.k1 * (1.0 - params.b + params.b * f64::from(doc_len) / avg_doc_len);
    Ok(idf * (tf * (params.k1 + 1.0)) / (tf + norm))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredDoc {
    pub title: Option<String>,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SerpResult {
    pub rank: usize,
    pub doc_id: String,
    pub score: f64,
}

/// One result page.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Serp {
    pub query: String,
    pub page: usize,
    pub page_size: usize,
    pub total_hits: usize,
    pub results: Vec<SerpResult>,
    pub snippets: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct IndexFile {
    format: String,
    version: u32,
    options: IndexOptions,
    doc_ids: Vec<String>,
    doc_lengths: Vec<u32>,
    docs: Vec<StoredDoc>,
    postings: BTreeMap<String, Vec<Posting>>,
}

#[derive(Debug)]
pub struct InvertedIndex {
    options: IndexOptions,
    analyzer: Analyzer,
    postings: BTreeMap<String, Vec<Posting>>,
    doc_lengths: Vec<u32>,
    doc_ids: Vec<String>,
    ordinals: HashMap<String, u32>,
    docs: Vec<StoredDoc>,
    avg_doc_len: f64,
}

impl InvertedIndex {
    /// Builds the index. Title tokens precede body tokens in one field.
    pub fn build(documents: &[Document], options: IndexOptions) -> Result<Self, IndexError> {
        let analyzer = Analyzer::new(options.analyzer);
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_lengths = Vec::with_capacity(documents.len());
        let mut doc_ids = Vec::with_capacity(documents.len());
        let mut docs = Vec::with_capacity(documents.len());
        let mut ordinals = HashMap::with_capacity(documents.len());

        for (ord, doc) in documents.iter().enumerate() {
            let ord = u32::try_from(ord).expect("more than u32::MAX documents");
            if ordinals.insert(doc.doc_id.clone(), ord).is_some() {
                return Err(IndexError::DuplicateDocId(doc.doc_id.clone()));
            }
            let mut terms = doc.title.as_deref().map(|t| analyzer.analyze(t)).unwrap_or_default();
            terms.extend(analyzer.analyze(&doc.body));

            let mut counts: BTreeMap<String, u32> = BTreeMap::new();
            for t in &terms {
                *counts.entry(t.clone()).or_default() += 1;
            }
            // ordinals ascend, so pushing keeps every list sorted
            for (term, tf) in counts {
                postings.entry(term).or_default().push(Posting { doc: ord, tf });
            }
            doc_lengths.push(terms.len() as u32);
            doc_ids.push(doc.doc_id.clone());
            docs.push(StoredDoc { title: doc.title.clone(), body: doc.body.clone() });
        }

        Ok(Self::assemble(options, postings, doc_lengths, doc_ids, docs))
    }

    fn assemble(
        options: IndexOptions,
        postings: BTreeMap<String, Vec<Posting>>,
        doc_lengths: Vec<u32>,
        doc_ids: Vec<String>,
        docs: Vec<StoredDoc>,
    ) -> Self {
        let avg_doc_len = if doc_lengths.is_empty() {
            0.0
        } else {
            doc_lengths.iter().map(|&l| f64::from(l)).sum::<f64>() / doc_lengths.len() as f64
        };
        let ordinals = doc_ids.iter().enumerate().map(|(i, d)| (d.clone(), i as u32)).collect();
        Self {
            analyzer: Analyzer::new(options.analyzer),
            options,
            postings,
            doc_lengths,
            doc_ids,
            ordinals,
            docs,
            avg_doc_len,
        }
    }

    pub fn options(&self) -> &IndexOptions {
        &self.options
    }

    pub fn analyzer(&self) -> &Analyzer {
        &self.analyzer
    }

    pub fn n_docs(&self) -> usize {
        self.doc_lengths.len()
    }

    pub fn vocabulary_size(&self) -> usize {
        self.postings.len()
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.avg_doc_len
    }

    pub fn doc_lengths(&self) -> &[u32] {
        &self.doc_lengths
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    pub fn terms(&self) -> impl Iterator<Item = (&str, &[Posting])> {
        self.postings.iter().map(|(t, p)| (t.as_str(), p.as_slice()))
    }

    pub fn document(&self, doc_id: &str) -> Option<&StoredDoc> {
        self.ordinals.get(doc_id).map(|&o| &self.docs[o as usize])
    }

    /// Scores every matching document and returns the requested page.
    pub fn search(&self, query: &str, page: usize, page_size: usize) -> Serp {
        assert!(page >= 1 && page_size >= 1, "page and page_size start at 1");
        let n_docs = self.n_docs() as u32;
        let mut scores: HashMap<u32, f64> = HashMap::new();
        for term in self.analyzer.analyze(query) {
            let list = self.postings(&term);
            let df = list.len() as u32;
            for p in list {
                let s = bm25_score(
                    p.tf,
                    df,
                    self.doc_lengths[p.doc as usize],
                    self.avg_doc_len,
                    n_docs,
                    self.options.bm25,
                )
                .expect("index invariants keep bm25 inputs in domain");
                *scores.entry(p.doc).or_default() += s;
            }
        }

        let mut hits: Vec<(u32, f64)> = scores.into_iter().collect();
        hits.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| self.doc_ids[a.0 as usize].cmp(&self.doc_ids[b.0 as usize]))
        });

        let total_hits = hits.len();
        let offset = (page - 1).saturating_mul(page_size);
        let mut results = Vec::new();
        let mut snippets = Vec::new();
        for (i, (doc, score)) in hits.into_iter().skip(offset).take(page_size).enumerate() {
            let stored = &self.docs[doc as usize];
            snippets.push(self.snippet(&stored.body, query));
            results.push(SerpResult {
                rank: offset + i + 1,
                doc_id: self.doc_ids[doc as usize].clone(),
                score,
            });
        }
        Serp {
            query: query.to_string(),
            page,
            page_size,
            total_hits,
            results,
            snippets,
        }
    }

    pub fn snippet(&self, body: &str, query: &str) -> String {
        make_snippet(body, query, self.options.snippet_chars, &self.analyzer)
    }

    pub fn write_to<W: Write>(&self, writer: W) -> Result<(), IndexError> {
        let file = IndexFile {
            format: INDEX_FORMAT.into(),
            version: INDEX_VERSION,
            options: self.options,
            doc_ids: self.doc_ids.clone(),
            doc_lengths: self.doc_lengths.clone(),
            docs: self.docs.clone(),
            postings: self.postings.clone(),
        };
        serde_json::to_writer(writer, &file)?;
        Ok(())
    }

    pub fn read_from<R: Read>(reader: R) -> Result<Self, IndexError> {
        let file: IndexFile = serde_json::from_reader(reader)?;
        if file.format != INDEX_FORMAT || file.version != INDEX_VERSION {
            return Err(IndexError::Format(format!("{} v{}", file.format, file.version)));
        }
        if file.doc_ids.len() != file.doc_lengths.len() || file.docs.len() != file.doc_ids.len() {
            return Err(IndexError::Format("document tables differ in length".into()));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = file.doc_ids.iter().find(|d| !seen.insert(d.as_str())) {
            return Err(IndexError::DuplicateDocId(dup.clone()));
        }
        Ok(Self::assemble(file.options, file.postings, file.doc_lengths, file.doc_ids, file.docs))
    }
}

/// Free-function form of [`InvertedIndex::build`].
pub fn build_index(documents: &[Document], options: IndexOptions) -> Result<InvertedIndex, IndexError> {
    InvertedIndex::build(documents, options)
}

/// Query-biased snippet.
///
/// Starts a little before the first body token matching a query term, snapped
/// to a word start, and keeps at most `max_chars` characters ending on a word
/// boundary. A trailing `…` marks truncation. Without a match the leading
/// characters of the body are used. `max_chars` is raised to 16 if smaller.
pub fn make_snippet(body: &str, query: &str, max_chars: usize, analyzer: &Analyzer) -> String {
    let max_chars = max_chars.max(16);
    let text = crate::corpus::normalize_whitespace(body);
    let wanted: HashSet<String> = analyzer.analyze(query).into_iter().collect();

    let hit = token_spans(&text).into_iter().find_map(|(s, e)| {
        analyzer
            .term(&text[s..e].to_lowercase())
            .filter(|t| wanted.contains(t))
            .map(|_| s)
    });

    let start = match hit {
        None => 0,
        Some(m) => {
            let lead = max_chars / 4;
            let preceding: Vec<(usize, char)> = text[..m].char_indices().collect();
            let mut s = preceding.len().checked_sub(lead).map_or(0, |i| preceding[i].0);
            // snap forward to the start of a word, never past the match
            while s > 0 && s < m && !text[..s].ends_with(' ') {
                s += text[s..].chars().next().map_or(1, char::len_utf8);
            }
            s
        }
    };

    let window = &text[start..];
    if window.chars().count() <= max_chars {
        return window.to_string();
    }
    let cut = window.char_indices().nth(max_chars).map_or(window.len(), |(i, _)| i);
    let head = &window[..cut];
    let head = match head.rfind(' ') {
        Some(sp) if sp > 0 => head[..sp].trim_end(),
        _ => head,
    };
    format!("{head}…")
}
