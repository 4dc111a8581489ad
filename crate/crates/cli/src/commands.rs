use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use usersim::agents::{AgentEnv, PromptTemplates, UserConfigKind};
use usersim::corpus::{parse_jsonl_corpus, parse_qrels, parse_topics, parse_trectext, Document, QrelSet, Topic};
use usersim::eval::{
    aggregate_curves, information_gain_curve, sdcg_curve, sdcg_points, union_grid, EvalError, MeanPoint, SdcgScope,
};
use usersim::index::{IndexOptions, InvertedIndex};
use usersim::llm::{ChatBackend, HttpBackend, LlmError, ReplyTable, ScriptedBackend};
use usersim::sim::{
    run_campaign, validate_campaign, Action, CampaignObserver, CampaignPlan, SessionContext, SessionLog, SimError,
};

use crate::config::{hex_sha256, BackendKind, CorpusFormat, EvalSection, LoadedConfig};
use crate::CliError;

/// `(x, y)` points of one session curve.
type Curve = Vec<(f64, f64)>;

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::Validation(format!("reading {}: {e}", path.display())))
}

/// Writes through a temporary file so readers never see half a file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("json");
    out.push(b'\n');
    out
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn validation(e: impl std::fmt::Display) -> CliError {
    CliError::Validation(e.to_string())
}

// ---------------------------------------------------------------------------
// collection

pub fn load_documents(cfg: &LoadedConfig) -> Result<Vec<Document>, CliError> {
    let c = &cfg.config.collection;
    let path = cfg.resolve(&c.corpus);
    let bytes = read(&path)?;
    let parsed = match c.format {
        CorpusFormat::Trectext => parse_trectext(&bytes, c.parse_mode),
        CorpusFormat::Jsonl => parse_jsonl_corpus(&bytes, &c.field_map, c.parse_mode),
    }
    .map_err(|e| validation(format!("{}: {e}", path.display())))?;
    for issue in &parsed.issues {
        warn!("{}: {:?}", path.display(), issue);
    }
    Ok(parsed.value)
}

pub fn load_topics(cfg: &LoadedConfig) -> Result<Vec<Topic>, CliError> {
    let path = cfg.resolve(&cfg.config.collection.topics);
    let topics = parse_topics(&read(&path)?).map_err(|e| validation(format!("{}: {e}", path.display())))?;
    let wanted = &cfg.config.campaign.topics;
    if wanted.is_empty() {
        return Ok(topics);
    }
    for id in wanted {
        if !topics.iter().any(|t| &t.topic_id == id) {
            return Err(validation(format!("campaign.topics: topic {id} not in {}", path.display())));
        }
    }
    Ok(topics.into_iter().filter(|t| wanted.contains(&t.topic_id)).collect())
}

pub fn load_qrels(path: &Path) -> Result<QrelSet, CliError> {
    let parsed = parse_qrels(&read(path)?).map_err(|e| validation(format!("{}: {e}", path.display())))?;
    for issue in &parsed.issues {
        warn!("{}: {:?}", path.display(), issue);
    }
    Ok(parsed.value)
}

// ---------------------------------------------------------------------------
// index

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexReport {
    pub n_docs: usize,
    pub vocabulary_size: usize,
    pub avg_doc_len: f64,
    /// Hex sha256 of the serialized index file.
    pub checksum: String,
    pub path: PathBuf,
}

impl std::fmt::Display for IndexReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "n_docs={}", self.n_docs)?;
        writeln!(f, "vocabulary_size={}", self.vocabulary_size)?;
        writeln!(f, "avg_doc_len={:.4}", self.avg_doc_len)?;
        write!(f, "checksum=sha256:{}", self.checksum)
    }
}

/// What the stored index was built from. A mismatch forces a rebuild.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct IndexSource {
    corpus_sha256: String,
    options: IndexOptions,
    format: CorpusFormat,
    field_map: usersim::corpus::FieldMap,
}

fn index_source(cfg: &LoadedConfig) -> Result<IndexSource, CliError> {
    let c = &cfg.config.collection;
    Ok(IndexSource {
        corpus_sha256: hex_sha256(&read(&cfg.resolve(&c.corpus))?),
        options: cfg.config.index.options(),
        format: c.format,
        field_map: c.field_map.clone(),
    })
}

/// Builds the index from the configured corpus and writes it under
/// `<out>/index/`.
pub fn index(cfg: &LoadedConfig) -> Result<IndexReport, CliError> {
    let source = index_source(cfg)?;
    let docs = load_documents(cfg)?;
    let built = InvertedIndex::build(&docs, source.options).map_err(validation)?;
    let mut bytes = Vec::new();
    built.write_to(&mut bytes).map_err(runtime)?;
    let dir = cfg.index_dir();
    let path = dir.join("index.json");
    write_atomic(&path, &bytes)?;
    write_atomic(&dir.join("source.json"), &to_json(&source))?;
    Ok(IndexReport {
        n_docs: built.n_docs(),
        vocabulary_size: built.vocabulary_size(),
        avg_doc_len: built.avg_doc_len(),
        checksum: hex_sha256(&bytes),
        path,
    })
}

/// Loads the stored index, rebuilding it when missing or stale.
pub fn ensure_index(cfg: &LoadedConfig) -> Result<InvertedIndex, CliError> {
    let dir = cfg.index_dir();
    let source = index_source(cfg)?;
    let stored: Option<IndexSource> =
        fs::read(dir.join("source.json")).ok().and_then(|b| serde_json::from_slice(&b).ok());
    if stored.as_ref() == Some(&source) {
        if let Ok(file) = fs::File::open(dir.join("index.json")) {
            match InvertedIndex::read_from(std::io::BufReader::new(file)) {
                Ok(idx) => return Ok(idx),
                Err(e) => warn!("stored index unreadable, rebuilding: {e}"),
            }
        }
    }
    info!("building index");
    let report = index(cfg)?;
    let file = fs::File::open(&report.path)?;
    InvertedIndex::read_from(std::io::BufReader::new(file)).map_err(runtime)
}

// ---------------------------------------------------------------------------
// simulate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEntry {
    pub topic_id: String,
    pub user_kind: UserConfigKind,
    pub seed: u64,
    pub file: String,
    pub queries: usize,
    pub interactions: usize,
    pub anomalies: usize,
    pub aborted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub collection: String,
    pub campaign_seed: u64,
    pub backend: String,
    pub kinds: Vec<UserConfigKind>,
    pub topics: Vec<String>,
    pub anomalies: usize,
    pub sessions: Vec<SessionEntry>,
}

#[derive(Debug, Clone)]
pub struct SimulateReport {
    pub manifest: Manifest,
    pub manifest_path: PathBuf,
    pub logs: Vec<SessionLog>,
    pub reused: usize,
}

pub fn log_file_name(topic_id: &str, kind: UserConfigKind) -> String {
    format!("{topic_id}__{}.jsonl", kind.as_str())
}

/// Persists each finished session and offers earlier ones for reuse.
struct LogDir {
    dir: PathBuf,
    fresh: std::sync::atomic::AtomicUsize,
}

impl CampaignObserver for LogDir {
    fn cached(&self, topic_id: &str, kind: UserConfigKind) -> Option<SessionLog> {
        let text = fs::read_to_string(self.dir.join(log_file_name(topic_id, kind))).ok()?;
        let log = SessionLog::from_jsonl(&text).ok()?;
        if log.validate().is_err() || log.aborted || log.topic_id != topic_id || log.user_kind != kind {
            return None;
        }
        Some(log)
    }

    fn finished(&self, log: &SessionLog) -> Result<(), String> {
        self.fresh.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        let path = self.dir.join(log_file_name(&log.topic_id, log.user_kind));
        write_atomic(&path, log.to_jsonl().as_bytes()).map_err(|e| e.to_string())
    }
}

pub fn make_backend(cfg: &LoadedConfig) -> Result<Box<dyn ChatBackend>, CliError> {
    let llm = &cfg.config.llm;
    match llm.backend {
        BackendKind::Scripted => {
            let path = cfg.resolve(llm.replies.as_ref().ok_or_else(|| validation("llm.replies not set"))?);
            let text = String::from_utf8_lossy(&read(&path)?).into_owned();
            let table = ReplyTable::parse(&text).map_err(|e| validation(format!("{}: {e}", path.display())))?;
            Ok(Box::new(ScriptedBackend::new(table)))
        }
        BackendKind::Live => {
            let config = llm.live.clone().ok_or_else(|| validation("[llm.live] not set"))?;
            match HttpBackend::new(config) {
                Ok(b) => Ok(Box::new(b)),
                Err(e @ (LlmError::MissingApiKey(_) | LlmError::InvalidRequest(_))) => Err(validation(e)),
                Err(e) => Err(runtime(e)),
            }
        }
    }
}

pub fn load_prompts(cfg: &LoadedConfig) -> Result<PromptTemplates, CliError> {
    match &cfg.config.agent.prompt_dir {
        Some(dir) => PromptTemplates::load_dir(&cfg.resolve(dir)).map_err(validation),
        None => Ok(PromptTemplates::default()),
    }
}

/// Runs the configured campaign with the given backend. Sessions already
/// on disk from an identical configuration are reused.
pub fn simulate_with(cfg: &LoadedConfig, backend: &dyn ChatBackend) -> Result<SimulateReport, CliError> {
    let c = &cfg.config;
    let topics = load_topics(cfg)?;
    validate_campaign(&topics, &c.campaign.kinds).map_err(validation)?;
    let qrels = load_qrels(&cfg.resolve(&c.collection.qrels))?;
    let prompts = load_prompts(cfg)?;
    let index = ensure_index(cfg)?;
    backend.probe().map_err(|e| runtime(format!("backend {} unreachable: {e}", backend.describe())))?;

    let config_hash = c.config_hash();
    let logs_dir = cfg.logs_dir();
    fs::create_dir_all(&logs_dir)?;
    let observer = LogDir { dir: logs_dir.clone(), fresh: Default::default() };
    let ctx = SessionContext {
        env: AgentEnv { backend, prompts: &prompts, settings: &c.agent.settings, index: &index },
        qrels: &qrels,
        policy: &c.policy,
        costs: &c.costs,
    };
    let plan = CampaignPlan {
        topics: &topics,
        kinds: &c.campaign.kinds,
        campaign_seed: c.campaign.seed,
        workers: cfg.workers(),
        config_hash: Some(config_hash.clone()),
    };
    let logs = run_campaign(ctx, &plan, &observer).map_err(|e| match e {
        SimError::Campaign(_) | SimError::Policy(_) | SimError::Costs(_) => validation(e),
        other => runtime(other),
    })?;

    let sessions: Vec<SessionEntry> = logs
        .iter()
        .map(|l| SessionEntry {
            topic_id: l.topic_id.clone(),
            user_kind: l.user_kind,
            seed: l.seed,
            file: format!("logs/{}", log_file_name(&l.topic_id, l.user_kind)),
            queries: l.queries_issued.len(),
            interactions: l.interactions.len(),
            anomalies: l.interactions.iter().filter(|i| matches!(i.action, Action::Anomaly { .. })).count(),
            aborted: l.aborted,
        })
        .collect();
    let manifest = Manifest {
        config_hash,
        collection: c.collection.name.clone(),
        campaign_seed: c.campaign.seed,
        backend: backend.describe(),
        kinds: c.campaign.kinds.clone(),
        topics: topics.iter().map(|t| t.topic_id.clone()).collect(),
        anomalies: sessions.iter().map(|s| s.anomalies).sum(),
        sessions,
    };
    let manifest_path = cfg.output_dir.join("manifest.json");
    write_atomic(&manifest_path, &to_json(&manifest))?;
    let reused = logs.len() - observer.fresh.into_inner();
    Ok(SimulateReport { manifest, manifest_path, logs, reused })
}

pub fn simulate(cfg: &LoadedConfig) -> Result<SimulateReport, CliError> {
    let backend = make_backend(cfg)?;
    let report = simulate_with(cfg, backend.as_ref())?;
    if let Some(threshold) = cfg.config.campaign.max_anomalies {
        if report.manifest.anomalies > threshold {
            return Err(CliError::Anomalies { count: report.manifest.anomalies, threshold });
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// evaluate

#[derive(Debug, Clone)]
pub struct EvalRequest {
    pub logs_dir: PathBuf,
    pub out_dir: PathBuf,
    pub collection: String,
    pub qrels: Option<PathBuf>,
    pub options: EvalSection,
    /// Accept logs from different campaign configurations.
    pub force: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRow {
    pub topic_id: String,
    pub user_kind: UserConfigKind,
    pub queries: usize,
    pub judgments: usize,
    pub judged_relevant: usize,
    pub final_effort: f64,
    pub final_effect: f64,
    pub final_sdcg: f64,
    pub unjudged_relevant_count: usize,
    pub aborted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalFile {
    pub file: String,
    pub metric: String,
    pub user_kind: UserConfigKind,
    pub sessions: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalManifest {
    pub collection: String,
    pub config_hashes: Vec<Option<String>>,
    pub binarize: bool,
    pub sdcg_b: f64,
    pub sdcg_bq: f64,
    pub sdcg_scope: SdcgScope,
    pub sessions: usize,
    pub files: Vec<EvalFile>,
}

#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub manifest: EvalManifest,
    pub rows: Vec<SessionRow>,
    pub ig_means: BTreeMap<UserConfigKind, Vec<MeanPoint>>,
    pub sdcg_means: BTreeMap<UserConfigKind, Vec<MeanPoint>>,
}

/// Reads every `*.jsonl` log in `dir`, sorted by file name.
pub fn read_logs(dir: &Path) -> Result<Vec<(String, SessionLog)>, CliError> {
    let entries = fs::read_dir(dir).map_err(|e| validation(format!("reading {}: {e}", dir.display())))?;
    let mut names: Vec<String> = entries
        .filter_map(Result::ok)
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".jsonl"))
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|name| {
            let text = fs::read_to_string(dir.join(&name))?;
            let log = SessionLog::from_jsonl(&text).map_err(|e| validation(format!("{name}: {e}")))?;
            log.validate().map_err(|e| validation(format!("{name}: {e}")))?;
            Ok((name, log))
        })
        .collect()
}

fn fmt_f64(v: f64) -> String {
    // Display is the shortest round-trip form, identical on every platform
    format!("{v}")
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>, CliError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header).map_err(runtime)?;
    for row in rows {
        w.write_record(&row).map_err(runtime)?;
    }
    w.into_inner().map_err(runtime)
}

fn mean_rows(points: &[MeanPoint]) -> impl Iterator<Item = Vec<String>> + '_ {
    points.iter().map(|p| vec![fmt_f64(p.x), fmt_f64(p.mean_y), p.n.to_string()])
}

fn point_rows(points: &[(f64, f64)]) -> impl Iterator<Item = Vec<String>> + '_ {
    points.iter().map(|&(x, y)| vec![fmt_f64(x), fmt_f64(y)])
}

pub fn curve_file_name(collection: &str, metric: &str, kind: UserConfigKind) -> String {
    format!("{collection}__{metric}__{}.csv", kind.as_str())
}

/// Computes per-session and per-kind mean curves and writes them as CSV.
pub fn evaluate(req: &EvalRequest) -> Result<EvalSummary, CliError> {
    req.options.sdcg.validate().map_err(validation)?;
    let logs = read_logs(&req.logs_dir)?;
    if logs.is_empty() {
        return Err(validation(format!("no session logs in {}", req.logs_dir.display())));
    }
    let hashes: BTreeSet<Option<String>> = logs.iter().map(|(_, l)| l.config_hash.clone()).collect();
    if hashes.len() > 1 && !req.force {
        return Err(validation(format!(
            "logs come from {} different campaign configurations; pass --force to evaluate them together",
            hashes.len()
        )));
    }
    let qrels = match (&req.qrels, req.options.sdcg.scope) {
        (Some(p), _) => Some(load_qrels(p)?),
        (None, SdcgScope::Examined) => return Err(validation(EvalError::MissingQrels)),
        (None, SdcgScope::Viewed) => None,
    };

    let out = &req.out_dir;
    let mut files = Vec::new();
    let mut rows = Vec::new();
    let mut by_kind: BTreeMap<UserConfigKind, (Vec<Curve>, Vec<Curve>)> = BTreeMap::new();
    for (_, log) in &logs {
        let gain = information_gain_curve(log, req.options.gain_options()).map_err(validation)?;
        let sdcg = sdcg_curve(log, req.options.sdcg, qrels.as_ref()).map_err(validation)?;
        let sdcg_pts = sdcg_points(&sdcg);
        let stem = format!("sessions/{}__{}", log.topic_id, log.user_kind.as_str());
        write_atomic(&out.join(format!("{stem}__ig.csv")), &csv_bytes(&["x", "y"], point_rows(&gain.points))?)?;
        write_atomic(&out.join(format!("{stem}__sdcg.csv")), &csv_bytes(&["x", "y"], point_rows(&sdcg_pts))?)?;
        let judgments: Vec<_> = log.judgments().collect();
        rows.push(SessionRow {
            topic_id: log.topic_id.clone(),
            user_kind: log.user_kind,
            queries: log.queries_issued.len(),
            judgments: judgments.len(),
            judged_relevant: judgments.iter().filter(|j| j.1).count(),
            final_effort: gain.final_effort(),
            final_effect: gain.final_effect(),
            final_sdcg: sdcg.final_value(),
            unjudged_relevant_count: gain.unjudged_relevant_count,
            aborted: log.aborted,
        });
        let entry = by_kind.entry(log.user_kind).or_default();
        entry.0.push(gain.points);
        entry.1.push(sdcg_pts);
    }

    let mut ig_means = BTreeMap::new();
    let mut sdcg_means = BTreeMap::new();
    for (kind, (igs, sdcgs)) in &by_kind {
        for (metric, curves, means) in [("ig", igs, &mut ig_means), ("sdcg", sdcgs, &mut sdcg_means)] {
            let mean = aggregate_curves(curves, &union_grid(curves)).map_err(validation)?;
            let name = curve_file_name(&req.collection, metric, *kind);
            let bytes = csv_bytes(&["x", "mean_y", "n"], mean_rows(&mean))?;
            write_atomic(&out.join(&name), &bytes)?;
            files.push(EvalFile {
                file: name,
                metric: metric.into(),
                user_kind: *kind,
                sessions: curves.len(),
                sha256: hex_sha256(&bytes),
            });
            means.insert(*kind, mean);
        }
    }

    rows.sort_by(|a, b| (a.user_kind, &a.topic_id).cmp(&(b.user_kind, &b.topic_id)));
    let session_rows = rows.iter().map(|r| {
        vec![
            r.topic_id.clone(),
            r.user_kind.as_str().into(),
            r.queries.to_string(),
            r.judgments.to_string(),
            r.judged_relevant.to_string(),
            fmt_f64(r.final_effort),
            fmt_f64(r.final_effect),
            fmt_f64(r.final_sdcg),
            r.unjudged_relevant_count.to_string(),
            r.aborted.to_string(),
        ]
    });
    let header = [
        "topic_id",
        "user_kind",
        "queries",
        "judgments",
        "judged_relevant",
        "final_effort",
        "final_effect",
        "final_sdcg",
        "unjudged_relevant_count",
        "aborted",
    ];
    write_atomic(&out.join("sessions.csv"), &csv_bytes(&header, session_rows)?)?;
    let unjudged = rows
        .iter()
        .map(|r| vec![r.topic_id.clone(), r.user_kind.as_str().into(), r.unjudged_relevant_count.to_string()]);
    write_atomic(&out.join("unjudged.csv"), &csv_bytes(&["topic_id", "user_kind", "unjudged_relevant_count"], unjudged)?)?;

    let manifest = EvalManifest {
        collection: req.collection.clone(),
        config_hashes: hashes.into_iter().collect(),
        binarize: req.options.binarize,
        sdcg_b: req.options.sdcg.b,
        sdcg_bq: req.options.sdcg.bq,
        sdcg_scope: req.options.sdcg.scope,
        sessions: rows.len(),
        files,
    };
    write_atomic(&out.join("manifest.json"), &to_json(&manifest))?;
    Ok(EvalSummary { manifest, rows, ig_means, sdcg_means })
}

// ---------------------------------------------------------------------------
// report

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub user_kind: UserConfigKind,
    pub sessions: usize,
    pub mean_final_effect: f64,
    pub mean_final_effort: f64,
    pub mean_final_sdcg: f64,
    pub unjudged_relevant_total: usize,
    pub aborted_sessions: usize,
}

/// Summarizes `sessions.csv` from an evaluation directory into one row per
/// user kind and writes `report.csv` next to it.
pub fn report(eval_dir: &Path) -> Result<Vec<ReportRow>, CliError> {
    let path = eval_dir.join("sessions.csv");
    let bytes = read(&path).map_err(|_| validation(format!("{} missing; run `evaluate` first", path.display())))?;
    let mut reader = csv::Reader::from_reader(bytes.as_slice());
    let mut grouped: BTreeMap<UserConfigKind, Vec<SessionRow>> = BTreeMap::new();
    for row in reader.deserialize::<SessionRow>() {
        let row = row.map_err(|e| validation(format!("{}: {e}", path.display())))?;
        grouped.entry(row.user_kind).or_default().push(row);
    }
    let mean = |rows: &[SessionRow], f: fn(&SessionRow) -> f64| rows.iter().map(f).sum::<f64>() / rows.len() as f64;
    let report: Vec<ReportRow> = grouped
        .iter()
        .map(|(kind, rows)| ReportRow {
            user_kind: *kind,
            sessions: rows.len(),
            mean_final_effect: mean(rows, |r| r.final_effect),
            mean_final_effort: mean(rows, |r| r.final_effort),
            mean_final_sdcg: mean(rows, |r| r.final_sdcg),
            unjudged_relevant_total: rows.iter().map(|r| r.unjudged_relevant_count).sum(),
            aborted_sessions: rows.iter().filter(|r| r.aborted).count(),
        })
        .collect();
    let header = [
        "user_kind",
        "sessions",
        "mean_final_effect",
        "mean_final_effort",
        "mean_final_sdcg",
        "unjudged_relevant_total",
        "aborted_sessions",
    ];
    let out_rows = report.iter().map(|r| {
        vec![
            r.user_kind.as_str().into(),
            r.sessions.to_string(),
            fmt_f64(r.mean_final_effect),
            fmt_f64(r.mean_final_effort),
            fmt_f64(r.mean_final_sdcg),
            r.unjudged_relevant_total.to_string(),
            r.aborted_sessions.to_string(),
        ]
    });
    write_atomic(&eval_dir.join("report.csv"), &csv_bytes(&header, out_rows)?)?;
    Ok(report)
}
