//! Search sessions: query, inspect snippets, open documents, judge, update
//! state, and reformulate until the query budget runs out.
//!
//! Every step is logged as an [`Interaction`] carrying its cost in seconds.
//! Random users draw from one `ChaCha8Rng` per session in this order: for
//! RND, three draws per query (see [`generate_query_naive`]); then, per
//! inspected snippet, one draw for the open decision and, if opened, one
//! draw for the judgment.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agents::{
    decide_relevance_random, generate_query_naive, queries_for_rnd_star, AgentEnv, AgentError, JudgedText,
    UserAgent, UserConfigKind,
};
use crate::corpus::{QrelSet, Topic};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid session policy: {0}")]
    Policy(String),
    #[error("invalid cost model: {0}")]
    Costs(String),
    #[error("invalid campaign: {0}")]
    Campaign(String),
    #[error("RND_STAR session for topic {0} needs the FTTC queries of that topic")]
    MissingFttcQueries(String),
    #[error("worker pool: {0}")]
    Pool(String),
    #[error("session output for topic {topic} ({kind}): {message}")]
    Observer { topic: String, kind: UserConfigKind, message: String },
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("malformed session log: {0}")]
    Structure(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostModel {
    pub query_cost: f64,
    pub snippet_cost: f64,
    pub document_cost: f64,
    pub judgment_cost: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self { query_cost: 10.0, snippet_cost: 3.0, document_cost: 20.0, judgment_cost: 5.0 }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<(), SimError> {
        let all = [self.query_cost, self.snippet_cost, self.document_cost, self.judgment_cost];
        if all.iter().all(|c| c.is_finite() && *c >= 0.0) {
            Ok(())
        } else {
            Err(SimError::Costs("costs must be finite and non-negative".into()))
        }
    }

    pub fn cost_of(&self, action: &Action) -> f64 {
        match action {
            Action::QueryIssued { .. } => self.query_cost,
            Action::SnippetViewed { .. } => self.snippet_cost,
            Action::DocumentViewed { .. } => self.document_cost,
            Action::JudgmentMade { .. } => self.judgment_cost,
            Action::SessionEnded { .. } | Action::Anomaly { .. } => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    /// Inspect this many snippets per query.
    FixedDepth(usize),
    /// Stop after this many snippets in a row that were skipped or judged
    /// not relevant.
    AfterConsecutiveIrrelevant(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionPolicy {
    pub max_queries: usize,
    pub page_size: usize,
    pub max_pages_per_query: usize,
    pub snippet_stop_rule: StopRule,
}

impl Default for SessionPolicy {
    fn default() -> Self {
        Self { max_queries: 10, page_size: 10, max_pages_per_query: 1, snippet_stop_rule: StopRule::FixedDepth(10) }
    }
}

impl SessionPolicy {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.max_queries == 0 || self.page_size == 0 || self.max_pages_per_query == 0 {
            return Err(SimError::Policy("max_queries, page_size and max_pages_per_query must be >= 1".into()));
        }
        match self.snippet_stop_rule {
            StopRule::FixedDepth(k) if k > self.page_size * self.max_pages_per_query => Err(SimError::Policy(
                format!("fixed depth {k} exceeds page_size * max_pages_per_query"),
            )),
            StopRule::FixedDepth(0) | StopRule::AfterConsecutiveIrrelevant(0) => {
                Err(SimError::Policy("stop rule parameter must be >= 1".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndReason {
    MaxQueries,
    QueriesExhausted,
    BackendFailure,
    AgentFailure,
}

fn required<'de, D: Deserializer<'de>>(d: D) -> Result<Option<u32>, D::Error> {
    Option::<u32>::deserialize(d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Action {
    QueryIssued { query: String },
    SnippetViewed { doc_id: String, rank: usize },
    DocumentViewed { doc_id: String },
    /// `grade` is the qrels grade at judgment time, `null` when unjudged.
    /// The field itself must be present.
    JudgmentMade {
        doc_id: String,
        relevant: bool,
        #[serde(deserialize_with = "required")]
        grade: Option<u32>,
    },
    SessionEnded { reason: EndReason },
    Anomaly { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub seq: u64,
    #[serde(flatten)]
    pub action: Action,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionLog {
    pub topic_id: String,
    pub user_kind: UserConfigKind,
    pub seed: u64,
    #[serde(default)]
    pub config_hash: Option<String>,
    pub queries_issued: Vec<String>,
    pub aborted: bool,
    #[serde(skip)]
    pub interactions: Vec<Interaction>,
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    record: String,
    #[serde(flatten)]
    log: SessionLog,
}

const HEADER_RECORD: &str = "session";

impl SessionLog {
    pub fn total_cost(&self) -> f64 {
        self.interactions.iter().map(|i| i.cost).sum()
    }

    pub fn end_reason(&self) -> Option<EndReason> {
        match self.interactions.last().map(|i| &i.action) {
            Some(Action::SessionEnded { reason }) => Some(*reason),
            _ => None,
        }
    }

    pub fn judgments(&self) -> impl Iterator<Item = (&str, bool, Option<u32>)> {
        self.interactions.iter().filter_map(|i| match &i.action {
            Action::JudgmentMade { doc_id, relevant, grade } => Some((doc_id.as_str(), *relevant, *grade)),
            _ => None,
        })
    }

    /// A header record followed by one line per interaction.
    pub fn to_jsonl(&self) -> String {
        let header = HeaderLine { record: HEADER_RECORD.into(), log: self.clone() };
        let mut out = serde_json::to_string(&header).expect("log header serializes");
        out.push('\n');
        for i in &self.interactions {
            out.push_str(&serde_json::to_string(i).expect("interaction serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, LogError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or_else(|| LogError::Structure("empty log".into()))?;
        let header: HeaderLine =
            serde_json::from_str(first).map_err(|e| LogError::Parse { line: 1, message: e.to_string() })?;
        if header.record != HEADER_RECORD {
            return Err(LogError::Parse { line: 1, message: format!("expected a `{HEADER_RECORD}` header") });
        }
        let mut log = header.log;
        for (idx, line) in lines {
            let i: Interaction = serde_json::from_str(line)
                .map_err(|e| LogError::Parse { line: idx + 1, message: e.to_string() })?;
            log.interactions.push(i);
        }
        Ok(log)
    }

    /// Structural checks every complete log satisfies.
    pub fn validate(&self) -> Result<(), LogError> {
        let bad = |m: String| Err(LogError::Structure(m));
        let mut last_seq: Option<u64> = None;
        let mut queries = Vec::new();
        let mut snippets_this_query: Vec<&str> = Vec::new();
        let mut viewed: Vec<&str> = Vec::new();
        let mut judged: Vec<&str> = Vec::new();
        let n = self.interactions.len();
        for (pos, i) in self.interactions.iter().enumerate() {
            if last_seq.is_some_and(|s| i.seq <= s) {
                return bad(format!("seq {} does not increase", i.seq));
            }
            last_seq = Some(i.seq);
            if !i.cost.is_finite() || i.cost < 0.0 {
                return bad(format!("seq {}: invalid cost {}", i.seq, i.cost));
            }
            match &i.action {
                Action::QueryIssued { query } => {
                    queries.push(query.as_str());
                    snippets_this_query.clear();
                    viewed.clear();
                }
                Action::SnippetViewed { doc_id, rank } => {
                    if queries.is_empty() {
                        return bad(format!("seq {}: snippet before any query", i.seq));
                    }
                    if *rank == 0 {
                        return bad(format!("seq {}: rank starts at 1", i.seq));
                    }
                    snippets_this_query.push(doc_id);
                }
                Action::DocumentViewed { doc_id } => {
                    if !snippets_this_query.contains(&doc_id.as_str()) {
                        return bad(format!("seq {}: {doc_id} opened without a snippet view", i.seq));
                    }
                    viewed.push(doc_id);
                }
                Action::JudgmentMade { doc_id, .. } => {
                    if !viewed.contains(&doc_id.as_str()) {
                        return bad(format!("seq {}: {doc_id} judged without being viewed for this query", i.seq));
                    }
                    if judged.contains(&doc_id.as_str()) {
                        return bad(format!("seq {}: {doc_id} judged twice", i.seq));
                    }
                    judged.push(doc_id);
                }
                Action::SessionEnded { .. } => {
                    if pos + 1 != n {
                        return bad(format!("seq {}: interactions after session end", i.seq));
                    }
                }
                Action::Anomaly { .. } => {}
            }
        }
        if self.end_reason().is_none() {
            return bad("log does not end with SessionEnded".into());
        }
        if queries != self.queries_issued.iter().map(String::as_str).collect::<Vec<_>>() {
            return bad("queries_issued disagrees with QueryIssued records".into());
        }
        Ok(())
    }
}

/// Per-session seed from the campaign seed, topic and kind. Independent of
/// which other sessions exist in the campaign.
pub fn session_seed(campaign_seed: u64, topic_id: &str, kind: UserConfigKind) -> u64 {
    let mut h = Sha256::new();
    h.update(campaign_seed.to_le_bytes());
    h.update(topic_id.as_bytes());
    h.update([0u8]);
    h.update(kind.as_str().as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Everything a session reads besides its topic, kind and seed.
#[derive(Clone, Copy)]
pub struct SessionContext<'a> {
    pub env: AgentEnv<'a>,
    pub qrels: &'a QrelSet,
    pub policy: &'a SessionPolicy,
    pub costs: &'a CostModel,
}

struct Recorder<'c> {
    costs: &'c CostModel,
    interactions: Vec<Interaction>,
}

impl Recorder<'_> {
    fn push(&mut self, action: Action) {
        let cost = self.costs.cost_of(&action);
        let seq = self.interactions.len() as u64;
        self.interactions.push(Interaction { seq, action, cost });
    }

    fn anomalies(&mut self, agent: &mut UserAgent<'_>) {
        for message in agent.take_anomalies() {
            self.push(Action::Anomaly { message });
        }
    }
}

fn failure(e: &AgentError) -> EndReason {
    match e {
        AgentError::Backend(_) => EndReason::BackendFailure,
        _ => EndReason::AgentFailure,
    }
}

struct Session<'a, 'c> {
    ctx: SessionContext<'a>,
    topic: &'a Topic,
    kind: UserConfigKind,
    agent: UserAgent<'a>,
    rng: ChaCha8Rng,
    rec: Recorder<'c>,
    issued: Vec<String>,
}

impl Session<'_, '_> {
    fn decide(&mut self, doc_id: &str, shown: JudgedText<'_>) -> Result<bool, AgentError> {
        if self.kind.is_random() {
            let p = self.ctx.env.settings.random_relevance_p;
            return Ok(decide_relevance_random(&mut self.rng, p));
        }
        let r = self.agent.decide_relevance_llm(doc_id, shown);
        self.rec.anomalies(&mut self.agent);
        r
    }

    fn next_query(&mut self, initial: &mut VecDeque<String>) -> Result<Option<String>, AgentError> {
        if self.kind == UserConfigKind::Rnd {
            return generate_query_naive(self.topic, &mut self.rng).map(Some);
        }
        if self.kind.is_feedback() && self.agent.state().has_judgments() {
            let r = self.agent.generate_followup_query(&self.issued);
            self.rec.anomalies(&mut self.agent);
            return r.map(Some);
        }
        Ok(initial.pop_front())
    }

    fn examine(&mut self, query: &str) -> Result<(), AgentError> {
        let policy = *self.ctx.policy;
        let mut inspected = 0usize;
        let mut consecutive_irrelevant = 0usize;
        for page in 1..=policy.max_pages_per_query {
            let serp = self.ctx.env.index.search(query, page, policy.page_size);
            if serp.results.is_empty() {
                break;
            }
            for (result, snippet) in serp.results.iter().zip(&serp.snippets) {
                let stop = match policy.snippet_stop_rule {
                    StopRule::FixedDepth(k) => inspected >= k,
                    StopRule::AfterConsecutiveIrrelevant(n) => consecutive_irrelevant >= n,
                };
                if stop {
                    return Ok(());
                }
                let doc_id = result.doc_id.as_str();
                if self.agent.state().is_judged(doc_id) {
                    continue;
                }
                self.rec.push(Action::SnippetViewed { doc_id: doc_id.to_string(), rank: result.rank });
                inspected += 1;
                let mut found = false;
                if self.decide(doc_id, JudgedText::Snippet(snippet))? {
                    self.rec.push(Action::DocumentViewed { doc_id: doc_id.to_string() });
                    let relevant = self.decide(doc_id, JudgedText::FullDocument)?;
                    let grade = self.ctx.qrels.grade(&self.topic.topic_id, doc_id);
                    self.rec.push(Action::JudgmentMade { doc_id: doc_id.to_string(), relevant, grade });
                    let r = self.agent.update_knowledge_state(doc_id, relevant);
                    self.rec.anomalies(&mut self.agent);
                    r?;
                    found = relevant;
                }
                consecutive_irrelevant = if found { 0 } else { consecutive_irrelevant + 1 };
            }
        }
        Ok(())
    }

    fn run(&mut self, mut initial: VecDeque<String>) -> Result<EndReason, AgentError> {
        if !self.kind.is_random() {
            let r = self.agent.generate_initial_queries();
            self.rec.anomalies(&mut self.agent);
            initial = r?.into();
        }
        loop {
            if self.issued.len() >= self.ctx.policy.max_queries {
                return Ok(EndReason::MaxQueries);
            }
            let Some(query) = self.next_query(&mut initial)? else {
                return Ok(EndReason::QueriesExhausted);
            };
            self.rec.push(Action::QueryIssued { query: query.clone() });
            self.issued.push(query.clone());
            self.examine(&query)?;
        }
    }
}

/// Runs one session. `rnd_star_queries` supplies FTTC's issued queries and
/// is required for `RND_STAR`, ignored otherwise. Backend and agent
/// failures end the session early with `aborted` set; the partial log is
/// kept.
pub fn run_session(
    ctx: SessionContext<'_>,
    topic: &Topic,
    kind: UserConfigKind,
    seed: u64,
    rnd_star_queries: Option<&[String]>,
) -> Result<SessionLog, SimError> {
    ctx.policy.validate()?;
    ctx.costs.validate()?;
    let initial: VecDeque<String> = match (kind, rnd_star_queries) {
        (UserConfigKind::RndStar, Some(q)) => queries_for_rnd_star(q).into(),
        (UserConfigKind::RndStar, None) => return Err(SimError::MissingFttcQueries(topic.topic_id.clone())),
        _ => VecDeque::new(),
    };
    let mut session = Session {
        ctx,
        topic,
        kind,
        agent: UserAgent::new(ctx.env, topic, kind),
        rng: ChaCha8Rng::seed_from_u64(seed),
        rec: Recorder { costs: ctx.costs, interactions: Vec::new() },
        issued: Vec::new(),
    };
    let (reason, aborted) = match session.run(initial) {
        Ok(r) => (r, false),
        Err(e) => {
            log::warn!("topic {} ({kind}): session aborted: {e}", topic.topic_id);
            session.rec.push(Action::Anomaly { message: e.to_string() });
            (failure(&e), true)
        }
    };
    session.rec.push(Action::SessionEnded { reason });
    Ok(SessionLog {
        topic_id: topic.topic_id.clone(),
        user_kind: kind,
        seed,
        config_hash: None,
        queries_issued: session.issued,
        aborted,
        interactions: session.rec.interactions,
    })
}

/// Campaign-level checks made before any session starts.
pub fn validate_campaign(topics: &[Topic], kinds: &[UserConfigKind]) -> Result<(), SimError> {
    if kinds.is_empty() {
        return Err(SimError::Campaign("no user kinds configured".into()));
    }
    if topics.is_empty() {
        return Err(SimError::Campaign("no topics configured".into()));
    }
    for (i, k) in kinds.iter().enumerate() {
        if kinds[..i].contains(k) {
            return Err(SimError::Campaign(format!("user kind {k} listed twice")));
        }
    }
    for (i, t) in topics.iter().enumerate() {
        if topics[..i].iter().any(|o| o.topic_id == t.topic_id) {
            return Err(SimError::Campaign(format!("topic {} listed twice", t.topic_id)));
        }
    }
    if kinds.contains(&UserConfigKind::RndStar) && !kinds.contains(&UserConfigKind::Fttc) {
        return Err(SimError::Campaign("RND_STAR requires FTTC in the same campaign".into()));
    }
    Ok(())
}

/// Kinds in configured order, except that RND_STAR always follows FTTC.
pub fn kind_order(kinds: &[UserConfigKind]) -> Vec<UserConfigKind> {
    let mut out = kinds.to_vec();
    let star = out.iter().position(|k| *k == UserConfigKind::RndStar);
    let fttc = out.iter().position(|k| *k == UserConfigKind::Fttc);
    if let (Some(s), Some(f)) = (star, fttc) {
        if s < f {
            let k = out.remove(s);
            out.insert(f, k);
        }
    }
    out
}

/// Output order of a campaign: topics outer, kinds inner.
pub fn session_order<'t>(topics: &'t [Topic], kinds: &[UserConfigKind]) -> Vec<(&'t Topic, UserConfigKind)> {
    let kinds = kind_order(kinds);
    topics.iter().flat_map(|t| kinds.iter().map(move |k| (t, *k))).collect()
}

#[derive(Debug, Clone)]
pub struct CampaignPlan<'a> {
    pub topics: &'a [Topic],
    pub kinds: &'a [UserConfigKind],
    pub campaign_seed: u64,
    pub workers: usize,
    pub config_hash: Option<String>,
}

/// Callbacks for resuming and persisting a campaign. Both run on worker
/// threads.
pub trait CampaignObserver: Sync {
    /// A previously finished log for this session, if one can be reused.
    fn cached(&self, _topic_id: &str, _kind: UserConfigKind) -> Option<SessionLog> {
        None
    }

    /// Called once per freshly run session.
    fn finished(&self, _log: &SessionLog) -> Result<(), String> {
        Ok(())
    }
}

impl CampaignObserver for () {}

/// Runs every (topic, kind) session on a pool of `workers` threads and
/// returns the logs in [`session_order`]. FTTC sessions finish before any
/// RND_STAR session starts.
pub fn run_campaign(
    ctx: SessionContext<'_>,
    plan: &CampaignPlan<'_>,
    observer: &dyn CampaignObserver,
) -> Result<Vec<SessionLog>, SimError> {
    validate_campaign(plan.topics, plan.kinds)?;
    ctx.policy.validate()?;
    ctx.costs.validate()?;
    let order = session_order(plan.topics, plan.kinds);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.workers.max(1))
        .build()
        .map_err(|e| SimError::Pool(e.to_string()))?;

    let run_one = |topic: &Topic, kind: UserConfigKind, fttc: Option<&SessionLog>| -> Result<SessionLog, SimError> {
        let seed = session_seed(plan.campaign_seed, &topic.topic_id, kind);
        if let Some(log) = observer.cached(&topic.topic_id, kind) {
            if log.seed == seed && log.config_hash == plan.config_hash {
                return Ok(log);
            }
        }
        let queries = fttc.map(|l| l.queries_issued.as_slice());
        let mut log = run_session(ctx, topic, kind, seed, queries)?;
        log.config_hash = plan.config_hash.clone();
        observer
            .finished(&log)
            .map_err(|message| SimError::Observer { topic: topic.topic_id.clone(), kind, message })?;
        Ok(log)
    };

    let mut logs: Vec<Option<SessionLog>> = vec![None; order.len()];
    pool.install(|| -> Result<(), SimError> {
        let first: Vec<(usize, SessionLog)> = order
            .par_iter()
            .enumerate()
            .filter(|(_, (_, k))| *k != UserConfigKind::RndStar)
            .map(|(i, (t, k))| run_one(t, *k, None).map(|l| (i, l)))
            .collect::<Result<_, _>>()?;
        for (i, l) in first {
            logs[i] = Some(l);
        }
        let find_fttc = |topic_id: &str| {
            order
                .iter()
                .position(|(t, k)| t.topic_id == topic_id && *k == UserConfigKind::Fttc)
                .and_then(|i| logs[i].as_ref())
        };
        let second: Vec<(usize, SessionLog)> = order
            .par_iter()
            .enumerate()
            .filter(|(_, (_, k))| *k == UserConfigKind::RndStar)
            .map(|(i, (t, k))| run_one(t, *k, find_fttc(&t.topic_id)).map(|l| (i, l)))
            .collect::<Result<_, _>>()?;
        for (i, l) in second {
            logs[i] = Some(l);
        }
        Ok(())
    })?;
    Ok(logs.into_iter().map(|l| l.expect("every session ran")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{AgentSettings, PromptTemplates};
    use crate::corpus::{DocSource, Document};
    use crate::index::{IndexOptions, InvertedIndex};
    use crate::llm::{ChatBackend, ReplyTable, ScriptedBackend};
    use proptest::prelude::*;

    fn topic(id: &str) -> Topic {
        Topic {
            topic_id: id.into(),
            title: "reef bleaching".into(),
            description: Some("Find reports on coral reef bleaching".into()),
            narrative: Some("Relevant documents describe bleaching of reefs".into()),
        }
    }

    fn docs(n: usize) -> Vec<Document> {
        (0..n)
            .map(|i| Document {
                doc_id: format!("D{i:02}"),
                title: None,
                body: format!(
                    "{} report {i} {}",
                    if i % 2 == 0 { "reef bleaching" } else { "coral reef" },
                    "word ".repeat(i % 5)
                ),
                source: DocSource::Synthetic,
            })
            .collect()
    }

    fn scripted(text: &str) -> ScriptedBackend {
        ScriptedBackend::new(ReplyTable::parse(text).unwrap())
    }

    struct Fixture {
        index: InvertedIndex,
        prompts: PromptTemplates,
        settings: AgentSettings,
        qrels: QrelSet,
        costs: CostModel,
    }

    impl Fixture {
        fn new(n_docs: usize) -> Self {
            let mut qrels = QrelSet::new();
            for i in 0..n_docs {
                if i % 3 != 2 {
                    qrels.insert("1", &format!("D{i:02}"), (i % 3) as u32);
                }
            }
            Self {
                index: InvertedIndex::build(&docs(n_docs), IndexOptions::default()).unwrap(),
                prompts: PromptTemplates::default(),
                settings: AgentSettings::default(),
                qrels,
                costs: CostModel::default(),
            }
        }

        fn ctx<'a>(&'a self, backend: &'a dyn ChatBackend, policy: &'a SessionPolicy) -> SessionContext<'a> {
            SessionContext {
                env: AgentEnv {
                    backend,
                    prompts: &self.prompts,
                    settings: &self.settings,
                    index: &self.index,
                },
                qrels: &self.qrels,
                policy,
                costs: &self.costs,
            }
        }
    }

    fn kinds_of(log: &SessionLog) -> Vec<&'static str> {
        log.interactions
            .iter()
            .map(|i| match i.action {
                Action::QueryIssued { .. } => "Q",
                Action::SnippetViewed { .. } => "S",
                Action::DocumentViewed { .. } => "D",
                Action::JudgmentMade { .. } => "J",
                Action::SessionEnded { .. } => "E",
                Action::Anomaly { .. } => "A",
            })
            .collect()
    }

    const ALL_RELEVANT: &str = "\
Task: generate search queries => 1. reef bleaching\\n2. coral reef\\n3. zzz
Task: relevance judgment => RELEVANT
Task: write one new search query => reef report || coral word || bleaching word
* => summary text
";

    #[test]
    fn query_without_hits_ends_quietly() {
        let f = Fixture::new(6);
        let backend = scripted("Task: generate search queries => 1. zzz\n* => RELEVANT");
        let policy = SessionPolicy { max_queries: 1, page_size: 2, ..Default::default() };
        let policy = SessionPolicy { snippet_stop_rule: StopRule::FixedDepth(2), ..policy };
        let t = topic("1");
        let log = run_session(f.ctx(&backend, &policy), &t, UserConfigKind::Fttc, 1, None).unwrap();
        // one anomaly for the short query list
        assert_eq!(kinds_of(&log), vec!["A", "Q", "E"]);
        assert_eq!(log.end_reason(), Some(EndReason::MaxQueries));
        assert_eq!(log.judgments().count(), 0);
        log.validate().unwrap();
    }

    #[test]
    fn all_relevant_trace() {
        let f = Fixture::new(6);
        let mut settings = f.settings.clone();
        settings.queries_per_session = 1;
        let f = Fixture { settings, ..f };
        let backend = scripted(ALL_RELEVANT);
        let policy = SessionPolicy {
            max_queries: 1,
            page_size: 2,
            max_pages_per_query: 1,
            snippet_stop_rule: StopRule::FixedDepth(2),
        };
        let t = topic("1");
        let log = run_session(f.ctx(&backend, &policy), &t, UserConfigKind::Fttc, 1, None).unwrap();
        assert_eq!(kinds_of(&log), vec!["Q", "S", "D", "J", "S", "D", "J", "E"]);
        assert!(log.judgments().all(|(_, rel, _)| rel));
        let expected = 10.0 + 2.0 * (3.0 + 20.0 + 5.0);
        assert_eq!(log.total_cost(), expected);
        log.validate().unwrap();
    }

    #[test]
    fn sessions_are_reproducible() {
        let f = Fixture::new(12);
        let backend = scripted(ALL_RELEVANT);
        let policy = SessionPolicy::default();
        let t = topic("1");
        for kind in [UserConfigKind::Rnd, UserConfigKind::Crf] {
            let a = run_session(f.ctx(&backend, &policy), &t, kind, 5, None).unwrap();
            let b = run_session(f.ctx(&backend, &policy), &t, kind, 5, None).unwrap();
            assert_eq!(a.to_jsonl(), b.to_jsonl());
        }
    }

    #[test]
    fn judged_documents_skipped_on_later_queries() {
        let f = Fixture::new(6);
        let backend = scripted(ALL_RELEVANT);
        let policy = SessionPolicy { max_queries: 3, page_size: 10, ..Default::default() };
        let t = topic("1");
        let log = run_session(f.ctx(&backend, &policy), &t, UserConfigKind::Fttc, 1, None).unwrap();
        log.validate().unwrap();
        let judged: Vec<&str> = log.judgments().map(|j| j.0).collect();
        let mut unique = judged.clone();
        unique.sort();
        unique.dedup();
        assert_eq!(judged.len(), unique.len());
        assert_eq!(log.queries_issued.len(), 3);
    }

    #[test]
    fn feedback_user_switches_to_followups_after_first_judgment() {
        let f = Fixture::new(6);
        let backend = scripted(ALL_RELEVANT);
        let policy = SessionPolicy { max_queries: 3, page_size: 2, ..Default::default() };
        let policy = SessionPolicy { snippet_stop_rule: StopRule::FixedDepth(2), ..policy };
        let t = topic("1");
        let log = run_session(f.ctx(&backend, &policy), &t, UserConfigKind::Prf, 1, None).unwrap();
        assert_eq!(log.queries_issued, vec!["reef bleaching", "reef report", "coral word"]);
        let fttc = run_session(f.ctx(&backend, &policy), &t, UserConfigKind::Fttc, 1, None).unwrap();
        assert_eq!(fttc.queries_issued, vec!["reef bleaching", "coral reef", "zzz"]);
    }

    #[test]
    fn backend_failure_keeps_partial_log() {
        let f = Fixture::new(6);
        let backend = scripted("Task: generate search queries => 1. reef bleaching");
        let policy = SessionPolicy::default();
        let t = topic("1");
        let log = run_session(f.ctx(&backend, &policy), &t, UserConfigKind::Fttc, 1, None).unwrap();
        assert!(log.aborted);
        assert_eq!(log.end_reason(), Some(EndReason::BackendFailure));
        assert_eq!(log.queries_issued, vec!["reef bleaching"]);
        log.validate().unwrap();
    }

    #[test]
    fn rnd_star_needs_queries() {
        let f = Fixture::new(6);
        let backend = scripted("* => x");
        let policy = SessionPolicy::default();
        let t = topic("1");
        assert!(matches!(
            run_session(f.ctx(&backend, &policy), &t, UserConfigKind::RndStar, 1, None),
            Err(SimError::MissingFttcQueries(_))
        ));
        let q = vec!["coral".to_string(), "reef".to_string()];
        let log = run_session(f.ctx(&backend, &policy), &t, UserConfigKind::RndStar, 1, Some(&q)).unwrap();
        assert_eq!(log.queries_issued, q);
        assert_eq!(log.end_reason(), Some(EndReason::QueriesExhausted));
    }

    #[test]
    fn policy_validation() {
        assert!(SessionPolicy::default().validate().is_ok());
        let p = SessionPolicy { snippet_stop_rule: StopRule::FixedDepth(11), ..Default::default() };
        assert!(p.validate().is_err());
        assert!(SessionPolicy { max_queries: 0, ..Default::default() }.validate().is_err());
        assert!(CostModel { snippet_cost: -1.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn jsonl_round_trip_and_required_grade() {
        let f = Fixture::new(8);
        let backend = scripted(ALL_RELEVANT);
        let policy = SessionPolicy::default();
        let log = run_session(f.ctx(&backend, &policy), &topic("1"), UserConfigKind::Nrf, 3, None).unwrap();
        let text = log.to_jsonl();
        assert_eq!(SessionLog::from_jsonl(&text).unwrap(), log);
        assert!(text.contains("\"grade\":null"));

        let broken = text.replacen(",\"grade\":null", "", 1);
        assert!(matches!(SessionLog::from_jsonl(&broken), Err(LogError::Parse { .. })));
    }

    #[test]
    fn validate_catches_structure_errors() {
        let mut log = SessionLog {
            topic_id: "1".into(),
            user_kind: UserConfigKind::Rnd,
            seed: 0,
            config_hash: None,
            queries_issued: vec!["q".into()],
            aborted: false,
            interactions: vec![
                Interaction { seq: 0, action: Action::QueryIssued { query: "q".into() }, cost: 1.0 },
                Interaction {
                    seq: 1,
                    action: Action::JudgmentMade { doc_id: "d".into(), relevant: true, grade: Some(1) },
                    cost: 1.0,
                },
                Interaction { seq: 2, action: Action::SessionEnded { reason: EndReason::MaxQueries }, cost: 0.0 },
            ],
        };
        assert!(log.validate().is_err());
        log.interactions.remove(1);
        log.interactions[1].seq = 1;
        log.validate().unwrap();
        log.interactions.pop();
        assert!(log.validate().is_err());
    }

    #[test]
    fn seeds_depend_only_on_topic_and_kind() {
        let a = session_seed(7, "1", UserConfigKind::Rnd);
        assert_eq!(a, session_seed(7, "1", UserConfigKind::Rnd));
        assert_ne!(a, session_seed(8, "1", UserConfigKind::Rnd));
        assert_ne!(a, session_seed(7, "2", UserConfigKind::Rnd));
        assert_ne!(a, session_seed(7, "1", UserConfigKind::RndStar));
    }

    #[test]
    fn kind_order_puts_rnd_star_after_fttc() {
        use UserConfigKind::*;
        assert_eq!(kind_order(&[RndStar, Rnd, Fttc, Prf]), vec![Rnd, Fttc, RndStar, Prf]);
        assert_eq!(kind_order(&[Fttc, Prf, RndStar]), vec![Fttc, Prf, RndStar]);
        assert_eq!(kind_order(&[Ttt, Rnd]), vec![Ttt, Rnd]);
    }

    #[test]
    fn campaign_validation() {
        use UserConfigKind::*;
        let topics = [topic("1")];
        assert!(validate_campaign(&topics, &[RndStar]).is_err());
        assert!(validate_campaign(&topics, &[]).is_err());
        assert!(validate_campaign(&topics, &[Rnd, Rnd]).is_err());
        assert!(validate_campaign(&[topic("1"), topic("1")], &[Rnd]).is_err());
        assert!(validate_campaign(&topics, &[Fttc, RndStar]).is_ok());
    }

    #[test]
    fn campaign_order_and_isolation() {
        use UserConfigKind::*;
        let f = Fixture::new(12);
        let backend = scripted(ALL_RELEVANT);
        let policy = SessionPolicy::default();
        let topics = [topic("1"), topic("2")];
        let plan = CampaignPlan {
            topics: &topics,
            kinds: &[Rnd, Fttc],
            campaign_seed: 11,
            workers: 3,
            config_hash: Some("h".into()),
        };
        let logs = run_campaign(f.ctx(&backend, &policy), &plan, &()).unwrap();
        let keys: Vec<(&str, UserConfigKind)> = logs.iter().map(|l| (l.topic_id.as_str(), l.user_kind)).collect();
        assert_eq!(keys, vec![("1", Rnd), ("1", Fttc), ("2", Rnd), ("2", Fttc)]);
        assert!(logs.iter().all(|l| l.config_hash.as_deref() == Some("h")));

        let again = run_campaign(f.ctx(&backend, &policy), &plan, &()).unwrap();
        assert_eq!(logs, again);

        let wider = CampaignPlan { kinds: &[Rnd, Fttc, RndStar], workers: 1, ..plan.clone() };
        let more = run_campaign(f.ctx(&backend, &policy), &wider, &()).unwrap();
        let kept: Vec<&SessionLog> = more.iter().filter(|l| l.user_kind != RndStar).collect();
        assert_eq!(kept, logs.iter().collect::<Vec<_>>());
        for (fttc, star) in more.iter().filter(|l| l.user_kind == Fttc).zip(more.iter().filter(|l| l.user_kind == RndStar)) {
            assert_eq!(fttc.queries_issued, star.queries_issued);
        }
    }

    #[test]
    fn campaign_reuses_matching_cached_logs() {
        use std::sync::Mutex;
        use UserConfigKind::*;
        struct Cache(Vec<SessionLog>, Mutex<usize>);
        impl CampaignObserver for Cache {
            fn cached(&self, topic_id: &str, kind: UserConfigKind) -> Option<SessionLog> {
                self.0.iter().find(|l| l.topic_id == topic_id && l.user_kind == kind).cloned()
            }
            fn finished(&self, _log: &SessionLog) -> Result<(), String> {
                *self.1.lock().unwrap() += 1;
                Ok(())
            }
        }
        let f = Fixture::new(12);
        let backend = scripted(ALL_RELEVANT);
        let policy = SessionPolicy::default();
        let topics = [topic("1"), topic("2")];
        let plan = CampaignPlan { topics: &topics, kinds: &[Rnd, Fttc], campaign_seed: 1, workers: 2, config_hash: None };
        let full = run_campaign(f.ctx(&backend, &policy), &plan, &()).unwrap();
        let cache = Cache(full[..2].to_vec(), Mutex::new(0));
        let resumed = run_campaign(f.ctx(&backend, &policy), &plan, &cache).unwrap();
        assert_eq!(resumed, full);
        assert_eq!(*cache.1.lock().unwrap(), 2);
    }

    fn policies() -> impl Strategy<Value = SessionPolicy> {
        (1usize..5, 1usize..6, 1usize..3, any::<bool>(), 1usize..6).prop_map(|(mq, ps, mp, fixed, k)| {
            let rule = if fixed {
                StopRule::FixedDepth(k.min(ps * mp))
            } else {
                StopRule::AfterConsecutiveIrrelevant(k)
            };
            SessionPolicy { max_queries: mq, page_size: ps, max_pages_per_query: mp, snippet_stop_rule: rule }
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn session_invariants(
            policy in policies(),
            seed in any::<u64>(),
            kind in prop::sample::select(vec![UserConfigKind::Rnd, UserConfigKind::Fttc, UserConfigKind::Crf]),
            costs in (0u32..30, 0u32..30, 0u32..30, 0u32..30),
        ) {
            let mut f = Fixture::new(14);
            f.costs = CostModel {
                query_cost: costs.0 as f64 * 0.5,
                snippet_cost: costs.1 as f64 * 0.5,
                document_cost: costs.2 as f64 * 0.5,
                judgment_cost: costs.3 as f64 * 0.5,
            };
            let backend = scripted("\
Task: generate search queries => 1. reef bleaching\\n2. coral\\n3. report word
Task: relevance judgment && Document [D01] => NOT RELEVANT
Task: relevance judgment && Document [D04] => NOT RELEVANT
Task: relevance judgment => RELEVANT
Task: write one new search query => word || reef || bleaching report
* => summary");
            let t = topic("1");
            let log = run_session(f.ctx(&backend, &policy), &t, kind, seed, None).unwrap();
            prop_assert!(log.validate().is_ok(), "{:?}", log.validate());

            let count = |name: &str| kinds_of(&log).iter().filter(|k| **k == name).count() as f64;
            let expected = f.costs.query_cost * count("Q")
                + f.costs.snippet_cost * count("S")
                + f.costs.document_cost * count("D")
                + f.costs.judgment_cost * count("J");
            prop_assert!((log.total_cost() - expected).abs() < 1e-9);
            prop_assert!(log.queries_issued.len() <= policy.max_queries);

            let again = run_session(f.ctx(&backend, &policy), &t, kind, seed, None).unwrap();
            prop_assert_eq!(log.to_jsonl(), again.to_jsonl());
        }
    }
}
