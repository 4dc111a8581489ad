//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use usersim::agents::{
    decide_relevance_random, generate_query_naive, topic_vocabulary, AgentEnv, AgentSettings, PromptTemplates,
    UserConfigKind,
};
use usersim::corpus::{parse_qrels, parse_topics, parse_trectext, DocSource, Document, ParseMode, QrelSet, Topic};
use usersim::eval::{information_gain_curve, sdcg_curve, GainOptions, SdcgParams, SdcgScope};
use usersim::index::{bm25_score, Bm25Params, IndexOptions, InvertedIndex};
use usersim::llm::{ChatRequest, Matcher, RecordingBackend, ReplyTable, ScriptedBackend};
use usersim::sim::{
    run_campaign, run_session, session_seed, Action, CampaignPlan, CostModel, EndReason, Interaction, SessionContext,
    SessionLog, SessionPolicy,
};
use usersim::text::tokenize;
use usersim_cli::commands::{evaluate, simulate, EvalRequest};
use usersim_cli::{LoadedConfig, Overrides};

type Outcome = Result<String, String>;
type Criterion = (&'static str, &'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/synthetic")
}

struct Fixture {
    docs: Vec<Document>,
    index: InvertedIndex,
    topics: Vec<Topic>,
    qrels: QrelSet,
    replies: ReplyTable,
}

fn fixture() -> Fixture {
    let dir = fixture_dir();
    let read = |n: &str| fs::read(dir.join(n)).unwrap();
    let docs = parse_trectext(&read("corpus.trec"), ParseMode::Strict).unwrap().value;
    Fixture {
        index: InvertedIndex::build(&docs, IndexOptions::default()).unwrap(),
        docs,
        topics: parse_topics(&read("topics.txt")).unwrap(),
        qrels: parse_qrels(&read("qrels.txt")).unwrap().value,
        replies: ReplyTable::parse(&String::from_utf8(read("replies.txt")).unwrap()).unwrap(),
    }
}

// ---------------------------------------------------------------------------
// fuzzed session logs and brute-force metric oracles

const COSTS: [f64; 6] = [0.0, 1.0, 2.5, 3.0, 10.0, 20.0];

fn fuzz_log(rng: &mut ChaCha8Rng, with_zero_costs: bool) -> SessionLog {
    let limit = rng.random_range(1..=100usize);
    let mut actions: Vec<Action> = Vec::new();
    let mut queries = Vec::new();
    let mut judged: Vec<String> = Vec::new();
    let mut rank = 0;
    let mut shown: Vec<String> = Vec::new();
    let mut opened: Vec<String> = Vec::new();
    while actions.len() + 1 < limit {
        let roll = rng.random_range(0..10);
        if queries.is_empty() || roll == 0 {
            let q = format!("query {}", queries.len());
            queries.push(q.clone());
            actions.push(Action::QueryIssued { query: q });
            rank = 0;
            shown.clear();
            opened.clear();
        } else if roll < 5 || shown.is_empty() {
            rank += 1;
            let doc_id = format!("d{}", rng.random_range(0..30));
            if shown.contains(&doc_id) {
                continue;
            }
            shown.push(doc_id.clone());
            actions.push(Action::SnippetViewed { doc_id, rank });
        } else if roll < 8 {
            let candidates: Vec<&String> = shown.iter().filter(|d| !opened.contains(d)).collect();
            if candidates.is_empty() {
                continue;
            }
            let doc_id = candidates[rng.random_range(0..candidates.len())].clone();
            opened.push(doc_id.clone());
            actions.push(Action::DocumentViewed { doc_id });
        } else {
            let candidates: Vec<&String> = opened.iter().filter(|d| !judged.contains(d)).collect();
            if candidates.is_empty() {
                continue;
            }
            let doc_id = candidates[rng.random_range(0..candidates.len())].clone();
            judged.push(doc_id.clone());
            let grade = if rng.random_bool(0.2) { None } else { Some(rng.random_range(0..=3)) };
            actions.push(Action::JudgmentMade { doc_id, relevant: rng.random_bool(0.6), grade });
        }
    }
    actions.push(Action::SessionEnded { reason: EndReason::MaxQueries });
    let interactions = actions
        .into_iter()
        .enumerate()
        .map(|(i, action)| {
            let mut cost = COSTS[rng.random_range(0..COSTS.len())];
            if !with_zero_costs && cost == 0.0 {
                cost = 1.0;
            }
            Interaction { seq: i as u64, action, cost }
        })
        .collect();
    SessionLog {
        topic_id: "t".into(),
        user_kind: UserConfigKind::Fttc,
        seed: 0,
        config_hash: None,
        queries_issued: queries,
        aborted: false,
        interactions,
    }
}

fn oracle_gain(log: &SessionLog) -> (Vec<(f64, f64)>, usize) {
    let (mut effort, mut effect, mut unjudged) = (0.0, 0.0, 0);
    let mut points = Vec::new();
    for i in &log.interactions {
        effort += i.cost;
        if let Action::JudgmentMade { relevant: true, grade, .. } = &i.action {
            match grade {
                Some(g) => effect += *g as f64,
                None => unjudged += 1,
            }
        }
        points.push((effort, effect));
    }
    (points, unjudged)
}

fn oracle_sdcg(log: &SessionLog, b: f64, bq: f64, qrels: Option<&QrelSet>) -> Vec<f64> {
    let disc = |rank: usize| if (rank as f64) < b { 1.0 } else { (rank as f64).ln() / b.ln() };
    let mut per_query: Vec<f64> = Vec::new();
    let mut rank_of: HashMap<String, usize> = HashMap::new();
    for i in &log.interactions {
        match &i.action {
            Action::QueryIssued { .. } => {
                per_query.push(0.0);
                rank_of.clear();
            }
            Action::SnippetViewed { doc_id, rank } => {
                rank_of.insert(doc_id.clone(), *rank);
                if let Some(q) = qrels {
                    let g = q.grade(&log.topic_id, doc_id).unwrap_or(0) as f64;
                    *per_query.last_mut().unwrap() += g / disc(*rank);
                }
            }
            Action::JudgmentMade { doc_id, grade, .. } if qrels.is_none() => {
                let g = grade.unwrap_or(0) as f64;
                *per_query.last_mut().unwrap() += g / disc(rank_of[doc_id]);
            }
            _ => {}
        }
    }
    let mut total = 0.0;
    per_query
        .iter()
        .enumerate()
        .map(|(i, dcg)| {
            let q = (i + 1) as f64;
            total += dcg / (1.0 + q.ln() / bq.ln());
            total
        })
        .collect()
}

fn fuzz_qrels(rng: &mut ChaCha8Rng) -> QrelSet {
    let mut q = QrelSet::new();
    for d in 0..30 {
        if rng.random_bool(0.7) {
            q.insert("t", &format!("d{d}"), rng.random_range(0..=3));
        }
    }
    q
}

fn ac1_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut max_diff: f64 = 0.0;
    for n in 0..1000 {
        let log = fuzz_log(&mut rng, true);
        log.validate().map_err(|e| format!("generator produced invalid log {n}: {e}"))?;
        let gain = information_gain_curve(&log, GainOptions::default()).map_err(|e| e.to_string())?;
        let (want, unjudged) = oracle_gain(&log);
        check(gain.points.len() == want.len(), || format!("log {n}: point count"))?;
        check(gain.unjudged_relevant_count == unjudged, || format!("log {n}: unjudged count"))?;
        for (g, w) in gain.points.iter().zip(&want) {
            max_diff = max_diff.max((g.0 - w.0).abs()).max((g.1 - w.1).abs());
        }
        let b = rng.random_range(2.0..8.0);
        let bq = rng.random_range(2.0..8.0);
        let qrels = fuzz_qrels(&mut rng);
        for (scope, q) in [(SdcgScope::Viewed, None), (SdcgScope::Examined, Some(&qrels))] {
            let curve = sdcg_curve(&log, SdcgParams { b, bq, scope }, q).map_err(|e| e.to_string())?;
            let want = oracle_sdcg(&log, b, bq, q);
            check(curve.points.len() == want.len(), || format!("log {n}: sdcg length"))?;
            for (i, (p, w)) in curve.points.iter().zip(&want).enumerate() {
                check(p.0 == i + 1, || format!("log {n}: query position"))?;
                max_diff = max_diff.max((p.1 - w).abs());
            }
        }
    }
    let elapsed = start.elapsed();
    check(max_diff <= 1e-9, || format!("max |diff| {max_diff:e} > 1e-9"))?;
    check(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!("1000 logs, max |diff| {max_diff:e}, {:.2}s", elapsed.as_secs_f64()))
}

fn log_of(actions: Vec<Action>, cost: f64) -> SessionLog {
    let queries = actions
        .iter()
        .filter_map(|a| match a {
            Action::QueryIssued { query } => Some(query.clone()),
            _ => None,
        })
        .collect();
    SessionLog {
        topic_id: "t".into(),
        user_kind: UserConfigKind::Fttc,
        seed: 0,
        config_hash: None,
        queries_issued: queries,
        aborted: false,
        interactions: actions.into_iter().enumerate().map(|(i, action)| Interaction { seq: i as u64, action, cost }).collect(),
    }
}

fn ac2_hand_cases() -> Outcome {
    let d = "doc".to_string();
    let five = log_of(
        vec![
            Action::QueryIssued { query: "q".into() },
            Action::SnippetViewed { doc_id: d.clone(), rank: 1 },
            Action::DocumentViewed { doc_id: d.clone() },
            Action::JudgmentMade { doc_id: d.clone(), relevant: true, grade: Some(2) },
            Action::SessionEnded { reason: EndReason::MaxQueries },
        ],
        1.0,
    );
    let gain = information_gain_curve(&five, GainOptions::default()).map_err(|e| e.to_string())?;
    let effects: Vec<f64> = gain.points.iter().map(|p| p.1).collect();
    check(gain.points.last() == Some(&(5.0, 2.0)), || format!("final point {:?}", gain.points.last()))?;
    check(effects == [0.0, 0.0, 0.0, 2.0, 2.0], || format!("effects {effects:?}"))?;

    let two = log_of(
        vec![
            Action::QueryIssued { query: "q".into() },
            Action::SnippetViewed { doc_id: "a".into(), rank: 1 },
            Action::DocumentViewed { doc_id: "a".into() },
            Action::JudgmentMade { doc_id: "a".into(), relevant: true, grade: Some(1) },
            Action::QueryIssued { query: "q".into() },
            Action::SnippetViewed { doc_id: "b".into(), rank: 1 },
            Action::DocumentViewed { doc_id: "b".into() },
            Action::JudgmentMade { doc_id: "b".into(), relevant: true, grade: Some(1) },
            Action::SessionEnded { reason: EndReason::MaxQueries },
        ],
        1.0,
    );
    let sdcg = sdcg_curve(&two, SdcgParams::default(), None).map_err(|e| e.to_string())?;
    let expected = 1.0 + 2.0 / 3.0;
    let got = sdcg.final_value();
    check((sdcg.points[0].1 - 1.0).abs() < 1e-12, || format!("first query {}", sdcg.points[0].1))?;
    check((got - expected).abs() < 1e-9, || format!("sDCG {got} vs {expected}"))?;
    Ok(format!("final point (5.0, 2.0); sDCG {got:.10}"))
}

fn ac3_monotonicity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for n in 0..1000 {
        let positive = n % 2 == 0;
        let log = fuzz_log(&mut rng, !positive);
        let gain = information_gain_curve(&log, GainOptions::default()).map_err(|e| e.to_string())?;
        for w in gain.points.windows(2) {
            check(w[1].1 >= w[0].1, || format!("log {n}: effect decreased"))?;
            if positive {
                check(w[1].0 > w[0].0, || format!("log {n}: effort not strictly increasing"))?;
            } else {
                check(w[1].0 >= w[0].0, || format!("log {n}: effort decreased"))?;
            }
        }
        let qrels = fuzz_qrels(&mut rng);
        for (scope, q) in [(SdcgScope::Viewed, None), (SdcgScope::Examined, Some(&qrels))] {
            let curve = sdcg_curve(&log, SdcgParams { scope, ..Default::default() }, q).map_err(|e| e.to_string())?;
            for w in curve.points.windows(2) {
                check(w[1].1 >= w[0].1, || format!("log {n}: sDCG decreased"))?;
            }
        }
    }
    Ok("1000 fuzzed logs, effect/effort/sDCG non-decreasing".into())
}

// ---------------------------------------------------------------------------
// prompt matrix

const REL_MARK: &str = "MARKER-RELEVANT-SUMMARY";
const IRR_MARK: &str = "MARKER-IRRELEVANT-SUMMARY";

fn record_session(f: &Fixture, topic: &Topic, kind: UserConfigKind) -> Vec<ChatRequest> {
    let mut table = ReplyTable::new();
    table.push(Matcher::Contains(vec!["Task: summarize documents".into(), "Polarity: relevant".into()]), vec![REL_MARK.into()]);
    table.push(Matcher::Contains(vec!["Task: summarize documents".into(), "Polarity: not relevant".into()]), vec![IRR_MARK.into()]);
    let mut rest = f.replies.clone();
    rest.prepend(table);
    let backend = RecordingBackend::new(ScriptedBackend::new(rest));
    let prompts = PromptTemplates::default();
    let settings = AgentSettings::default();
    let (policy, costs) = (SessionPolicy::default(), CostModel::default());
    let ctx = SessionContext {
        env: AgentEnv { backend: &backend, prompts: &prompts, settings: &settings, index: &f.index },
        qrels: &f.qrels,
        policy: &policy,
        costs: &costs,
    };
    let log = run_session(ctx, topic, kind, session_seed(0, &topic.topic_id, kind), None).unwrap();
    assert!(!log.aborted, "{} {kind} aborted", topic.topic_id);
    backend.take()
}

/// Requests up to and including the first full-text relevance judgment.
fn before_first_judgment(requests: &[ChatRequest]) -> Vec<String> {
    let end = requests.iter().position(|r| r.prompt_text().contains("\nText: ")).map_or(requests.len(), |i| i + 1);
    requests[..end].iter().map(|r| format!("{r:?}")).collect()
}

fn ac4_prompt_matrix() -> Outcome {
    use UserConfigKind::*;
    let f = fixture();
    let mut assertions = 0usize;
    let mut failures = Vec::new();
    let mut expect = |cond: bool, what: String| {
        assertions += 1;
        if !cond {
            failures.push(what);
        }
    };
    for topic in &f.topics {
        let desc = topic.description.as_deref().unwrap();
        let narr = topic.narrative.as_deref().unwrap();
        let mut recorded: BTreeMap<UserConfigKind, Vec<ChatRequest>> = BTreeMap::new();
        for kind in [Ttt, Fttc, Prf, Nrf, Crf, CrfPrime] {
            recorded.insert(kind, record_session(&f, topic, kind));
        }
        for (kind, requests) in &recorded {
            let full = !matches!(kind, Ttt | CrfPrime);
            let t = &topic.topic_id;
            expect(!requests.is_empty(), format!("{t} {kind}: no LLM calls"));
            let mut summaries = (0, 0);
            let mut followups = (0, 0, 0);
            for r in requests {
                let text = r.prompt_text();
                let task = text.lines().find(|l| l.starts_with("Task:")).unwrap_or("?").to_string();
                expect(text.contains(&topic.title), format!("{t} {kind} {task}: title missing"));
                expect(text.contains(desc) == full, format!("{t} {kind} {task}: description included={}", !full));
                expect(text.contains(narr) == full, format!("{t} {kind} {task}: narrative included={}", !full));
                if text.contains("Task: summarize documents") {
                    if text.contains("Polarity: relevant") {
                        summaries.0 += 1;
                    } else {
                        summaries.1 += 1;
                    }
                }
                if text.contains("Task: write one new search query") {
                    followups.0 += 1;
                    followups.1 += usize::from(text.contains(REL_MARK));
                    followups.2 += usize::from(text.contains(IRR_MARK));
                }
                if matches!(kind, Ttt | Fttc) {
                    expect(!text.contains(REL_MARK) && !text.contains(IRR_MARK), format!("{t} {kind}: summary leaked"));
                }
            }
            let (want_rel, want_irr) = match kind {
                Prf => (true, false),
                Nrf => (false, true),
                Crf | CrfPrime => (true, true),
                _ => (false, false),
            };
            expect((summaries.0 > 0) == want_rel, format!("{t} {kind}: relevant summaries {}", summaries.0));
            expect((summaries.1 > 0) == want_irr, format!("{t} {kind}: irrelevant summaries {}", summaries.1));
            if want_rel || want_irr {
                expect(followups.0 > 0, format!("{t} {kind}: no follow-up prompts"));
            }
            expect((followups.1 > 0) == want_rel, format!("{t} {kind}: relevant summary in follow-ups {}", followups.1));
            expect((followups.2 > 0) == want_irr, format!("{t} {kind}: irrelevant summary in follow-ups {}", followups.2));
        }
        let fttc = before_first_judgment(&recorded[&Fttc]);
        let ttt = before_first_judgment(&recorded[&Ttt]);
        for (kind, base, name) in [(Prf, &fttc, "FTTC"), (Nrf, &fttc, "FTTC"), (Crf, &fttc, "FTTC"), (CrfPrime, &ttt, "TTT")] {
            let prefix = before_first_judgment(&recorded[&kind]);
            expect(prefix.len() >= 2, format!("{} {kind}: prefix too short", topic.topic_id));
            expect(&prefix == base, format!("{} {kind}: pre-judgment prompts differ from {name}", topic.topic_id));
        }
    }
    if failures.is_empty() {
        Ok(format!("{assertions}/{assertions} assertions hold"))
    } else {
        Err(format!("{} of {assertions} assertions failed: {}", failures.len(), failures.join("; ")))
    }
}

// ---------------------------------------------------------------------------
// pipeline

fn run_pipeline(out: &Path) -> Result<(LoadedConfig, EvalRequest), String> {
    let cfg = LoadedConfig::load(
        &fixture_dir().join("campaign.toml"),
        &Overrides { out: Some(out.to_path_buf()), ..Default::default() },
    )
    .map_err(|e| e.to_string())?;
    usersim_cli::commands::index(&cfg).map_err(|e| e.to_string())?;
    simulate(&cfg).map_err(|e| e.to_string())?;
    let req = EvalRequest {
        logs_dir: cfg.logs_dir(),
        out_dir: cfg.eval_dir(),
        collection: cfg.config.collection.name.clone(),
        qrels: Some(cfg.resolve(&cfg.config.collection.qrels)),
        options: cfg.config.eval,
        force: false,
    };
    evaluate(&req).map_err(|e| e.to_string())?;
    Ok((cfg, req))
}

fn dir_bytes(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn ac5_determinism() -> Outcome {
    let start = Instant::now();
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    run_pipeline(a.path())?;
    run_pipeline(b.path())?;
    let elapsed = start.elapsed();
    let (fa, fb) = (dir_bytes(a.path()), dir_bytes(b.path()));
    check(fa.keys().eq(fb.keys()), || "file sets differ".into())?;
    let logs = fa.keys().filter(|p| p.starts_with("logs")).count();
    let csvs = fa.keys().filter(|p| p.extension().is_some_and(|e| e == "csv")).count();
    check(logs == 24, || format!("{logs} logs instead of 24"))?;
    for (p, bytes) in &fa {
        check(bytes == &fb[p], || format!("{} differs between runs", p.display()))?;
    }
    check(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!("{logs} logs and {csvs} CSVs byte-identical, two runs in {:.2}s", elapsed.as_secs_f64()))
}

// ---------------------------------------------------------------------------
// random baseline

fn ac6_random_baseline() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(session_seed(6, "ac6", UserConfigKind::Rnd));
    let draws = 10_000;
    let trues = (0..draws).filter(|_| decide_relevance_random(&mut rng, 0.5)).count();
    let frac = trues as f64 / draws as f64;
    check((frac - 0.5).abs() <= 0.015, || format!("relevance fraction {frac}"))?;

    let topic = Topic {
        topic_id: "ac6".into(),
        title: "alpha bravo charlie delta echo foxtrot golf hotel india juliet".into(),
        description: None,
        narrative: None,
    };
    let vocab = topic_vocabulary(&topic);
    check(vocab.len() == 10, || format!("vocabulary of {} terms", vocab.len()))?;
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for _ in 0..draws {
        let q = generate_query_naive(&topic, &mut rng).map_err(|e| e.to_string())?;
        let terms = tokenize(&q);
        check(terms.len() == 3, || format!("query {q:?} does not have 3 terms"))?;
        let mut distinct = terms.clone();
        distinct.sort();
        distinct.dedup();
        check(distinct.len() == 3, || format!("query {q:?} repeats a term"))?;
        for t in terms {
            *counts.entry(t).or_default() += 1;
        }
    }
    let mut worst: f64 = 0.0;
    for term in &vocab {
        let f = *counts.get(term).unwrap_or(&0) as f64 / draws as f64;
        worst = worst.max((f - 0.3).abs());
    }
    check(worst <= 0.03, || format!("term inclusion off by {worst}"))?;
    Ok(format!("relevant fraction {frac:.4}; max term-inclusion deviation {worst:.4}"))
}

// ---------------------------------------------------------------------------
// RND* reuse

fn judgments(log: &SessionLog) -> Vec<(String, bool)> {
    log.judgments().map(|(d, r, _)| (d.to_string(), r)).collect()
}

fn ac7_rnd_star_reuse() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (cfg, _) = run_pipeline(tmp.path())?;
    let logs = usersim_cli::commands::read_logs(&cfg.logs_dir()).map_err(|e| e.to_string())?;
    let by_name: HashMap<String, SessionLog> = logs.into_iter().collect();
    let mut topics = 0;
    for t in ["701", "702", "703"] {
        let fttc = &by_name[&format!("{t}__FTTC.jsonl")];
        let star = &by_name[&format!("{t}__RND_STAR.jsonl")];
        check(!fttc.queries_issued.is_empty(), || format!("{t}: FTTC issued no queries"))?;
        check(fttc.queries_issued == star.queries_issued, || format!("{t}: query sequences differ"))?;
        check(judgments(fttc) != judgments(star), || format!("{t}: judgment sequences identical"))?;
        topics += 1;
    }
    Ok(format!("{topics} topics: queries equal, judgments differ"))
}

// ---------------------------------------------------------------------------
// BM25

fn brute_force_rank(docs: &[Document], query: &str) -> Vec<(String, f64)> {
    let (k1, b) = (1.2, 0.75);
    let toks: Vec<Vec<String>> = docs.iter().map(|d| tokenize(&d.body)).collect();
    let n = docs.len() as f64;
    let avg = toks.iter().map(Vec::len).sum::<usize>() as f64 / n;
    let mut out = Vec::new();
    for (d, t) in docs.iter().zip(&toks) {
        let mut score = 0.0;
        let mut hit = false;
        for term in tokenize(query) {
            let tf = t.iter().filter(|x| **x == term).count() as f64;
            if tf > 0.0 {
                hit = true;
                let df = toks.iter().filter(|x| x.contains(&term)).count() as f64;
                let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
                score += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * t.len() as f64 / avg));
            }
        }
        if hit {
            out.push((d.doc_id.clone(), score));
        }
    }
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}

fn ac8_bm25() -> Outcome {
    const WORDS: [&str; 8] = ["ash", "birch", "cedar", "elm", "fir", "larch", "oak", "pine"];
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut corpora = 0;
    for c in 0..300 {
        let n = rng.random_range(1..=50);
        let docs: Vec<Document> = (0..n)
            .map(|i| Document {
                doc_id: format!("c{c}d{i:02}"),
                title: None,
                body: (0..rng.random_range(0..30)).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect::<Vec<_>>().join(" "),
                source: DocSource::Synthetic,
            })
            .collect();
        let index = InvertedIndex::build(&docs, IndexOptions::default()).map_err(|e| e.to_string())?;
        let query = (0..rng.random_range(1..4)).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ");
        let want = brute_force_rank(&docs, &query);
        let got = index.search(&query, 1, 100).results;
        check(got.len() == want.len(), || format!("corpus {c}: {} hits vs {}", got.len(), want.len()))?;
        for (g, w) in got.iter().zip(&want) {
            check((g.score - w.1).abs() < 1e-9, || format!("corpus {c}: score {} vs {}", g.score, w.1))?;
            let tied = want.iter().any(|x| x.0 == g.doc_id && (x.1 - w.1).abs() < 1e-9);
            check(tied, || format!("corpus {c}: {} ranked where {} belongs", g.doc_id, w.0))?;
        }
        corpora += 1;
    }

    let toy = bm25_score(1, 1, 10, 10.0, 2, Bm25Params::default()).map_err(|e| e.to_string())?;
    let target = 0.9029;
    let ranking = format!("ranking matches brute force on {corpora} corpora");
    check((toy - target).abs() <= 1e-4, || format!("{ranking}; toy score {toy:.4} vs expected {target} (|diff| {:.4})", (toy - target).abs()))?;
    Ok(format!("{ranking}; toy score {toy:.4}"))
}

// ---------------------------------------------------------------------------
// ordering sanity

fn oracle_judge(f: &Fixture) -> ReplyTable {
    let mut table = ReplyTable::new();
    for t in &f.topics {
        for (doc, grade) in f.qrels.judged_for(&t.topic_id) {
            if grade > 0 {
                table.push(
                    Matcher::Contains(vec![
                        "Task: relevance judgment".into(),
                        format!("Title: {}", t.title),
                        format!("Document [{doc}]"),
                    ]),
                    vec!["RELEVANT".into()],
                );
            }
        }
    }
    table.push(Matcher::Contains(vec!["Task: relevance judgment".into()]), vec!["NOT RELEVANT".into()]);
    table
}

fn ac9_ordering() -> Outcome {
    use UserConfigKind::*;
    let f = fixture();
    let mut table = f.replies.clone();
    table.prepend(oracle_judge(&f));
    let backend = ScriptedBackend::new(table);
    let prompts = PromptTemplates::default();
    let settings = AgentSettings::default();
    let (policy, costs) = (SessionPolicy::default(), CostModel::default());
    let ctx = SessionContext {
        env: AgentEnv { backend: &backend, prompts: &prompts, settings: &settings, index: &f.index },
        qrels: &f.qrels,
        policy: &policy,
        costs: &costs,
    };
    let kinds = [Rnd, Prf, Nrf, Crf, CrfPrime];
    let mut effects: BTreeMap<UserConfigKind, Vec<f64>> = BTreeMap::new();
    for seed in 0..20 {
        let plan = CampaignPlan { topics: &f.topics, kinds: &kinds, campaign_seed: seed, workers: 4, config_hash: None };
        for log in run_campaign(ctx, &plan, &()).map_err(|e| e.to_string())? {
            let gain = information_gain_curve(&log, GainOptions::default()).map_err(|e| e.to_string())?;
            effects.entry(log.user_kind).or_default().push(gain.final_effect());
        }
    }
    let mean = |v: &Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    let rnd = mean(&effects[&Rnd]);
    let mut parts = vec![format!("RND mean {rnd:.3}")];
    let mut below = Vec::new();
    for kind in [Prf, Nrf, Crf, CrfPrime] {
        let m = mean(&effects[&kind]);
        parts.push(format!("{kind} {m:.3}"));
        if m < rnd {
            below.push(kind.to_string());
        }
    }
    check(below.is_empty(), || format!("{} below RND: {}", below.join(","), parts.join(", ")))?;
    Ok(parts.join(", "))
}

// ---------------------------------------------------------------------------
// unjudged accounting

fn ac10_unjudged() -> Outcome {
    let f = fixture();
    let topic = &f.topics[0];
    let prompts = PromptTemplates::default();
    let settings = AgentSettings::default();
    let (policy, costs) = (SessionPolicy::default(), CostModel::default());
    let seed = session_seed(10, &topic.topic_id, UserConfigKind::Fttc);
    let run = |table: ReplyTable| {
        let backend = ScriptedBackend::new(table);
        let ctx = SessionContext {
            env: AgentEnv { backend: &backend, prompts: &prompts, settings: &settings, index: &f.index },
            qrels: &f.qrels,
            policy: &policy,
            costs: &costs,
        };
        run_session(ctx, topic, UserConfigKind::Fttc, seed, None)
    };

    // find an unjudged document the FTTC user is shown
    let mut reject_all = f.replies.clone();
    let mut no = ReplyTable::new();
    no.push(Matcher::Contains(vec!["Task: relevance judgment".into()]), vec!["NOT RELEVANT".into()]);
    reject_all.prepend(no.clone());
    let probe = run(reject_all).map_err(|e| e.to_string())?;
    let target = probe
        .interactions
        .iter()
        .find_map(|i| match &i.action {
            Action::SnippetViewed { doc_id, .. } if f.qrels.grade(&topic.topic_id, doc_id).is_none() => Some(doc_id.clone()),
            _ => None,
        })
        .ok_or("no unjudged document reached")?;
    check(f.docs.iter().any(|d| d.doc_id == target), || "target not in corpus".into())?;

    let mut only_target = ReplyTable::new();
    only_target.push(
        Matcher::Contains(vec!["Task: relevance judgment".into(), format!("Document [{target}]")]),
        vec!["RELEVANT".into()],
    );
    let mut table = f.replies.clone();
    table.prepend(no);
    table.prepend(only_target);
    let log = run(table).map_err(|e| e.to_string())?;
    let gain = information_gain_curve(&log, GainOptions::default()).map_err(|e| e.to_string())?;
    let judged: Vec<_> = log.judgments().filter(|j| j.1).collect();
    check(judged.len() == 1 && judged[0].0 == target, || format!("relevant judgments {judged:?}"))?;
    check(judged[0].2.is_none(), || "target carries a grade".into())?;
    let at = log
        .interactions
        .iter()
        .position(|i| matches!(&i.action, Action::JudgmentMade { doc_id, .. } if *doc_id == target))
        .unwrap();
    let before = if at == 0 { 0.0 } else { gain.points[at - 1].1 };
    let contribution = gain.points[at].1 - before;
    check(contribution == 0.0, || format!("contribution {contribution}"))?;
    check(gain.final_effect() == 0.0, || format!("final effect {}", gain.final_effect()))?;
    check(gain.unjudged_relevant_count == 1, || format!("unjudged count {}", gain.unjudged_relevant_count))?;
    Ok(format!("{target} judged relevant: contribution 0, unjudged_relevant_count 1"))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("AC1", "metric oracle equivalence", ac1_oracle_equivalence),
        ("AC2", "gain and sDCG hand cases", ac2_hand_cases),
        ("AC3", "monotonicity", ac3_monotonicity),
        ("AC4", "prompt-content matrix", ac4_prompt_matrix),
        ("AC5", "pipeline determinism", ac5_determinism),
        ("AC6", "random baseline statistics", ac6_random_baseline),
        ("AC7", "RND* query reuse", ac7_rnd_star_reuse),
        ("AC8", "BM25 correctness", ac8_bm25),
        ("AC9", "ordering sanity", ac9_ordering),
        ("AC10", "unjudged accounting", ac10_unjudged),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (id, name, f) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match outcome {
            Ok(detail) => println!("[PASS] {id} {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {id} {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
