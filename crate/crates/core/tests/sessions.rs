use std::path::PathBuf;

use usersim::agents::{AgentEnv, AgentSettings, PromptTemplates, UserConfigKind};
use usersim::corpus::{parse_qrels, parse_topics, parse_trectext, ParseMode, QrelSet, Topic};
use usersim::eval::{information_gain_curve, sdcg_curve, GainOptions, SdcgParams};
use usersim::index::{IndexOptions, InvertedIndex};
use usersim::llm::{RecordingBackend, ReplyTable, ScriptedBackend};
use usersim::sim::{run_campaign, Action, CampaignPlan, CostModel, SessionContext, SessionPolicy};

struct Collection {
    index: InvertedIndex,
    topics: Vec<Topic>,
    qrels: QrelSet,
    replies: ReplyTable,
}

fn synthetic() -> Collection {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/synthetic");
    let read = |n: &str| std::fs::read(dir.join(n)).unwrap();
    let docs = parse_trectext(&read("corpus.trec"), ParseMode::Strict).unwrap().value;
    Collection {
        index: InvertedIndex::build(&docs, IndexOptions::default()).unwrap(),
        topics: parse_topics(&read("topics.txt")).unwrap(),
        qrels: parse_qrels(&read("qrels.txt")).unwrap().value,
        replies: ReplyTable::parse(&String::from_utf8(read("replies.txt")).unwrap()).unwrap(),
    }
}

#[test]
fn fixture_campaign_rnd_star_replays_fttc() {
    use UserConfigKind::*;
    let c = synthetic();
    let backend = ScriptedBackend::new(c.replies.clone());
    let prompts = PromptTemplates::default();
    let settings = AgentSettings::default();
    let policy = SessionPolicy::default();
    let costs = CostModel::default();
    let ctx = SessionContext {
        env: AgentEnv { backend: &backend, prompts: &prompts, settings: &settings, index: &c.index },
        qrels: &c.qrels,
        policy: &policy,
        costs: &costs,
    };
    let plan = CampaignPlan { topics: &c.topics, kinds: &[RndStar, Fttc], campaign_seed: 3, workers: 2, config_hash: None };
    let logs = run_campaign(ctx, &plan, &()).unwrap();
    assert_eq!(logs.len(), 6);
    for pair in logs.chunks(2) {
        let (fttc, star) = (&pair[0], &pair[1]);
        assert_eq!((fttc.user_kind, star.user_kind), (Fttc, RndStar));
        assert!(!fttc.aborted && !star.aborted);
        assert_eq!(fttc.queries_issued.len(), 10);
        assert_eq!(fttc.queries_issued, star.queries_issued);
        let decisions = |l: &usersim::sim::SessionLog| {
            l.interactions
                .iter()
                .filter_map(|i| match &i.action {
                    Action::SnippetViewed { doc_id, .. } => Some(doc_id.clone()),
                    Action::JudgmentMade { doc_id, relevant, .. } => Some(format!("{doc_id}:{relevant}")),
                    _ => None,
                })
                .collect::<Vec<_>>()
        };
        assert_ne!(decisions(fttc), decisions(star));
    }
}

#[test]
fn every_kind_runs_cleanly_on_the_fixture() {
    let c = synthetic();
    let backend = RecordingBackend::new(ScriptedBackend::new(c.replies.clone()));
    let prompts = PromptTemplates::default();
    let settings = AgentSettings::default();
    let policy = SessionPolicy::default();
    let costs = CostModel::default();
    let ctx = SessionContext {
        env: AgentEnv { backend: &backend, prompts: &prompts, settings: &settings, index: &c.index },
        qrels: &c.qrels,
        policy: &policy,
        costs: &costs,
    };
    let plan = CampaignPlan {
        topics: &c.topics,
        kinds: &UserConfigKind::ALL,
        campaign_seed: 42,
        workers: 4,
        config_hash: None,
    };
    let logs = run_campaign(ctx, &plan, &()).unwrap();
    assert_eq!(logs.len(), 24);
    for log in &logs {
        log.validate().unwrap();
        assert!(!log.aborted, "{} {}", log.topic_id, log.user_kind);
        let anomalies = log.interactions.iter().filter(|i| matches!(i.action, Action::Anomaly { .. })).count();
        assert_eq!(anomalies, 0, "{} {}", log.topic_id, log.user_kind);
        let gain = information_gain_curve(log, GainOptions::default()).unwrap();
        let sdcg = sdcg_curve(log, SdcgParams::default(), None).unwrap();
        assert_eq!(sdcg.points.len(), log.queries_issued.len());
        if !log.user_kind.is_random() {
            assert!(gain.final_effect() > 0.0, "{} {}", log.topic_id, log.user_kind);
        }
    }
    let random_calls = backend.requests().len();
    assert!(random_calls > 0);
}
