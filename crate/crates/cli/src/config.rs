//! Campaign configuration file.
//!
//! A campaign is described by one TOML file. Relative paths inside it are
//! resolved against the directory holding the file. Command-line flags
//! override a handful of values after loading.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use usersim::agents::{AgentSettings, UserConfigKind};
use usersim::corpus::{FieldMap, ParseMode};
use usersim::eval::{GainOptions, SdcgParams};
use usersim::index::{Bm25Params, IndexOptions};
use usersim::llm::BackendConfig;
use usersim::sim::{validate_campaign, CostModel, SessionPolicy};
use usersim::text::AnalyzerOptions;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Trectext,
    Jsonl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Scripted,
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollectionConfig {
    /// Prefix of the evaluation CSV files.
    #[serde(default = "CollectionConfig::default_name")]
    pub name: String,
    pub corpus: PathBuf,
    #[serde(default = "CollectionConfig::default_format")]
    pub format: CorpusFormat,
    #[serde(default)]
    pub parse_mode: ParseMode,
    /// Only read for `format = "jsonl"`.
    #[serde(default)]
    pub field_map: FieldMap,
    pub topics: PathBuf,
    pub qrels: PathBuf,
}

impl CollectionConfig {
    fn default_name() -> String {
        "collection".into()
    }
    fn default_format() -> CorpusFormat {
        CorpusFormat::Trectext
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndexConfig {
    pub stopwords: bool,
    pub stemming: bool,
    pub k1: f64,
    pub b: f64,
    pub snippet_chars: usize,
}

impl Default for IndexConfig {
    fn default() -> Self {
        let d = IndexOptions::default();
        Self {
            stopwords: d.analyzer.stopwords,
            stemming: d.analyzer.stemming,
            k1: d.bm25.k1,
            b: d.bm25.b,
            snippet_chars: d.snippet_chars,
        }
    }
}

impl IndexConfig {
    pub fn options(&self) -> IndexOptions {
        IndexOptions {
            bm25: Bm25Params { k1: self.k1, b: self.b },
            analyzer: AnalyzerOptions { stopwords: self.stopwords, stemming: self.stemming },
            snippet_chars: self.snippet_chars,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignSection {
    pub kinds: Vec<UserConfigKind>,
    #[serde(default)]
    pub seed: u64,
    /// Restrict the run to these topic ids. Empty means every topic.
    #[serde(default)]
    pub topics: Vec<String>,
    #[serde(default)]
    pub workers: Option<usize>,
    /// `simulate` exits with code 3 when the campaign logs more anomalies
    /// than this. Unset means no limit.
    #[serde(default)]
    pub max_anomalies: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct AgentSection {
    #[serde(flatten)]
    pub settings: AgentSettings,
    /// Directory with `<name>.txt` files overriding the shipped prompts.
    pub prompt_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSection {
    pub backend: BackendKind,
    /// Reply table for the scripted backend.
    pub replies: Option<PathBuf>,
    pub live: Option<BackendConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub binarize: bool,
    pub sdcg: SdcgParams,
}

impl EvalSection {
    pub fn gain_options(&self) -> GainOptions {
        GainOptions { binarize: self.binarize }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    #[serde(default = "CampaignConfig::default_output_dir")]
    pub output_dir: PathBuf,
    pub collection: CollectionConfig,
    #[serde(default)]
    pub index: IndexConfig,
    pub campaign: CampaignSection,
    #[serde(default)]
    pub policy: SessionPolicy,
    #[serde(default)]
    pub costs: CostModel,
    #[serde(default)]
    pub agent: AgentSection,
    #[serde(default)]
    pub llm: LlmSection,
    #[serde(default)]
    pub eval: EvalSection,
}

/// Flag values applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub workers: Option<usize>,
    pub backend: Option<BackendKind>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// A loaded configuration together with the directory its relative paths
/// refer to.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: CampaignConfig,
    pub base_dir: PathBuf,
    /// Output directory after overrides, resolved.
    pub output_dir: PathBuf,
}

impl CampaignConfig {
    fn default_output_dir() -> PathBuf {
        PathBuf::from("out")
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))
    }

    pub fn apply(&mut self, overrides: &Overrides) {
        if let Some(w) = overrides.workers {
            self.campaign.workers = Some(w);
        }
        if let Some(b) = overrides.backend {
            self.llm.backend = b;
        }
        if let Some(s) = overrides.seed {
            self.campaign.seed = s;
        }
    }

    /// Checks everything that can be checked without reading the
    /// referenced files.
    pub fn validate_values(&self) -> Result<(), CliError> {
        let invalid = |m: String| Err(CliError::Validation(m));
        if self.campaign.kinds.is_empty() {
            return invalid("campaign.kinds must not be empty".into());
        }
        // topics are checked again once the topic file is read
        validate_campaign(&[placeholder_topic()], &self.campaign.kinds).map_err(|e| CliError::Validation(e.to_string()))?;
        self.policy.validate().map_err(|e| CliError::Validation(e.to_string()))?;
        self.costs.validate().map_err(|e| CliError::Validation(e.to_string()))?;
        self.eval.sdcg.validate().map_err(|e| CliError::Validation(e.to_string()))?;
        if !(self.index.k1 >= 0.0 && (0.0..=1.0).contains(&self.index.b)) {
            return invalid(format!("index: need k1 >= 0 and 0 <= b <= 1 (got k1={}, b={})", self.index.k1, self.index.b));
        }
        if !(0.0..=1.0).contains(&self.agent.settings.random_relevance_p) {
            return invalid("agent.random_relevance_p must lie in [0, 1]".into());
        }
        if self.agent.settings.queries_per_session == 0 {
            return invalid("agent.queries_per_session must be >= 1".into());
        }
        if self.campaign.workers == Some(0) {
            return invalid("campaign.workers must be >= 1".into());
        }
        match self.llm.backend {
            BackendKind::Scripted if self.llm.replies.is_none() => {
                invalid("llm.replies is required for the scripted backend".into())
            }
            BackendKind::Live => match &self.llm.live {
                None => invalid("[llm.live] is required for the live backend".into()),
                Some(c) => c.validate().map_err(|e| CliError::Validation(e.to_string())),
            },
            _ => Ok(()),
        }
    }

    /// Hex sha256 of the canonical JSON form, leaving out fields that do not
    /// change what a campaign produces.
    pub fn config_hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        let root = value.as_object_mut().expect("config is an object");
        root.remove("output_dir");
        if let Some(c) = root.get_mut("campaign").and_then(|c| c.as_object_mut()) {
            c.remove("workers");
            c.remove("max_anomalies");
        }
        // the eval section only matters to `evaluate`
        root.remove("eval");
        let canonical = serde_json::to_string(&value).expect("json");
        hex_sha256(canonical.as_bytes())
    }
}

fn placeholder_topic() -> usersim::corpus::Topic {
    usersim::corpus::Topic { topic_id: "_".into(), title: "_".into(), description: None, narrative: None }
}

pub fn hex_sha256(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl LoadedConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("reading config {}: {e}", path.display())))?;
        let mut config = CampaignConfig::from_toml(&text)?;
        config.apply(overrides);
        config.validate_values()?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let output_dir = match &overrides.out {
            Some(out) => out.clone(),
            None => base_dir.join(&config.output_dir),
        };
        let loaded = Self { config, base_dir, output_dir };
        loaded.check_paths()?;
        Ok(loaded)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    fn check_paths(&self) -> Result<(), CliError> {
        let c = &self.config;
        let mut required = vec![
            ("collection.corpus", &c.collection.corpus),
            ("collection.topics", &c.collection.topics),
            ("collection.qrels", &c.collection.qrels),
        ];
        if c.llm.backend == BackendKind::Scripted {
            if let Some(r) = &c.llm.replies {
                required.push(("llm.replies", r));
            }
        }
        if let Some(d) = &c.agent.prompt_dir {
            required.push(("agent.prompt_dir", d));
        }
        for (key, p) in required {
            let full = self.resolve(p);
            if !full.exists() {
                return Err(CliError::Validation(format!("{key}: {} does not exist", full.display())));
            }
        }
        Ok(())
    }

    pub fn workers(&self) -> usize {
        self.config
            .campaign
            .workers
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }

    pub fn index_dir(&self) -> PathBuf {
        self.output_dir.join("index")
    }

    pub fn logs_dir(&self) -> PathBuf {
        self.output_dir.join("logs")
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.output_dir.join("eval")
    }
}
