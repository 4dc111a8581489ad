use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use usersim::eval::SdcgScope;

use crate::commands::{self, EvalRequest};
use crate::config::{BackendKind, EvalSection, LoadedConfig, Overrides};
use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "usersim", version, about = "Simulated interactive retrieval sessions with LLM users")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Campaign configuration file (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory, overriding `output_dir` from the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for the campaign.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub backend: Option<BackendKind>,
    /// Campaign seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the BM25 index and print its statistics.
    Index,
    /// Run every configured (topic, user kind) session.
    Simulate,
    /// Compute information-gain and sDCG curves from session logs.
    Evaluate(EvaluateArgs),
    /// Summarize evaluation output into one row per user kind.
    Report,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScopeArg {
    Viewed,
    Examined,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Directory of session logs. Defaults to `<out>/logs`.
    #[arg(long)]
    pub logs: Option<PathBuf>,
    /// Qrels for full-SERP sDCG. Defaults to the configured qrels.
    #[arg(long)]
    pub qrels: Option<PathBuf>,
    /// Prefix of the curve files.
    #[arg(long)]
    pub collection: Option<String>,
    /// Count every positive grade as 1.
    #[arg(long)]
    pub binarize: bool,
    /// Log base of the rank discount
    #[arg(long)]
    pub b: Option<f64>,
    /// Log base of the query discount
    #[arg(long)]
    pub bq: Option<f64>,
    /// Which shown documents count toward sDCG
    #[arg(long, value_enum)]
    pub scope: Option<ScopeArg>,
    /// Evaluate logs from different campaign configurations together.
    #[arg(long)]
    pub force: bool,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides { workers: self.workers, backend: self.backend, seed: self.seed, out: self.out.clone() }
    }

    fn load(&self) -> Result<LoadedConfig, CliError> {
        let path = self.config.as_ref().ok_or_else(|| CliError::Validation("--config is required".into()))?;
        LoadedConfig::load(path, &self.overrides())
    }
}

fn eval_request(common: &Common, a: &EvaluateArgs) -> Result<EvalRequest, CliError> {
    let loaded = common.config.as_ref().map(|_| common.load()).transpose()?;
    let logs_dir = match (&a.logs, &loaded) {
        (Some(l), _) => l.clone(),
        (None, Some(cfg)) => cfg.logs_dir(),
        (None, None) => return Err(CliError::Validation("pass --logs or --config".into())),
    };
    let out_dir = match (&common.out, &loaded) {
        (_, Some(cfg)) => cfg.eval_dir(),
        (Some(o), None) => o.join("eval"),
        (None, None) => logs_dir.parent().map(|p| p.join("eval")).unwrap_or_else(|| PathBuf::from("eval")),
    };
    let mut options: EvalSection = loaded.as_ref().map(|c| c.config.eval).unwrap_or_default();
    options.binarize |= a.binarize;
    if let Some(b) = a.b {
        options.sdcg.b = b;
    }
    if let Some(bq) = a.bq {
        options.sdcg.bq = bq;
    }
    if let Some(s) = a.scope {
        options.sdcg.scope = match s {
            ScopeArg::Viewed => SdcgScope::Viewed,
            ScopeArg::Examined => SdcgScope::Examined,
        };
    }
    let qrels = a.qrels.clone().or_else(|| loaded.as_ref().map(|c| c.resolve(&c.config.collection.qrels)));
    let collection = a
        .collection
        .clone()
        .or_else(|| loaded.as_ref().map(|c| c.config.collection.name.clone()))
        .unwrap_or_else(|| "collection".into());
    Ok(EvalRequest { logs_dir, out_dir, collection, qrels, options, force: a.force })
}

/// Runs one parsed command line and returns the text to print.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    let common = &cli.common;
    match &cli.command {
        Command::Index => {
            let report = commands::index(&common.load()?)?;
            Ok(report.to_string())
        }
        Command::Simulate => {
            let cfg = common.load()?;
            let report = commands::simulate(&cfg)?;
            let m = &report.manifest;
            Ok(format!(
                "sessions={} reused={} anomalies={} config_hash={}\nmanifest={}",
                m.sessions.len(),
                report.reused,
                m.anomalies,
                m.config_hash,
                report.manifest_path.display()
            ))
        }
        Command::Evaluate(a) => {
            let req = eval_request(common, a)?;
            let summary = commands::evaluate(&req)?;
            Ok(format!(
                "sessions={} files={} out={}",
                summary.rows.len(),
                summary.manifest.files.len(),
                req.out_dir.display()
            ))
        }
        Command::Report => {
            let eval_dir = match (&common.config, &common.out) {
                (Some(_), _) => common.load()?.eval_dir(),
                (None, Some(out)) => out.join("eval"),
                (None, None) => return Err(CliError::Validation("pass --config or --out".into())),
            };
            let rows = commands::report(&eval_dir)?;
            let mut text = String::from("user_kind  sessions  effect  effort  sdcg  unjudged_relevant");
            for r in rows {
                text.push_str(&format!(
                    "\n{:<10} {:>8} {:>7.3} {:>7.1} {:>5.3} {:>6}",
                    r.user_kind.as_str(),
                    r.sessions,
                    r.mean_final_effect,
                    r.mean_final_effort,
                    r.mean_final_sdcg,
                    r.unjudged_relevant_total
                ));
            }
            Ok(text)
        }
    }
}
