//! `stancekit`: run, score and inspect stance-detection experiments.

mod commands;
mod config;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use stancekit::backend::CacheMode;
use stancekit::prompt::Strategy;
use stancekit::record::Split;

use config::{BackendKind, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "stancekit", version, about = "Chain-of-thought stance detection experiments")]
struct Cli {
    /// Repeat for more log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Predict a stance for every tweet of a dataset split.
    Predict(RunArgs),
    /// Score a prediction file against gold labels.
    Eval(FileArgs),
    /// Rank task descriptions by perplexity and pick the best one.
    SelectPrompt(SelectArgs),
    /// Score the voting strategy at several sample counts.
    Sweep(SweepArgs),
    /// Rank predictions by confidence for manual review.
    Triage(TriageArgs),
    /// Summarize a response cache file.
    CacheInspect(CacheArgs),
}

/// Flags mirror config keys and take precedence over the file.
#[derive(Debug, Args, Default)]
struct RunArgs {
    /// Run config (TOML).
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Dataset spec (TOML).
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    split: Option<Split>,
    /// Keep only this target; repeatable.
    #[arg(long = "target")]
    targets: Vec<String>,
    /// Seeded random subset of this many tweets.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    strategy: Option<Strategy>,
    /// Self-consistency sample count.
    #[arg(long)]
    samples: Option<u32>,
    #[arg(long)]
    vote_temperature: Option<f64>,
    #[arg(long)]
    self_consistency: Option<bool>,
    #[arg(long)]
    max_tokens: Option<u32>,
    /// Task description text file for the zero-shot templates.
    #[arg(long)]
    description_file: Option<PathBuf>,
    /// openai-compatible or offline.
    #[arg(long, value_parser = parse_kind)]
    backend: Option<BackendKind>,
    #[arg(long)]
    base_url: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    max_in_flight: Option<usize>,
    /// Response cache file (JSONL).
    #[arg(long)]
    cache: Option<PathBuf>,
    /// record, replay or passthrough.
    #[arg(long)]
    cache_mode: Option<CacheMode>,
    /// Prompt asset directory.
    #[arg(long)]
    assets_dir: Option<PathBuf>,
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct FileArgs {
    /// Prediction file written by `predict`.
    #[arg(long)]
    predictions: PathBuf,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Debug, Args)]
struct TriageArgs {
    #[command(flatten)]
    file: FileArgs,
    /// Confidence at or below which a prediction counts as ambiguous.
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Debug, Args)]
struct SelectArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Paraphrases to generate per seed description.
    #[arg(long)]
    paraphrases: Option<usize>,
    /// Tweets to score each description on.
    #[arg(long)]
    tweets: Option<usize>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Sample counts, comma separated.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    ns: Option<Vec<u32>>,
}

#[derive(Debug, Args)]
struct CacheArgs {
    #[arg(long)]
    cache: PathBuf,
}

fn parse_kind(s: &str) -> Result<BackendKind, String> {
    match s {
        "openai-compatible" | "openai" => Ok(BackendKind::OpenaiCompatible),
        "offline" => Ok(BackendKind::Offline),
        other => Err(format!("unknown backend {other:?} (expected openai-compatible or offline)")),
    }
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let d = &mut cfg.dataset;
        set(&mut d.spec, self.dataset.clone().map(Some));
        set(&mut d.split, self.split);
        if !self.targets.is_empty() {
            d.targets = self.targets.clone();
        }
        set(&mut d.limit, self.limit.map(Some));
        let s = &mut cfg.strategy;
        set(&mut s.name, self.strategy);
        set(&mut s.n_self_consistency, self.samples);
        set(&mut s.vote_temperature, self.vote_temperature);
        set(&mut s.self_consistency, self.self_consistency.map(Some));
        set(&mut s.max_tokens, self.max_tokens);
        set(&mut s.description_file, self.description_file.clone().map(Some));
        let b = &mut cfg.backend;
        set(&mut b.kind, self.backend);
        set(&mut b.base_url, self.base_url.clone());
        set(&mut b.model, self.model.clone());
        set(&mut b.max_in_flight, self.max_in_flight);
        set(&mut b.cache, self.cache.clone().map(Some));
        set(&mut b.cache_mode, self.cache_mode);
        set(&mut cfg.prompts.assets_dir, self.assets_dir.clone().map(Some));
        set(&mut cfg.output_dir, self.out.clone());
        set(&mut cfg.workers, self.workers);
        set(&mut cfg.seed, self.seed);
        Ok(cfg)
    }
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Predict(args) => commands::predict(&args.resolve()?),
        Command::Eval(args) => commands::eval(&args.run.resolve()?, &args.predictions),
        Command::SelectPrompt(args) => {
            let mut cfg = args.run.resolve()?;
            set(&mut cfg.selection.n_paraphrases, args.paraphrases);
            set(&mut cfg.selection.n_tweets, args.tweets);
            commands::select_prompt(&cfg)
        }
        Command::Sweep(args) => {
            let mut cfg = args.run.resolve()?;
            set(&mut cfg.sweep.ns, args.ns);
            commands::sweep(&cfg)
        }
        Command::Triage(args) => {
            let mut cfg = args.file.run.resolve()?;
            set(&mut cfg.triage.threshold, args.threshold);
            commands::triage(&cfg, &args.file.predictions)
        }
        Command::CacheInspect(args) => commands::cache_inspect(&args.cache),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp_millis()
        .init();
    match run(cli) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::code_for(&e))
        }
    }
}
