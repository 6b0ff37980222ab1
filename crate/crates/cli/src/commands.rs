use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use stancekit::backend::{Backend, CacheMode, CachedBackend, CallCounter, OfflineBackend, OpenAiCompatible};
use stancekit::dataset::{load_dataset, sample_random_tweets, DatasetSpec, LoadedDataset};
use stancekit::eval::{evaluate_per_target, sweep_sample_count, triage_report, triage_table, EvalReport};
use stancekit::prompt::{
    generate_paraphrases, select_best_description, DescriptionOrigin, ParaphraseConfig, PromptAssets,
    PromptTemplate, TaskDescription,
};
use stancekit::reasoner::{Prediction, Reasoner};
use stancekit::record::TweetRecord;

use crate::config::{BackendKind, RunConfig};
use crate::exit::{ConfigError, UsageError};

type Counted = CallCounter<Box<dyn Backend>>;

/// The live client (or offline stand-in) behind an optional cache, with call counting.
enum RunBackend {
    Cached(CachedBackend<Counted>),
    Direct(Counted),
}

impl RunBackend {
    fn open(cfg: &RunConfig) -> Result<Self> {
        let b = &cfg.backend;
        let inner: Box<dyn Backend> = match b.kind {
            BackendKind::Offline => Box::new(OfflineBackend::new(b.descriptor())),
            BackendKind::OpenaiCompatible if b.cache_mode == CacheMode::Replay => {
                Box::new(OfflineBackend::new(b.descriptor()))
            }
            BackendKind::OpenaiCompatible => Box::new(OpenAiCompatible::new(b.openai_config())?),
        };
        let counted = CallCounter::new(inner);
        match (&b.cache, b.cache_mode) {
            (Some(path), mode) => Ok(RunBackend::Cached(CachedBackend::open(counted, path, mode)?)),
            (None, CacheMode::Replay) => Err(ConfigError("replay mode needs a cache file".into()).into()),
            (None, _) => Ok(RunBackend::Direct(counted)),
        }
    }

    fn backend(&self) -> &dyn Backend {
        match self {
            RunBackend::Cached(c) => c,
            RunBackend::Direct(d) => d,
        }
    }

    fn counter(&self) -> &Counted {
        match self {
            RunBackend::Cached(c) => c.inner(),
            RunBackend::Direct(d) => d,
        }
    }

    fn summary(&self) -> BackendSummary {
        let counter = self.counter();
        BackendSummary {
            live_sample_calls: counter.sample_calls(),
            live_scoring_calls: counter.scoring_calls(),
            cache_hits: match self {
                RunBackend::Cached(c) => c.hits(),
                RunBackend::Direct(_) => 0,
            },
        }
    }
}

#[derive(Debug, Serialize)]
struct BackendSummary {
    live_sample_calls: usize,
    live_scoring_calls: usize,
    cache_hits: usize,
}

fn load_assets(cfg: &RunConfig) -> Result<PromptAssets> {
    Ok(match &cfg.prompts.assets_dir {
        Some(dir) => PromptAssets::from_dir(dir)?,
        None => PromptAssets::builtin(),
    })
}

fn load_spec(cfg: &RunConfig) -> Result<LoadedDataset> {
    let path = cfg
        .dataset
        .spec
        .as_ref()
        .ok_or_else(|| ConfigError("no dataset spec given (--dataset or [dataset].spec)".into()))?;
    let spec = DatasetSpec::from_file(path)?;
    Ok(load_dataset(&spec)?)
}

fn filter_targets(records: Vec<TweetRecord>, targets: &[String]) -> Result<Vec<TweetRecord>> {
    if targets.is_empty() {
        return Ok(records);
    }
    for t in targets {
        if !records.iter().any(|r| &r.target == t) {
            return Err(ConfigError(format!("target {t:?} has no records in this split")).into());
        }
    }
    Ok(records.into_iter().filter(|r| targets.contains(&r.target)).collect())
}

/// Tweets of the configured split and targets, optionally subsampled.
fn load_tweets(cfg: &RunConfig, ds: &LoadedDataset) -> Result<Vec<TweetRecord>> {
    let mut tweets = filter_targets(ds.split(cfg.dataset.split), &cfg.dataset.targets)?;
    if tweets.is_empty() {
        return Err(ConfigError(format!("split {} has no records", cfg.dataset.split)).into());
    }
    if let Some(n) = cfg.dataset.limit {
        tweets = sample_random_tweets(&tweets, n, cfg.seed)?;
    }
    Ok(tweets)
}

fn gold_records(cfg: &RunConfig) -> Result<Vec<TweetRecord>> {
    let ds = load_spec(cfg)?;
    filter_targets(ds.split(cfg.dataset.split), &cfg.dataset.targets)
}

fn write(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

/// Creates the output directory and records what is needed to re-run.
/// Scoring commands write their config under their own name so that they
/// can share a directory with the run they score.
fn prepare_output(cfg: &RunConfig, assets: Option<&PromptAssets>, config_name: &str) -> Result<PathBuf> {
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    write(&dir.join(config_name), &cfg.to_toml())?;
    if let Some(assets) = assets {
        let mut body = format!("version = {}\n\n[digests]\n", assets.version);
        for (id, sha) in &assets.digests {
            let _ = writeln!(body, "{id:?} = {sha:?}");
        }
        write(&dir.join("asset_digests.toml"), &body)?;
    }
    Ok(dir)
}

#[derive(Serialize)]
struct RunInfo<'a> {
    command: &'a str,
    cache_mode: CacheMode,
    cache: Option<&'a Path>,
    backend: String,
    model: &'a str,
    asset_version: Option<u32>,
    calls: BackendSummary,
    #[serde(flatten)]
    extra: BTreeMap<&'a str, serde_json::Value>,
}

fn write_run_info(
    dir: &Path,
    command: &str,
    cfg: &RunConfig,
    assets: Option<&PromptAssets>,
    backend: Option<&RunBackend>,
    extra: BTreeMap<&str, serde_json::Value>,
) -> Result<()> {
    let info = RunInfo {
        command,
        cache_mode: cfg.backend.cache_mode,
        cache: cfg.backend.cache.as_deref(),
        backend: cfg.backend.descriptor().backend,
        model: &cfg.backend.model,
        asset_version: assets.map(|a| a.version),
        calls: backend.map_or(
            BackendSummary {
                live_sample_calls: 0,
                live_scoring_calls: 0,
                cache_hits: 0,
            },
            RunBackend::summary,
        ),
        extra,
    };
    write(&dir.join("run_info.json"), &(serde_json::to_string_pretty(&info)? + "\n"))
}

fn reasoner<'a>(cfg: &RunConfig, assets: &PromptAssets, backend: &'a dyn Backend) -> Result<Reasoner<'a>> {
    let strategy = cfg.strategy.to_config();
    let mut template = PromptTemplate::for_strategy(strategy.strategy, assets);
    if let Some(path) = &cfg.strategy.description_file {
        if strategy.strategy.is_few_shot() {
            log::warn!("{} does not use a task description; ignoring {}", strategy.strategy, path.display());
            return Ok(Reasoner::with_template(template, assets.triggers.answer.clone(), strategy, backend)?);
        }
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let description = TaskDescription {
            text: text.trim().to_string(),
            origin: DescriptionOrigin::Paraphrase,
            source_seed: None,
        };
        description.check()?;
        template = template.with_description(&description);
    }
    Ok(Reasoner::with_template(template, assets.triggers.answer.clone(), strategy, backend)?)
}

pub fn write_predictions(path: &Path, predictions: &[Prediction]) -> Result<()> {
    let mut body = String::new();
    for p in predictions {
        body.push_str(&serde_json::to_string(p)?);
        body.push('\n');
    }
    write(path, &body)
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), i + 1)))
        .collect()
}

pub fn predict(cfg: &RunConfig) -> Result<()> {
    let assets = load_assets(cfg)?;
    let ds = load_spec(cfg)?;
    let tweets = load_tweets(cfg, &ds)?;
    let backend = RunBackend::open(cfg)?;
    let reasoner = reasoner(cfg, &assets, backend.backend())?;
    let dir = prepare_output(cfg, Some(&assets), "run_config.toml")?;

    log::info!("predicting {} tweets with {}", tweets.len(), cfg.strategy.name);
    let started = Instant::now();
    let predictions = reasoner.predict_all(&tweets, cfg.workers)?;
    let failures = predictions.iter().filter(|p| p.label.is_none()).count();
    let ties = predictions.iter().filter(|p| p.tie).count();
    let calls = backend.summary();
    log::info!(
        "{} predictions, {failures} without a label, {ties} ties, {} live sample calls, {} cache hits, {:.1}s",
        predictions.len(),
        calls.live_sample_calls,
        calls.cache_hits,
        started.elapsed().as_secs_f64()
    );

    write_predictions(&dir.join("predictions.jsonl"), &predictions)?;
    let extra = BTreeMap::from([
        ("dataset", serde_json::json!(ds.name.to_string())),
        ("split", serde_json::json!(cfg.dataset.split)),
        ("n_predictions", serde_json::json!(predictions.len())),
        ("n_without_label", serde_json::json!(failures)),
        ("n_ties", serde_json::json!(ties)),
        ("dataset_notes", serde_json::json!(ds.notes)),
    ]);
    write_run_info(&dir, "predict", cfg, Some(&assets), Some(&backend), extra)?;
    println!("{} predictions ({failures} without a label) -> {}", predictions.len(), dir.display());
    Ok(())
}

fn annotate(report: &mut EvalReport, cfg: &RunConfig) {
    report.metadata.insert("split".into(), cfg.dataset.split.to_string());
    report.metadata.insert("model".into(), cfg.backend.model.clone());
}

pub fn eval(cfg: &RunConfig, predictions: &Path) -> Result<()> {
    let preds = read_predictions(predictions)?;
    let gold = gold_records(cfg)?;
    let mut report = evaluate_per_target(&preds, &gold)?;
    annotate(&mut report, cfg);
    let dir = prepare_output(cfg, None, "eval_config.toml")?;
    write(&dir.join("report.tsv"), &report.to_table())?;
    write(&dir.join("report.json"), &(report.to_json() + "\n"))?;
    print!("{}", report.to_table());
    Ok(())
}

pub fn triage(cfg: &RunConfig, predictions: &Path) -> Result<()> {
    let preds = read_predictions(predictions)?;
    let gold = gold_records(cfg)?;
    let entries = triage_report(&preds, &gold, cfg.triage.threshold)?;
    let dir = prepare_output(cfg, None, "triage_config.toml")?;
    write(&dir.join("triage.tsv"), &triage_table(&entries))?;
    let mut jsonl = String::new();
    for e in &entries {
        jsonl.push_str(&serde_json::to_string(e)?);
        jsonl.push('\n');
    }
    write(&dir.join("triage.jsonl"), &jsonl)?;
    let mut by_category: BTreeMap<&str, usize> = BTreeMap::new();
    for e in &entries {
        *by_category.entry(e.category.as_str()).or_default() += 1;
    }
    for (c, n) in by_category {
        println!("{c}\t{n}");
    }
    Ok(())
}

pub fn sweep(cfg: &RunConfig) -> Result<()> {
    if cfg.sweep.ns.is_empty() {
        return Err(UsageError("sweep needs at least one sample count (--ns)".into()).into());
    }
    let assets = load_assets(cfg)?;
    let ds = load_spec(cfg)?;
    let tweets = load_tweets(cfg, &ds)?;
    let backend = RunBackend::open(cfg)?;
    let dir = prepare_output(cfg, Some(&assets), "run_config.toml")?;
    let strategy = cfg.strategy.to_config();
    let mut table = sweep_sample_count(&tweets, &assets, backend.backend(), &strategy, &cfg.sweep.ns, cfg.workers)?;
    for row in &mut table.rows {
        annotate(&mut row.report, cfg);
    }
    write(&dir.join("sweep.tsv"), &table.to_table())?;
    write(&dir.join("sweep.json"), &(serde_json::to_string_pretty(&table)? + "\n"))?;
    let extra = BTreeMap::from([("ns", serde_json::json!(table.rows.iter().map(|r| r.n).collect::<Vec<_>>()))]);
    write_run_info(&dir, "sweep", cfg, Some(&assets), Some(&backend), extra)?;
    print!("{}", table.to_table());
    Ok(())
}

/// Upper bound on backend calls for a selection run.
pub fn selection_call_bound(n_paraphrases: usize, n_seeds: usize, n_tweets: usize) -> (usize, usize) {
    let generation = if n_paraphrases == 0 { 0 } else { n_seeds };
    (generation, (n_paraphrases + 1) * n_seeds * n_tweets)
}

pub fn select_prompt(cfg: &RunConfig) -> Result<()> {
    let assets = load_assets(cfg)?;
    let ds = load_spec(cfg)?;
    let sel = &cfg.selection;
    let pool = filter_targets(ds.split(sel.split), &cfg.dataset.targets)?;
    let n_tweets = sel.n_tweets.min(pool.len());
    if n_tweets == 0 {
        return Err(ConfigError(format!("split {} has no tweets to score on", sel.split)).into());
    }
    if n_tweets < sel.n_tweets {
        log::warn!("only {n_tweets} tweets available in {}; scoring on all of them", sel.split);
    }
    let tweets = sample_random_tweets(&pool, n_tweets, cfg.seed)?;
    let (gen_calls, score_calls) = selection_call_bound(sel.n_paraphrases, assets.seeds.len(), n_tweets);
    println!(
        "at most {gen_calls} generation calls and {score_calls} scoring calls ({} candidates per seed x {} seeds x {n_tweets} tweets)",
        sel.n_paraphrases + 1,
        assets.seeds.len()
    );

    let backend = RunBackend::open(cfg)?;
    let dir = prepare_output(cfg, Some(&assets), "run_config.toml")?;
    let mut candidates = Vec::new();
    for (i, seed) in assets.seeds.iter().enumerate() {
        if sel.n_paraphrases == 0 {
            candidates.push(seed.clone());
            continue;
        }
        let pcfg = ParaphraseConfig {
            n: sel.n_paraphrases,
            temperature: sel.temperature,
            ..ParaphraseConfig::default()
        };
        candidates.extend(generate_paraphrases(seed, i, &assets.meta_prompt, &pcfg, backend.backend())?);
    }
    let report = select_best_description(&candidates, &tweets, backend.backend())?;

    let mut table = String::from("rank\tbest\torigin\tseed\tmean_nll\tperplexity\tdescription\n");
    for (rank, i) in report.ranking().into_iter().enumerate() {
        let s = &report.scores[i];
        let origin = match s.description.origin {
            DescriptionOrigin::Seed => "seed",
            DescriptionOrigin::Paraphrase => "paraphrase",
        };
        let seed = s.description.source_seed.map_or("-".to_string(), |x| x.to_string());
        let _ = writeln!(
            table,
            "{}\t{}\t{origin}\t{seed}\t{:.6}\t{:.6}\t{}",
            rank + 1,
            if i == report.best { "*" } else { "" },
            s.mean_nll,
            s.perplexity,
            s.description.text
        );
    }
    write(&dir.join("selection.tsv"), &table)?;
    write(&dir.join("selection.json"), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    write(&dir.join("selected_description.txt"), &(report.best_description().text.clone() + "\n"))?;
    let extra = BTreeMap::from([
        ("n_candidates", serde_json::json!(candidates.len())),
        ("n_tweets", serde_json::json!(n_tweets)),
        ("call_bound", serde_json::json!({"generation": gen_calls, "scoring": score_calls})),
    ]);
    write_run_info(&dir, "select-prompt", cfg, Some(&assets), Some(&backend), extra)?;
    print!("{table}");
    Ok(())
}

pub fn cache_inspect(path: &Path) -> Result<()> {
    if !path.exists() {
        return Err(UsageError(format!("{} does not exist", path.display())).into());
    }
    let stats = CachedBackend::<OfflineBackend>::inspect(path)?;
    println!("{}", serde_json::to_string_pretty(&stats)?);
    Ok(())
}
