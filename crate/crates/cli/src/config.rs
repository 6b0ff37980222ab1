use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use stancekit::backend::{BackendDescriptor, CacheMode, OpenAiConfig, WireFormat};
use stancekit::eval::DEFAULT_AMBIGUITY_THRESHOLD;
use stancekit::prompt::Strategy;
use stancekit::reasoner::StrategyConfig;
use stancekit::record::Split;

use crate::exit::ConfigError;

/// Everything a run needs. Written to the output directory as `run_config.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub workers: usize,
    pub dataset: DatasetSection,
    pub strategy: StrategySection,
    pub backend: BackendSection,
    pub prompts: PromptSection,
    pub selection: SelectionSection,
    pub sweep: SweepSection,
    pub triage: TriageSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs/latest"),
            workers: 4,
            dataset: DatasetSection::default(),
            strategy: StrategySection::default(),
            backend: BackendSection::default(),
            prompts: PromptSection::default(),
            selection: SelectionSection::default(),
            sweep: SweepSection::default(),
            triage: TriageSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    /// Dataset spec file (TOML).
    pub spec: Option<PathBuf>,
    pub split: Split,
    /// Keep only these targets; all when empty.
    pub targets: Vec<String>,
    /// Seeded random subset of this many tweets.
    pub limit: Option<usize>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            spec: None,
            split: Split::Test,
            targets: Vec::new(),
            limit: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategySection {
    pub name: Strategy,
    pub n_self_consistency: u32,
    pub vote_temperature: f64,
    /// Defaults per strategy when absent.
    pub self_consistency: Option<bool>,
    pub max_tokens: u32,
    /// Task description for the zero-shot templates, e.g. the output of select-prompt.
    pub description_file: Option<PathBuf>,
}

impl Default for StrategySection {
    fn default() -> Self {
        let base = StrategyConfig::new(Strategy::StanceReasoner);
        Self {
            name: Strategy::StanceReasoner,
            n_self_consistency: base.n_self_consistency,
            vote_temperature: base.vote_temperature,
            self_consistency: None,
            max_tokens: base.params.max_tokens,
            description_file: None,
        }
    }
}

impl StrategySection {
    pub fn to_config(&self) -> StrategyConfig {
        let mut cfg = StrategyConfig::new(self.name);
        cfg.n_self_consistency = self.n_self_consistency;
        cfg.vote_temperature = self.vote_temperature;
        if let Some(sc) = self.self_consistency {
            cfg.self_consistency = sc;
        }
        cfg.params = cfg.params.with_max_tokens(self.max_tokens);
        cfg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    /// HTTP client for an OpenAI-compatible server.
    OpenaiCompatible,
    /// No live model; every call must be served from the cache.
    Offline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    pub kind: BackendKind,
    pub base_url: String,
    pub model: String,
    pub wire: WireFormat,
    pub max_in_flight: usize,
    pub max_retries: u32,
    pub timeout_secs: u64,
    pub cache: Option<PathBuf>,
    pub cache_mode: CacheMode,
}

impl Default for BackendSection {
    fn default() -> Self {
        Self {
            kind: BackendKind::OpenaiCompatible,
            base_url: "http://localhost:8000/v1".into(),
            model: "default".into(),
            wire: WireFormat::Completions,
            max_in_flight: 4,
            max_retries: 3,
            timeout_secs: 120,
            cache: None,
            cache_mode: CacheMode::Record,
        }
    }
}

impl BackendSection {
    /// Offline runs keep the descriptor of the live client so that replayed
    /// cache keys match recorded ones.
    pub fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor::new(stancekit::backend::BACKEND_ID, self.model.clone())
    }

    pub fn openai_config(&self) -> OpenAiConfig {
        let mut c = OpenAiConfig::new(self.base_url.clone(), self.model.clone()).with_env_key();
        c.wire = self.wire;
        c.max_in_flight = self.max_in_flight.max(1);
        c.max_retries = self.max_retries;
        c.timeout = Duration::from_secs(self.timeout_secs);
        c
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptSection {
    /// Prompt asset directory; the built-in assets when absent.
    pub assets_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionSection {
    pub n_paraphrases: usize,
    /// Random tweets to score descriptions on, drawn from `split`.
    pub n_tweets: usize,
    pub split: Split,
    pub temperature: f64,
}

impl Default for SelectionSection {
    fn default() -> Self {
        Self {
            n_paraphrases: 50,
            n_tweets: 100,
            split: Split::Train,
            temperature: 0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub ns: Vec<u32>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self { ns: vec![1, 3, 5, 9] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TriageSection {
    pub threshold: f64,
}

impl Default for TriageSection {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_AMBIGUITY_THRESHOLD,
        }
    }
}

fn rebase(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl RunConfig {
    /// Reads a config file. Relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        rebase(base, &mut cfg.dataset.spec);
        rebase(base, &mut cfg.strategy.description_file);
        rebase(base, &mut cfg.backend.cache);
        rebase(base, &mut cfg.prompts.assets_dir);
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
