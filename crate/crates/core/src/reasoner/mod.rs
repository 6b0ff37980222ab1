//! Prediction strategies, completion parsing and self-consistency voting.

mod parse;
mod vote;

pub use parse::{extract_label_word, extract_option_number, parse_few_shot_completion, ParseStatus, SamplePrediction};
pub use crate::label::LabelCounts;
pub use vote::{majority_vote, VoteOutcome};

use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{complete, fan_out, Backend, BackendError, GenerationParams};
use crate::label::StanceLabel;
use crate::prompt::{assemble_prompt, zero_shot_cot_answer_prompt, PromptAssets, PromptError, PromptTemplate, Strategy};
use crate::record::{parse_reasoning_chain, TweetRecord};

pub const FEW_SHOT_STOP: [&str; 2] = ["\n\n", "\ntweet:"];
pub const ZERO_SHOT_STOP: [&str; 2] = ["\nQuestion:", "\ntweet:"];

#[derive(Debug, Error)]
pub enum ReasonerError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("none of the {drawn} samples produced a label")]
    AllSamplesUnparseable { drawn: u32 },
    #[error("invalid strategy config: {0}")]
    InvalidConfig(String),
}

impl ReasonerError {
    pub fn is_systemic(&self) -> bool {
        match self {
            ReasonerError::Backend(e) => e.is_systemic(),
            ReasonerError::Prompt(PromptError::Backend(e)) => e.is_systemic(),
            ReasonerError::Prompt(_) | ReasonerError::InvalidConfig(_) => true,
            ReasonerError::AllSamplesUnparseable { .. } => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub strategy: Strategy,
    /// Decoding limits shared by every call. Temperature and sample count
    /// are overridden per call.
    pub params: GenerationParams,
    pub n_self_consistency: u32,
    pub vote_temperature: f64,
    /// Sample and vote instead of decoding greedily.
    pub self_consistency: bool,
}

impl StrategyConfig {
    pub fn new(strategy: Strategy) -> Self {
        Self {
            strategy,
            params: GenerationParams::greedy(),
            n_self_consistency: 5,
            vote_temperature: 0.7,
            self_consistency: matches!(strategy, Strategy::StanceReasoner | Strategy::HomogeneousCot),
        }
    }

    pub fn with_samples(mut self, n: u32) -> Self {
        self.n_self_consistency = n;
        self
    }

    pub fn validate(&self) -> Result<(), ReasonerError> {
        let voting_allowed = matches!(self.strategy, Strategy::StanceReasoner | Strategy::HomogeneousCot);
        if self.strategy == Strategy::StanceReasoner && !self.self_consistency {
            return Err(ReasonerError::InvalidConfig(
                "stance_reasoner always votes; use few_shot_cot for a single greedy chain".into(),
            ));
        }
        if self.self_consistency && !voting_allowed {
            return Err(ReasonerError::InvalidConfig(format!(
                "{} decodes greedily and cannot use self-consistency",
                self.strategy
            )));
        }
        if self.self_consistency {
            if self.n_self_consistency == 0 {
                return Err(ReasonerError::InvalidConfig("n_self_consistency must be at least 1".into()));
            }
            self.vote_params(&FEW_SHOT_STOP).validate()?;
        }
        self.greedy_params(&FEW_SHOT_STOP).validate()?;
        Ok(())
    }

    fn greedy_params(&self, stop: &[&str]) -> GenerationParams {
        GenerationParams {
            temperature: 0.0,
            n_samples: 1,
            stop: Some(stop.iter().map(|s| s.to_string()).collect()),
            ..self.params.clone()
        }
    }

    fn vote_params(&self, stop: &[&str]) -> GenerationParams {
        GenerationParams {
            temperature: self.vote_temperature,
            n_samples: self.n_self_consistency,
            stop: Some(stop.iter().map(|s| s.to_string()).collect()),
            ..self.params.clone()
        }
    }
}

fn greedy_text(backend: &dyn Backend, prompt: &str, params: &GenerationParams) -> Result<String, ReasonerError> {
    Ok(complete(backend, prompt, params)?
        .into_iter()
        .next()
        .map(|r| r.text)
        .unwrap_or_default())
}

pub fn predict_zero_shot(
    tweet: &TweetRecord,
    template: &PromptTemplate,
    cfg: &StrategyConfig,
    backend: &dyn Backend,
) -> Result<SamplePrediction, ReasonerError> {
    let prompt = assemble_prompt(template, tweet)?;
    let text = greedy_text(backend, &prompt, &cfg.greedy_params(&ZERO_SHOT_STOP))?;
    Ok(SamplePrediction::new(0, extract_label_word(&text), None, &text))
}

/// Two greedy calls: reasoning after the step-by-step trigger, then the answer
/// after `answer_trigger`. The first option digit in the answer decides.
pub fn predict_zero_shot_cot(
    tweet: &TweetRecord,
    template: &PromptTemplate,
    answer_trigger: &str,
    cfg: &StrategyConfig,
    backend: &dyn Backend,
) -> Result<SamplePrediction, ReasonerError> {
    let step_one = assemble_prompt(template, tweet)?;
    let mut stop = ZERO_SHOT_STOP.to_vec();
    stop.push(answer_trigger);
    let reasoning = greedy_text(backend, &step_one, &cfg.greedy_params(&stop))?;
    let step_two = zero_shot_cot_answer_prompt(&step_one, &reasoning, answer_trigger);
    let answer = greedy_text(backend, &step_two, &cfg.greedy_params(&ZERO_SHOT_STOP))?;
    let chain = parse_reasoning_chain(reasoning.trim());
    Ok(SamplePrediction::new(0, extract_option_number(&answer), Some(chain), &answer))
}

/// One greedy continuation of a few-shot prompt.
pub fn predict_few_shot(
    tweet: &TweetRecord,
    template: &PromptTemplate,
    cfg: &StrategyConfig,
    backend: &dyn Backend,
) -> Result<SamplePrediction, ReasonerError> {
    let prompt = assemble_prompt(template, tweet)?;
    let text = greedy_text(backend, &prompt, &cfg.greedy_params(&FEW_SHOT_STOP))?;
    Ok(parse_few_shot_completion(&text, template.strategy.has_reasoning(), 0))
}

/// Samples `n_self_consistency` chains and votes. Failed samples count as
/// drawn but cast no vote; if every sample failed the first error is returned.
pub fn predict_self_consistency(
    tweet: &TweetRecord,
    template: &PromptTemplate,
    cfg: &StrategyConfig,
    backend: &dyn Backend,
) -> Result<VoteOutcome, ReasonerError> {
    let prompt = assemble_prompt(template, tweet)?;
    let params = cfg.vote_params(&FEW_SHOT_STOP);
    params.validate()?;
    let with_reasoning = template.strategy.has_reasoning();
    let mut results = backend.complete_many(&prompt, &params);
    results.truncate(params.n_samples as usize);

    if let Some(e) = results.iter().find_map(|r| r.as_ref().err().filter(|e| e.is_systemic())) {
        return Err(e.clone().into());
    }
    if results.iter().all(|r| r.is_err()) {
        let first = results.into_iter().find_map(Result::err);
        return Err(first.unwrap_or_else(|| BackendError::Protocol("backend returned no samples".into())).into());
    }
    let samples = results
        .into_iter()
        .enumerate()
        .map(|(slot, r)| match r {
            Ok(c) => parse_few_shot_completion(&c.text, with_reasoning, c.sample_index),
            Err(e) => {
                log::warn!("tweet {}: sample {slot} failed: {e}", tweet.id);
                SamplePrediction::failed(slot as u32, e.to_string())
            }
        })
        .collect();
    majority_vote(samples, params.n_samples)
}

/// One output line per tweet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub target: String,
    pub strategy: Strategy,
    #[serde(default)]
    pub label: Option<StanceLabel>,
    pub parse_status: ParseStatus,
    pub confidence: f64,
    pub votes: u32,
    pub n_drawn: u32,
    pub n_valid: u32,
    pub tie: bool,
    pub counts: LabelCounts,
    pub samples: Vec<SamplePrediction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Prediction {
    fn from_sample(tweet: &TweetRecord, strategy: Strategy, sample: SamplePrediction) -> Self {
        let mut counts = LabelCounts::default();
        if let Some(l) = sample.label {
            counts.add(l);
        }
        let valid = u32::from(sample.label.is_some());
        Self {
            id: tweet.id.clone(),
            target: tweet.target.clone(),
            strategy,
            label: sample.label,
            parse_status: sample.parse_status,
            confidence: f64::from(valid),
            votes: valid,
            n_drawn: 1,
            n_valid: valid,
            tie: false,
            counts,
            error: sample.error.clone(),
            samples: vec![sample],
        }
    }

    fn from_vote(tweet: &TweetRecord, strategy: Strategy, vote: VoteOutcome) -> Self {
        Self {
            id: tweet.id.clone(),
            target: tweet.target.clone(),
            strategy,
            label: Some(vote.label),
            parse_status: ParseStatus::Ok,
            confidence: vote.confidence(),
            votes: vote.votes,
            n_drawn: vote.drawn,
            n_valid: vote.n_valid,
            tie: vote.tie,
            counts: vote.counts,
            samples: vote.samples,
            error: None,
        }
    }

    fn failed(tweet: &TweetRecord, strategy: Strategy, drawn: u32, status: ParseStatus, error: String) -> Self {
        Self {
            id: tweet.id.clone(),
            target: tweet.target.clone(),
            strategy,
            label: None,
            parse_status: status,
            confidence: 0.0,
            votes: 0,
            n_drawn: drawn,
            n_valid: 0,
            tie: false,
            counts: LabelCounts::default(),
            samples: Vec::new(),
            error: Some(error),
        }
    }

    /// Samples that did not vote for the winning label.
    pub fn disagreement(&self) -> u32 {
        self.n_drawn - self.votes
    }
}

/// Runs one strategy over tweets with a fixed template and backend.
pub struct Reasoner<'a> {
    template: PromptTemplate,
    answer_trigger: String,
    cfg: StrategyConfig,
    backend: &'a dyn Backend,
}

impl<'a> Reasoner<'a> {
    pub fn new(assets: &PromptAssets, cfg: StrategyConfig, backend: &'a dyn Backend) -> Result<Self, ReasonerError> {
        let template = PromptTemplate::for_strategy(cfg.strategy, assets);
        Self::with_template(template, assets.triggers.answer.clone(), cfg, backend)
    }

    pub fn with_template(
        template: PromptTemplate,
        answer_trigger: String,
        cfg: StrategyConfig,
        backend: &'a dyn Backend,
    ) -> Result<Self, ReasonerError> {
        cfg.validate()?;
        if template.strategy != cfg.strategy {
            return Err(ReasonerError::InvalidConfig(format!(
                "template is for {} but the config asks for {}",
                template.strategy, cfg.strategy
            )));
        }
        template.check()?;
        Ok(Self {
            template,
            answer_trigger,
            cfg,
            backend,
        })
    }

    pub fn config(&self) -> &StrategyConfig {
        &self.cfg
    }

    pub fn template(&self) -> &PromptTemplate {
        &self.template
    }

    /// Predicts one tweet. Unparseable output becomes a label-less
    /// prediction; backend failures are returned as errors.
    pub fn predict(&self, tweet: &TweetRecord) -> Result<Prediction, ReasonerError> {
        let strategy = self.cfg.strategy;
        let (t, c, b) = (&self.template, &self.cfg, self.backend);
        if c.self_consistency {
            return match predict_self_consistency(tweet, t, c, b) {
                Ok(vote) => Ok(Prediction::from_vote(tweet, strategy, vote)),
                Err(ReasonerError::AllSamplesUnparseable { drawn }) => Ok(Prediction::failed(
                    tweet,
                    strategy,
                    drawn,
                    ParseStatus::NoLabel,
                    format!("none of the {drawn} samples produced a label"),
                )),
                Err(e) => Err(e),
            };
        }
        let sample = match strategy {
            Strategy::ZeroShot => predict_zero_shot(tweet, t, c, b)?,
            Strategy::ZeroShotCot => predict_zero_shot_cot(tweet, t, &self.answer_trigger, c, b)?,
            _ => predict_few_shot(tweet, t, c, b)?,
        };
        Ok(Prediction::from_sample(tweet, strategy, sample))
    }

    /// Predicts every tweet with up to `workers` tweets in flight. Systemic
    /// backend errors abort the run; other failures become label-less
    /// predictions. Output is sorted by (id, target).
    pub fn predict_all(&self, tweets: &[TweetRecord], workers: usize) -> Result<Vec<Prediction>, ReasonerError> {
        let abort = AtomicBool::new(false);
        let results = fan_out(tweets.len(), workers.max(1), |i| {
            if abort.load(Ordering::SeqCst) {
                return None;
            }
            let tweet = &tweets[i];
            let started = Instant::now();
            let result = self.predict(tweet);
            log::debug!("tweet {} ({}) took {:?}", tweet.id, tweet.target, started.elapsed());
            Some(match result {
                Ok(p) => Ok(p),
                Err(e) if e.is_systemic() => {
                    abort.store(true, Ordering::SeqCst);
                    Err(e)
                }
                Err(e) => {
                    log::warn!("tweet {}: {e}", tweet.id);
                    let drawn = if self.cfg.self_consistency { self.cfg.n_self_consistency } else { 1 };
                    Ok(Prediction::failed(tweet, self.cfg.strategy, drawn, ParseStatus::Malformed, e.to_string()))
                }
            })
        });
        let mut out = Vec::with_capacity(tweets.len());
        let mut first_error = None;
        for r in results.into_iter().flatten() {
            match r {
                Ok(p) => out.push(p),
                Err(e) => {
                    first_error.get_or_insert(e);
                }
            }
        }
        if let Some(e) = first_error {
            return Err(e);
        }
        out.sort_by(|a, b| (&a.id, &a.target).cmp(&(&b.id, &b.target)));
        Ok(out)
    }
}
