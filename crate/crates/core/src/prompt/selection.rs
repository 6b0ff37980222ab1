use regex::{Regex, RegexBuilder};
use serde::Serialize;
use std::sync::OnceLock;

use super::template::{DescriptionOrigin, OptionStyle, TaskDescription, TARGET_PLACEHOLDER};
use super::PromptError;
use crate::backend::{complete, fan_out, Backend, BackendError, GenerationParams};
use crate::record::TweetRecord;

#[derive(Debug, Clone, PartialEq)]
pub struct ParaphraseConfig {
    pub n: usize,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Literal phrases a paraphrase may have used in place of `{target}`.
    pub repair_phrases: Vec<String>,
}

impl Default for ParaphraseConfig {
    fn default() -> Self {
        Self {
            n: 50,
            temperature: 0.7,
            max_tokens: 2048,
            repair_phrases: ["{Target}", "{TARGET}", "<target>", "[target]", "\"target\""]
                .map(String::from)
                .to_vec(),
        }
    }
}

fn list_marker() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(?:\d+\s*[.)]|[-*•])\s*").expect("valid marker regex"))
}

/// Splits a paraphrase completion into candidate descriptions.
/// Lines lose their list markers; lines without `{target}` are kept only if a
/// repair phrase can be replaced by the placeholder. Duplicates and copies of
/// the seed are dropped; at most `n` are returned.
pub fn parse_paraphrases(completion: &str, seed: &str, n: usize, repair_phrases: &[String]) -> Vec<String> {
    let repairs: Vec<Regex> = repair_phrases
        .iter()
        .filter(|p| !p.is_empty())
        .filter_map(|p| RegexBuilder::new(&regex::escape(p)).case_insensitive(true).build().ok())
        .collect();
    let mut out: Vec<String> = Vec::new();
    for line in completion.lines() {
        let line = list_marker().replace(line, "");
        let line = line.trim();
        if line.is_empty() || line.eq_ignore_ascii_case("paraphrases:") {
            continue;
        }
        let candidate = if line.contains(TARGET_PLACEHOLDER) {
            line.to_string()
        } else {
            match repairs.iter().find(|re| re.is_match(line)) {
                Some(re) => re.replace_all(line, TARGET_PLACEHOLDER).into_owned(),
                None => continue,
            }
        };
        if candidate != seed && !out.contains(&candidate) {
            out.push(candidate);
        }
        if out.len() == n {
            break;
        }
    }
    out
}

/// Asks the model for paraphrases of `seed`. Returns the seed followed by at
/// most `cfg.n` paraphrases.
pub fn generate_paraphrases(
    seed: &TaskDescription,
    seed_index: usize,
    meta_prompt: &str,
    cfg: &ParaphraseConfig,
    backend: &dyn Backend,
) -> Result<Vec<TaskDescription>, PromptError> {
    if cfg.n == 0 {
        return Err(PromptError::InvalidRequest("paraphrase count must be at least 1".into()));
    }
    seed.check()?;
    let prompt = meta_prompt
        .replace("{n}", &cfg.n.to_string())
        .replace("{seed}", &seed.text);
    let params = GenerationParams::sampled(cfg.temperature, 1).with_max_tokens(cfg.max_tokens);
    let completion = complete(backend, &prompt, &params)?
        .into_iter()
        .next()
        .map(|r| r.text)
        .unwrap_or_default();
    let paraphrases = parse_paraphrases(&completion, &seed.text, cfg.n, &cfg.repair_phrases);
    if paraphrases.is_empty() {
        return Err(PromptError::EmptyParaphraseSet);
    }
    let mut out = vec![seed.clone()];
    out.extend(paraphrases.into_iter().map(|p| TaskDescription::paraphrase(p, seed_index)));
    Ok(out)
}

/// The unlabeled prompt a description is scored on.
pub fn scoring_prompt(description: &TaskDescription, tweet: &TweetRecord) -> String {
    format!(
        "Question: {}\nThe options are:\n{}\ntweet: <{}>\nAnswer:",
        description.render(&tweet.target),
        OptionStyle::Dash.render(),
        tweet.text.split(['\n', '\r']).filter(|s| !s.is_empty()).collect::<Vec<_>>().join(" ")
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerplexityScore {
    pub description: TaskDescription,
    /// Mean over tweets of the per-token negative log-likelihood, in nats.
    pub mean_nll: f64,
    pub perplexity: f64,
    pub n_tweets: usize,
    /// (tweet id, per-token NLL) in input order.
    pub per_tweet: Vec<(String, f64)>,
}

fn mean_order_independent(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.iter().sum::<f64>() / sorted.len() as f64
}

fn map_scoring_error(e: BackendError) -> PromptError {
    match e {
        BackendError::Unsupported(msg) => PromptError::LogprobsUnsupported(msg),
        other => PromptError::Backend(other),
    }
}

/// Scores a description by the whole-prompt per-token NLL averaged over `tweets`.
/// Gold labels are never read.
pub fn score_description(
    description: &TaskDescription,
    tweets: &[TweetRecord],
    backend: &dyn Backend,
) -> Result<PerplexityScore, PromptError> {
    if tweets.is_empty() {
        return Err(PromptError::InvalidRequest("no tweets to score on".into()));
    }
    description.check()?;
    let per_tweet = fan_out(tweets.len(), backend.max_in_flight(), |i| {
        let lps = backend
            .teacher_forced_logprobs(&scoring_prompt(description, &tweets[i]))
            .map_err(map_scoring_error)?;
        if lps.is_empty() {
            return Err(PromptError::Backend(BackendError::Protocol("no prompt log-probabilities".into())));
        }
        let nll = -mean_order_independent(&lps.iter().map(|t| t.logprob).collect::<Vec<_>>());
        Ok((tweets[i].id.clone(), nll))
    })
    .into_iter()
    .collect::<Result<Vec<_>, PromptError>>()?;
    let mean_nll = mean_order_independent(&per_tweet.iter().map(|(_, v)| *v).collect::<Vec<_>>());
    Ok(PerplexityScore {
        description: description.clone(),
        mean_nll,
        perplexity: mean_nll.exp(),
        n_tweets: tweets.len(),
        per_tweet,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionReport {
    /// One score per candidate, in candidate order.
    pub scores: Vec<PerplexityScore>,
    pub best: usize,
}

impl SelectionReport {
    pub fn best_description(&self) -> &TaskDescription {
        &self.scores[self.best].description
    }

    /// Candidate indices from lowest to highest NLL; ties put seeds first,
    /// then candidate order.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.scores.len()).collect();
        idx.sort_by(|&a, &b| rank_order(&self.scores, a, b));
        idx
    }
}

/// Picks the candidate with the lowest mean NLL. On a tie a seed beats a
/// paraphrase, then the earliest candidate wins.
pub fn select_best_description(
    candidates: &[TaskDescription],
    tweets: &[TweetRecord],
    backend: &dyn Backend,
) -> Result<SelectionReport, PromptError> {
    if candidates.is_empty() {
        return Err(PromptError::InvalidRequest("no candidate descriptions".into()));
    }
    let scores = candidates
        .iter()
        .map(|c| score_description(c, tweets, backend))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(report_from_scores(scores))
}

fn rank_order(scores: &[PerplexityScore], a: usize, b: usize) -> std::cmp::Ordering {
    let paraphrase = |i: usize| scores[i].description.origin != DescriptionOrigin::Seed;
    scores[a]
        .mean_nll
        .total_cmp(&scores[b].mean_nll)
        .then(paraphrase(a).cmp(&paraphrase(b)))
        .then(a.cmp(&b))
}

pub(crate) fn report_from_scores(scores: Vec<PerplexityScore>) -> SelectionReport {
    let best = (0..scores.len()).min_by(|&a, &b| rank_order(&scores, a, b)).unwrap_or(0);
    SelectionReport { scores, best }
}
