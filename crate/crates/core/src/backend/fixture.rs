use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use sha2::{Digest, Sha256};

use super::{
    apply_stop, check_request, Backend, BackendDescriptor, BackendError, CompletionResult, FinishReason,
    GenerationParams, TokenLogprob,
};

pub struct FixtureRequest<'a> {
    pub prompt: &'a str,
    pub params: &'a GenerationParams,
    pub sample_index: u32,
}

type Responder = dyn Fn(&FixtureRequest<'_>) -> Result<String, BackendError> + Send + Sync;
type Scorer = dyn Fn(&str) -> f64 + Send + Sync;

/// Deterministic scripted backend for offline tests.
///
/// Responses come from an exact-prompt script (one text per sample index) or,
/// failing that, from a responder closure. Teacher-forced scoring splits the
/// prompt into whitespace-led pseudo-tokens and assigns every token the
/// log-probability the scorer returns for that prompt.
pub struct FixtureBackend {
    descriptor: BackendDescriptor,
    scripts: HashMap<String, Vec<String>>,
    responder: Option<Arc<Responder>>,
    scorer: Option<Arc<Scorer>>,
    jitter_seed: Option<u64>,
    max_in_flight: usize,
    sample_calls: AtomicUsize,
    scoring_calls: AtomicUsize,
}

impl FixtureBackend {
    pub fn new(backend: &str, model: &str) -> Self {
        Self {
            descriptor: BackendDescriptor::new(backend, model),
            scripts: HashMap::new(),
            responder: None,
            scorer: None,
            jitter_seed: None,
            max_in_flight: 4,
            sample_calls: AtomicUsize::new(0),
            scoring_calls: AtomicUsize::new(0),
        }
    }

    /// Scripts the responses for one exact prompt, indexed by sample index.
    pub fn script<I, S>(mut self, prompt: &str, responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.scripts
            .insert(prompt_digest(prompt), responses.into_iter().map(Into::into).collect());
        self
    }

    pub fn with_responder<F>(mut self, f: F) -> Self
    where
        F: Fn(&FixtureRequest<'_>) -> Result<String, BackendError> + Send + Sync + 'static,
    {
        self.responder = Some(Arc::new(f));
        self
    }

    /// Every token of every prompt gets this log-probability.
    pub fn with_constant_logprob(self, logprob: f64) -> Self {
        self.with_scorer(move |_| logprob)
    }

    /// Per-prompt per-token log-probability.
    pub fn with_scorer<F>(mut self, f: F) -> Self
    where
        F: Fn(&str) -> f64 + Send + Sync + 'static,
    {
        self.scorer = Some(Arc::new(f));
        self
    }

    /// Delays each sample by a pseudo-random amount so concurrent samples
    /// finish in a seed-dependent order.
    pub fn with_arrival_jitter(mut self, seed: u64) -> Self {
        self.jitter_seed = Some(seed);
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = n.max(1);
        self
    }

    pub fn sample_calls(&self) -> usize {
        self.sample_calls.load(Ordering::SeqCst)
    }

    pub fn scoring_calls(&self) -> usize {
        self.scoring_calls.load(Ordering::SeqCst)
    }

    fn jitter(&self, prompt: &str, sample_index: u32) {
        if let Some(seed) = self.jitter_seed {
            let h = Sha256::new()
                .chain_update(seed.to_le_bytes())
                .chain_update(sample_index.to_le_bytes())
                .chain_update(prompt.as_bytes())
                .finalize();
            let micros = u16::from_le_bytes([h[0], h[1]]) % 1500;
            thread::sleep(Duration::from_micros(micros as u64));
        }
    }
}

fn prompt_digest(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// Whitespace-led pseudo-tokens: "a b  c" → ["a", " b", "  c"].
pub(crate) fn pseudo_tokens(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut seen_non_ws = false;
    for ch in text.chars() {
        if ch.is_whitespace() && seen_non_ws {
            tokens.push(std::mem::take(&mut current));
            seen_non_ws = false;
        }
        if !ch.is_whitespace() {
            seen_non_ws = true;
        }
        current.push(ch);
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

impl Backend for FixtureBackend {
    fn descriptor(&self) -> BackendDescriptor {
        self.descriptor.clone()
    }

    fn complete_one(
        &self,
        prompt: &str,
        params: &GenerationParams,
        sample_index: u32,
    ) -> Result<CompletionResult, BackendError> {
        check_request(prompt, params)?;
        self.sample_calls.fetch_add(1, Ordering::SeqCst);
        self.jitter(prompt, sample_index);
        let scripted = self
            .scripts
            .get(&prompt_digest(prompt))
            .and_then(|v| v.get(sample_index as usize).cloned());
        let text = match (scripted, &self.responder) {
            (Some(t), _) => t,
            (None, Some(r)) => r(&FixtureRequest {
                prompt,
                params,
                sample_index,
            })?,
            (None, None) => {
                return Err(BackendError::Protocol(format!(
                    "fixture has no response for sample {sample_index} of this prompt"
                )))
            }
        };
        let (text, _) = apply_stop(&text, params.stop.as_deref());
        let token_logprobs = match (&self.scorer, params.want_logprobs) {
            (Some(s), true) => {
                let lp = s(prompt);
                Some(
                    pseudo_tokens(&text)
                        .into_iter()
                        .map(|token| TokenLogprob { token, logprob: lp })
                        .collect(),
                )
            }
            _ => None,
        };
        Ok(CompletionResult {
            text,
            token_logprobs,
            finish_reason: FinishReason::Stop,
            sample_index,
        })
    }

    fn teacher_forced_logprobs(&self, prompt: &str) -> Result<Vec<TokenLogprob>, BackendError> {
        if prompt.is_empty() {
            return Err(BackendError::InvalidRequest("prompt is empty".into()));
        }
        let scorer = self
            .scorer
            .as_ref()
            .ok_or_else(|| BackendError::Unsupported("fixture has no log-probability scorer".into()))?;
        self.scoring_calls.fetch_add(1, Ordering::SeqCst);
        let lp = scorer(prompt);
        Ok(pseudo_tokens(prompt)
            .into_iter()
            .map(|token| TokenLogprob { token, logprob: lp })
            .collect())
    }

    fn max_in_flight(&self) -> usize {
        self.max_in_flight
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::complete;

    #[test]
    fn scripted_prompt_returns_scripted_text() {
        let fx = FixtureBackend::new("fixture", "m").script("hello", ["world"]);
        let out = complete(&fx, "hello", &GenerationParams::greedy()).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].text, "world");
        assert_eq!(out[0].finish_reason, FinishReason::Stop);
    }

    #[test]
    fn five_samples_indexed_zero_to_four() {
        let fx = FixtureBackend::new("fixture", "m")
            .with_responder(|r| Ok(format!("sample {}", r.sample_index)))
            .with_arrival_jitter(7);
        let out = complete(&fx, "p", &GenerationParams::sampled(0.7, 5)).unwrap();
        let idx: Vec<u32> = out.iter().map(|r| r.sample_index).collect();
        assert_eq!(idx, vec![0, 1, 2, 3, 4]);
        assert_eq!(out[3].text, "sample 3");
    }

    #[test]
    fn greedy_with_three_samples_is_flagged() {
        let fx = FixtureBackend::new("fixture", "m").with_responder(|_| Ok("x".into()));
        let p = GenerationParams {
            n_samples: 3,
            ..GenerationParams::greedy()
        };
        assert!(matches!(complete(&fx, "p", &p), Err(BackendError::InvalidRequest(_))));
        assert_eq!(fx.sample_calls(), 0);
    }

    #[test]
    fn constant_logprob_fixture() {
        let fx = FixtureBackend::new("fixture", "m").with_constant_logprob(-std::f64::consts::LN_2);
        let lps = fx.teacher_forced_logprobs("one two three").unwrap();
        assert_eq!(lps.len(), 3);
        for t in &lps {
            assert_eq!(t.logprob, -std::f64::consts::LN_2);
        }
        assert!(fx.teacher_forced_logprobs("").is_err());
    }

    #[test]
    fn scoring_without_scorer_is_unsupported() {
        let fx = FixtureBackend::new("fixture", "m");
        assert!(matches!(fx.teacher_forced_logprobs("x"), Err(BackendError::Unsupported(_))));
    }

    #[test]
    fn pseudo_tokens_keep_every_byte() {
        let text = "  a b\n\nc ";
        assert_eq!(pseudo_tokens(text).concat(), text);
        assert_eq!(pseudo_tokens("a b c").len(), 3);
    }
}
