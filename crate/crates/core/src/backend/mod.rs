//! Backend-neutral text generation.
//!
//! Everything above this module talks to a [`Backend`]. Three implementations
//! ship: [`OpenAiCompatible`] for served models, [`FixtureBackend`] for
//! scripted offline tests, and [`CachedBackend`], a record/replay layer that
//! wraps either of them so experiments can be re-run without a live model.

mod cache;
mod fixture;
mod openai;
mod pool;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{CacheKey, CacheMode, CacheStats, CachedBackend, RequestKind};
pub use fixture::{FixtureBackend, FixtureRequest};
pub use openai::{OpenAiCompatible, OpenAiConfig, WireFormat, BACKEND_ID};
pub use pool::{fan_out, Limiter};

pub const DEFAULT_MAX_TOKENS: u32 = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("rate limited (retry after {retry_after:?})")]
    RateLimited { retry_after: Option<Duration> },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("cache miss for key {0}")]
    CacheMiss(String),
    #[error("cache corrupt: {0}")]
    CacheCorrupt(String),
    #[error("cache io: {0}")]
    CacheIo(String),
}

impl BackendError {
    /// Errors worth retrying against a live endpoint.
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transport(_) | BackendError::RateLimited { .. })
    }

    /// Errors that indicate a broken setup rather than one unlucky sample.
    /// Callers must not absorb these as missing samples.
    pub fn is_systemic(&self) -> bool {
        matches!(
            self,
            BackendError::Unsupported(_)
                | BackendError::InvalidRequest(_)
                | BackendError::CacheMiss(_)
                | BackendError::CacheCorrupt(_)
                | BackendError::CacheIo(_)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_tokens: u32,
    pub n_samples: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<Vec<String>>,
    #[serde(default)]
    pub want_logprobs: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_hint: Option<u64>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self::greedy()
    }
}

impl GenerationParams {
    pub fn greedy() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: DEFAULT_MAX_TOKENS,
            n_samples: 1,
            stop: None,
            want_logprobs: false,
            seed_hint: None,
        }
    }

    pub fn sampled(temperature: f64, n_samples: u32) -> Self {
        Self {
            temperature,
            n_samples,
            ..Self::greedy()
        }
    }

    pub fn with_stop<I, S>(mut self, stop: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.stop = Some(stop.into_iter().map(Into::into).collect());
        self
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(BackendError::InvalidRequest(format!(
                "temperature must be a non-negative number, got {}",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_tokens must be positive".into()));
        }
        if self.n_samples == 0 {
            return Err(BackendError::InvalidRequest("n_samples must be positive".into()));
        }
        if self.temperature == 0.0 && self.n_samples > 1 {
            return Err(BackendError::InvalidRequest(format!(
                "greedy decoding with n_samples = {} would only produce duplicates",
                self.n_samples
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Other,
}

impl FinishReason {
    pub fn from_wire(s: Option<&str>) -> Self {
        match s {
            Some("stop") | Some("eos") => FinishReason::Stop,
            Some("length") => FinishReason::Length,
            _ => FinishReason::Other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    /// Natural-log probability.
    pub logprob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<TokenLogprob>>,
    pub finish_reason: FinishReason,
    pub sample_index: u32,
}

/// Identity of a served model, part of every cache key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub backend: String,
    pub model: String,
}

impl BackendDescriptor {
    pub fn new(backend: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            backend: backend.into(),
            model: model.into(),
        }
    }
}

pub trait Backend: Send + Sync {
    fn descriptor(&self) -> BackendDescriptor;

    /// Generates the sample with the given index. Implementations should make
    /// the result a function of `(prompt, params, sample_index)` where the
    /// model allows it.
    fn complete_one(
        &self,
        prompt: &str,
        params: &GenerationParams,
        sample_index: u32,
    ) -> Result<CompletionResult, BackendError>;

    /// Generates `params.n_samples` samples, one slot per sample index.
    /// Individual samples may fail without failing the others.
    fn complete_many(
        &self,
        prompt: &str,
        params: &GenerationParams,
    ) -> Vec<Result<CompletionResult, BackendError>> {
        if let Err(e) = check_request(prompt, params) {
            return vec![Err(e); params.n_samples.max(1) as usize];
        }
        fan_out(params.n_samples as usize, self.max_in_flight(), |i| {
            self.complete_one(prompt, params, i as u32)
        })
    }

    /// Teacher-forced log-probabilities of the prompt's own tokens.
    fn teacher_forced_logprobs(&self, prompt: &str) -> Result<Vec<TokenLogprob>, BackendError>;

    /// Upper bound on concurrent requests issued by the default fan-out.
    fn max_in_flight(&self) -> usize {
        4
    }
}

/// All-or-nothing completion: exactly `n_samples` results ordered by
/// sample index, or the first error encountered.
pub fn complete(
    backend: &dyn Backend,
    prompt: &str,
    params: &GenerationParams,
) -> Result<Vec<CompletionResult>, BackendError> {
    check_request(prompt, params)?;
    let mut out = backend
        .complete_many(prompt, params)
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    out.sort_by_key(|r| r.sample_index);
    Ok(out)
}

pub(crate) fn check_request(prompt: &str, params: &GenerationParams) -> Result<(), BackendError> {
    if prompt.is_empty() {
        return Err(BackendError::InvalidRequest("prompt is empty".into()));
    }
    params.validate()
}

/// Truncates `text` at the earliest stop string. Returns whether one matched.
pub fn apply_stop(text: &str, stop: Option<&[String]>) -> (String, bool) {
    let cut = stop
        .unwrap_or_default()
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s.as_str()))
        .min();
    match cut {
        Some(at) => (text[..at].to_string(), true),
        None => (text.to_string(), false),
    }
}

impl<B: Backend + ?Sized> Backend for &B {
    fn descriptor(&self) -> BackendDescriptor {
        (**self).descriptor()
    }
    fn complete_one(&self, prompt: &str, params: &GenerationParams, i: u32) -> Result<CompletionResult, BackendError> {
        (**self).complete_one(prompt, params, i)
    }
    fn complete_many(&self, prompt: &str, params: &GenerationParams) -> Vec<Result<CompletionResult, BackendError>> {
        (**self).complete_many(prompt, params)
    }
    fn teacher_forced_logprobs(&self, prompt: &str) -> Result<Vec<TokenLogprob>, BackendError> {
        (**self).teacher_forced_logprobs(prompt)
    }
    fn max_in_flight(&self) -> usize {
        (**self).max_in_flight()
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn descriptor(&self) -> BackendDescriptor {
        (**self).descriptor()
    }
    fn complete_one(&self, prompt: &str, params: &GenerationParams, i: u32) -> Result<CompletionResult, BackendError> {
        (**self).complete_one(prompt, params, i)
    }
    fn complete_many(&self, prompt: &str, params: &GenerationParams) -> Vec<Result<CompletionResult, BackendError>> {
        (**self).complete_many(prompt, params)
    }
    fn teacher_forced_logprobs(&self, prompt: &str) -> Result<Vec<TokenLogprob>, BackendError> {
        (**self).teacher_forced_logprobs(prompt)
    }
    fn max_in_flight(&self) -> usize {
        (**self).max_in_flight()
    }
}

/// Counts the generation and scoring requests that reach the wrapped backend.
pub struct CallCounter<B> {
    inner: B,
    samples: AtomicUsize,
    scoring: AtomicUsize,
}

impl<B: Backend> CallCounter<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            samples: AtomicUsize::new(0),
            scoring: AtomicUsize::new(0),
        }
    }

    /// Number of samples requested (a batched call for n samples counts n).
    pub fn sample_calls(&self) -> usize {
        self.samples.load(Ordering::SeqCst)
    }

    pub fn scoring_calls(&self) -> usize {
        self.scoring.load(Ordering::SeqCst)
    }

    pub fn total_calls(&self) -> usize {
        self.sample_calls() + self.scoring_calls()
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: Backend> Backend for CallCounter<B> {
    fn descriptor(&self) -> BackendDescriptor {
        self.inner.descriptor()
    }

    fn complete_one(&self, prompt: &str, params: &GenerationParams, i: u32) -> Result<CompletionResult, BackendError> {
        self.samples.fetch_add(1, Ordering::SeqCst);
        self.inner.complete_one(prompt, params, i)
    }

    fn complete_many(&self, prompt: &str, params: &GenerationParams) -> Vec<Result<CompletionResult, BackendError>> {
        self.samples.fetch_add(params.n_samples as usize, Ordering::SeqCst);
        self.inner.complete_many(prompt, params)
    }

    fn teacher_forced_logprobs(&self, prompt: &str) -> Result<Vec<TokenLogprob>, BackendError> {
        self.scoring.fetch_add(1, Ordering::SeqCst);
        self.inner.teacher_forced_logprobs(prompt)
    }

    fn max_in_flight(&self) -> usize {
        self.inner.max_in_flight()
    }
}

/// A backend that refuses every call. Stands in for the live model when a
/// run is served entirely from a replay cache.
pub struct OfflineBackend {
    descriptor: BackendDescriptor,
}

impl OfflineBackend {
    pub fn new(descriptor: BackendDescriptor) -> Self {
        Self { descriptor }
    }
}

impl Backend for OfflineBackend {
    fn descriptor(&self) -> BackendDescriptor {
        self.descriptor.clone()
    }

    fn complete_one(&self, _: &str, _: &GenerationParams, _: u32) -> Result<CompletionResult, BackendError> {
        Err(BackendError::Unsupported("offline backend cannot generate".into()))
    }

    fn teacher_forced_logprobs(&self, _: &str) -> Result<Vec<TokenLogprob>, BackendError> {
        Err(BackendError::Unsupported("offline backend cannot score".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn greedy_with_many_samples_is_rejected() {
        let p = GenerationParams {
            n_samples: 3,
            ..GenerationParams::greedy()
        };
        assert!(matches!(p.validate(), Err(BackendError::InvalidRequest(_))));
    }

    #[test]
    fn sampled_params_validate() {
        assert!(GenerationParams::sampled(0.7, 5).validate().is_ok());
        assert!(GenerationParams::sampled(-0.1, 1).validate().is_err());
        assert!(GenerationParams::sampled(f64::NAN, 1).validate().is_err());
        assert!(GenerationParams::greedy().with_max_tokens(0).validate().is_err());
    }

    #[test]
    fn default_max_tokens() {
        assert_eq!(GenerationParams::default().max_tokens, 256);
    }

    #[test]
    fn stop_truncates_at_earliest_match() {
        let stops = vec!["\n\n".to_string(), "\ntweet:".to_string()];
        let (t, hit) = apply_stop("stance: favor\ntweet: x\n\nmore", Some(&stops));
        assert_eq!(t, "stance: favor");
        assert!(hit);
        let (t, hit) = apply_stop("no stop here", Some(&stops));
        assert_eq!(t, "no stop here");
        assert!(!hit);
    }

    #[test]
    fn empty_prompt_rejected() {
        let fx = FixtureBackend::new("fixture", "m");
        assert!(matches!(
            complete(&fx, "", &GenerationParams::greedy()),
            Err(BackendError::InvalidRequest(_))
        ));
    }
}
