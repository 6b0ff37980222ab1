//! Client for OpenAI-compatible text-completion endpoints.

use std::sync::atomic::{AtomicBool, Ordering};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    apply_stop, check_request, fan_out, Backend, BackendDescriptor, BackendError, CompletionResult, FinishReason,
    GenerationParams, Limiter, TokenLogprob,
};

pub const BACKEND_ID: &str = "openai-compatible";

/// Which endpoint shape the server speaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WireFormat {
    /// `POST {base}/completions` with a raw prompt.
    #[default]
    Completions,
    /// `POST {base}/chat/completions`; the prompt is sent as one user turn.
    Chat,
}

#[derive(Debug, Clone)]
pub struct OpenAiConfig {
    /// Base URL up to and including the version segment, e.g. `http://localhost:8000/v1`.
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub wire: WireFormat,
    pub timeout: Duration,
    pub max_retries: u32,
    pub backoff_base: Duration,
    pub max_in_flight: usize,
}

impl OpenAiConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            api_key: None,
            wire: WireFormat::Completions,
            timeout: Duration::from_secs(120),
            max_retries: 3,
            backoff_base: Duration::from_millis(500),
            max_in_flight: 4,
        }
    }

    /// Reads the API key from `STANCEKIT_API_KEY`, falling back to `OPENAI_API_KEY`.
    pub fn with_env_key(mut self) -> Self {
        self.api_key = std::env::var("STANCEKIT_API_KEY")
            .or_else(|_| std::env::var("OPENAI_API_KEY"))
            .ok()
            .filter(|k| !k.is_empty());
        self
    }
}

pub struct OpenAiCompatible {
    config: OpenAiConfig,
    http: reqwest::blocking::Client,
    limiter: Limiter,
    batch_supported: AtomicBool,
}

#[derive(Debug, Deserialize)]
struct WireResponse {
    #[serde(default)]
    choices: Vec<WireChoice>,
}

#[derive(Debug, Deserialize)]
struct WireChoice {
    #[serde(default)]
    index: Option<u32>,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    message: Option<WireMessage>,
    #[serde(default)]
    logprobs: Option<WireLogprobs>,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Debug, Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Debug, Deserialize)]
struct WireLogprobs {
    #[serde(default)]
    tokens: Vec<String>,
    #[serde(default)]
    token_logprobs: Vec<Option<f64>>,
}

enum Failure {
    /// The server refused `n > 1` in one request.
    BatchRejected,
    Error(BackendError),
}

impl OpenAiCompatible {
    pub fn new(config: OpenAiConfig) -> Result<Self, BackendError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::Transport(format!("building http client: {e}")))?;
        Ok(Self {
            limiter: Limiter::new(config.max_in_flight),
            config,
            http,
            batch_supported: AtomicBool::new(true),
        })
    }

    pub fn config(&self) -> &OpenAiConfig {
        &self.config
    }

    fn endpoint(&self) -> String {
        let base = self.config.base_url.trim_end_matches('/');
        match self.config.wire {
            WireFormat::Completions => format!("{base}/completions"),
            WireFormat::Chat => format!("{base}/chat/completions"),
        }
    }

    fn body(&self, prompt: &str, params: &GenerationParams, n: u32, seed: Option<u64>) -> Value {
        let mut body = match self.config.wire {
            WireFormat::Completions => json!({ "model": self.config.model, "prompt": prompt }),
            WireFormat::Chat => json!({
                "model": self.config.model,
                "messages": [{ "role": "user", "content": prompt }],
            }),
        };
        let obj = body.as_object_mut().expect("object literal");
        obj.insert("max_tokens".into(), json!(params.max_tokens));
        obj.insert("temperature".into(), json!(params.temperature));
        obj.insert("n".into(), json!(n));
        if let Some(stop) = params.stop.as_ref().filter(|s| !s.is_empty()) {
            obj.insert("stop".into(), json!(stop));
        }
        if params.want_logprobs {
            obj.insert("logprobs".into(), json!(1));
        }
        if let Some(seed) = seed {
            obj.insert("seed".into(), json!(seed));
        }
        body
    }

    /// One HTTP exchange with retries on transport errors and rate limiting.
    fn post(&self, body: &Value, allow_batch_rejection: bool) -> Result<WireResponse, Failure> {
        let mut attempt = 0u32;
        loop {
            let outcome = self.post_once(body, allow_batch_rejection);
            match outcome {
                Err(Failure::Error(e)) if e.is_retryable() && attempt < self.config.max_retries => {
                    let backoff = match &e {
                        BackendError::RateLimited {
                            retry_after: Some(after),
                        } => *after,
                        _ => self.config.backoff_base * 2u32.pow(attempt),
                    };
                    log::warn!("request failed ({e}); retry {} in {backoff:?}", attempt + 1);
                    thread::sleep(backoff);
                    attempt += 1;
                }
                other => return other,
            }
        }
    }

    fn post_once(&self, body: &Value, allow_batch_rejection: bool) -> Result<WireResponse, Failure> {
        let _permit = self.limiter.acquire();
        let mut request = self.http.post(self.endpoint()).json(body);
        if let Some(key) = &self.config.api_key {
            request = request.bearer_auth(key);
        }
        let response = request
            .send()
            .map_err(|e| Failure::Error(BackendError::Transport(e.to_string())))?;
        let status = response.status();
        let retry_after = response
            .headers()
            .get(reqwest::header::RETRY_AFTER)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<u64>().ok())
            .map(Duration::from_secs);
        let text = response
            .text()
            .map_err(|e| Failure::Error(BackendError::Transport(e.to_string())))?;
        if status.as_u16() == 429 {
            return Err(Failure::Error(BackendError::RateLimited { retry_after }));
        }
        if status.is_server_error() {
            return Err(Failure::Error(BackendError::Transport(format!("server returned {status}: {text}"))));
        }
        if allow_batch_rejection && (status.as_u16() == 400 || status.as_u16() == 422) {
            return Err(Failure::BatchRejected);
        }
        if !status.is_success() {
            return Err(Failure::Error(BackendError::Protocol(format!("server returned {status}: {text}"))));
        }
        serde_json::from_str(&text)
            .map_err(|e| Failure::Error(BackendError::Protocol(format!("malformed response: {e}"))))
    }

    fn choice_result(&self, choice: WireChoice, params: &GenerationParams, sample_index: u32) -> Result<CompletionResult, BackendError> {
        let text = match self.config.wire {
            WireFormat::Completions => choice.text,
            WireFormat::Chat => choice.message.and_then(|m| m.content),
        }
        .ok_or_else(|| BackendError::Protocol("choice carries no text".into()))?;
        let token_logprobs = if params.want_logprobs {
            let lp = choice
                .logprobs
                .ok_or_else(|| BackendError::Unsupported("server returned no log-probabilities".into()))?;
            Some(
                lp.tokens
                    .into_iter()
                    .zip(lp.token_logprobs)
                    .filter_map(|(token, logprob)| logprob.map(|logprob| TokenLogprob { token, logprob }))
                    .collect(),
            )
        } else {
            None
        };
        // Servers apply stop strings themselves; this only guards against ones that don't.
        let (text, _) = apply_stop(&text, params.stop.as_deref());
        Ok(CompletionResult {
            text,
            token_logprobs,
            finish_reason: FinishReason::from_wire(choice.finish_reason.as_deref()),
            sample_index,
        })
    }

    fn check_capabilities(&self, params: &GenerationParams) -> Result<(), BackendError> {
        if params.want_logprobs && self.config.wire == WireFormat::Chat {
            return Err(BackendError::Unsupported("log-probabilities over the chat wire format".into()));
        }
        Ok(())
    }
}

impl Backend for OpenAiCompatible {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor::new(BACKEND_ID, self.config.model.clone())
    }

    fn complete_one(
        &self,
        prompt: &str,
        params: &GenerationParams,
        sample_index: u32,
    ) -> Result<CompletionResult, BackendError> {
        check_request(prompt, params)?;
        self.check_capabilities(params)?;
        let seed = params.seed_hint.map(|s| s.wrapping_add(sample_index as u64));
        let body = self.body(prompt, params, 1, seed);
        let response = self.post(&body, false).map_err(|f| match f {
            Failure::Error(e) => e,
            Failure::BatchRejected => BackendError::Protocol("request rejected".into()),
        })?;
        let choice = response
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::Protocol("response has no choices".into()))?;
        self.choice_result(choice, params, sample_index)
    }

    fn complete_many(&self, prompt: &str, params: &GenerationParams) -> Vec<Result<CompletionResult, BackendError>> {
        let n = params.n_samples.max(1) as usize;
        if let Err(e) = check_request(prompt, params).and_then(|_| self.check_capabilities(params)) {
            return vec![Err(e); n];
        }
        let per_sample = || {
            fan_out(n, self.config.max_in_flight, |i| {
                self.complete_one(prompt, params, i as u32)
            })
        };
        if n == 1 || !self.batch_supported.load(Ordering::SeqCst) {
            return per_sample();
        }
        let body = self.body(prompt, params, n as u32, params.seed_hint);
        match self.post(&body, true) {
            Ok(response) => {
                let mut slots: Vec<Option<WireChoice>> = (0..n).map(|_| None).collect();
                for (pos, choice) in response.choices.into_iter().enumerate() {
                    let i = choice.index.map(|i| i as usize).unwrap_or(pos);
                    if i < n && slots[i].is_none() {
                        slots[i] = Some(choice);
                    }
                }
                slots
                    .into_iter()
                    .enumerate()
                    .map(|(i, c)| match c {
                        Some(c) => self.choice_result(c, params, i as u32),
                        None => Err(BackendError::Protocol(format!("response is missing choice {i}"))),
                    })
                    .collect()
            }
            Err(Failure::BatchRejected) => {
                log::info!("server rejected n = {n}; falling back to single-sample requests");
                self.batch_supported.store(false, Ordering::SeqCst);
                per_sample()
            }
            Err(Failure::Error(e)) => vec![Err(e); n],
        }
    }

    fn teacher_forced_logprobs(&self, prompt: &str) -> Result<Vec<TokenLogprob>, BackendError> {
        if prompt.is_empty() {
            return Err(BackendError::InvalidRequest("prompt is empty".into()));
        }
        if self.config.wire == WireFormat::Chat {
            return Err(BackendError::Unsupported("echo scoring over the chat wire format".into()));
        }
        let body = json!({
            "model": self.config.model,
            "prompt": prompt,
            "max_tokens": 1,
            "temperature": 0.0,
            "n": 1,
            "logprobs": 1,
            "echo": true,
        });
        let response = self.post(&body, false).map_err(|f| match f {
            Failure::Error(e) => e,
            Failure::BatchRejected => BackendError::Protocol("request rejected".into()),
        })?;
        let choice = response
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::Protocol("response has no choices".into()))?;
        let lp = choice
            .logprobs
            .ok_or_else(|| BackendError::Unsupported("server returned no log-probabilities for echo".into()))?;
        prompt_logprobs(prompt, lp.tokens, lp.token_logprobs)
    }

    fn max_in_flight(&self) -> usize {
        self.config.max_in_flight
    }
}

/// Keeps the echoed tokens that cover the prompt and drops the generated tail.
/// The first prompt token has no conditional probability and is skipped.
fn prompt_logprobs(
    prompt: &str,
    tokens: Vec<String>,
    logprobs: Vec<Option<f64>>,
) -> Result<Vec<TokenLogprob>, BackendError> {
    let mut consumed = 0usize;
    let mut out = Vec::new();
    for (token, lp) in tokens.into_iter().zip(logprobs) {
        if consumed >= prompt.len() {
            break;
        }
        consumed += token.len();
        if let Some(logprob) = lp {
            out.push(TokenLogprob { token, logprob });
        }
    }
    if out.is_empty() {
        return Err(BackendError::Protocol("echo returned no prompt log-probabilities".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::complete;
    use crate::testing::{MockResponse, MockServer};
    use std::sync::atomic::AtomicUsize;
    use std::sync::Arc;

    fn client(server: &MockServer) -> OpenAiCompatible {
        let mut cfg = OpenAiConfig::new(server.base_url(), "test-model");
        cfg.backoff_base = Duration::from_millis(1);
        cfg.api_key = Some("sk-test".into());
        OpenAiCompatible::new(cfg).unwrap()
    }

    #[test]
    fn request_body_follows_completion_schema() {
        let server = MockServer::start(|_| {
            MockResponse::json(200, r#"{"choices":[{"index":0,"text":" favor","finish_reason":"stop"}]}"#)
        });
        let c = client(&server);
        let params = GenerationParams::greedy().with_stop(["\n\n"]);
        let out = complete(&c, "Question?", &params).unwrap();
        assert_eq!(out[0].text, " favor");
        assert_eq!(out[0].finish_reason, FinishReason::Stop);
        let req = &server.requests()[0];
        assert_eq!(req.path, "/v1/completions");
        assert_eq!(req.header("authorization"), Some("Bearer sk-test"));
        let body = req.json();
        assert_eq!(body["model"], "test-model");
        assert_eq!(body["prompt"], "Question?");
        assert_eq!(body["max_tokens"], 256);
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["n"], 1);
        assert_eq!(body["stop"], json!(["\n\n"]));
    }

    #[test]
    fn batched_samples_are_ordered_by_index() {
        let server = MockServer::start(|_| {
            MockResponse::json(
                200,
                r#"{"choices":[{"index":2,"text":"c","finish_reason":"stop"},{"index":0,"text":"a","finish_reason":"length"},{"index":1,"text":"b","finish_reason":"stop"}]}"#,
            )
        });
        let c = client(&server);
        let out = complete(&c, "p", &GenerationParams::sampled(0.7, 3)).unwrap();
        let texts: Vec<_> = out.iter().map(|r| r.text.as_str()).collect();
        assert_eq!(texts, ["a", "b", "c"]);
        assert_eq!(out[0].finish_reason, FinishReason::Length);
        assert_eq!(server.requests().len(), 1);
    }

    #[test]
    fn rejected_batch_falls_back_to_single_requests() {
        let server = MockServer::start(|req| {
            if req.json()["n"] != 1 {
                MockResponse::json(400, r#"{"error":{"message":"n must be 1"}}"#)
            } else {
                MockResponse::json(200, r#"{"choices":[{"text":"x","finish_reason":"stop"}]}"#)
            }
        });
        let c = client(&server);
        let out = complete(&c, "p", &GenerationParams::sampled(0.7, 4)).unwrap();
        assert_eq!(out.len(), 4);
        assert_eq!(server.requests().len(), 5);
        // The rejection is remembered.
        complete(&c, "p", &GenerationParams::sampled(0.7, 2)).unwrap();
        assert_eq!(server.requests().len(), 7);
    }

    #[test]
    fn transport_errors_are_retried() {
        let calls = Arc::new(AtomicUsize::new(0));
        let seen = Arc::clone(&calls);
        let server = MockServer::start(move |_| {
            if seen.fetch_add(1, Ordering::SeqCst) < 2 {
                MockResponse::json(503, "busy")
            } else {
                MockResponse::json(200, r#"{"choices":[{"text":"ok","finish_reason":"stop"}]}"#)
            }
        });
        let c = client(&server);
        let out = complete(&c, "p", &GenerationParams::greedy()).unwrap();
        assert_eq!(out[0].text, "ok");
        assert_eq!(calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn retries_are_bounded() {
        let server = MockServer::start(|_| MockResponse::json(429, "{}").header("Retry-After", "0"));
        let c = client(&server);
        let err = complete(&c, "p", &GenerationParams::greedy()).unwrap_err();
        assert!(matches!(err, BackendError::RateLimited { .. }));
        assert_eq!(server.requests().len(), 4);
    }

    #[test]
    fn malformed_json_is_a_protocol_error() {
        let server = MockServer::start(|_| MockResponse::json(200, "{not json"));
        let err = complete(&client(&server), "p", &GenerationParams::greedy()).unwrap_err();
        assert!(matches!(err, BackendError::Protocol(_)));
    }

    #[test]
    fn echo_scoring_keeps_prompt_tokens_only() {
        let server = MockServer::start(|_| {
            MockResponse::json(
                200,
                r#"{"choices":[{"text":"ab cd!","logprobs":{"tokens":["ab"," cd","!"],"token_logprobs":[null,-0.5,-2.0]}}]}"#,
            )
        });
        let c = client(&server);
        let lps = c.teacher_forced_logprobs("ab cd").unwrap();
        assert_eq!(lps, vec![TokenLogprob { token: " cd".into(), logprob: -0.5 }]);
        let body = server.requests()[0].json();
        assert_eq!(body["echo"], true);
        assert_eq!(body["logprobs"], 1);
    }

    #[test]
    fn missing_logprobs_is_unsupported() {
        let server = MockServer::start(|_| MockResponse::json(200, r#"{"choices":[{"text":"x"}]}"#));
        let err = client(&server).teacher_forced_logprobs("x y").unwrap_err();
        assert!(matches!(err, BackendError::Unsupported(_)));
    }

    #[test]
    fn chat_wire_wraps_prompt_as_one_user_turn() {
        let server = MockServer::start(|_| {
            MockResponse::json(200, r#"{"choices":[{"index":0,"message":{"role":"assistant","content":"none"},"finish_reason":"stop"}]}"#)
        });
        let mut cfg = OpenAiConfig::new(server.base_url(), "chat-model");
        cfg.wire = WireFormat::Chat;
        let c = OpenAiCompatible::new(cfg).unwrap();
        let out = complete(&c, "the prompt", &GenerationParams::greedy()).unwrap();
        assert_eq!(out[0].text, "none");
        let req = &server.requests()[0];
        assert_eq!(req.path, "/v1/chat/completions");
        assert_eq!(req.json()["messages"], json!([{"role": "user", "content": "the prompt"}]));
        assert!(matches!(c.teacher_forced_logprobs("x"), Err(BackendError::Unsupported(_))));
    }

    #[test]
    fn unreachable_server_is_a_transport_error() {
        let mut cfg = OpenAiConfig::new("http://127.0.0.1:9/v1", "m");
        cfg.max_retries = 0;
        cfg.timeout = Duration::from_secs(2);
        let c = OpenAiCompatible::new(cfg).unwrap();
        assert!(matches!(
            complete(&c, "p", &GenerationParams::greedy()),
            Err(BackendError::Transport(_))
        ));
    }
}
