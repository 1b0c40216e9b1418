//! Chat-completion and NLI backends.
//!
//! A backend performs one attempt against a model. [`ChatClient`] and
//! [`NliClient`] wrap a backend with the retry policy and the response
//! cache, and are what the rest of the crate talks to.

mod cache;
mod http;
mod mock;
mod retry;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cache::{CacheKey, ResponseCache};
pub use http::{HttpNli, NliEndpoint, OpenAiChat, OpenAiEndpoint};
pub use mock::{
    ChatRule, ChatScript, FailingChat, Matcher, NliRule, NliScript, ScriptedChat, ScriptedNli,
};
pub use retry::RetryPolicy;

pub const DEFAULT_TEMPERATURE: f64 = 0.0;
pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_MAX_TOKENS: u32 = 1024;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport error (status {status:?}): {message}")]
    Transport { status: Option<u16>, message: String },
    #[error("rate limited")]
    RateLimited,
    #[error("request timed out")]
    Timeout,
    #[error("gave up after {attempts} attempts: {last}")]
    ExhaustedRetries {
        attempts: u32,
        last: Box<BackendError>,
    },
    #[error("malformed backend output: {0}")]
    MalformedBackendOutput(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("no script rule matched request {0}")]
    Unscripted(String),
    #[error("cache: {0}")]
    Cache(#[from] std::io::Error),
}

impl BackendError {
    /// 408, 429, 5xx and timeouts are worth another attempt.
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::RateLimited | BackendError::Timeout => true,
            BackendError::Transport {
                status: Some(s), ..
            } => *s == 408 || *s == 429 || (500..600).contains(s),
            _ => false,
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_id: String,
    pub system_prompt: String,
    pub user_prompt: String,
    pub temperature: f64,
    pub seed: u64,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn new(
        model_id: impl Into<String>,
        system_prompt: impl Into<String>,
        user_prompt: impl Into<String>,
    ) -> Self {
        Self {
            model_id: model_id.into(),
            system_prompt: system_prompt.into(),
            user_prompt: user_prompt.into(),
            temperature: DEFAULT_TEMPERATURE,
            seed: DEFAULT_SEED,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(BackendError::InvalidRequest(format!(
                "temperature {} must be >= 0",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_tokens must be > 0".into()));
        }
        Ok(())
    }

    /// Hash of the full request payload.
    pub fn digest(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("request serializes"))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt: u64,
    pub completion: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub token_usage: TokenUsage,
    pub latency_ms: u64,
}

impl ChatResponse {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            token_usage: TokenUsage::default(),
            latency_ms: 0,
        }
    }
}

/// One attempt against a chat model.
pub trait ChatBackend: Send + Sync {
    /// Stable name used to namespace cache entries.
    fn kind(&self) -> &str;
    fn send(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError>;
}

/// Probabilities as reported by an NLI service, before validation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawNli {
    pub entailment: f64,
    pub neutral: f64,
    pub contradiction: f64,
}

impl RawNli {
    pub fn new(entailment: f64, neutral: f64, contradiction: f64) -> Self {
        Self {
            entailment,
            neutral,
            contradiction,
        }
    }
}

/// One attempt against an NLI classifier.
pub trait NliBackend: Send + Sync {
    fn kind(&self) -> &str;
    fn model_id(&self) -> &str;
    fn classify(&self, premise: &str, hypothesis: &str) -> Result<RawNli, BackendError>;
}

/// Entailment / neutral / contradiction probabilities on the simplex.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NliVerdict {
    p_entail: f64,
    p_neutral: f64,
    p_contradict: f64,
}

pub const SIMPLEX_TOLERANCE: f64 = 1e-6;
const RENORMALIZE_RANGE: std::ops::RangeInclusive<f64> = 0.5..=1.5;

impl NliVerdict {
    /// Validates raw probabilities. Returns the verdict and whether it had
    /// to be renormalized onto the simplex.
    pub fn from_raw(raw: RawNli) -> Result<(Self, bool), BackendError> {
        let parts = [raw.entailment, raw.neutral, raw.contradiction];
        if parts.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) {
            return Err(BackendError::MalformedBackendOutput(format!(
                "probabilities out of range: {parts:?}"
            )));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() <= SIMPLEX_TOLERANCE {
            return Ok((
                Self {
                    p_entail: raw.entailment,
                    p_neutral: raw.neutral,
                    p_contradict: raw.contradiction,
                },
                false,
            ));
        }
        if !RENORMALIZE_RANGE.contains(&sum) {
            return Err(BackendError::MalformedBackendOutput(format!(
                "probabilities sum to {sum}"
            )));
        }
        Ok((
            Self {
                p_entail: raw.entailment / sum,
                p_neutral: raw.neutral / sum,
                p_contradict: raw.contradiction / sum,
            },
            true,
        ))
    }

    pub fn p_entail(&self) -> f64 {
        self.p_entail
    }

    pub fn p_neutral(&self) -> f64 {
        self.p_neutral
    }

    pub fn p_contradict(&self) -> f64 {
        self.p_contradict
    }

    /// Entailment minus contradiction, in [-1, 1].
    pub fn margin(&self) -> f64 {
        self.p_entail - self.p_contradict
    }
}

/// A chat backend with retries and caching.
pub struct ChatClient {
    backend: Arc<dyn ChatBackend>,
    cache: Arc<ResponseCache>,
    retry: RetryPolicy,
    backend_calls: AtomicUsize,
}

impl ChatClient {
    pub fn new(backend: Arc<dyn ChatBackend>, cache: Arc<ResponseCache>, retry: RetryPolicy) -> Self {
        Self {
            backend,
            cache,
            retry,
            backend_calls: AtomicUsize::new(0),
        }
    }

    /// In-memory cache, default retry policy.
    pub fn uncached(backend: Arc<dyn ChatBackend>) -> Self {
        Self::new(backend, Arc::new(ResponseCache::in_memory()), RetryPolicy::default())
    }

    pub fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        req.validate()?;
        let key = CacheKey::new(self.backend.kind(), &req.model_id, req);
        if let Some(hit) = self.cache.load::<ChatResponse>(&key)? {
            return Ok(hit);
        }
        let resp = self.retry.run(|| {
            self.backend_calls.fetch_add(1, Ordering::Relaxed);
            self.backend.send(req)
        })?;
        self.cache.store(&key, &resp)?;
        Ok(resp)
    }

    /// Attempts issued to the backend, retries included. Cache hits do not count.
    pub fn backend_calls(&self) -> usize {
        self.backend_calls.load(Ordering::Relaxed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NliOutcome {
    pub verdict: NliVerdict,
    pub renormalized: bool,
}

#[derive(Serialize)]
struct NliPayload<'a> {
    premise: &'a str,
    hypothesis: &'a str,
}

pub struct NliClient {
    backend: Arc<dyn NliBackend>,
    cache: Arc<ResponseCache>,
    retry: RetryPolicy,
    backend_calls: AtomicUsize,
}

impl NliClient {
    pub fn new(backend: Arc<dyn NliBackend>, cache: Arc<ResponseCache>, retry: RetryPolicy) -> Self {
        Self {
            backend,
            cache,
            retry,
            backend_calls: AtomicUsize::new(0),
        }
    }

    pub fn uncached(backend: Arc<dyn NliBackend>) -> Self {
        Self::new(backend, Arc::new(ResponseCache::in_memory()), RetryPolicy::default())
    }

    /// Direction matters: the premise is the candidate response and the
    /// hypothesis is the key point.
    pub fn probabilities(&self, premise: &str, hypothesis: &str) -> Result<NliOutcome, BackendError> {
        let payload = NliPayload {
            premise,
            hypothesis,
        };
        let key = CacheKey::new(self.backend.kind(), self.backend.model_id(), &payload);
        let raw = match self.cache.load::<RawNli>(&key)? {
            Some(hit) => hit,
            None => {
                let raw = self.retry.run(|| {
                    self.backend_calls.fetch_add(1, Ordering::Relaxed);
                    self.backend.classify(premise, hypothesis)
                })?;
                // Validate before caching so garbage never lands on disk.
                NliVerdict::from_raw(raw)?;
                self.cache.store(&key, &raw)?;
                raw
            }
        };
        let (verdict, renormalized) = NliVerdict::from_raw(raw)?;
        Ok(NliOutcome {
            verdict,
            renormalized,
        })
    }

    pub fn backend_calls(&self) -> usize {
        self.backend_calls.load(Ordering::Relaxed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Duration;

    #[test]
    fn verdict_passthrough() {
        let (v, renorm) = NliVerdict::from_raw(RawNli::new(1.0, 0.0, 0.0)).unwrap();
        assert_eq!((v.p_entail(), v.p_neutral(), v.p_contradict()), (1.0, 0.0, 0.0));
        assert!(!renorm);
    }

    #[test]
    fn verdict_renormalized() {
        let (v, renorm) = NliVerdict::from_raw(RawNli::new(0.5, 0.2, 0.2)).unwrap();
        assert!(renorm);
        assert!((v.p_entail() - 5.0 / 9.0).abs() < 1e-15);
        assert!((v.p_neutral() - 2.0 / 9.0).abs() < 1e-15);
        assert!((v.p_contradict() - 2.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn verdict_rejects_out_of_range() {
        assert!(matches!(
            NliVerdict::from_raw(RawNli::new(-0.1, 0.6, 0.5)),
            Err(BackendError::MalformedBackendOutput(_))
        ));
        assert!(matches!(
            NliVerdict::from_raw(RawNli::new(0.1, 0.1, 0.1)),
            Err(BackendError::MalformedBackendOutput(_))
        ));
        assert!(NliVerdict::from_raw(RawNli::new(f64::NAN, 0.5, 0.5)).is_err());
    }

    #[test]
    fn request_validation() {
        let mut req = ChatRequest::new("m", "s", "u");
        assert_eq!(req.temperature, 0.0);
        assert_eq!(req.seed, 42);
        req.max_tokens = 0;
        assert!(req.validate().is_err());
        req.max_tokens = 10;
        req.temperature = -1.0;
        assert!(req.validate().is_err());
    }

    #[test]
    fn second_identical_request_is_cached() {
        let mock = Arc::new(ScriptedChat::new(ChatScript::fixed("factoid")));
        let client = ChatClient::uncached(mock.clone());
        let req = ChatRequest::new("m", "sys", "user");
        assert_eq!(client.complete(&req).unwrap().text, "factoid");
        assert_eq!(client.complete(&req).unwrap().text, "factoid");
        assert_eq!(mock.calls(), 1);
        assert_eq!(client.backend_calls(), 1);
    }

    #[test]
    fn exhausted_retries_after_persistent_500() {
        let failing = Arc::new(FailingChat::new(vec![500, 500, 500]));
        let client = ChatClient::new(
            failing.clone(),
            Arc::new(ResponseCache::in_memory()),
            RetryPolicy::new(2, Duration::ZERO),
        );
        let err = client.complete(&ChatRequest::new("m", "s", "u")).unwrap_err();
        assert!(matches!(err, BackendError::ExhaustedRetries { attempts: 3, .. }));
        assert_eq!(failing.calls(), 3);
    }

    #[test]
    fn non_retryable_status_fails_fast() {
        let failing = Arc::new(FailingChat::new(vec![400]));
        let client = ChatClient::new(
            failing.clone(),
            Arc::new(ResponseCache::in_memory()),
            RetryPolicy::new(2, Duration::ZERO),
        );
        let err = client.complete(&ChatRequest::new("m", "s", "u")).unwrap_err();
        assert!(matches!(err, BackendError::Transport { status: Some(400), .. }));
        assert_eq!(failing.calls(), 1);
    }

    #[test]
    fn nli_client_caches_and_renormalizes() {
        let mock = Arc::new(ScriptedNli::new(NliScript::fixed(RawNli::new(0.5, 0.2, 0.2))));
        let client = NliClient::uncached(mock.clone());
        let out = client.probabilities("premise", "hyp").unwrap();
        assert!(out.renormalized);
        client.probabilities("premise", "hyp").unwrap();
        assert_eq!(mock.calls(), 1);
    }

    #[test]
    fn nli_malformed_is_not_cached() {
        let mock = Arc::new(ScriptedNli::new(NliScript::fixed(RawNli::new(-0.1, 0.6, 0.5))));
        let client = NliClient::uncached(mock.clone());
        assert!(client.probabilities("p", "h").is_err());
        assert!(client.probabilities("p", "h").is_err());
        assert_eq!(mock.calls(), 2);
    }
}
