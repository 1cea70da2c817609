//! All black-box model access goes through [`Gateway`]: chat generation and
//! text embedding, with retries, a shared [`Budget`], and an in-flight cap.
//!
//! Backends are pluggable through [`Backend`]. [`http`] speaks the common
//! chat-completions / embeddings JSON schemas; [`mock`] provides scripted,
//! deterministic stand-ins for tests and the toy pipeline.

mod budget;
pub mod http;
pub mod mock;

use std::env;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::EmbeddingVector;

pub use budget::{usage_report, Budget, UsageSnapshot};

pub const API_KEY_ENV: &str = "LPO_API_KEY";
pub const ENDPOINT_ENV: &str = "LPO_ENDPOINT";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("budget exhausted after {calls} calls and {tokens} tokens")]
    BudgetExhausted { calls: u64, tokens: u64 },
    #[error("backend unreachable after {attempts} attempts: {last}")]
    Unreachable { attempts: u32, last: String },
    #[error("backend rejected request with status {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed backend reply: {0}")]
    Malformed(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("embedding dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("backend configuration: {0}")]
    Config(String),
}

impl GatewayError {
    pub fn is_budget_exhausted(&self) -> bool {
        matches!(self, GatewayError::BudgetExhausted { .. })
    }
}

/// Failure reported by a single backend attempt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendFailure {
    Timeout(String),
    Connect(String),
    Status { code: u16, body: String },
    Malformed(String),
    Unsupported(String),
}

impl BackendFailure {
    /// Timeouts, connection failures, 5xx and 429 are retried.
    pub fn is_transient(&self) -> bool {
        match self {
            BackendFailure::Timeout(_) | BackendFailure::Connect(_) => true,
            BackendFailure::Status { code, .. } => *code == 429 || (500..600).contains(code),
            BackendFailure::Malformed(_) | BackendFailure::Unsupported(_) => false,
        }
    }

    fn describe(&self) -> String {
        match self {
            BackendFailure::Timeout(m) => format!("timeout: {m}"),
            BackendFailure::Connect(m) => format!("connection failed: {m}"),
            BackendFailure::Status { code, body } => format!("status {code}: {body}"),
            BackendFailure::Malformed(m) => format!("malformed reply: {m}"),
            BackendFailure::Unsupported(m) => format!("unsupported: {m}"),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_text: Option<String>,
    pub user_text: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Continuous pseudo-token vector; only mock backends accept it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub soft_prompt: Option<Vec<f64>>,
}

impl ChatRequest {
    pub fn new(user_text: impl Into<String>) -> Self {
        Self {
            system_text: None,
            user_text: user_text.into(),
            temperature: 0.0,
            max_tokens: 512,
            soft_prompt: None,
        }
    }

    pub fn with_system(mut self, system_text: impl Into<String>) -> Self {
        self.system_text = Some(system_text.into());
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    pub fn with_soft_prompt(mut self, vector: Vec<f64>) -> Self {
        self.soft_prompt = Some(vector);
        self
    }

    fn validate(&self) -> Result<(), GatewayError> {
        if self.user_text.is_empty() {
            return Err(GatewayError::InvalidRequest("user text is empty".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} must be finite and non-negative",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be positive".into()));
        }
        if let Some(v) = &self.soft_prompt {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(GatewayError::InvalidRequest("soft prompt has non-finite values".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub text: String,
    pub usage: TokenUsage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbedResponse {
    pub vectors: Vec<Vec<f64>>,
    pub usage: TokenUsage,
}

/// A model endpoint. Implementations perform exactly one attempt per call;
/// retry, budget and concurrency policy live in [`Gateway`].
pub trait Backend: Send + Sync {
    fn model_name(&self) -> &str;

    /// Whether [`ChatRequest::soft_prompt`] is honoured.
    fn accepts_soft_prompt(&self) -> bool {
        false
    }

    fn chat(&self, _req: &ChatRequest) -> Result<ChatResponse, BackendFailure> {
        Err(BackendFailure::Unsupported(format!(
            "{} does not serve chat",
            self.model_name()
        )))
    }

    fn embed(&self, _texts: &[String]) -> Result<EmbedResponse, BackendFailure> {
        Err(BackendFailure::Unsupported(format!(
            "{} does not serve embeddings",
            self.model_name()
        )))
    }
}

macro_rules! forward_backend {
    ($ptr:ident) => {
        impl<B: Backend + ?Sized> Backend for $ptr<B> {
            fn model_name(&self) -> &str {
                (**self).model_name()
            }
            fn accepts_soft_prompt(&self) -> bool {
                (**self).accepts_soft_prompt()
            }
            fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, BackendFailure> {
                (**self).chat(req)
            }
            fn embed(&self, texts: &[String]) -> Result<EmbedResponse, BackendFailure> {
                (**self).embed(texts)
            }
        }
    };
}

forward_backend!(Arc);
forward_backend!(Box);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    RemoteChat,
    RemoteEmbed,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryConfig {
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
}

impl Default for RetryConfig {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            backoff_base_ms: 500,
        }
    }
}

/// Serializable description of a backend. Secrets are never stored here,
/// only the name of the environment variable holding them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_name: Option<String>,
    #[serde(default = "default_auth_env")]
    pub auth_env: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default)]
    pub retry: RetryConfig,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mock: Option<mock::MockProfile>,
}

fn default_auth_env() -> String {
    API_KEY_ENV.to_string()
}
fn default_timeout_ms() -> u64 {
    60_000
}
fn default_max_in_flight() -> usize {
    4
}

impl BackendConfig {
    pub fn mock(profile: mock::MockProfile) -> Self {
        Self {
            kind: BackendKind::Mock,
            endpoint: None,
            model_name: None,
            auth_env: default_auth_env(),
            timeout_ms: default_timeout_ms(),
            retry: RetryConfig::default(),
            max_in_flight: default_max_in_flight(),
            mock: Some(profile),
        }
    }

    /// Endpoint after applying the `LPO_ENDPOINT` override.
    pub fn resolved_endpoint(&self) -> Option<String> {
        env::var(ENDPOINT_ENV)
            .ok()
            .filter(|s| !s.trim().is_empty())
            .or_else(|| self.endpoint.clone())
    }

    pub fn model_label(&self) -> String {
        match (&self.model_name, &self.mock) {
            (Some(m), _) => m.clone(),
            (None, Some(p)) => p.default_model_name().to_string(),
            (None, None) => "unnamed".to_string(),
        }
    }

    /// Returns every problem found, empty when valid.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        match self.kind {
            BackendKind::RemoteChat | BackendKind::RemoteEmbed => {
                if self.resolved_endpoint().is_none() {
                    out.push("remote backend requires an endpoint".to_string());
                }
                if self.model_name.as_deref().is_none_or(|m| m.trim().is_empty()) {
                    out.push("remote backend requires a model_name".to_string());
                }
                if self.mock.is_some() {
                    out.push("remote backend must not carry a mock profile".to_string());
                }
            }
            BackendKind::Mock => {
                if self.mock.is_none() {
                    out.push("mock backend requires a mock profile".to_string());
                }
            }
        }
        if self.retry.max_attempts == 0 {
            out.push("retry.max_attempts must be at least 1".to_string());
        }
        if self.max_in_flight == 0 {
            out.push("max_in_flight must be at least 1".to_string());
        }
        if self.timeout_ms == 0 {
            out.push("timeout_ms must be positive".to_string());
        }
        out
    }

    fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_attempts: self.retry.max_attempts.max(1),
            backoff_base: Duration::from_millis(self.retry.backoff_base_ms),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_base: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            backoff_base: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    fn delay(&self, attempt: u32) -> Duration {
        self.backoff_base
            .saturating_mul(1u32 << (attempt - 1).min(16))
    }
}

struct InFlightLimit {
    max: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a InFlightLimit);

impl InFlightLimit {
    fn new(max: usize) -> Self {
        Self {
            max: max.max(1),
            active: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut active = self.active.lock().expect("in-flight lock poisoned");
        while *active >= self.max {
            active = self.freed.wait(active).expect("in-flight lock poisoned");
        }
        *active += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut active = self.0.active.lock().expect("in-flight lock poisoned");
        *active -= 1;
        self.0.freed.notify_one();
    }
}

/// The single choke point for model access.
pub struct Gateway {
    backend: Box<dyn Backend>,
    retry: RetryPolicy,
    limit: InFlightLimit,
    attempts: AtomicU64,
    remote: bool,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("model", &self.backend.model_name())
            .field("retry", &self.retry)
            .field("max_in_flight", &self.limit.max)
            .finish()
    }
}

impl Gateway {
    pub fn new(backend: impl Backend + 'static) -> Self {
        Self {
            backend: Box::new(backend),
            retry: RetryPolicy::default(),
            limit: InFlightLimit::new(4),
            attempts: AtomicU64::new(0),
            remote: false,
        }
    }

    /// Builds a remote backend, or a mock whose profile needs no run context.
    pub fn from_config(cfg: &BackendConfig) -> Result<Self, GatewayError> {
        let problems = cfg.problems();
        if !problems.is_empty() {
            return Err(GatewayError::Config(problems.join("; ")));
        }
        let gateway = match cfg.kind {
            BackendKind::RemoteChat => {
                let backend = http::HttpChatBackend::from_config(cfg)?;
                let mut g = Gateway::new(backend);
                g.remote = true;
                g
            }
            BackendKind::RemoteEmbed => {
                let backend = http::HttpEmbedBackend::from_config(cfg)?;
                let mut g = Gateway::new(backend);
                g.remote = true;
                g
            }
            BackendKind::Mock => {
                let profile = cfg.mock.as_ref().expect("checked by problems()");
                let backend = profile.build_standalone(&cfg.model_label())?;
                Gateway::new(backend)
            }
        };
        Ok(gateway
            .with_retry(cfg.retry_policy())
            .with_max_in_flight(cfg.max_in_flight))
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_max_in_flight(mut self, max: usize) -> Self {
        self.limit = InFlightLimit::new(max);
        self
    }

    pub fn model_name(&self) -> &str {
        self.backend.model_name()
    }

    pub fn max_in_flight(&self) -> usize {
        self.limit.max
    }

    pub fn is_remote(&self) -> bool {
        self.remote
    }

    /// Backend attempts issued so far, retries included.
    pub fn attempts(&self) -> u64 {
        self.attempts.load(Ordering::SeqCst)
    }

    pub fn chat(&self, req: &ChatRequest, budget: &Budget) -> Result<ChatResponse, GatewayError> {
        req.validate()?;
        if req.soft_prompt.is_some() && !self.backend.accepts_soft_prompt() {
            return Err(GatewayError::InvalidRequest(format!(
                "backend {} does not accept soft prompts",
                self.model_name()
            )));
        }
        budget.reserve_call()?;
        let resp = self.with_retries(|| self.backend.chat(req))?;
        budget.record(resp.usage);
        Ok(resp)
    }

    /// Embeds `texts` in one batch, preserving order.
    pub fn embed(&self, texts: &[String], budget: &Budget) -> Result<Vec<EmbeddingVector>, GatewayError> {
        if texts.is_empty() {
            return Err(GatewayError::InvalidRequest("no texts to embed".into()));
        }
        budget.reserve_call()?;
        let resp = self.with_retries(|| self.backend.embed(texts))?;
        budget.record(resp.usage);
        if resp.vectors.len() != texts.len() {
            return Err(GatewayError::Malformed(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                resp.vectors.len()
            )));
        }
        let dim = resp.vectors[0].len();
        resp.vectors
            .into_iter()
            .map(|v| {
                if v.len() != dim {
                    return Err(GatewayError::DimensionMismatch {
                        expected: dim,
                        found: v.len(),
                    });
                }
                EmbeddingVector::new(v).map_err(|e| GatewayError::Malformed(e.to_string()))
            })
            .collect()
    }

    fn with_retries<T>(
        &self,
        mut attempt_fn: impl FnMut() -> Result<T, BackendFailure>,
    ) -> Result<T, GatewayError> {
        let mut attempt = 1;
        loop {
            self.attempts.fetch_add(1, Ordering::SeqCst);
            let outcome = {
                let _permit = self.limit.acquire();
                attempt_fn()
            };
            match outcome {
                Ok(v) => return Ok(v),
                Err(failure) if failure.is_transient() && attempt < self.retry.max_attempts => {
                    let delay = self.retry.delay(attempt);
                    tracing::warn!(
                        model = self.model_name(),
                        attempt,
                        "transient backend failure, retrying in {delay:?}: {}",
                        failure.describe()
                    );
                    thread::sleep(delay);
                    attempt += 1;
                }
                Err(failure) => {
                    tracing::debug!(model = self.model_name(), attempt, "backend attempt failed");
                    return Err(match failure {
                        f if f.is_transient() => GatewayError::Unreachable {
                            attempts: attempt,
                            last: f.describe(),
                        },
                        BackendFailure::Status { code, body } => GatewayError::Rejected { status: code, body },
                        BackendFailure::Malformed(m) => GatewayError::Malformed(m),
                        BackendFailure::Unsupported(m) => GatewayError::InvalidRequest(m),
                        f => GatewayError::Unreachable {
                            attempts: attempt,
                            last: f.describe(),
                        },
                    });
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::mock::{MockChat, MockEmbedder};
    use super::*;

    fn fast(g: Gateway) -> Gateway {
        g.with_retry(RetryPolicy {
            max_attempts: 3,
            backoff_base: Duration::from_millis(1),
        })
    }

    #[test]
    fn scripted_reply() {
        let g = Gateway::new(MockChat::constant("Positive"));
        let budget = Budget::unlimited();
        let r = g.chat(&ChatRequest::new("how is it?"), &budget).unwrap();
        assert_eq!(r.text, "Positive");
    }

    #[test]
    fn call_budget_is_enforced() {
        let g = Gateway::new(MockChat::constant("ok"));
        let budget = Budget::new(1, 1_000).unwrap();
        g.chat(&ChatRequest::new("a"), &budget).unwrap();
        let err = g.chat(&ChatRequest::new("b"), &budget).unwrap_err();
        assert!(err.is_budget_exhausted());
        assert_eq!(usage_report(&budget).0, 1);
    }

    #[test]
    fn token_budget_is_enforced() {
        let g = Gateway::new(MockChat::constant("ok").with_fixed_usage(5, 5));
        let budget = Budget::new(100, 10).unwrap();
        g.chat(&ChatRequest::new("a"), &budget).unwrap();
        assert!(g.chat(&ChatRequest::new("b"), &budget).unwrap_err().is_budget_exhausted());
    }

    #[test]
    fn retries_transient_failures() {
        let mock = MockChat::constant("fine").with_failures(vec![
            BackendFailure::Status { code: 500, body: "boom".into() },
            BackendFailure::Status { code: 500, body: "boom".into() },
        ]);
        let g = fast(Gateway::new(mock));
        let budget = Budget::unlimited();
        assert_eq!(g.chat(&ChatRequest::new("x"), &budget).unwrap().text, "fine");
        assert_eq!(g.attempts(), 3);
        assert_eq!(usage_report(&budget).0, 1);
    }

    #[test]
    fn gives_up_after_max_attempts() {
        let mock = MockChat::constant("never").with_failures(vec![
            BackendFailure::Timeout("t".into()),
            BackendFailure::Connect("c".into()),
            BackendFailure::Status { code: 429, body: String::new() },
        ]);
        let g = fast(Gateway::new(mock));
        let err = g.chat(&ChatRequest::new("x"), &Budget::unlimited()).unwrap_err();
        assert!(matches!(err, GatewayError::Unreachable { attempts: 3, .. }));
    }

    #[test]
    fn client_errors_are_not_retried() {
        let mock = MockChat::constant("never")
            .with_failures(vec![BackendFailure::Status { code: 400, body: "bad".into() }]);
        let g = fast(Gateway::new(mock));
        let err = g.chat(&ChatRequest::new("x"), &Budget::unlimited()).unwrap_err();
        assert!(matches!(err, GatewayError::Rejected { status: 400, .. }));
        assert_eq!(g.attempts(), 1);
    }

    #[test]
    fn usage_is_exact_and_monotone() {
        let g = Gateway::new(MockChat::constant("ok").with_fixed_usage(4, 6));
        let budget = Budget::unlimited();
        assert_eq!(usage_report(&budget), (0, 0));
        let mut last = (0, 0);
        for _ in 0..3 {
            g.chat(&ChatRequest::new("q"), &budget).unwrap();
            let now = usage_report(&budget);
            assert!(now.0 >= last.0 && now.1 >= last.1);
            last = now;
        }
        assert_eq!(last, (3, 30));
    }

    #[test]
    fn embed_contract() {
        let g = Gateway::new(MockEmbedder::new("hash", 6));
        let budget = Budget::unlimited();
        let texts = vec!["a".to_string(), "b".to_string(), "a".to_string()];
        let v = g.embed(&texts, &budget).unwrap();
        assert_eq!(v.len(), 3);
        assert!(v.iter().all(|e| e.dim() == 6));
        assert_eq!(v[0], v[2]);
        assert_ne!(v[0], v[1]);
        assert!(matches!(
            g.embed(&[], &budget).unwrap_err(),
            GatewayError::InvalidRequest(_)
        ));
    }

    #[test]
    fn ragged_embedding_batch_is_rejected() {
        struct Ragged;
        impl Backend for Ragged {
            fn model_name(&self) -> &str {
                "ragged"
            }
            fn embed(&self, _texts: &[String]) -> Result<EmbedResponse, BackendFailure> {
                Ok(EmbedResponse {
                    vectors: vec![vec![1.0, 2.0], vec![1.0]],
                    usage: TokenUsage::default(),
                })
            }
        }
        let g = Gateway::new(Ragged);
        let err = g
            .embed(&["a".into(), "b".into()], &Budget::unlimited())
            .unwrap_err();
        assert_eq!(err, GatewayError::DimensionMismatch { expected: 2, found: 1 });
    }

    #[test]
    fn in_flight_cap_is_respected() {
        use std::sync::atomic::AtomicUsize;
        struct Slow {
            current: AtomicUsize,
            peak: AtomicUsize,
        }
        impl Backend for Slow {
            fn model_name(&self) -> &str {
                "slow"
            }
            fn chat(&self, _req: &ChatRequest) -> Result<ChatResponse, BackendFailure> {
                let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
                self.peak.fetch_max(now, Ordering::SeqCst);
                thread::sleep(Duration::from_millis(5));
                self.current.fetch_sub(1, Ordering::SeqCst);
                Ok(ChatResponse { text: "ok".into(), usage: TokenUsage::default() })
            }
        }
        let slow = Arc::new(Slow { current: AtomicUsize::new(0), peak: AtomicUsize::new(0) });
        let g = Gateway::new(slow.clone()).with_max_in_flight(2);
        let budget = Budget::unlimited();
        thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| g.chat(&ChatRequest::new("x"), &budget).unwrap());
            }
        });
        assert!(slow.peak.load(Ordering::SeqCst) <= 2);
        assert_eq!(usage_report(&budget).0, 8);
    }

    #[test]
    fn remote_config_requires_endpoint_and_model() {
        let cfg = BackendConfig {
            kind: BackendKind::RemoteChat,
            endpoint: None,
            model_name: None,
            auth_env: API_KEY_ENV.into(),
            timeout_ms: 1000,
            retry: RetryConfig::default(),
            max_in_flight: 4,
            mock: None,
        };
        if env::var(ENDPOINT_ENV).is_err() {
            assert_eq!(cfg.problems().len(), 2);
        }
    }
}
