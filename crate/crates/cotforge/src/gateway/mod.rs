//! Uniform client over every remote model role (synthesis agents, judge,
//! player, extractor): seeded chat-style completions with optional image
//! parts and per-token log-probabilities, plus a deterministic in-process
//! mock backend for offline runs and tests.
//!
//! A [`ModelGateway`] routes each request by `endpoint_ref` to a
//! registered backend (HTTP or mock), enforces a per-endpoint in-flight
//! cap, retries transient failures with exponential backoff, and appends
//! one audit record per request when auditing is enabled.

mod http;
mod mock;

pub use http::HttpEndpoint;
pub use mock::{MockOutcome, MockReply, MockScript, MockStats};

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::sync::{Condvar, Mutex, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One part of a prompt, in presentation order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum PromptPart {
    Text(String),
    /// Relative file path or `data:` URI.
    Image(String),
}

impl PromptPart {
    pub fn as_text(&self) -> Option<&str> {
        match self {
            PromptPart::Text(t) => Some(t),
            PromptPart::Image(_) => None,
        }
    }
}

/// A single chat-style completion request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub endpoint_ref: String,
    pub prompt_parts: Vec<PromptPart>,
    pub seed: u64,
    pub temperature: f64,
    pub max_output_units: usize,
    pub want_logprobs: bool,
}

impl CompletionRequest {
    pub fn new(endpoint_ref: impl Into<String>, prompt_parts: Vec<PromptPart>, seed: u64) -> Self {
        Self {
            endpoint_ref: endpoint_ref.into(),
            prompt_parts,
            seed,
            temperature: 0.0,
            max_output_units: 2048,
            want_logprobs: false,
        }
    }

    pub fn temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn max_output_units(mut self, n: usize) -> Self {
        self.max_output_units = n;
        self
    }

    pub fn want_logprobs(mut self, yes: bool) -> Self {
        self.want_logprobs = yes;
        self
    }

    /// Concatenated text parts; the payload mocks script against.
    pub fn text(&self) -> String {
        let mut out = String::new();
        for p in &self.prompt_parts {
            if let Some(t) = p.as_text() {
                if !out.is_empty() {
                    out.push('\n');
                }
                out.push_str(t);
            }
        }
        out
    }

    fn validate(&self) -> Result<(), GatewayError> {
        if !self.prompt_parts.iter().any(|p| p.as_text().is_some()) {
            return Err(GatewayError::InvalidRequest(
                "request must contain at least one text part".into(),
            ));
        }
        if self.max_output_units == 0 {
            return Err(GatewayError::InvalidRequest(
                "max_output_units must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Complete,
    Truncated,
    Refused,
}

/// A completed generation.
///
/// `token_logprobs` has one natural-log probability per generated unit;
/// `token_texts`, when present, is parallel to it and concatenates back
/// to `text` so callers can locate spans inside the logprob sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    pub token_logprobs: Option<Vec<f64>>,
    pub token_texts: Option<Vec<String>>,
    pub finish_reason: FinishReason,
}

/// Retry behaviour for transient endpoint failures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: usize,
    pub base_backoff: Duration,
    pub backoff_multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_backoff: Duration::from_millis(250),
            backoff_multiplier: 2.0,
        }
    }
}

impl RetryPolicy {
    /// Policy with no waiting between attempts; used by mocks and tests.
    pub fn immediate(max_attempts: usize) -> Self {
        Self {
            max_attempts: max_attempts.max(1),
            base_backoff: Duration::ZERO,
            backoff_multiplier: 1.0,
        }
    }

    fn backoff(&self, attempt: usize) -> Duration {
        let mult = self.backoff_multiplier.max(1.0).powi(attempt as i32);
        self.base_backoff.mul_f64(mult)
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transient failures persisted past {attempts} attempts on '{endpoint}': {last}")]
    ExhaustedRetries {
        endpoint: String,
        attempts: usize,
        last: String,
    },
    #[error("endpoint '{endpoint}' rejected the request: {reason}")]
    PermanentRejection { endpoint: String, reason: String },
    #[error("malformed response from '{endpoint}': {reason}")]
    MalformedResponse { endpoint: String, reason: String },
    #[error("endpoint id '{0}' already registered")]
    DuplicateId(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("audit log: {0}")]
    Audit(#[from] std::io::Error),
}

/// One backend attempt outcome, before retry handling.
pub(crate) enum AttemptOutcome {
    Reply(CompletionResponse),
    Transient(String),
    Permanent(String),
}

enum Backend {
    Mock(mock::MockEndpoint),
    Http(http::HttpBackend),
}

/// Counting semaphore; bounds in-flight requests per endpoint.
struct Limiter {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Limiter {
    fn new(cap: usize) -> Self {
        Self {
            permits: Mutex::new(cap.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> LimiterGuard<'_> {
        let mut p = self.permits.lock().unwrap();
        while *p == 0 {
            p = self.cv.wait(p).unwrap();
        }
        *p -= 1;
        LimiterGuard { limiter: self }
    }
}

struct LimiterGuard<'a> {
    limiter: &'a Limiter,
}

impl Drop for LimiterGuard<'_> {
    fn drop(&mut self) {
        let mut p = self.limiter.permits.lock().unwrap();
        *p += 1;
        self.limiter.cv.notify_one();
    }
}

struct Endpoint {
    backend: Backend,
    limiter: Limiter,
}

#[derive(Serialize)]
struct AuditRecord<'a> {
    ts: f64,
    endpoint: &'a str,
    seed: u64,
    attempts: usize,
    outcome: &'a str,
    text_len: usize,
}

/// Routes completion requests to registered backends.
///
/// Safe for concurrent use; response ordering is not tied to request
/// ordering.
pub struct ModelGateway {
    endpoints: RwLock<HashMap<String, Endpoint>>,
    audit: Option<Mutex<std::io::BufWriter<std::fs::File>>>,
}

impl Default for ModelGateway {
    fn default() -> Self {
        Self::new()
    }
}

impl ModelGateway {
    pub fn new() -> Self {
        Self {
            endpoints: RwLock::new(HashMap::new()),
            audit: None,
        }
    }

    /// Append one line-delimited JSON audit record per request to `path`.
    pub fn with_audit_log(mut self, path: &Path) -> Result<Self, GatewayError> {
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)?;
        self.audit = Some(Mutex::new(std::io::BufWriter::new(file)));
        Ok(self)
    }

    /// Register a scripted mock backend under `endpoint_ref`.
    ///
    /// The script must be a pure function of `(prompt_parts, seed,
    /// attempt)`; identical requests always produce identical replies.
    pub fn register_mock(
        &self,
        endpoint_ref: impl Into<String>,
        script: MockScript,
    ) -> Result<(), GatewayError> {
        self.register_mock_with_cap(endpoint_ref, script, usize::MAX)
    }

    /// [`ModelGateway::register_mock`] with an explicit in-flight cap.
    pub fn register_mock_with_cap(
        &self,
        endpoint_ref: impl Into<String>,
        script: MockScript,
        cap: usize,
    ) -> Result<(), GatewayError> {
        let id = endpoint_ref.into();
        let mut map = self.endpoints.write().unwrap();
        if map.contains_key(&id) {
            return Err(GatewayError::DuplicateId(id));
        }
        map.insert(
            id,
            Endpoint {
                backend: Backend::Mock(mock::MockEndpoint::new(script)),
                limiter: Limiter::new(cap),
            },
        );
        Ok(())
    }

    /// Register a remote chat-completions endpoint.
    pub fn register_http(&self, endpoint_ref: impl Into<String>, cfg: HttpEndpoint) -> Result<(), GatewayError> {
        let id = endpoint_ref.into();
        let mut map = self.endpoints.write().unwrap();
        if map.contains_key(&id) {
            return Err(GatewayError::DuplicateId(id));
        }
        let cap = cfg.in_flight_cap;
        map.insert(
            id,
            Endpoint {
                backend: Backend::Http(http::HttpBackend::new(cfg)),
                limiter: Limiter::new(cap),
            },
        );
        Ok(())
    }

    pub fn has_endpoint(&self, endpoint_ref: &str) -> bool {
        self.endpoints.read().unwrap().contains_key(endpoint_ref)
    }

    /// Instrumentation counters for a mock endpoint.
    pub fn mock_stats(&self, endpoint_ref: &str) -> Option<MockStats> {
        let map = self.endpoints.read().unwrap();
        match map.get(endpoint_ref) {
            Some(Endpoint {
                backend: Backend::Mock(m),
                ..
            }) => Some(m.stats()),
            _ => None,
        }
    }

    /// Total attempts made across all mock endpoints.
    pub fn mock_total_attempts(&self) -> usize {
        let map = self.endpoints.read().unwrap();
        map.values()
            .map(|e| match &e.backend {
                Backend::Mock(m) => m.stats().attempts,
                Backend::Http(_) => 0,
            })
            .sum()
    }

    /// Run one completion, retrying transient failures per `policy`.
    pub fn complete(
        &self,
        req: &CompletionRequest,
        policy: &RetryPolicy,
    ) -> Result<CompletionResponse, GatewayError> {
        req.validate()?;
        let map = self.endpoints.read().unwrap();
        let Some(endpoint) = map.get(&req.endpoint_ref) else {
            let err = GatewayError::PermanentRejection {
                endpoint: req.endpoint_ref.clone(),
                reason: "no such endpoint registered".into(),
            };
            drop(map);
            self.audit_line(req, 0, "permanent", 0)?;
            return Err(err);
        };

        let _permit = endpoint.limiter.acquire();
        let max_attempts = policy.max_attempts.max(1);
        let mut attempts = 0;
        let result = loop {
            attempts += 1;
            let outcome = match &endpoint.backend {
                Backend::Mock(m) => m.attempt(req, attempts),
                Backend::Http(h) => h.attempt(req),
            };
            match outcome {
                AttemptOutcome::Reply(resp) => match validate_response(req, resp) {
                    Ok(resp) => break Ok(resp),
                    Err(reason) => {
                        break Err(GatewayError::MalformedResponse {
                            endpoint: req.endpoint_ref.clone(),
                            reason,
                        })
                    }
                },
                AttemptOutcome::Permanent(reason) => {
                    break Err(GatewayError::PermanentRejection {
                        endpoint: req.endpoint_ref.clone(),
                        reason,
                    })
                }
                AttemptOutcome::Transient(reason) => {
                    if attempts >= max_attempts {
                        break Err(GatewayError::ExhaustedRetries {
                            endpoint: req.endpoint_ref.clone(),
                            attempts,
                            last: reason,
                        });
                    }
                    let wait = policy.backoff(attempts - 1);
                    if !wait.is_zero() {
                        std::thread::sleep(wait);
                    }
                }
            }
        };

        let (outcome, text_len) = match &result {
            Ok(r) => ("ok", r.text.len()),
            Err(GatewayError::ExhaustedRetries { .. }) => ("exhausted", 0),
            Err(GatewayError::PermanentRejection { .. }) => ("permanent", 0),
            Err(GatewayError::MalformedResponse { .. }) => ("malformed", 0),
            Err(_) => ("error", 0),
        };
        self.audit_line(req, attempts, outcome, text_len)?;
        result
    }

    fn audit_line(
        &self,
        req: &CompletionRequest,
        attempts: usize,
        outcome: &str,
        text_len: usize,
    ) -> Result<(), GatewayError> {
        let Some(audit) = &self.audit else {
            return Ok(());
        };
        let ts = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0);
        let record = AuditRecord {
            ts,
            endpoint: &req.endpoint_ref,
            seed: req.seed,
            attempts,
            outcome,
            text_len,
        };
        let mut w = audit.lock().unwrap();
        serde_json::to_writer(&mut *w, &record).map_err(std::io::Error::other)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }
}

fn validate_response(
    req: &CompletionRequest,
    resp: CompletionResponse,
) -> Result<CompletionResponse, String> {
    if req.want_logprobs {
        let Some(lps) = &resp.token_logprobs else {
            return Err("logprobs requested but absent".into());
        };
        if lps.iter().any(|lp| !lp.is_finite() || *lp > 0.0) {
            return Err("logprobs must be finite and <= 0".into());
        }
        if let Some(texts) = &resp.token_texts {
            if texts.len() != lps.len() {
                return Err(format!(
                    "token_texts length {} does not match logprobs length {}",
                    texts.len(),
                    lps.len()
                ));
            }
        }
    }
    Ok(resp)
}
