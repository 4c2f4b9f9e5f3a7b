//! Deterministic in-process mock backend.
//!
//! Mocks are scripted: a script maps `(request, attempt)` to a reply or
//! an injected failure. Each endpoint keeps instrumentation counters
//! (attempt count, in-flight watermark) that tests assert against.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use super::{AttemptOutcome, CompletionRequest, CompletionResponse, FinishReason};

/// Scripted reply body. Logprobs are per whitespace-delimited word of
/// `text`; the mock backend derives matching `token_texts` so answer
/// spans can be located downstream.
#[derive(Debug, Clone, PartialEq)]
pub struct MockReply {
    pub text: String,
    pub word_logprobs: Option<Vec<f64>>,
    pub finish: FinishReason,
}

impl MockReply {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            word_logprobs: None,
            finish: FinishReason::Complete,
        }
    }

    /// Reply with one logprob per whitespace-delimited word of `text`.
    pub fn with_word_logprobs(text: impl Into<String>, logprobs: Vec<f64>) -> Self {
        Self {
            text: text.into(),
            word_logprobs: Some(logprobs),
            finish: FinishReason::Complete,
        }
    }

    /// Reply with every word at the same logprob.
    pub fn uniform_logprobs(text: impl Into<String>, logprob: f64) -> Self {
        let text = text.into();
        let n = text.split_whitespace().count();
        Self {
            text,
            word_logprobs: Some(vec![logprob; n]),
            finish: FinishReason::Complete,
        }
    }
}

/// One scripted outcome for a single attempt.
pub enum MockOutcome {
    Reply(MockReply),
    /// Retryable failure (timeout, 5xx).
    Transient(String),
    /// 4xx-class refusal; never retried.
    Permanent(String),
}

type ScriptFn = dyn Fn(&CompletionRequest, usize) -> MockOutcome + Send + Sync;

/// A mock endpoint's behaviour: a pure function of the request and the
/// attempt ordinal (1-based, per request).
#[derive(Clone)]
pub struct MockScript(Arc<ScriptFn>);

impl MockScript {
    pub fn new(f: impl Fn(&CompletionRequest, usize) -> MockOutcome + Send + Sync + 'static) -> Self {
        Self(Arc::new(f))
    }

    /// Always reply with the same text.
    pub fn fixed(text: impl Into<String>) -> Self {
        let text = text.into();
        Self::new(move |_, _| MockOutcome::Reply(MockReply::text(text.clone())))
    }

    /// Reply from a pure function of the request.
    pub fn replying(f: impl Fn(&CompletionRequest) -> MockReply + Send + Sync + 'static) -> Self {
        Self::new(move |req, _| MockOutcome::Reply(f(req)))
    }

    /// Every attempt fails with a retryable error.
    pub fn always_transient() -> Self {
        Self::new(|_, _| MockOutcome::Transient("scripted transient failure".into()))
    }

    /// Every attempt fails with a permanent refusal.
    pub fn always_permanent() -> Self {
        Self::new(|_, _| MockOutcome::Permanent("scripted permanent refusal".into()))
    }

    /// Evaluate the script directly; lets wrapper scripts delegate.
    pub fn invoke(&self, req: &CompletionRequest, attempt: usize) -> MockOutcome {
        (self.0)(req, attempt)
    }
}

/// Instrumentation snapshot for one mock endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MockStats {
    /// Total attempts served (including failed ones).
    pub attempts: usize,
    /// High-water mark of concurrently in-flight attempts.
    pub max_in_flight: usize,
}

pub(crate) struct MockEndpoint {
    script: MockScript,
    attempts: AtomicUsize,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
}

impl MockEndpoint {
    pub(crate) fn new(script: MockScript) -> Self {
        Self {
            script,
            attempts: AtomicUsize::new(0),
            in_flight: AtomicUsize::new(0),
            max_in_flight: AtomicUsize::new(0),
        }
    }

    pub(crate) fn stats(&self) -> MockStats {
        MockStats {
            attempts: self.attempts.load(Ordering::SeqCst),
            max_in_flight: self.max_in_flight.load(Ordering::SeqCst),
        }
    }

    pub(crate) fn attempt(&self, req: &CompletionRequest, attempt: usize) -> AttemptOutcome {
        self.attempts.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.max_in_flight.fetch_max(now, Ordering::SeqCst);
        let outcome = (self.script.0)(req, attempt);
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        match outcome {
            MockOutcome::Reply(reply) => match build_response(reply) {
                Ok(resp) => AttemptOutcome::Reply(resp),
                Err(reason) => AttemptOutcome::Permanent(reason),
            },
            MockOutcome::Transient(reason) => AttemptOutcome::Transient(reason),
            MockOutcome::Permanent(reason) => AttemptOutcome::Permanent(reason),
        }
    }
}

/// Split `text` into word tokens that concatenate back to `text`: each
/// token is one whitespace-delimited word plus its trailing whitespace;
/// leading whitespace attaches to the first token.
pub(crate) fn word_tokens(text: &str) -> Vec<String> {
    let mut tokens: Vec<String> = Vec::new();
    let mut current = String::new();
    let mut seen_word_char = false;
    for ch in text.chars() {
        if ch.is_whitespace() {
            if seen_word_char {
                current.push(ch);
            } else if let Some(last) = tokens.last_mut() {
                last.push(ch);
            } else {
                current.push(ch);
            }
        } else {
            if seen_word_char && current.ends_with(|c: char| c.is_whitespace()) {
                tokens.push(std::mem::take(&mut current));
            }
            current.push(ch);
            seen_word_char = true;
        }
    }
    if !current.is_empty() {
        if seen_word_char || tokens.is_empty() {
            tokens.push(current);
        } else if let Some(last) = tokens.last_mut() {
            last.push_str(&current);
        }
    }
    tokens
}

fn build_response(reply: MockReply) -> Result<CompletionResponse, String> {
    let (token_logprobs, token_texts) = match reply.word_logprobs {
        None => (None, None),
        Some(lps) => {
            let tokens = word_tokens(&reply.text);
            if tokens.len() != lps.len() {
                return Err(format!(
                    "script produced {} logprobs for {} words",
                    lps.len(),
                    tokens.len()
                ));
            }
            (Some(lps), Some(tokens))
        }
    };
    Ok(CompletionResponse {
        text: reply.text,
        token_logprobs,
        token_texts,
        finish_reason: reply.finish,
    })
}
