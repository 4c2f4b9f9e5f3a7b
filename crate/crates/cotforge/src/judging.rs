//! Answer-consistency judging: a normalization fast path that only ever
//! fires on equality, with an LLM fallback deciding everything else.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{CompletionRequest, GatewayError, ModelGateway, RetryPolicy};
use crate::prompts::{judge_parts, PromptTemplate};

/// Relative tolerance for the numeric fast path; absorbs formatting
/// noise like "0.50" vs "0.5" without an LLM call.
pub const NUMERIC_REL_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeMethod {
    ExactNormalized,
    Llm,
}

/// Outcome of judging one (predicted, gold) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub consistent: bool,
    pub method: JudgeMethod,
    /// LLM judge's one-line justification; absent on the fast path.
    pub rationale_text: Option<String>,
    /// The LLM reply did not follow the CONSISTENT/INCONSISTENT format
    /// and was parsed as inconsistent.
    pub malformed: bool,
}

impl JudgeVerdict {
    fn fast(consistent: bool) -> Self {
        Self {
            consistent,
            method: JudgeMethod::ExactNormalized,
            rationale_text: None,
            malformed: false,
        }
    }

    /// Indicator form: 1 iff consistent.
    pub fn as_unit(&self) -> u32 {
        u32::from(self.consistent)
    }
}

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("gold answer must be non-empty")]
    EmptyGold,
    #[error("LLM fallback needed but the judge endpoint failed: {0}")]
    JudgeUnavailable(#[from] GatewayError),
}

/// Trim, case-fold, collapse whitespace runs, strip terminal punctuation.
pub fn normalize(s: &str) -> String {
    let collapsed = s.split_whitespace().collect::<Vec<_>>().join(" ");
    let lowered = collapsed.to_lowercase();
    lowered
        .trim_end_matches(['.', ',', ';', ':', '!', '?'])
        .trim()
        .to_string()
}

fn parse_decimal(s: &str) -> Option<f64> {
    let v: f64 = s.parse().ok()?;
    v.is_finite().then_some(v)
}

fn numbers_equal(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= NUMERIC_REL_TOLERANCE * a.abs().max(b.abs())
}

/// Positive-only fast path: `Some(verdict)` when normalization decides,
/// `None` when the LLM must. The single negative case is an empty
/// prediction against a non-empty gold.
pub fn fast_judge(predicted: &str, gold: &str) -> Option<JudgeVerdict> {
    let p = normalize(predicted);
    let g = normalize(gold);
    if p.is_empty() {
        return Some(JudgeVerdict::fast(false));
    }
    if p == g {
        return Some(JudgeVerdict::fast(true));
    }
    if let (Some(pn), Some(gn)) = (parse_decimal(&p), parse_decimal(&g)) {
        if numbers_equal(pn, gn) {
            return Some(JudgeVerdict::fast(true));
        }
    }
    None
}

/// Parse the judge reply: first token must be exactly CONSISTENT or
/// INCONSISTENT; anything else counts as inconsistent and malformed.
fn parse_judge_reply(text: &str) -> (bool, Option<String>, bool) {
    let trimmed = text.trim();
    let mut lines = trimmed.lines();
    let first = lines.next().unwrap_or("").trim();
    let first_word = first.split_whitespace().next().unwrap_or("");
    let rest: String = lines.collect::<Vec<_>>().join(" ").trim().to_string();
    let rationale = (!rest.is_empty()).then_some(rest);
    match first_word {
        "CONSISTENT" => (true, rationale, false),
        "INCONSISTENT" => (false, rationale, false),
        _ => (false, Some(trimmed.to_string()), true),
    }
}

/// Judge bound to an LLM endpoint for the fallback path.
pub struct Judge<'a> {
    gateway: &'a ModelGateway,
    endpoint_ref: String,
    template: PromptTemplate,
    policy: RetryPolicy,
    seed: u64,
}

impl<'a> Judge<'a> {
    pub fn new(
        gateway: &'a ModelGateway,
        endpoint_ref: impl Into<String>,
        template: PromptTemplate,
        policy: RetryPolicy,
    ) -> Self {
        Self {
            gateway,
            endpoint_ref: endpoint_ref.into(),
            template,
            policy,
            seed: 0,
        }
    }

    /// Decide whether `predicted` is consistent with `gold`.
    ///
    /// Errors only when the LLM fallback is needed and unreachable; the
    /// caller scores such candidates inconsistent and flags them.
    pub fn judge(&self, predicted: &str, gold: &str) -> Result<JudgeVerdict, JudgeError> {
        if gold.trim().is_empty() {
            return Err(JudgeError::EmptyGold);
        }
        if let Some(verdict) = fast_judge(predicted, gold) {
            return Ok(verdict);
        }
        let req = CompletionRequest::new(
            self.endpoint_ref.clone(),
            judge_parts(&self.template, predicted, gold),
            self.seed,
        )
        .temperature(0.0)
        .max_output_units(256);
        let resp = self.gateway.complete(&req, &self.policy)?;
        let (consistent, rationale_text, malformed) = parse_judge_reply(&resp.text);
        Ok(JudgeVerdict {
            consistent,
            method: JudgeMethod::Llm,
            rationale_text,
            malformed,
        })
    }
}
