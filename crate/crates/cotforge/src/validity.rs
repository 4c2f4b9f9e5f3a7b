//! Reasoning-validity probing: run a small non-reasoning player model on
//! the query with and without a candidate CoT, and score the confidence
//! of its answer as the exponential of the mean token log-likelihood.
//!
//! Confidence is computed over the final answer span only (the tokens
//! after the reply's answer delimiter), not the player's full output.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{CompletionRequest, CompletionResponse, GatewayError, ModelGateway, RetryPolicy};
use crate::model::{Instance, SampleIndex};
use crate::prompts::{player_parts, PromptTemplate};
use crate::synthesis::split_answer;

/// One player run and its evaluation inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerRun {
    pub instance_id: String,
    /// Grid cell of the CoT that aided this run; `None` for CoT-free runs.
    pub index: Option<SampleIndex>,
    pub with_cot: bool,
    pub answer_text: String,
    /// `exp(mean(answer-span logprobs))`; `None` when the run failed.
    pub confidence: Option<f64>,
    /// Judge verdict of `answer_text` against the gold answer; filled in
    /// by the caller after judging.
    pub judge_ok: bool,
    /// Endpoint failed after retries; run excluded from mean computations.
    pub failed: bool,
}

#[derive(Debug, Error)]
pub enum ConfidenceError {
    #[error("confidence of an empty sequence is undefined")]
    EmptySequence,
    #[error("log-probabilities must be finite and <= 0, got {0}")]
    NonFiniteLogprob(f64),
}

#[derive(Debug, Error)]
pub enum PlayerError {
    #[error("CoT-aided runs require a non-empty CoT")]
    EmptyCot,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Confidence(#[from] ConfidenceError),
}

/// Sequence confidence: exp of the arithmetic mean of `token_logprobs`.
pub fn confidence(token_logprobs: &[f64]) -> Result<f64, ConfidenceError> {
    if token_logprobs.is_empty() {
        return Err(ConfidenceError::EmptySequence);
    }
    let mut sum = 0.0;
    for &lp in token_logprobs {
        if !lp.is_finite() || lp > 0.0 {
            return Err(ConfidenceError::NonFiniteLogprob(lp));
        }
        sum += lp;
    }
    Ok((sum / token_logprobs.len() as f64).exp())
}

/// Slice the logprobs belonging to the answer span: the tokens after the
/// last occurrence of `delimiter` in the reply text. With no delimiter
/// the whole sequence is the span. Tokens straddling the delimiter end
/// are included only when nothing starts after it.
pub fn answer_span_logprobs<'a>(
    resp: &'a CompletionResponse,
    delimiter: &str,
) -> Option<&'a [f64]> {
    let logprobs = resp.token_logprobs.as_deref()?;
    let Some(texts) = resp.token_texts.as_deref() else {
        // No alignment data: treat the whole output as the answer.
        return Some(logprobs);
    };
    let Some(pos) = resp.text.rfind(delimiter) else {
        return Some(logprobs);
    };
    let boundary = pos + delimiter.len();
    let mut offset = 0usize;
    let mut first_after = None;
    let mut first_straddling = None;
    for (i, tok) in texts.iter().enumerate() {
        let start = offset;
        offset += tok.len();
        if start >= boundary {
            first_after = Some(i);
            break;
        }
        if offset > boundary && first_straddling.is_none() {
            first_straddling = Some(i);
        }
    }
    let from = first_after.or(first_straddling)?;
    Some(&logprobs[from..])
}

/// Player model bound to its endpoint and templates.
pub struct Player<'a> {
    gateway: &'a ModelGateway,
    endpoint_ref: String,
    with_cot_template: PromptTemplate,
    free_template: PromptTemplate,
    policy: RetryPolicy,
}

impl<'a> Player<'a> {
    pub fn new(
        gateway: &'a ModelGateway,
        endpoint_ref: impl Into<String>,
        with_cot_template: PromptTemplate,
        free_template: PromptTemplate,
        policy: RetryPolicy,
    ) -> Self {
        Self {
            gateway,
            endpoint_ref: endpoint_ref.into(),
            with_cot_template,
            free_template,
            policy,
        }
    }

    /// Run the player aided by `cot_text`. The judge verdict is left
    /// false for the caller to fill in.
    pub fn play_with_cot(
        &self,
        instance: &Instance,
        index: SampleIndex,
        cot_text: &str,
        seed: u64,
    ) -> Result<PlayerRun, PlayerError> {
        if cot_text.trim().is_empty() {
            return Err(PlayerError::EmptyCot);
        }
        let parts = player_parts(&self.with_cot_template, instance, Some(cot_text));
        let delimiter = self.with_cot_template.answer_delimiter.clone();
        self.run(instance, Some(index), true, parts, &delimiter, seed)
    }

    /// Run the player on the bare query.
    pub fn play_without_cot(
        &self,
        instance: &Instance,
        index: SampleIndex,
        seed: u64,
    ) -> Result<PlayerRun, PlayerError> {
        let parts = player_parts(&self.free_template, instance, None);
        let delimiter = self.free_template.answer_delimiter.clone();
        self.run(instance, Some(index), false, parts, &delimiter, seed)
    }

    fn run(
        &self,
        instance: &Instance,
        index: Option<SampleIndex>,
        with_cot: bool,
        parts: Vec<crate::gateway::PromptPart>,
        delimiter: &str,
        seed: u64,
    ) -> Result<PlayerRun, PlayerError> {
        let req = CompletionRequest::new(self.endpoint_ref.clone(), parts, seed)
            .temperature(0.0)
            .max_output_units(256)
            .want_logprobs(true);
        let resp = self.gateway.complete(&req, &self.policy)?;
        let (_, answer) = split_answer(&resp.text, delimiter);
        let answer_text = if answer.is_empty() {
            resp.text.trim().to_string()
        } else {
            answer
        };
        let span = answer_span_logprobs(&resp, delimiter);
        let confidence = match span {
            Some(lps) if !lps.is_empty() => Some(confidence(lps)?),
            _ => Some(confidence(resp.token_logprobs.as_deref().unwrap_or(&[]))?),
        };
        Ok(PlayerRun {
            instance_id: instance.instance_id.clone(),
            index,
            with_cot,
            answer_text,
            confidence,
            judge_ok: false,
            failed: false,
        })
    }

    /// A placeholder run for a cell whose player call failed.
    pub fn failed_run(instance_id: &str, index: Option<SampleIndex>, with_cot: bool) -> PlayerRun {
        PlayerRun {
            instance_id: instance_id.to_string(),
            index,
            with_cot,
            answer_text: String::new(),
            confidence: None,
            judge_ok: false,
            failed: true,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{FinishReason, MockReply, MockScript};
    use crate::prompts::{TemplateRegistry, PLAYER_FREE, PLAYER_WITH_COT};
    use proptest::prelude::*;

    fn instance() -> Instance {
        Instance {
            instance_id: "q1".into(),
            query_text: "Compute 2 + 2.".into(),
            image_ref: None,
            gold_answer: "4".into(),
        }
    }

    fn player<'a>(gw: &'a ModelGateway) -> Player<'a> {
        let reg = TemplateRegistry::default();
        Player::new(
            gw,
            "player",
            reg.get(PLAYER_WITH_COT).unwrap().clone(),
            reg.get(PLAYER_FREE).unwrap().clone(),
            RetryPolicy::immediate(1),
        )
    }

    #[test]
    fn confidence_certain_token() {
        assert_eq!(confidence(&[0.0]).unwrap(), 1.0);
    }

    #[test]
    fn confidence_constant_sequence() {
        let lp = 0.25f64.ln();
        let phi = confidence(&[lp, lp]).unwrap();
        assert!((phi - 0.25).abs() <= 1e-12);
    }

    #[test]
    fn confidence_mixed_sequence_matches_oracle() {
        let lps = [0.9f64.ln(), 0.8f64.ln(), 0.7f64.ln()];
        // Independent arithmetic: exp of the mean.
        let oracle = ((lps[0] + lps[1] + lps[2]) / 3.0).exp();
        let phi = confidence(&lps).unwrap();
        assert_eq!(phi, oracle);
        assert!((phi - 0.795811).abs() < 1e-6);
    }

    #[test]
    fn confidence_rejects_empty_and_non_finite() {
        assert!(matches!(confidence(&[]), Err(ConfidenceError::EmptySequence)));
        assert!(matches!(
            confidence(&[f64::NEG_INFINITY]),
            Err(ConfidenceError::NonFiniteLogprob(_))
        ));
        assert!(matches!(
            confidence(&[0.5]),
            Err(ConfidenceError::NonFiniteLogprob(_))
        ));
    }

    #[test]
    fn with_cot_certain_answer_has_unit_confidence() {
        let gw = ModelGateway::new();
        gw.register_mock(
            "player",
            MockScript::replying(|_| MockReply::uniform_logprobs("Answer: 4", 0.0)),
        )
        .unwrap();
        let run = player(&gw)
            .play_with_cot(&instance(), SampleIndex::new(0, 0, 0), "2+2=4", 7)
            .unwrap();
        assert!(run.with_cot);
        assert_eq!(run.answer_text, "4");
        assert_eq!(run.confidence, Some(1.0));
    }

    #[test]
    fn confidence_spans_only_the_answer_segment() {
        // Preamble words carry terrible logprobs; answer words are
        // certain. The span rule must ignore the preamble.
        let gw = ModelGateway::new();
        gw.register_mock(
            "player",
            MockScript::replying(|_| {
                MockReply::with_word_logprobs(
                    "I think the Answer: 4",
                    vec![-5.0, -5.0, -5.0, -5.0, 0.0],
                )
            }),
        )
        .unwrap();
        let run = player(&gw)
            .play_with_cot(&instance(), SampleIndex::new(0, 0, 0), "2+2=4", 7)
            .unwrap();
        assert_eq!(run.answer_text, "4");
        assert_eq!(run.confidence, Some(1.0));
    }

    #[test]
    fn two_answer_tokens_at_half_probability() {
        let lp = 0.5f64.ln();
        let gw = ModelGateway::new();
        gw.register_mock(
            "player",
            MockScript::replying(move |_| {
                MockReply::with_word_logprobs("Answer: 4 exactly", vec![0.0, lp, lp])
            }),
        )
        .unwrap();
        let run = player(&gw)
            .play_with_cot(&instance(), SampleIndex::new(0, 0, 0), "2+2=4", 7)
            .unwrap();
        let phi = run.confidence.unwrap();
        assert!((phi - 0.5).abs() <= 1e-12, "phi = {phi}");
    }

    #[test]
    fn empty_cot_rejected() {
        let gw = ModelGateway::new();
        gw.register_mock("player", MockScript::fixed("Answer: 4")).unwrap();
        assert!(matches!(
            player(&gw).play_with_cot(&instance(), SampleIndex::new(0, 0, 0), "  ", 7),
            Err(PlayerError::EmptyCot)
        ));
    }

    #[test]
    fn missing_logprobs_is_malformed() {
        let gw = ModelGateway::new();
        gw.register_mock("player", MockScript::fixed("Answer: 4")).unwrap();
        assert!(matches!(
            player(&gw).play_without_cot(&instance(), SampleIndex::new(0, 0, 0), 7),
            Err(PlayerError::Gateway(GatewayError::MalformedResponse { .. }))
        ));
    }

    #[test]
    fn free_run_omits_cot_and_marks_flag() {
        let gw = ModelGateway::new();
        gw.register_mock(
            "player",
            MockScript::replying(|req| {
                assert!(!req.text().contains("Reference reasoning"));
                MockReply::uniform_logprobs("Answer: 5", -0.1)
            }),
        )
        .unwrap();
        let run = player(&gw)
            .play_without_cot(&instance(), SampleIndex::new(0, 1, 2), 9)
            .unwrap();
        assert!(!run.with_cot);
        assert_eq!(run.answer_text, "5");
    }

    #[test]
    fn no_delimiter_uses_whole_output() {
        let gw = ModelGateway::new();
        gw.register_mock(
            "player",
            MockScript::replying(|_| MockReply::with_word_logprobs("just 4", vec![-0.2, -0.4])),
        )
        .unwrap();
        let run = player(&gw)
            .play_without_cot(&instance(), SampleIndex::new(0, 0, 0), 7)
            .unwrap();
        assert_eq!(run.answer_text, "just 4");
        let phi = run.confidence.unwrap();
        assert!((phi - ((-0.2f64 - 0.4) / 2.0).exp()).abs() <= 1e-15);
    }

    #[test]
    fn straddling_token_is_used_when_nothing_starts_after() {
        let resp = CompletionResponse {
            text: "Answer:4".into(),
            token_logprobs: Some(vec![-1.0]),
            token_texts: Some(vec!["Answer:4".into()]),
            finish_reason: FinishReason::Complete,
        };
        let span = answer_span_logprobs(&resp, "Answer:").unwrap();
        assert_eq!(span, &[-1.0]);
    }

    proptest! {
        #[test]
        fn duplication_invariance(lps in proptest::collection::vec(-8.0f64..=0.0, 1..24)) {
            let once = confidence(&lps).unwrap();
            let doubled: Vec<f64> = lps.iter().chain(lps.iter()).copied().collect();
            let twice = confidence(&doubled).unwrap();
            prop_assert!((once - twice).abs() <= 1e-12);
        }

        #[test]
        fn monotone_in_each_logprob(lps in proptest::collection::vec(-8.0f64..=-0.5, 1..24),
                                    pick in any::<proptest::sample::Index>()) {
            let base = confidence(&lps).unwrap();
            let mut raised = lps.clone();
            let i = pick.index(raised.len());
            raised[i] += 0.25;
            prop_assert!(confidence(&raised).unwrap() > base);
        }

        #[test]
        fn bounded_and_unit_only_at_zero(lps in proptest::collection::vec(-8.0f64..=0.0, 1..24)) {
            let phi = confidence(&lps).unwrap();
            prop_assert!(phi > 0.0 && phi <= 1.0);
            if lps.iter().any(|&lp| lp < 0.0) {
                prop_assert!(phi < 1.0);
            } else {
                prop_assert_eq!(phi, 1.0);
            }
        }
    }
}
