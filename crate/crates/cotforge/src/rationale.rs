//! Length-appropriateness scoring: extract the core reasoning from a CoT
//! through an LLM extractor and compute the rationale ratio, plus
//! reflection trigger-token counting for quality reporting.
//!
//! Length units are whitespace-delimited words throughout; the unit is
//! tokenizer-independent and identical for numerator and denominator.

use regex::RegexBuilder;
use thiserror::Error;

use crate::gateway::{CompletionRequest, GatewayError, ModelGateway, RetryPolicy};
use crate::prompts::{extractor_parts, PromptTemplate};

/// Default reflection trigger lexicon.
pub const DEFAULT_TRIGGERS: &[&str] = &["wait"];

/// Rationale extraction and length report for one CoT.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RationaleReport {
    pub rationale_text: String,
    /// `rationale_length_units / cot_length_units`, clamped to [0, 1].
    pub ratio: f64,
    pub cot_length_units: usize,
    pub rationale_length_units: usize,
    pub aha_count: usize,
}

#[derive(Debug, Error)]
pub enum RationaleError {
    #[error("CoT must be non-empty")]
    EmptyCot,
    #[error("extractor endpoint failed: {0}")]
    ExtractorUnavailable(#[from] GatewayError),
}

/// Whitespace-delimited word count.
pub fn length_units(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Rationale ratio in [0, 1]; total over all inputs, including
/// adversarial rationales longer than the CoT.
pub fn ratio(cot_text: &str, rationale_text: &str) -> f64 {
    let cot_len = length_units(cot_text);
    if cot_len == 0 {
        return 0.0;
    }
    let rat_len = length_units(rationale_text).min(cot_len);
    rat_len as f64 / cot_len as f64
}

/// Case-insensitive whole-word count of lexicon matches in `cot_text`.
pub fn count_aha(cot_text: &str, trigger_lexicon: &[String]) -> usize {
    let alternation = trigger_lexicon
        .iter()
        .filter(|t| !t.trim().is_empty())
        .map(|t| regex::escape(t.trim()))
        .collect::<Vec<_>>()
        .join("|");
    if alternation.is_empty() {
        return 0;
    }
    let re = RegexBuilder::new(&format!(r"\b(?:{alternation})\b"))
        .case_insensitive(true)
        .build()
        .expect("trigger lexicon regex");
    re.find_iter(cot_text).count()
}

/// Extractor endpoint binding.
pub struct Extractor<'a> {
    gateway: &'a ModelGateway,
    endpoint_ref: String,
    template: PromptTemplate,
    policy: RetryPolicy,
}

impl<'a> Extractor<'a> {
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
        }
    }

    /// Extract the load-bearing reasoning steps from `cot_text` at
    /// temperature 0.
    pub fn extract_rationale(&self, cot_text: &str, seed: u64) -> Result<String, RationaleError> {
        if cot_text.trim().is_empty() {
            return Err(RationaleError::EmptyCot);
        }
        let req = CompletionRequest::new(
            self.endpoint_ref.clone(),
            extractor_parts(&self.template, cot_text),
            seed,
        )
        .temperature(0.0)
        .max_output_units(2048);
        let resp = self.gateway.complete(&req, &self.policy)?;
        Ok(resp.text.trim().to_string())
    }

    /// Extract and assemble the full report for one CoT.
    pub fn report(
        &self,
        cot_text: &str,
        seed: u64,
        trigger_lexicon: &[String],
    ) -> Result<RationaleReport, RationaleError> {
        let rationale_text = self.extract_rationale(cot_text, seed)?;
        let cot_length_units = length_units(cot_text);
        let rationale_length_units = length_units(&rationale_text).min(cot_length_units);
        Ok(RationaleReport {
            ratio: ratio(cot_text, &rationale_text),
            aha_count: count_aha(cot_text, trigger_lexicon),
            rationale_text,
            cot_length_units,
            rationale_length_units,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::MockScript;
    use crate::prompts::{TemplateRegistry, EXTRACTOR_DEFAULT};
    use proptest::prelude::*;

    fn triggers(words: &[&str]) -> Vec<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    fn extractor<'a>(gw: &'a ModelGateway) -> Extractor<'a> {
        Extractor::new(
            gw,
            "extractor",
            TemplateRegistry::default().get(EXTRACTOR_DEFAULT).unwrap().clone(),
            RetryPolicy::immediate(1),
        )
    }

    #[test]
    fn scripted_extractor_condenses() {
        let gw = ModelGateway::new();
        gw.register_mock("extractor", MockScript::fixed("A.")).unwrap();
        let text = extractor(&gw)
            .extract_rationale("A. Wait, let me recheck. A.", 0)
            .unwrap();
        assert_eq!(text, "A.");
    }

    #[test]
    fn echo_extractor_gives_full_ratio() {
        let gw = ModelGateway::new();
        gw.register_mock(
            "extractor",
            MockScript::replying(|req| {
                let passage = req.text().split_once("Passage:\n").unwrap().1.to_string();
                crate::gateway::MockReply::text(passage)
            }),
        )
        .unwrap();
        let cot = "no redundancy at all here";
        let report = extractor(&gw).report(cot, 0, &triggers(&["wait"])).unwrap();
        assert_eq!(report.rationale_text, cot);
        assert_eq!(report.ratio, 1.0);
    }

    #[test]
    fn empty_extractor_reply_gives_zero_ratio() {
        let gw = ModelGateway::new();
        gw.register_mock("extractor", MockScript::fixed("")).unwrap();
        let report = extractor(&gw).report("some cot text", 0, &triggers(&["wait"])).unwrap();
        assert_eq!(report.rationale_text, "");
        assert_eq!(report.ratio, 0.0);
    }

    #[test]
    fn extractor_failure_surfaces() {
        let gw = ModelGateway::new();
        gw.register_mock("extractor", MockScript::always_transient()).unwrap();
        assert!(matches!(
            extractor(&gw).extract_rationale("cot", 0),
            Err(RationaleError::ExtractorUnavailable(_))
        ));
    }

    #[test]
    fn ratio_identity_empty_and_fractional() {
        assert_eq!(ratio("a b c", "a b c"), 1.0);
        assert_eq!(ratio("a b c", ""), 0.0);
        // Independently counted: 200-word CoT, 90-word rationale.
        let cot = vec!["w"; 200].join(" ");
        let rat = vec!["w"; 90].join(" ");
        assert_eq!(length_units(&cot), 200);
        assert_eq!(length_units(&rat), 90);
        assert_eq!(ratio(&cot, &rat), 0.45);
    }

    #[test]
    fn ratio_clamps_overlong_rationale() {
        let cot = "three word cot";
        let rat = "five words of adversarial output";
        assert_eq!(ratio(cot, rat), 1.0);
    }

    #[test]
    fn aha_counting() {
        assert_eq!(count_aha("Wait, wait — WAIT", &triggers(&["wait"])), 3);
        assert_eq!(count_aha("awaiting results", &triggers(&["wait"])), 0);
        assert_eq!(
            count_aha("Alternatively, wait", &triggers(&["wait", "alternatively"])),
            2
        );
        assert_eq!(count_aha("anything", &[]), 0);
    }

    #[test]
    fn aha_ignores_punctuation_and_case() {
        for text in ["wait", "Wait!", "(WAIT)", "wait..."] {
            assert_eq!(count_aha(text, &triggers(&["wait"])), 1, "text {text:?}");
        }
    }

    proptest! {
        #[test]
        fn ratio_always_in_unit_interval(cot in "[a-z ]{1,64}", rat in "[a-z ]{0,128}") {
            let r = ratio(&cot, &rat);
            prop_assert!((0.0..=1.0).contains(&r));
        }
    }
}
