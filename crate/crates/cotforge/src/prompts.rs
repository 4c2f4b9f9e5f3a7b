//! Prompt templates for each model role.
//!
//! Templates are plain text with `{query}`, `{reasoning}`, `{cot}`,
//! `{gold}` and `{predicted}` placeholders plus a declared answer
//! delimiter. Shipped defaults are artifact choices; every template can
//! be replaced through the run config.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::gateway::PromptPart;
use crate::model::Instance;

pub const SYNTH_DEFAULT: &str = "synth/default";
pub const JUDGE_DEFAULT: &str = "judge/default";
pub const PLAYER_WITH_COT: &str = "player/cot";
pub const PLAYER_FREE: &str = "player/free";
pub const EXTRACTOR_DEFAULT: &str = "extractor/default";

/// A prompt template plus the delimiter that separates reasoning from
/// the final answer in the model's reply.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub body: String,
    #[serde(default = "default_delimiter")]
    pub answer_delimiter: String,
}

fn default_delimiter() -> String {
    "Answer:".to_string()
}

impl PromptTemplate {
    pub fn new(body: impl Into<String>, answer_delimiter: impl Into<String>) -> Self {
        Self {
            body: body.into(),
            answer_delimiter: answer_delimiter.into(),
        }
    }

    pub fn render(&self, substitutions: &[(&str, &str)]) -> String {
        let mut out = self.body.clone();
        for (key, value) in substitutions {
            out = out.replace(&format!("{{{key}}}"), value);
        }
        out
    }
}

/// Resolves template ids to templates; preloaded with the shipped
/// defaults, overridable from config.
#[derive(Debug, Clone)]
pub struct TemplateRegistry {
    templates: HashMap<String, PromptTemplate>,
}

impl Default for TemplateRegistry {
    fn default() -> Self {
        let mut templates = HashMap::new();
        templates.insert(
            SYNTH_DEFAULT.to_string(),
            PromptTemplate::new(
                "Solve the problem below. Reason step by step, then state the final \
                 answer on its own line in the form 'Answer: <answer>'.\n\nProblem: {query}",
                "Answer:",
            ),
        );
        templates.insert(
            JUDGE_DEFAULT.to_string(),
            PromptTemplate::new(
                "You are grading an answer. Decide whether the prediction states the same \
                 result as the reference answer, ignoring formatting differences.\n\
                 Reply with exactly CONSISTENT or INCONSISTENT on the first line, followed \
                 by one line of justification.\n\nReference answer: {gold}\nPrediction: {predicted}",
                "Answer:",
            ),
        );
        templates.insert(
            PLAYER_WITH_COT.to_string(),
            PromptTemplate::new(
                "Use the reference reasoning to answer the problem. Do not reason at \
                 length; reply with only the final answer in the form 'Answer: <answer>'.\n\n\
                 Reference reasoning:\n{reasoning}\n\nProblem: {query}",
                "Answer:",
            ),
        );
        templates.insert(
            PLAYER_FREE.to_string(),
            PromptTemplate::new(
                "Answer the problem. Reply with only the final answer in the form \
                 'Answer: <answer>'.\n\nProblem: {query}",
                "Answer:",
            ),
        );
        templates.insert(
            EXTRACTOR_DEFAULT.to_string(),
            PromptTemplate::new(
                "Copy only the load-bearing reasoning steps from the passage below, \
                 dropping repeated verifications, restatements, and filler. Output the \
                 extracted steps and nothing else.\n\nPassage:\n{cot}",
                "Answer:",
            ),
        );
        Self { templates }
    }
}

impl TemplateRegistry {
    pub fn get(&self, id: &str) -> Option<&PromptTemplate> {
        self.templates.get(id)
    }

    pub fn insert(&mut self, id: impl Into<String>, template: PromptTemplate) {
        self.templates.insert(id.into(), template);
    }

    /// Load a template from a TOML file (`body`, `answer_delimiter`).
    pub fn load_file(&mut self, id: impl Into<String>, path: &std::path::Path) -> Result<(), String> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read template '{}': {e}", path.display()))?;
        let template: PromptTemplate = toml::from_str(&raw)
            .map_err(|e| format!("cannot parse template '{}': {e}", path.display()))?;
        self.insert(id, template);
        Ok(())
    }
}

/// Prompt parts for a synthesis request: rendered query text plus the
/// instance image when present.
pub fn synthesis_parts(template: &PromptTemplate, instance: &Instance) -> Vec<PromptPart> {
    let mut parts = vec![PromptPart::Text(
        template.render(&[("query", &instance.query_text)]),
    )];
    if let Some(image) = &instance.image_ref {
        parts.push(PromptPart::Image(image.clone()));
    }
    parts
}

/// Prompt parts for a player run, with or without reference reasoning.
pub fn player_parts(
    template: &PromptTemplate,
    instance: &Instance,
    cot_text: Option<&str>,
) -> Vec<PromptPart> {
    let rendered = match cot_text {
        Some(cot) => template.render(&[("query", &instance.query_text), ("reasoning", cot)]),
        None => template.render(&[("query", &instance.query_text)]),
    };
    let mut parts = vec![PromptPart::Text(rendered)];
    if let Some(image) = &instance.image_ref {
        parts.push(PromptPart::Image(image.clone()));
    }
    parts
}

pub fn judge_parts(template: &PromptTemplate, predicted: &str, gold: &str) -> Vec<PromptPart> {
    vec![PromptPart::Text(
        template.render(&[("gold", gold), ("predicted", predicted)]),
    )]
}

pub fn extractor_parts(template: &PromptTemplate, cot_text: &str) -> Vec<PromptPart> {
    vec![PromptPart::Text(template.render(&[("cot", cot_text)]))]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_cover_every_role() {
        let reg = TemplateRegistry::default();
        for id in [SYNTH_DEFAULT, JUDGE_DEFAULT, PLAYER_WITH_COT, PLAYER_FREE, EXTRACTOR_DEFAULT] {
            assert!(reg.get(id).is_some(), "missing template {id}");
        }
    }

    #[test]
    fn render_substitutes_placeholders() {
        let t = PromptTemplate::new("Q: {query} / R: {reasoning}", "Answer:");
        assert_eq!(
            t.render(&[("query", "why"), ("reasoning", "because")]),
            "Q: why / R: because"
        );
    }

    #[test]
    fn synthesis_parts_include_image_when_present() {
        let reg = TemplateRegistry::default();
        let t = reg.get(SYNTH_DEFAULT).unwrap();
        let with_image = Instance {
            instance_id: "a".into(),
            query_text: "compute 1+1".into(),
            image_ref: Some("data:image/png;base64,AA==".into()),
            gold_answer: "2".into(),
        };
        let parts = synthesis_parts(t, &with_image);
        assert_eq!(parts.len(), 2);
        assert!(parts[0].as_text().unwrap().contains("compute 1+1"));
        let without = Instance { image_ref: None, ..with_image };
        assert_eq!(synthesis_parts(t, &without).len(), 1);
    }

    #[test]
    fn template_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.toml");
        std::fs::write(&path, "body = \"custom {query}\"\nanswer_delimiter = \"FINAL:\"\n").unwrap();
        let mut reg = TemplateRegistry::default();
        reg.load_file("synth/custom", &path).unwrap();
        let t = reg.get("synth/custom").unwrap();
        assert_eq!(t.answer_delimiter, "FINAL:");
        assert_eq!(t.render(&[("query", "x")]), "custom x");
    }
}
