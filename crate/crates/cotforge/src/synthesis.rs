//! Candidate generation: fan out every instance to M agents x K seeded
//! samples and collect (CoT, predicted answer) pairs.
//!
//! The grid is conserved: a plan over N instances always emits exactly
//! N*M*K records, with endpoint failures emitted as failed records
//! rather than dropped.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{fan_out, CancelToken};
use crate::gateway::{CompletionRequest, GatewayError, ModelGateway, RetryPolicy};
use crate::model::{AgentProfile, Instance, SampleIndex, SeedSpec};
use crate::prompts::{synthesis_parts, TemplateRegistry};

/// Default sampling temperature for synthesis agents; judge, player and
/// extractor calls run at 0.
pub const SYNTH_TEMPERATURE: f64 = 1.0;

/// The full generation grid for one run.
#[derive(Debug, Clone)]
pub struct SynthesisPlan {
    pub instances: Vec<Instance>,
    pub agents: Vec<AgentProfile>,
    /// Samples per agent per instance.
    pub k: usize,
    pub seed_spec: SeedSpec,
    pub concurrency: usize,
    pub policy: RetryPolicy,
}

impl SynthesisPlan {
    pub fn grid_size(&self) -> usize {
        self.instances.len() * self.agents.len() * self.k
    }

    pub fn validate(&self) -> Result<(), SynthesisError> {
        if self.agents.is_empty() || self.k == 0 {
            return Err(SynthesisError::EmptyPlan);
        }
        let mut ids = std::collections::HashSet::new();
        for inst in &self.instances {
            if !ids.insert(inst.instance_id.as_str()) {
                return Err(SynthesisError::DuplicateInstanceId(inst.instance_id.clone()));
            }
        }
        for (m, agent) in self.agents.iter().enumerate() {
            if agent.m != m {
                return Err(SynthesisError::AgentOrdinalGap { agent_id: agent.agent_id.clone() });
            }
        }
        Ok(())
    }
}

/// One generated (or failed) sample before scoring.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawCandidate {
    #[serde(flatten)]
    pub index: SampleIndex,
    pub agent_id: String,
    pub seed: u64,
    pub cot_text: String,
    pub predicted_answer: String,
    pub generation_failed: bool,
}

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("plan needs at least one agent and k >= 1")]
    EmptyPlan,
    #[error("duplicate instance id '{0}'")]
    DuplicateInstanceId(String),
    #[error("agent '{agent_id}' has a non-contiguous ordinal")]
    AgentOrdinalGap { agent_id: String },
    #[error("unknown prompt template '{0}'")]
    UnknownTemplate(String),
    #[error("agent '{agent_id}' is permanently unreachable: {reason}")]
    FatalEndpoint { agent_id: String, reason: String },
    #[error("run interrupted")]
    Interrupted,
    #[error("checkpoint write failed: {0}")]
    Sink(String),
}

/// Split a completion into (cot, answer) at the LAST occurrence of the
/// delimiter; with no delimiter the whole text is the CoT and the
/// answer is empty.
pub fn split_answer(raw: &str, delimiter: &str) -> (String, String) {
    match raw.rfind(delimiter) {
        Some(pos) => {
            let cot = raw[..pos].trim().to_string();
            let answer = raw[pos + delimiter.len()..].trim().to_string();
            (cot, answer)
        }
        None => (raw.trim().to_string(), String::new()),
    }
}

/// [`split_answer`] resolved through a template registry.
pub fn parse_answer(
    raw: &str,
    template_id: &str,
    registry: &TemplateRegistry,
) -> Result<(String, String), SynthesisError> {
    let template = registry
        .get(template_id)
        .ok_or_else(|| SynthesisError::UnknownTemplate(template_id.to_string()))?;
    Ok(split_answer(raw, &template.answer_delimiter))
}

/// Generate every missing cell of the plan's grid, streaming each
/// finished record into `sink` before it counts as done.
///
/// `completed` holds indices already checkpointed by a previous run;
/// they are skipped. A permanent endpoint refusal aborts the run after
/// in-flight records are flushed; retry exhaustion yields a failed
/// record instead.
pub fn synthesize(
    plan: &SynthesisPlan,
    gateway: &ModelGateway,
    registry: &TemplateRegistry,
    completed: &std::collections::HashSet<SampleIndex>,
    cancel: &CancelToken,
    mut sink: impl FnMut(&RawCandidate) -> Result<(), String>,
) -> Result<(), SynthesisError> {
    plan.validate()?;
    for agent in &plan.agents {
        if registry.get(&agent.prompt_template_id).is_none() {
            return Err(SynthesisError::UnknownTemplate(agent.prompt_template_id.clone()));
        }
    }

    let mut cells = Vec::new();
    for (n, instance) in plan.instances.iter().enumerate() {
        for agent in &plan.agents {
            for k in 0..plan.k {
                let index = SampleIndex::new(n, agent.m, k);
                if !completed.contains(&index) {
                    cells.push((index, instance, agent));
                }
            }
        }
    }

    let task = |(index, instance, agent): (SampleIndex, &Instance, &AgentProfile)| {
        let template = registry
            .get(&agent.prompt_template_id)
            .expect("template checked above");
        let seed = plan.seed_spec.derive(index);
        let req = CompletionRequest::new(
            agent.endpoint_ref.clone(),
            synthesis_parts(template, instance),
            seed,
        )
        .temperature(SYNTH_TEMPERATURE);
        match gateway.complete(&req, &plan.policy) {
            Ok(resp) => {
                let (cot_text, predicted_answer) = split_answer(&resp.text, &template.answer_delimiter);
                Ok(RawCandidate {
                    index,
                    agent_id: agent.agent_id.clone(),
                    seed,
                    cot_text,
                    predicted_answer,
                    generation_failed: false,
                })
            }
            Err(GatewayError::ExhaustedRetries { .. }) => Ok(RawCandidate {
                index,
                agent_id: agent.agent_id.clone(),
                seed,
                cot_text: String::new(),
                predicted_answer: String::new(),
                generation_failed: true,
            }),
            Err(e) => Err(SynthesisError::FatalEndpoint {
                agent_id: agent.agent_id.clone(),
                reason: e.to_string(),
            }),
        }
    };

    fan_out(cells, plan.concurrency, cancel, task, |result| match result {
        Ok(candidate) => {
            sink(&candidate).map_err(SynthesisError::Sink)?;
            cancel.record_event();
            Ok(())
        }
        Err(e) => Err(e),
    })?;

    if cancel.is_cancelled() {
        return Err(SynthesisError::Interrupted);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{MockOutcome, MockReply, MockScript};
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn instances(n: usize) -> Vec<Instance> {
        (0..n)
            .map(|i| Instance {
                instance_id: format!("q{i}"),
                query_text: format!("question {i}"),
                image_ref: None,
                gold_answer: "42".into(),
            })
            .collect()
    }

    fn agents(m: usize) -> Vec<AgentProfile> {
        (0..m)
            .map(|i| AgentProfile {
                agent_id: format!("agent{i}"),
                endpoint_ref: format!("agent{i}"),
                prompt_template_id: crate::prompts::SYNTH_DEFAULT.into(),
                m: i,
            })
            .collect()
    }

    fn plan(n: usize, m: usize, k: usize) -> SynthesisPlan {
        SynthesisPlan {
            instances: instances(n),
            agents: agents(m),
            k,
            seed_spec: SeedSpec::new(7),
            concurrency: 4,
            policy: RetryPolicy::immediate(2),
        }
    }

    fn collect_all(plan: &SynthesisPlan, gw: &ModelGateway) -> Vec<RawCandidate> {
        let mut out = Vec::new();
        synthesize(plan, gw, &TemplateRegistry::default(), &HashSet::new(), &CancelToken::new(), |c| {
            out.push(c.clone());
            Ok(())
        })
        .unwrap();
        out
    }

    #[test]
    fn grid_2x2x3_emits_12_distinct_indices() {
        let gw = ModelGateway::new();
        for a in agents(2) {
            gw.register_mock(
                a.endpoint_ref,
                MockScript::replying(|req| MockReply::text(format!("steps for seed {} Answer: 42", req.seed))),
            )
            .unwrap();
        }
        let out = collect_all(&plan(2, 2, 3), &gw);
        assert_eq!(out.len(), 12);
        let indices: HashSet<_> = out.iter().map(|c| c.index).collect();
        assert_eq!(indices.len(), 12);
        assert!(out.iter().all(|c| c.predicted_answer == "42"));
    }

    #[test]
    fn degenerate_grid_emits_single_record() {
        let gw = ModelGateway::new();
        gw.register_mock("agent0", MockScript::fixed("thinking Answer: 42")).unwrap();
        let out = collect_all(&plan(1, 1, 1), &gw);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].index, SampleIndex::new(0, 0, 0));
    }

    #[test]
    fn timeout_exhaustion_yields_failed_record() {
        let gw = ModelGateway::new();
        gw.register_mock("agent0", MockScript::always_transient()).unwrap();
        let out = collect_all(&plan(1, 1, 2), &gw);
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|c| c.generation_failed));
        assert!(out.iter().all(|c| c.cot_text.is_empty() && c.predicted_answer.is_empty()));
    }

    #[test]
    fn permanent_refusal_is_fatal() {
        let gw = ModelGateway::new();
        gw.register_mock("agent0", MockScript::always_permanent()).unwrap();
        let err = synthesize(
            &plan(1, 1, 1),
            &gw,
            &TemplateRegistry::default(),
            &HashSet::new(),
            &CancelToken::new(),
            |_| Ok(()),
        )
        .unwrap_err();
        assert!(matches!(err, SynthesisError::FatalEndpoint { .. }));
    }

    #[test]
    fn completed_cells_are_skipped() {
        let gw = ModelGateway::new();
        gw.register_mock("agent0", MockScript::fixed("x Answer: 1")).unwrap();
        let p = plan(2, 1, 2);
        let done: HashSet<_> = [SampleIndex::new(0, 0, 0), SampleIndex::new(1, 0, 1)].into();
        let mut out = Vec::new();
        synthesize(&p, &gw, &TemplateRegistry::default(), &done, &CancelToken::new(), |c| {
            out.push(c.index);
            Ok(())
        })
        .unwrap();
        assert_eq!(out.len(), 2);
        assert!(!out.contains(&SampleIndex::new(0, 0, 0)));
        assert_eq!(gw.mock_stats("agent0").unwrap().attempts, 2);
    }

    #[test]
    fn split_answer_examples() {
        assert_eq!(
            split_answer("<think>steps</think> Answer: 42", "Answer:"),
            ("<think>steps</think>".to_string(), "42".to_string())
        );
        assert_eq!(
            split_answer("no delimiter here", "Answer:"),
            ("no delimiter here".to_string(), String::new())
        );
        // Last-occurrence rule: the final statement is the commitment.
        assert_eq!(
            split_answer("Answer: 1 ... Answer: 2", "Answer:"),
            ("Answer: 1 ...".to_string(), "2".to_string())
        );
    }

    #[test]
    fn parse_answer_resolves_template_delimiter() {
        let mut reg = TemplateRegistry::default();
        reg.insert("t", crate::prompts::PromptTemplate::new("{query}", "FINAL:"));
        let (cot, ans) = parse_answer("work FINAL: 9", "t", &reg).unwrap();
        assert_eq!((cot.as_str(), ans.as_str()), ("work", "9"));
        assert!(parse_answer("x", "missing", &reg).is_err());
    }

    #[test]
    fn reruns_are_byte_identical() {
        let gw = ModelGateway::new();
        for a in agents(2) {
            gw.register_mock(
                a.endpoint_ref,
                MockScript::replying(|req| MockReply::text(format!("s{} Answer: {}", req.seed, req.seed % 10))),
            )
            .unwrap();
        }
        let p = plan(3, 2, 2);
        let mut a = collect_all(&p, &gw);
        let mut b = collect_all(&p, &gw);
        a.sort_by_key(|c| c.index);
        b.sort_by_key(|c| c.index);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn grid_conservation_under_failures(n in 1usize..4, m in 1usize..4, k in 1usize..4, fail_mod in 1u64..5) {
            let gw = ModelGateway::new();
            for a in agents(m) {
                gw.register_mock(
                    a.endpoint_ref,
                    MockScript::new(move |req, _| {
                        if req.seed % fail_mod == 0 {
                            MockOutcome::Transient("injected".into())
                        } else {
                            MockOutcome::Reply(MockReply::text("w Answer: 1"))
                        }
                    }),
                )
                .unwrap();
            }
            let p = plan(n, m, k);
            let out = collect_all(&p, &gw);
            prop_assert_eq!(out.len(), n * m * k);
            let distinct: HashSet<_> = out.iter().map(|c| c.index).collect();
            prop_assert_eq!(distinct.len(), n * m * k);
        }
    }
}
