//! Deterministic offline backend: a self-contained arithmetic world for
//! `--mock` runs, examples, and end-to-end tests.
//!
//! The demo corpus asks integer-arithmetic questions. Scripted agents
//! solve them with seed-dependent mistakes and redundancy, the player
//! answers better when aided by a correct CoT, harder questions (larger
//! operands) fail more often without help, and the extractor strips
//! reflection filler. Everything is a pure function of `(prompt, seed)`.

use crate::gateway::{MockOutcome, MockReply, MockScript, ModelGateway};
use crate::judging::normalize;
use crate::model::{mix_values, Instance};

/// Endpoint ids used by `--mock` runs for the non-agent roles.
pub const JUDGE_ENDPOINT: &str = "mock/judge";
pub const PLAYER_ENDPOINT: &str = "mock/player";
pub const EXTRACTOR_ENDPOINT: &str = "mock/extractor";

/// A tiny 1x1 transparent PNG, as some instances carry an image part.
const STUB_IMAGE: &str = "data:image/png;base64,iVBORw0KGgoAAAANSUhEUgAAAAEAAAABCAYAAAAfFcSJAAAADUlEQVR42mNkYPhfDwAChwGA60e6kgAAAABJRU5ErkJggg==";

/// Generate `n` arithmetic instances. Operand magnitude grows across
/// the corpus, so later instances are harder for the CoT-free player.
pub fn demo_corpus(n: usize, seed: u64) -> Vec<Instance> {
    (0..n)
        .map(|i| {
            let h = mix_values(seed, i as u64);
            let spread = 6 + (i as i64 * 97) % 120;
            let a = (h % (spread as u64 + 1)) as i64 + 2;
            let b = ((h >> 17) % (spread as u64 + 1)) as i64 + 2;
            let (op, gold) = match (h >> 43) % 3 {
                0 => ('+', a + b),
                1 => ('-', a - b),
                _ => ('*', a * b),
            };
            Instance {
                instance_id: format!("demo-{i:05}"),
                query_text: format!("Compute {a} {op} {b}."),
                image_ref: (i % 7 == 3).then(|| STUB_IMAGE.to_string()),
                gold_answer: gold.to_string(),
            }
        })
        .collect()
}

/// Solve a demo query; `None` when the text is not an arithmetic question.
pub fn solve_query(query: &str) -> Option<i64> {
    let expr = query.split("Compute").nth(1)?.trim().trim_end_matches('.');
    let mut parts = expr.split_whitespace();
    let a: i64 = parts.next()?.parse().ok()?;
    let op = parts.next()?;
    let b: i64 = parts.next()?.parse().ok()?;
    match op {
        "+" => Some(a + b),
        "-" => Some(a - b),
        "*" => Some(a * b),
        _ => None,
    }
}

fn operand_sum(query: &str) -> i64 {
    let Some(expr) = query.split("Compute").nth(1) else {
        return 0;
    };
    expr.split_whitespace()
        .filter_map(|t| t.trim_end_matches('.').parse::<i64>().ok())
        .map(i64::abs)
        .sum()
}

fn query_hash(query: &str) -> u64 {
    query.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

fn prompt_query(prompt: &str) -> String {
    prompt
        .lines()
        .find_map(|l| l.strip_prefix("Problem: "))
        .unwrap_or(prompt)
        .to_string()
}

/// Synthesis agent script for ordinal `m`. Accuracy rises with `m`
/// (wrong once per `3 + m` samples); CoTs carry seed-dependent
/// reflection filler so rationale ratios vary.
pub fn agent_script(m: usize) -> MockScript {
    MockScript::replying(move |req| {
        let query = prompt_query(&req.text());
        let h = mix_values(req.seed, query_hash(&query) ^ (m as u64).wrapping_mul(0x9e37));
        let Some(truth) = solve_query(&query) else {
            return MockReply::text("The question is not arithmetic. Answer: unknown");
        };
        let correct = h % (3 + m as u64) != 0;
        let offset = 1 + (h >> 8) % 5;
        let stated = if correct { truth } else { truth + offset as i64 };
        let mut cot = format!("We need {}. ", query.trim_end_matches('.').trim_start_matches("Compute ").trim());
        cot.push_str("Carrying out the operation step by step gives an intermediate tally. ");
        for _ in 0..(h >> 16) % 3 {
            cot.push_str("Wait, let me double-check the arithmetic. Recomputing gives the same value. ");
        }
        if (h >> 24) % 4 == 0 {
            cot.push_str("Alternatively, decompose the operands and combine partial results. ");
        }
        cot.push_str(&format!("So the result is {stated}."));
        MockReply::text(format!("{cot}\nAnswer: {stated}"))
    })
}

/// Player script: with reference reasoning it mostly adopts the CoT's
/// stated result at high confidence; bare queries succeed less often as
/// operands grow, at lower confidence.
pub fn player_script() -> MockScript {
    MockScript::replying(|req| {
        let text = req.text();
        let query = prompt_query(&text);
        let h = mix_values(req.seed, query_hash(&query) ^ 0x70_61_79);
        let truth = solve_query(&query).unwrap_or(0);
        let (answer, per_word) = if let Some(reasoning) = text.split("Reference reasoning:\n").nth(1) {
            let reasoning = reasoning.split("\n\nProblem:").next().unwrap_or(reasoning);
            let stated = reasoning
                .rfind("the result is ")
                .and_then(|p| {
                    reasoning[p + "the result is ".len()..]
                        .trim_end_matches('.')
                        .split_whitespace()
                        .next()?
                        .trim_end_matches('.')
                        .parse::<i64>()
                        .ok()
                })
                .unwrap_or(truth);
            let follows = h % 10 != 0;
            let answer = if follows { stated } else { truth };
            (answer, -0.02 - ((h >> 3) % 20) as f64 * 0.004)
        } else {
            let difficulty = operand_sum(&query).min(90) as u64;
            let correct = (h >> 32) % 100 >= difficulty;
            let answer = if correct { truth } else { truth + 1 + (h % 4) as i64 };
            (answer, -0.10 - ((h >> 5) % 30) as f64 * 0.02)
        };
        MockReply::uniform_logprobs(format!("Answer: {answer}"), per_word)
    })
}

/// Judge script: normalized string comparison, the same rule a careful
/// grader applies.
pub fn judge_script() -> MockScript {
    MockScript::replying(|req| {
        let text = req.text();
        let gold = text
            .lines()
            .find_map(|l| l.strip_prefix("Reference answer: "))
            .unwrap_or("");
        let predicted = text
            .lines()
            .find_map(|l| l.strip_prefix("Prediction: "))
            .unwrap_or("");
        if !gold.is_empty() && normalize(predicted) == normalize(gold) {
            MockReply::text("CONSISTENT\nthe prediction states the reference value")
        } else {
            MockReply::text("INCONSISTENT\nthe prediction differs from the reference")
        }
    })
}

/// Extractor script: drops reflection sentences, keeping load-bearing ones.
pub fn extractor_script() -> MockScript {
    MockScript::replying(|req| {
        let text = req.text();
        let passage = text.split("Passage:\n").nth(1).unwrap_or("");
        let kept: Vec<&str> = passage
            .split_inclusive(". ")
            .filter(|s| {
                let lower = s.to_lowercase();
                !lower.contains("wait") && !lower.contains("double-check") && !lower.contains("alternatively")
            })
            .collect();
        MockReply::text(kept.concat().trim().to_string())
    })
}

/// Register the full demo world on a gateway: one scripted agent per
/// given endpoint ref plus judge, player, and extractor mocks.
pub fn register_demo(gateway: &ModelGateway, agent_endpoints: &[String]) {
    for (m, endpoint) in agent_endpoints.iter().enumerate() {
        gateway
            .register_mock(endpoint.clone(), agent_script(m))
            .expect("demo agent endpoint already registered");
    }
    gateway
        .register_mock(JUDGE_ENDPOINT, judge_script())
        .expect("judge endpoint already registered");
    gateway
        .register_mock(PLAYER_ENDPOINT, player_script())
        .expect("player endpoint already registered");
    gateway
        .register_mock(EXTRACTOR_ENDPOINT, extractor_script())
        .expect("extractor endpoint already registered");
}

/// A transient-failure wrapper: fails the first attempt of every
/// request whose seed satisfies `seed % modulus == 0`; used to exercise
/// retry and failure-record paths in demos and tests.
pub fn flaky(script: MockScript, modulus: u64) -> MockScript {
    MockScript::new(move |req, attempt| {
        if req.seed % modulus == 0 && attempt == 1 {
            MockOutcome::Transient("injected demo failure".into())
        } else {
            script.invoke(req, attempt)
        }
    })
}
