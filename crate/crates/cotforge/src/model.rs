//! Shared domain types: corpus instances, the sample grid, candidate
//! records, scoring weights, and seed derivation.

use serde::{Deserialize, Serialize};

/// One raw corpus record: a question (text plus optional image) and its
/// gold answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub instance_id: String,
    pub query_text: String,
    /// Relative file path or `data:` URI; `None` for text-only queries.
    pub image_ref: Option<String>,
    pub gold_answer: String,
}

/// Position of one sample in the `N x M x K` generation grid:
/// instance ordinal `n`, agent ordinal `m`, sample ordinal `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SampleIndex {
    pub n: usize,
    pub m: usize,
    pub k: usize,
}

impl SampleIndex {
    pub fn new(n: usize, m: usize, k: usize) -> Self {
        Self { n, m, k }
    }
}

/// Identity and configuration of one synthesis agent endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub agent_id: String,
    /// Gateway endpoint this agent's requests are routed to.
    pub endpoint_ref: String,
    pub prompt_template_id: String,
    /// Agent ordinal; contiguous from 0 across a plan.
    pub m: usize,
}

/// Base seed plus the derivation rule for per-sample seeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSpec {
    pub base_seed: u64,
}

/// SplitMix64 finalizer (Steele et al.); the increment constant is the
/// 64-bit golden ratio 0x9E3779B97F4A7C15.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SeedSpec {
    pub fn new(base_seed: u64) -> Self {
        Self { base_seed }
    }

    /// Derive the sample seed for a grid cell.
    ///
    /// Bit-exact rule: absorb `n`, `m`, `k` in order into a SplitMix64
    /// finalizer chain seeded with `base_seed`:
    ///
    /// ```text
    /// h0 = mix64(base_seed)
    /// h1 = mix64(h0 ^ n)
    /// h2 = mix64(h1 ^ m)
    /// h3 = mix64(h2 ^ k)   // derived seed
    /// ```
    ///
    /// Deterministic across runs and platforms.
    pub fn derive(&self, idx: SampleIndex) -> u64 {
        let h = mix64(self.base_seed);
        let h = mix64(h ^ idx.n as u64);
        let h = mix64(h ^ idx.m as u64);
        mix64(h ^ idx.k as u64)
    }
}

/// Deterministic value stream for mock backends; same mixing constants
/// as [`SeedSpec::derive`].
pub fn mix_values(seed: u64, salt: u64) -> u64 {
    mix64(seed ^ mix64(salt))
}

/// Score coefficients for CoT selection and batch selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreWeights {
    pub lambda_k: f64,
    pub lambda_alpha: f64,
    pub lambda_beta: f64,
    pub lambda_gamma: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        Self {
            lambda_k: 1.0,
            lambda_alpha: 2.0,
            lambda_beta: 1.0,
            lambda_gamma: 1.0,
        }
    }
}

impl ScoreWeights {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("lambda_k", self.lambda_k),
            ("lambda_alpha", self.lambda_alpha),
            ("lambda_beta", self.lambda_beta),
            ("lambda_gamma", self.lambda_gamma),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        Ok(())
    }
}

/// One fully scored candidate: the generated CoT and answer at a grid
/// cell plus every per-candidate evaluation result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    #[serde(flatten)]
    pub index: SampleIndex,
    pub agent_id: String,
    pub seed: u64,
    pub cot_text: String,
    pub predicted_answer: String,
    /// Endpoint never produced a completion for this cell.
    pub generation_failed: bool,
    /// Judge verdict on the predicted answer against gold.
    pub judge_ok: bool,
    /// `exact_normalized` or `llm`; absent when the candidate was never judged.
    pub judge_method: Option<String>,
    /// Judge endpoint was needed but unavailable; scored inconsistent.
    pub judge_flagged: bool,
    /// Answer the player produced when aided by this CoT.
    pub player_answer: String,
    /// Sequence confidence of the player's answer; `None` when the
    /// player run failed (excluded from mean computations downstream).
    pub player_confidence: Option<f64>,
    /// Judge verdict on the player's CoT-aided answer against gold.
    pub player_judge_ok: bool,
    /// Player endpoint failed after retries for this cell.
    pub player_failed: bool,
    /// Rationale ratio in [0, 1]; `None` when extraction failed or was
    /// never attempted (judge-rejected candidates are not extracted).
    pub rationale_ratio: Option<f64>,
    /// Extractor endpoint was needed but unavailable.
    pub ratio_flagged: bool,
    /// Reflection trigger-token occurrences in the CoT.
    pub aha_count: usize,
}

impl Candidate {
    /// Placeholder for a grid cell whose generation failed outright.
    pub fn failed(index: SampleIndex, agent_id: &str, seed: u64) -> Self {
        Self {
            index,
            agent_id: agent_id.to_string(),
            seed,
            cot_text: String::new(),
            predicted_answer: String::new(),
            generation_failed: true,
            judge_ok: false,
            judge_method: None,
            judge_flagged: false,
            player_answer: String::new(),
            player_confidence: None,
            player_judge_ok: false,
            player_failed: false,
            rationale_ratio: None,
            ratio_flagged: false,
            aha_count: 0,
        }
    }

    /// Selection score `phi + lambda_k * r` with missing parts scored 0.
    pub fn selection_score(&self, weights: &ScoreWeights) -> f64 {
        let phi = self.player_confidence.unwrap_or(0.0);
        let r = self.rationale_ratio.unwrap_or(0.0);
        phi + weights.lambda_k * r
    }
}

/// The winning (agent, sample) choice for one instance with its score
/// breakdown; one of these becomes one refined-dataset record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSelection {
    pub instance_id: String,
    pub chosen_m: usize,
    pub chosen_k: usize,
    pub chosen_cot: String,
    /// Per-agent count of answer-correct candidates, indexed by `m`.
    pub per_agent_a: Vec<usize>,
    /// Per-agent count of player-validated candidates, indexed by `m`.
    pub per_agent_v: Vec<usize>,
    /// `phi + lambda_k * r` at the winner.
    pub chosen_score: f64,
    /// Winner was picked by the A>0 fallback because the V/A leader had
    /// no correct candidate.
    pub fallback_used: bool,
}

/// Per-instance batch-selection score breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchScore {
    #[serde(rename = "id")]
    pub instance_id: String,
    /// Correct CoT-aided player answers over the full grid.
    pub alpha: i64,
    /// Correct CoT-free player answers over the full grid.
    pub alpha_tilde: i64,
    pub delta_alpha: i64,
    /// Player confidence at the winning CoT.
    pub beta_star: f64,
    /// Mean CoT-free confidence (failed runs excluded).
    pub beta_tilde_mean: f64,
    pub delta_beta: f64,
    /// `+1` if the winner's player answer was correct, else `-1`.
    pub gamma_star: f64,
    pub gamma_tilde_mean: f64,
    pub delta_gamma: f64,
    /// `lambda_alpha * delta_alpha + lambda_beta * delta_beta + lambda_gamma * delta_gamma`.
    pub s: f64,
    /// CoT-free runs excluded from the means because they failed.
    pub free_runs_excluded: usize,
}

impl BatchScore {
    pub fn recompute_s(&self, weights: &ScoreWeights) -> f64 {
        weights.lambda_alpha * self.delta_alpha as f64
            + weights.lambda_beta * self.delta_beta
            + weights.lambda_gamma * self.delta_gamma
    }
}
