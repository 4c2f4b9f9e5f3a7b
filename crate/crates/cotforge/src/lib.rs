//! cotforge turns a raw multimodal question-answer corpus into a
//! refined long chain-of-thought fine-tuning dataset in three stages:
//!
//! 1. **Synthesis** — fan every instance out to M heterogeneous
//!    reasoning endpoints, K seeded samples each, collecting N*M*K
//!    (CoT, answer) candidates with per-record checkpointing.
//! 2. **Instance selection** — judge each answer against gold, probe
//!    each CoT with a small player model (answer confidence = exp of
//!    the mean token log-likelihood), score length appropriateness via
//!    an extractor, then pick one CoT per instance hierarchically:
//!    best agent by validated count, best sample by `phi + lambda_k*r`.
//! 3. **Batch selection** — score every selected instance by its
//!    accuracy, confidence, and correctness-reward gains over CoT-free
//!    baseline runs, rank, and keep the top `floor(eta * N)`.
//!
//! The library is the primary interface; the `cotforge` binary is a
//! thin wrapper exposing one subcommand per stage (`synth`,
//! `select-instance`, `select-batch`, `run`, `stats`).
//!
//! ## Examples
//!
//! Each major capability has a runnable example; all of them work
//! offline against the built-in deterministic mock backend:
//!
//! ```bash
//! cargo run -p cotforge --example synthesize_candidates
//! cargo run -p cotforge --example judge_answers
//! cargo run -p cotforge --example confidence_scoring
//! cargo run -p cotforge --example rationale_and_aha
//! cargo run -p cotforge --example pick_instance_winner
//! cargo run -p cotforge --example batch_scores_and_cut
//! cargo run -p cotforge --example full_pipeline
//! cargo run -p cotforge --example resume_after_interrupt
//! ```
//!
//! - **`synthesize_candidates`** — stage I fan-out over scripted agents
//! - **`judge_answers`** — normalization fast path and LLM fallback
//! - **`confidence_scoring`** — player runs and answer-span confidence
//! - **`rationale_and_aha`** — extraction, rationale ratio, trigger counts
//! - **`pick_instance_winner`** — tallies and hierarchical selection
//! - **`batch_scores_and_cut`** — gain scores, ranking, and the eta cut
//! - **`full_pipeline`** — all stages end to end on a demo corpus
//! - **`resume_after_interrupt`** — checkpointed restart mid-run

pub mod batch_select;
pub mod config;
pub mod dataset;
pub mod demo;
mod exec;
pub mod gateway;
pub mod instance_select;
pub mod judging;
pub mod model;
pub mod pipeline;
pub mod prompts;
pub mod rationale;
pub mod synthesis;
pub mod validity;

pub use exec::CancelToken;
