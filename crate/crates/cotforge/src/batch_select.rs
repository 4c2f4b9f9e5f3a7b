//! Batch-level selection: per-instance gain scores from CoT-aided vs
//! CoT-free player performance, then a top-eta cut over the ranked
//! corpus.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DcotPrimeRecord, DcotRecord};
use crate::model::{BatchScore, Candidate, InstanceSelection, ScoreWeights};
use crate::validity::PlayerRun;

/// A ranked corpus and its top-eta prefix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionCut {
    pub eta: f64,
    /// `floor(eta * N)`.
    pub n_prime: usize,
    /// All instance ids, best first.
    pub ranked_ids: Vec<String>,
    /// The first `n_prime` ranked ids.
    pub cut_ids: Vec<String>,
}

#[derive(Debug, Error)]
pub enum BatchError {
    #[error("instance '{instance_id}': {reason}")]
    MissingRuns { instance_id: String, reason: String },
    #[error("eta must be in (0, 1], got {0}")]
    InvalidEta(f64),
    #[error("cannot rank an empty score list")]
    EmptyInput,
    #[error("cut id '{0}' is not in the dataset")]
    UnknownId(String),
}

/// Compute the per-instance score breakdown.
///
/// `candidates` is the instance's full CoT-aided grid and `free_runs`
/// its CoT-free grid, both of size M*K. Failed free runs are excluded
/// from the confidence and reward means with renormalized denominators;
/// the gamma delta is computed with a single division so integer
/// tallies stay exact.
pub fn score_instance(
    selection: &InstanceSelection,
    candidates: &[Candidate],
    free_runs: &[PlayerRun],
    grid: usize,
    weights: &ScoreWeights,
) -> Result<BatchScore, BatchError> {
    let missing = |reason: String| BatchError::MissingRuns {
        instance_id: selection.instance_id.clone(),
        reason,
    };
    if candidates.len() != grid {
        return Err(missing(format!(
            "expected {grid} CoT-aided candidates, got {}",
            candidates.len()
        )));
    }
    if free_runs.len() != grid {
        return Err(missing(format!(
            "expected {grid} CoT-free runs, got {}",
            free_runs.len()
        )));
    }
    let winner = candidates
        .iter()
        .find(|c| c.index.m == selection.chosen_m && c.index.k == selection.chosen_k)
        .ok_or_else(|| missing("winning candidate absent from grid".into()))?;

    let alpha = candidates.iter().filter(|c| c.player_judge_ok).count() as i64;
    let alpha_tilde = free_runs.iter().filter(|r| r.judge_ok).count() as i64;
    let delta_alpha = alpha - alpha_tilde;

    let beta_star = winner.player_confidence.unwrap_or(0.0);
    let gamma_star = if winner.player_judge_ok { 1.0 } else { -1.0 };

    let valid: Vec<&PlayerRun> = free_runs
        .iter()
        .filter(|r| !r.failed && r.confidence.is_some())
        .collect();
    let free_runs_excluded = grid - valid.len();
    let count = valid.len() as f64;

    let (beta_tilde_mean, delta_beta, gamma_tilde_mean, delta_gamma) = if valid.is_empty() {
        (0.0, beta_star, 0.0, gamma_star)
    } else {
        let beta_sum: f64 = valid.iter().map(|r| r.confidence.unwrap()).sum();
        let gamma_sum: f64 = valid.iter().map(|r| if r.judge_ok { 1.0 } else { -1.0 }).sum();
        (
            beta_sum / count,
            beta_star - beta_sum / count,
            gamma_sum / count,
            (gamma_star * count - gamma_sum) / count,
        )
    };

    let s = weights.lambda_alpha * delta_alpha as f64
        + weights.lambda_beta * delta_beta
        + weights.lambda_gamma * delta_gamma;

    Ok(BatchScore {
        instance_id: selection.instance_id.clone(),
        alpha,
        alpha_tilde,
        delta_alpha,
        beta_star,
        beta_tilde_mean,
        delta_beta,
        gamma_star,
        gamma_tilde_mean,
        delta_gamma,
        s,
        free_runs_excluded,
    })
}

/// Rank by score descending and keep the top `floor(eta * N)`.
///
/// Ties break on higher gamma delta, then higher alpha delta, then
/// lexicographic instance id, so harder instances surface first.
pub fn rank_and_cut(scores: &[BatchScore], eta: f64) -> Result<SelectionCut, BatchError> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(BatchError::InvalidEta(eta));
    }
    if scores.is_empty() {
        return Err(BatchError::EmptyInput);
    }
    let mut order: Vec<&BatchScore> = scores.iter().collect();
    order.sort_by(|x, y| {
        y.s.total_cmp(&x.s)
            .then(y.delta_gamma.total_cmp(&x.delta_gamma))
            .then(y.delta_alpha.cmp(&x.delta_alpha))
            .then(x.instance_id.cmp(&y.instance_id))
    });
    let ranked_ids: Vec<String> = order.iter().map(|b| b.instance_id.clone()).collect();
    let n_prime = (eta * scores.len() as f64).floor() as usize;
    let cut_ids = ranked_ids[..n_prime].to_vec();
    Ok(SelectionCut {
        eta,
        n_prime,
        ranked_ids,
        cut_ids,
    })
}

/// Emit the refined dataset: the cut's records in their original corpus
/// order, each carrying its score breakdown.
pub fn build_dcot_prime(
    dcot: &[DcotRecord],
    scores: &[BatchScore],
    cut: &SelectionCut,
) -> Result<Vec<DcotPrimeRecord>, BatchError> {
    let by_id: HashMap<&str, &DcotRecord> =
        dcot.iter().map(|r| (r.id.as_str(), r)).collect();
    let score_by_id: HashMap<&str, &BatchScore> =
        scores.iter().map(|b| (b.instance_id.as_str(), b)).collect();
    let mut chosen = Vec::with_capacity(cut.cut_ids.len());
    for id in &cut.cut_ids {
        let record = *by_id.get(id.as_str()).ok_or_else(|| BatchError::UnknownId(id.clone()))?;
        let score = *score_by_id.get(id.as_str()).ok_or_else(|| BatchError::UnknownId(id.clone()))?;
        chosen.push(DcotPrimeRecord::new(record.clone(), score));
    }
    // Canonical emission order: ascending corpus ordinal.
    let ordinal: HashMap<&str, usize> =
        dcot.iter().enumerate().map(|(i, r)| (r.id.as_str(), i)).collect();
    chosen.sort_by_key(|r| ordinal[r.id.as_str()]);
    Ok(chosen)
}
