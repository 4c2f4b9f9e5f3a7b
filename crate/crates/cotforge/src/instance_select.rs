//! Hierarchical per-instance selection: rank agents by validated-CoT
//! count, break ties on answer-correct count then lowest ordinal, then
//! pick the best candidate of the winning agent by `phi + lambda_k * r`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Candidate, Instance, InstanceSelection, ScoreWeights};

/// Per-agent counts for one instance: `a` answer-correct candidates,
/// `v` candidates whose player run was judged correct.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentTally {
    pub m: usize,
    pub a: usize,
    pub v: usize,
}

/// Why an instance produced no selection, or a note on how it did.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "disposition", content = "reason")]
pub enum Disposition {
    /// No agent produced any answer-correct candidate.
    Excluded(String),
    /// The V/A leader had no correct candidate; selection fell back to
    /// the best agent with at least one.
    FallbackUsed(String),
}

/// One exclusion-report entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionNote {
    pub id: String,
    #[serde(flatten)]
    pub disposition: Disposition,
}

#[derive(Debug, Error)]
pub enum SelectError {
    #[error("instance '{instance_id}' grid incomplete: expected {expected} candidates, got {got}")]
    IncompleteGrid {
        instance_id: String,
        expected: usize,
        got: usize,
    },
    #[error("no agent produced a correct CoT")]
    NoEligibleAgent,
    #[error("every candidate of the selected agent is answer-incorrect")]
    NoCorrectCoT,
}

/// Sum judge and player verdicts per agent over one instance's full
/// candidate grid.
pub fn tally_agents(
    instance_id: &str,
    candidates: &[Candidate],
    m_count: usize,
    k_count: usize,
) -> Result<Vec<AgentTally>, SelectError> {
    let expected = m_count * k_count;
    if candidates.len() != expected {
        return Err(SelectError::IncompleteGrid {
            instance_id: instance_id.to_string(),
            expected,
            got: candidates.len(),
        });
    }
    let mut tallies: Vec<AgentTally> = (0..m_count).map(|m| AgentTally { m, a: 0, v: 0 }).collect();
    let mut seen = std::collections::HashSet::new();
    for c in candidates {
        if c.index.m >= m_count || c.index.k >= k_count || !seen.insert((c.index.m, c.index.k)) {
            return Err(SelectError::IncompleteGrid {
                instance_id: instance_id.to_string(),
                expected,
                got: candidates.len(),
            });
        }
        let t = &mut tallies[c.index.m];
        t.a += usize::from(c.judge_ok);
        t.v += usize::from(c.player_judge_ok);
    }
    Ok(tallies)
}

fn best_agent<'a>(tallies: impl Iterator<Item = &'a AgentTally>) -> Option<usize> {
    tallies
        .max_by(|x, y| {
            (x.v, x.a, std::cmp::Reverse(x.m)).cmp(&(y.v, y.a, std::cmp::Reverse(y.m)))
        })
        .map(|t| t.m)
}

/// Pick the winning agent: max by (V, then A, then lowest ordinal).
/// Returns the fallback winner alongside a flag when the leader has no
/// correct candidate, and `NoEligibleAgent` when no agent does.
pub fn select_agent(tallies: &[AgentTally]) -> Result<(usize, bool), SelectError> {
    let leader = best_agent(tallies.iter()).ok_or(SelectError::NoEligibleAgent)?;
    if tallies[leader].a > 0 {
        return Ok((leader, false));
    }
    let fallback = best_agent(tallies.iter().filter(|t| t.a > 0));
    match fallback {
        Some(m) => Ok((m, true)),
        None => Err(SelectError::NoEligibleAgent),
    }
}

/// Among the winning agent's answer-correct candidates, pick the argmax
/// of `phi + lambda_k * r`; ties resolve to the lowest sample ordinal.
pub fn select_cot<'a>(
    agent_candidates: impl Iterator<Item = &'a Candidate>,
    weights: &ScoreWeights,
) -> Result<&'a Candidate, SelectError> {
    agent_candidates
        .filter(|c| c.judge_ok)
        .max_by(|x, y| {
            x.selection_score(weights)
                .partial_cmp(&y.selection_score(weights))
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(y.index.k.cmp(&x.index.k))
        })
        .ok_or(SelectError::NoCorrectCoT)
}

/// Run the full hierarchy for one instance.
pub fn select_instance(
    instance: &Instance,
    candidates: &[Candidate],
    m_count: usize,
    k_count: usize,
    weights: &ScoreWeights,
) -> Result<(InstanceSelection, Option<SelectionNote>), SelectError> {
    let tallies = tally_agents(&instance.instance_id, candidates, m_count, k_count)?;
    let (chosen_m, fallback_used) = select_agent(&tallies)?;
    let winner = select_cot(candidates.iter().filter(|c| c.index.m == chosen_m), weights)?;
    let note = fallback_used.then(|| SelectionNote {
        id: instance.instance_id.clone(),
        disposition: Disposition::FallbackUsed(format!(
            "V/A leader had no correct candidate; selected agent {chosen_m}"
        )),
    });
    Ok((
        InstanceSelection {
            instance_id: instance.instance_id.clone(),
            chosen_m,
            chosen_k: winner.index.k,
            chosen_cot: winner.cot_text.clone(),
            per_agent_a: tallies.iter().map(|t| t.a).collect(),
            per_agent_v: tallies.iter().map(|t| t.v).collect(),
            chosen_score: winner.selection_score(weights),
            fallback_used,
        },
        note,
    ))
}

/// Outcome of selection over a whole corpus.
#[derive(Debug, Clone, Default)]
pub struct SelectionOutcome {
    /// `(instance ordinal, selection)` for every eligible instance.
    pub selections: Vec<(usize, InstanceSelection)>,
    /// Fallback notes and exclusions, in instance order.
    pub notes: Vec<SelectionNote>,
}

/// Select one CoT per instance across the corpus; instances with no
/// correct CoT anywhere are excluded and itemized.
pub fn build_dcot(
    instances: &[Instance],
    candidates_by_instance: &[Vec<Candidate>],
    m_count: usize,
    k_count: usize,
    weights: &ScoreWeights,
) -> Result<SelectionOutcome, SelectError> {
    let mut outcome = SelectionOutcome::default();
    for (n, instance) in instances.iter().enumerate() {
        match select_instance(instance, &candidates_by_instance[n], m_count, k_count, weights) {
            Ok((selection, note)) => {
                outcome.selections.push((n, selection));
                outcome.notes.extend(note);
            }
            Err(SelectError::NoEligibleAgent) | Err(SelectError::NoCorrectCoT) => {
                outcome.notes.push(SelectionNote {
                    id: instance.instance_id.clone(),
                    disposition: Disposition::Excluded(
                        "no agent produced an answer-correct CoT".into(),
                    ),
                });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SampleIndex;
    use proptest::prelude::*;

    fn candidate(m: usize, k: usize, judge_ok: bool, player_ok: bool, phi: f64, r: f64) -> Candidate {
        Candidate {
            index: SampleIndex::new(0, m, k),
            agent_id: format!("agent{m}"),
            seed: 0,
            cot_text: format!("cot {m} {k}"),
            predicted_answer: "42".into(),
            generation_failed: false,
            judge_ok,
            judge_method: None,
            judge_flagged: false,
            player_answer: "42".into(),
            player_confidence: Some(phi),
            player_judge_ok: player_ok,
            player_failed: false,
            rationale_ratio: Some(r),
            ratio_flagged: false,
            aha_count: 0,
        }
    }

    fn instance() -> Instance {
        Instance {
            instance_id: "q0".into(),
            query_text: "q".into(),
            image_ref: None,
            gold_answer: "42".into(),
        }
    }

    #[test]
    fn tally_hand_count() {
        // Agent 0 judges [1,1,0], player [1,0,0]; agent 1 judges
        // [1,1,1], player [1,1,0].
        let mut cs = Vec::new();
        for (k, (j, p)) in [(true, true), (true, false), (false, false)].iter().enumerate() {
            cs.push(candidate(0, k, *j, *p, 0.5, 0.5));
        }
        for (k, (j, p)) in [(true, true), (true, true), (true, false)].iter().enumerate() {
            cs.push(candidate(1, k, *j, *p, 0.5, 0.5));
        }
        let tallies = tally_agents("q0", &cs, 2, 3).unwrap();
        assert_eq!(tallies[0], AgentTally { m: 0, a: 2, v: 1 });
        assert_eq!(tallies[1], AgentTally { m: 1, a: 3, v: 2 });
    }

    #[test]
    fn tally_all_failed_is_zero() {
        let cs: Vec<_> = (0..3)
            .map(|k| {
                let mut c = Candidate::failed(SampleIndex::new(0, 0, k), "agent0", 0);
                c.index.k = k;
                c
            })
            .collect();
        let tallies = tally_agents("q0", &cs, 1, 3).unwrap();
        assert_eq!(tallies[0], AgentTally { m: 0, a: 0, v: 0 });
    }

    #[test]
    fn tally_single_correct_valid() {
        let cs = vec![candidate(0, 0, true, true, 0.9, 0.5)];
        let tallies = tally_agents("q0", &cs, 1, 1).unwrap();
        assert_eq!(tallies[0], AgentTally { m: 0, a: 1, v: 1 });
    }

    #[test]
    fn tally_rejects_incomplete_grid() {
        let cs = vec![candidate(0, 0, true, true, 0.9, 0.5)];
        assert!(matches!(
            tally_agents("q0", &cs, 1, 2),
            Err(SelectError::IncompleteGrid { .. })
        ));
    }

    #[test]
    fn agent_tie_on_v_breaks_on_a() {
        let tallies = [AgentTally { m: 0, a: 3, v: 2 }, AgentTally { m: 1, a: 5, v: 2 }];
        assert_eq!(select_agent(&tallies).unwrap(), (1, false));
    }

    #[test]
    fn v_dominates_a() {
        let tallies = [AgentTally { m: 0, a: 6, v: 1 }, AgentTally { m: 1, a: 1, v: 3 }];
        assert_eq!(select_agent(&tallies).unwrap(), (1, false));
    }

    #[test]
    fn identical_tallies_pick_lowest_ordinal() {
        let tallies = [AgentTally { m: 0, a: 2, v: 2 }, AgentTally { m: 1, a: 2, v: 2 }];
        assert_eq!(select_agent(&tallies).unwrap(), (0, false));
    }

    #[test]
    fn leader_without_correct_cot_falls_back() {
        // Agent 0 wins on V but has A=0; agent 1 can actually supply a CoT.
        let tallies = [AgentTally { m: 0, a: 0, v: 4 }, AgentTally { m: 1, a: 2, v: 1 }];
        assert_eq!(select_agent(&tallies).unwrap(), (1, true));
    }

    #[test]
    fn no_agent_with_correct_cot_is_ineligible() {
        let tallies = [AgentTally { m: 0, a: 0, v: 2 }, AgentTally { m: 1, a: 0, v: 0 }];
        assert!(matches!(select_agent(&tallies), Err(SelectError::NoEligibleAgent)));
    }

    #[test]
    fn cot_selection_weighs_phi_plus_ratio() {
        let w = ScoreWeights::default();
        let cs = vec![
            candidate(0, 0, true, true, 0.9, 0.2),
            candidate(0, 1, true, true, 0.7, 0.5),
        ];
        // Scores 1.1 vs 1.2: the second wins.
        let winner = select_cot(cs.iter(), &w).unwrap();
        assert_eq!(winner.index.k, 1);
    }

    #[test]
    fn single_survivor_wins_regardless() {
        let w = ScoreWeights::default();
        let cs = vec![
            candidate(0, 0, false, true, 0.99, 0.99),
            candidate(0, 1, true, false, 0.01, 0.0),
        ];
        assert_eq!(select_cot(cs.iter(), &w).unwrap().index.k, 1);
    }

    #[test]
    fn zero_lambda_reduces_to_argmax_phi() {
        let w = ScoreWeights { lambda_k: 0.0, ..Default::default() };
        let cs = vec![
            candidate(0, 0, true, true, 0.6, 1.0),
            candidate(0, 1, true, true, 0.8, 0.0),
        ];
        assert_eq!(select_cot(cs.iter(), &w).unwrap().index.k, 1);
    }

    #[test]
    fn score_tie_breaks_to_lowest_k() {
        let w = ScoreWeights::default();
        let cs = vec![
            candidate(0, 0, true, true, 0.5, 0.5),
            candidate(0, 1, true, true, 0.5, 0.5),
        ];
        assert_eq!(select_cot(cs.iter(), &w).unwrap().index.k, 0);
    }

    #[test]
    fn build_dcot_excludes_unsolvable_with_reasons() {
        let w = ScoreWeights::default();
        let mut instances = Vec::new();
        let mut grids = Vec::new();
        for i in 0..10 {
            instances.push(Instance {
                instance_id: format!("q{i}"),
                query_text: "q".into(),
                image_ref: None,
                gold_answer: "42".into(),
            });
            // Instances 3 and 7 are fully unsolvable.
            let solvable = i != 3 && i != 7;
            let mut grid = vec![
                candidate(0, 0, solvable, solvable, 0.9, 0.4),
                candidate(0, 1, false, false, 0.1, 0.1),
            ];
            for c in &mut grid {
                c.index.n = i;
            }
            grids.push(grid);
        }
        let outcome = build_dcot(&instances, &grids, 1, 2, &w).unwrap();
        assert_eq!(outcome.selections.len(), 8);
        assert_eq!(outcome.notes.len(), 2);
        assert!(outcome.notes.iter().all(|n| matches!(n.disposition, Disposition::Excluded(_))));
        assert_eq!(outcome.notes[0].id, "q3");
        assert_eq!(outcome.notes[1].id, "q7");
    }

    #[test]
    fn build_dcot_empty_corpus() {
        let outcome = build_dcot(&[], &[], 2, 3, &ScoreWeights::default()).unwrap();
        assert!(outcome.selections.is_empty());
        assert!(outcome.notes.is_empty());
    }

    #[test]
    fn selected_cot_is_always_answer_correct() {
        let w = ScoreWeights::default();
        let cs = vec![
            candidate(0, 0, false, true, 0.99, 0.99),
            candidate(0, 1, true, true, 0.2, 0.2),
            candidate(0, 2, true, false, 0.3, 0.1),
        ];
        let (sel, _) = select_instance(&instance(), &cs, 1, 3, &w).unwrap();
        assert!(cs
            .iter()
            .find(|c| c.index.k == sel.chosen_k)
            .unwrap()
            .judge_ok);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn permutation_invariance(seed in any::<u64>(), m_count in 1usize..4, k_count in 1usize..5) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut cs = Vec::new();
            for m in 0..m_count {
                for k in 0..k_count {
                    let h = crate::model::mix_values(seed, (m * 16 + k) as u64);
                    cs.push(candidate(
                        m,
                        k,
                        h % 3 != 0,
                        h % 2 == 0,
                        (h % 100) as f64 / 100.0,
                        (h % 7) as f64 / 7.0,
                    ));
                }
            }
            let w = ScoreWeights::default();
            let baseline = select_instance(&instance(), &cs, m_count, k_count, &w);
            let mut shuffled = cs.clone();
            shuffled.shuffle(&mut rng);
            let outcome = select_instance(&instance(), &shuffled, m_count, k_count, &w);
            match (baseline, outcome) {
                (Ok((a, _)), Ok((b, _))) => {
                    prop_assert_eq!(a.chosen_m, b.chosen_m);
                    prop_assert_eq!(a.chosen_k, b.chosen_k);
                }
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "permutation changed eligibility"),
            }
        }

        #[test]
        fn raising_winner_phi_keeps_selection(delta in 0.0f64..0.2) {
            let w = ScoreWeights::default();
            let mut cs = vec![
                candidate(0, 0, true, true, 0.7, 0.3),
                candidate(0, 1, true, true, 0.5, 0.3),
            ];
            let before = select_cot(cs.iter(), &w).unwrap().index.k;
            let i = cs.iter().position(|c| c.index.k == before).unwrap();
            cs[i].player_confidence = Some(cs[i].player_confidence.unwrap() + delta);
            prop_assert_eq!(select_cot(cs.iter(), &w).unwrap().index.k, before);
        }
    }

    #[test]
    fn raising_rival_past_winner_switches_selection() {
        let w = ScoreWeights::default();
        let mut cs = vec![
            candidate(0, 0, true, true, 0.7, 0.3),
            candidate(0, 1, true, true, 0.5, 0.3),
        ];
        assert_eq!(select_cot(cs.iter(), &w).unwrap().index.k, 0);
        cs[1].player_confidence = Some(0.71);
        assert_eq!(select_cot(cs.iter(), &w).unwrap().index.k, 1);
    }
}
