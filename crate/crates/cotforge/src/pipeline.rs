//! Stage orchestration: synthesis, instance selection, batch selection,
//! and stats over a run directory, with per-record checkpointing and
//! resume at every stage boundary.
//!
//! Endpoint-bound stages (I and II) checkpoint each record before it
//! counts as done and skip completed cells on resume; stage III and
//! stats are pure local computation and always recompute, emitting
//! final artifacts atomically so re-runs are byte-identical.

use std::collections::{HashMap, HashSet};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::batch_select::{self, BatchError, SelectionCut};
use crate::config::RunConfig;
use crate::dataset::{self, files, DataError, DcotRecord, StatsReport};
use crate::demo;
use crate::exec::{fan_out, CancelToken};
use crate::gateway::{GatewayError, ModelGateway};
use crate::instance_select::{self, SelectError};
use crate::judging::{Judge, JudgeMethod};
use crate::model::{AgentProfile, BatchScore, Candidate, Instance, InstanceSelection, SampleIndex, SeedSpec};
use crate::prompts::{self, TemplateRegistry};
use crate::rationale::{count_aha, Extractor};
use crate::synthesis::{self, SynthesisError, SynthesisPlan};
use crate::validity::{Player, PlayerRun};

/// One CoT-free player run as checkpointed on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeRunRecord {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub seed: u64,
    pub answer: String,
    pub confidence: Option<f64>,
    pub judged_ok: bool,
    pub failed: bool,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error(transparent)]
    Select(#[from] SelectError),
    #[error(transparent)]
    Batch(#[from] BatchError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("{stage}: grid incomplete, expected {expected} records, found {found}; run the earlier stage first")]
    IncompleteGrid {
        stage: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("run interrupted; checkpoints were flushed and the run can be resumed")]
    Interrupted,
}

/// Stage-by-stage record counts for reporting.
#[derive(Debug, Clone, Default, Serialize)]
pub struct RunSummary {
    pub synthesized: usize,
    pub dcot_records: usize,
    pub excluded: usize,
    pub refined_records: usize,
    pub stats: Option<StatsReport>,
}

pub struct Pipeline {
    cfg: RunConfig,
    gateway: ModelGateway,
    registry: TemplateRegistry,
    instances: Vec<Instance>,
    agents: Vec<AgentProfile>,
    judge_endpoint: String,
    player_endpoint: String,
    extractor_endpoint: String,
}

impl Pipeline {
    /// Load the corpus, build the template registry, and register every
    /// endpoint (scripted demo mocks under `--mock`, HTTP otherwise).
    pub fn new(cfg: RunConfig) -> Result<Self, PipelineError> {
        let instances = dataset::load_corpus(&cfg.corpus)?;
        std::fs::create_dir_all(&cfg.run_dir).map_err(|e| DataError::Io {
            path: cfg.run_dir.clone(),
            source: e,
        })?;

        let mut registry = TemplateRegistry::default();
        for (id, path) in &cfg.templates {
            registry
                .load_file(id.clone(), path)
                .map_err(crate::config::ConfigError::Invalid)?;
        }

        let mut gateway = ModelGateway::new();
        if cfg.audit {
            gateway = gateway.with_audit_log(&cfg.run_dir.join(files::AUDIT))?;
        }

        let agents: Vec<AgentProfile> = cfg
            .agents
            .iter()
            .enumerate()
            .map(|(m, a)| AgentProfile {
                agent_id: a.id.clone(),
                endpoint_ref: a.id.clone(),
                prompt_template_id: a
                    .template
                    .clone()
                    .unwrap_or_else(|| prompts::SYNTH_DEFAULT.to_string()),
                m,
            })
            .collect();

        let (judge_endpoint, player_endpoint, extractor_endpoint) = if cfg.mock {
            demo::register_demo(&gateway, &agents.iter().map(|a| a.endpoint_ref.clone()).collect::<Vec<_>>());
            (
                demo::JUDGE_ENDPOINT.to_string(),
                demo::PLAYER_ENDPOINT.to_string(),
                demo::EXTRACTOR_ENDPOINT.to_string(),
            )
        } else {
            for (agent, profile) in cfg.agents.iter().zip(&agents) {
                let http = agent.endpoint.to_http(&format!("agent '{}'", agent.id))?;
                gateway.register_http(profile.endpoint_ref.clone(), http)?;
            }
            gateway.register_http("judge", cfg.judge.to_http("judge")?)?;
            gateway.register_http("player", cfg.player.to_http("player")?)?;
            gateway.register_http("extractor", cfg.extractor.to_http("extractor")?)?;
            ("judge".to_string(), "player".to_string(), "extractor".to_string())
        };

        Ok(Self {
            cfg,
            gateway,
            registry,
            instances,
            agents,
            judge_endpoint,
            player_endpoint,
            extractor_endpoint,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn gateway(&self) -> &ModelGateway {
        &self.gateway
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    /// (N, M, K) of this run.
    pub fn grid(&self) -> (usize, usize, usize) {
        (self.instances.len(), self.agents.len(), self.cfg.k)
    }

    fn grid_size(&self) -> usize {
        self.instances.len() * self.agents.len() * self.cfg.k
    }

    fn path(&self, name: &str) -> PathBuf {
        self.cfg.run_dir.join(name)
    }

    fn seed_spec(&self) -> SeedSpec {
        SeedSpec::new(self.cfg.base_seed)
    }

    fn judge(&self) -> Judge<'_> {
        Judge::new(
            &self.gateway,
            self.judge_endpoint.clone(),
            self.registry.get(prompts::JUDGE_DEFAULT).expect("shipped template").clone(),
            self.cfg.retry.clone(),
        )
    }

    fn player(&self) -> Player<'_> {
        Player::new(
            &self.gateway,
            self.player_endpoint.clone(),
            self.registry.get(prompts::PLAYER_WITH_COT).expect("shipped template").clone(),
            self.registry.get(prompts::PLAYER_FREE).expect("shipped template").clone(),
            self.cfg.retry.clone(),
        )
    }

    fn extractor(&self) -> Extractor<'_> {
        Extractor::new(
            &self.gateway,
            self.extractor_endpoint.clone(),
            self.registry.get(prompts::EXTRACTOR_DEFAULT).expect("shipped template").clone(),
            self.cfg.retry.clone(),
        )
    }

    /// Stage I: generate every missing grid cell into
    /// `candidates_raw.jsonl`. Returns the number of newly written
    /// records; a complete checkpoint makes this a no-op.
    pub fn stage_synth(&self, cancel: &CancelToken) -> Result<usize, PipelineError> {
        let raw_path = self.path(files::CANDIDATES_RAW);
        let completed = if self.cfg.resume {
            dataset::checkpoint_resume(&self.cfg.run_dir)?
        } else {
            HashSet::new()
        };
        if completed.len() >= self.grid_size() {
            eprintln!("synth: checkpoint already complete ({} records)", completed.len());
            return Ok(0);
        }
        let mut writer = if self.cfg.resume {
            dataset::RecordWriter::open_or_create(&raw_path, "candidates_raw")?
        } else {
            dataset::RecordWriter::create(&raw_path, "candidates_raw")?
        };
        let plan = SynthesisPlan {
            instances: self.instances.clone(),
            agents: self.agents.clone(),
            k: self.cfg.k,
            seed_spec: self.seed_spec(),
            concurrency: self.cfg.concurrency,
            policy: self.cfg.retry.clone(),
        };
        let mut written = 0usize;
        let total = self.grid_size() - completed.len();
        synthesis::synthesize(&plan, &self.gateway, &self.registry, &completed, cancel, |c| {
            writer.append(c).map_err(|e| e.to_string())?;
            written += 1;
            if written % 50 == 0 || written == total {
                eprintln!("synth: {written}/{total} new records");
            }
            Ok(())
        })
        .map_err(|e| match e {
            SynthesisError::Interrupted => PipelineError::Interrupted,
            other => PipelineError::Synthesis(other),
        })?;
        Ok(written)
    }

    fn load_raw_grid(&self) -> Result<Vec<crate::synthesis::RawCandidate>, PipelineError> {
        let raw: Vec<crate::synthesis::RawCandidate> =
            dataset::load_checkpoint(&self.path(files::CANDIDATES_RAW), "candidates_raw")?;
        let distinct: HashSet<SampleIndex> = raw.iter().map(|c| c.index).collect();
        if distinct.len() != self.grid_size() {
            return Err(PipelineError::IncompleteGrid {
                stage: "select-instance",
                expected: self.grid_size(),
                found: distinct.len(),
            });
        }
        let mut seen = HashSet::new();
        let mut grid: Vec<_> = raw.into_iter().filter(|c| seen.insert(c.index)).collect();
        grid.sort_by_key(|c| c.index);
        Ok(grid)
    }

    /// Score one generated candidate: judge the answer, probe with the
    /// player, extract the rationale when the answer is correct.
    fn score_candidate(&self, instance: &Instance, raw: &crate::synthesis::RawCandidate) -> Candidate {
        if raw.generation_failed {
            return Candidate::failed(raw.index, &raw.agent_id, raw.seed);
        }
        let judge = self.judge();
        let gold = &instance.gold_answer;

        let mut judge_flagged = false;
        // An empty CoT can never be selected; skip judging it.
        let (judge_ok, judge_method) = if raw.cot_text.trim().is_empty() {
            (false, None)
        } else {
            match judge.judge(&raw.predicted_answer, gold) {
                Ok(v) => (v.consistent, Some(v.method)),
                Err(_) => {
                    judge_flagged = true;
                    (false, Some(JudgeMethod::Llm))
                }
            }
        };

        let (player_answer, player_confidence, player_judge_ok, player_failed) =
            if raw.cot_text.trim().is_empty() {
                (String::new(), None, false, false)
            } else {
                match self.player().play_with_cot(instance, raw.index, &raw.cot_text, raw.seed) {
                    Ok(run) => {
                        let ok = match judge.judge(&run.answer_text, gold) {
                            Ok(v) => v.consistent,
                            Err(_) => {
                                judge_flagged = true;
                                false
                            }
                        };
                        (run.answer_text, run.confidence, ok, false)
                    }
                    Err(_) => (String::new(), None, false, true),
                }
            };

        let (rationale_ratio, ratio_flagged) = if judge_ok {
            match self.extractor().report(&raw.cot_text, raw.seed, &self.cfg.trigger_lexicon) {
                Ok(report) => (Some(report.ratio), false),
                Err(_) => (None, true),
            }
        } else {
            (None, false)
        };

        Candidate {
            index: raw.index,
            agent_id: raw.agent_id.clone(),
            seed: raw.seed,
            cot_text: raw.cot_text.clone(),
            predicted_answer: raw.predicted_answer.clone(),
            generation_failed: false,
            judge_ok,
            judge_method: judge_method.map(|m| match m {
                JudgeMethod::ExactNormalized => "exact_normalized".to_string(),
                JudgeMethod::Llm => "llm".to_string(),
            }),
            judge_flagged,
            player_answer,
            player_confidence,
            player_judge_ok,
            player_failed,
            rationale_ratio,
            ratio_flagged,
            aha_count: count_aha(&raw.cot_text, &self.cfg.trigger_lexicon),
        }
    }

    fn free_run(&self, instance: &Instance, n: usize, m: usize, k: usize) -> FreeRunRecord {
        let index = SampleIndex::new(n, m, k);
        let seed = self.seed_spec().derive(index);
        match self.player().play_without_cot(instance, index, seed) {
            Ok(run) => {
                let judged_ok = self
                    .judge()
                    .judge(&run.answer_text, &instance.gold_answer)
                    .map(|v| v.consistent)
                    .unwrap_or(false);
                FreeRunRecord {
                    n,
                    m,
                    k,
                    seed,
                    answer: run.answer_text,
                    confidence: run.confidence,
                    judged_ok,
                    failed: false,
                }
            }
            Err(_) => FreeRunRecord {
                n,
                m,
                k,
                seed,
                answer: String::new(),
                confidence: None,
                judged_ok: false,
                failed: true,
            },
        }
    }

    /// Stage II: judge, probe, and extract every candidate, run the
    /// CoT-free player grid, then select one CoT per instance. Emits
    /// `candidates.jsonl`, `player_free.jsonl`, `dcot.jsonl`, and
    /// `exclusions.jsonl`.
    pub fn stage_instance_select(&self, cancel: &CancelToken) -> Result<(usize, usize), PipelineError> {
        let raw_grid = self.load_raw_grid()?;
        let scored_path = self.path(files::CANDIDATES);
        let free_path = self.path(files::PLAYER_FREE);

        // Per-candidate scoring, checkpointed per record.
        let done: HashSet<SampleIndex> = if self.cfg.resume {
            dataset::indices_in(&scored_path, "candidates")?
        } else {
            HashSet::new()
        };
        let pending: Vec<&crate::synthesis::RawCandidate> =
            raw_grid.iter().filter(|c| !done.contains(&c.index)).collect();
        if !pending.is_empty() || !scored_path.exists() {
            let mut writer = if self.cfg.resume {
                dataset::RecordWriter::open_or_create(&scored_path, "candidates")?
            } else {
                dataset::RecordWriter::create(&scored_path, "candidates")?
            };
            let total = pending.len();
            let mut written = 0usize;
            fan_out(
                pending,
                self.cfg.concurrency,
                cancel,
                |raw| self.score_candidate(&self.instances[raw.index.n], raw),
                |candidate: Candidate| {
                    writer.append(&candidate)?;
                    written += 1;
                    if written % 50 == 0 || written == total {
                        eprintln!("select-instance: scored {written}/{total} candidates");
                    }
                    cancel.record_event();
                    Ok::<(), PipelineError>(())
                },
            )?;
            if cancel.is_cancelled() {
                return Err(PipelineError::Interrupted);
            }
        }

        // CoT-free player grid, same seeds, checkpointed per record.
        let done_free: HashSet<SampleIndex> = if self.cfg.resume {
            dataset::indices_in(&free_path, "player_free")?
        } else {
            HashSet::new()
        };
        let mut free_cells = Vec::new();
        for n in 0..self.instances.len() {
            for m in 0..self.agents.len() {
                for k in 0..self.cfg.k {
                    if !done_free.contains(&SampleIndex::new(n, m, k)) {
                        free_cells.push((n, m, k));
                    }
                }
            }
        }
        if !free_cells.is_empty() || !free_path.exists() {
            let mut writer = if self.cfg.resume {
                dataset::RecordWriter::open_or_create(&free_path, "player_free")?
            } else {
                dataset::RecordWriter::create(&free_path, "player_free")?
            };
            let total = free_cells.len();
            let mut written = 0usize;
            fan_out(
                free_cells,
                self.cfg.concurrency,
                cancel,
                |(n, m, k)| self.free_run(&self.instances[n], n, m, k),
                |record: FreeRunRecord| {
                    writer.append(&record)?;
                    written += 1;
                    if written % 50 == 0 || written == total {
                        eprintln!("select-instance: {written}/{total} CoT-free runs");
                    }
                    cancel.record_event();
                    Ok::<(), PipelineError>(())
                },
            )?;
            if cancel.is_cancelled() {
                return Err(PipelineError::Interrupted);
            }
        }

        // Deterministic selection from the completed checkpoints.
        let candidates = self.load_scored_grid()?;
        let outcome = instance_select::build_dcot(
            &self.instances,
            &candidates,
            self.agents.len(),
            self.cfg.k,
            &self.cfg.weights,
        )?;

        let dcot_records: Vec<DcotRecord> = outcome
            .selections
            .iter()
            .map(|(n, sel)| self.to_dcot_record(*n, sel, &candidates[*n]))
            .collect();
        dataset::write_records_atomic(&self.path(files::DCOT), "dcot", dcot_records.iter())?;
        dataset::write_records_atomic(
            &self.path(files::EXCLUSIONS),
            "exclusions",
            outcome.notes.iter(),
        )?;
        eprintln!(
            "select-instance: {} records, {} notes",
            dcot_records.len(),
            outcome.notes.len()
        );
        Ok((dcot_records.len(), outcome.notes.len()))
    }

    fn to_dcot_record(&self, n: usize, sel: &InstanceSelection, grid: &[Candidate]) -> DcotRecord {
        let instance = &self.instances[n];
        let winner = grid
            .iter()
            .find(|c| c.index.m == sel.chosen_m && c.index.k == sel.chosen_k)
            .expect("selection points into its own grid");
        DcotRecord {
            id: instance.instance_id.clone(),
            query: instance.query_text.clone(),
            image: instance.image_ref.clone(),
            answer: instance.gold_answer.clone(),
            cot: sel.chosen_cot.clone(),
            agent_id: self.agents[sel.chosen_m].agent_id.clone(),
            k: sel.chosen_k,
            phi: winner.player_confidence.unwrap_or(0.0),
            ratio: winner.rationale_ratio.unwrap_or(0.0),
        }
    }

    /// Candidates grouped per instance, each group sorted by (m, k).
    fn load_scored_grid(&self) -> Result<Vec<Vec<Candidate>>, PipelineError> {
        let mut all: Vec<Candidate> =
            dataset::load_checkpoint(&self.path(files::CANDIDATES), "candidates")?;
        let distinct: HashSet<SampleIndex> = all.iter().map(|c| c.index).collect();
        if distinct.len() != self.grid_size() {
            return Err(PipelineError::IncompleteGrid {
                stage: "select-instance",
                expected: self.grid_size(),
                found: distinct.len(),
            });
        }
        let mut seen = HashSet::new();
        all.retain(|c| seen.insert(c.index));
        all.sort_by_key(|c| c.index);
        let mut grouped: Vec<Vec<Candidate>> = vec![Vec::new(); self.instances.len()];
        for c in all {
            grouped[c.index.n].push(c);
        }
        Ok(grouped)
    }

    fn load_free_grid(&self) -> Result<Vec<Vec<FreeRunRecord>>, PipelineError> {
        let mut all: Vec<FreeRunRecord> =
            dataset::load_checkpoint(&self.path(files::PLAYER_FREE), "player_free")?;
        let distinct: HashSet<(usize, usize, usize)> = all.iter().map(|r| (r.n, r.m, r.k)).collect();
        if distinct.len() != self.grid_size() {
            return Err(PipelineError::IncompleteGrid {
                stage: "select-batch",
                expected: self.grid_size(),
                found: distinct.len(),
            });
        }
        let mut seen = HashSet::new();
        all.retain(|r| seen.insert((r.n, r.m, r.k)));
        all.sort_by_key(|r| (r.n, r.m, r.k));
        let mut grouped: Vec<Vec<FreeRunRecord>> = vec![Vec::new(); self.instances.len()];
        for r in all {
            grouped[r.n].push(r);
        }
        Ok(grouped)
    }

    /// Stage III: score every selected instance, rank, cut the top-eta
    /// subset, and emit `scores.jsonl` plus `dcot_prime.jsonl` (one per
    /// eta when sweeping). Pure local computation; always recomputed.
    pub fn stage_batch_select(&self) -> Result<(Vec<BatchScore>, SelectionCut), PipelineError> {
        let dcot: Vec<DcotRecord> = dataset::read_records(&self.path(files::DCOT), "dcot")?;
        let candidates = self.load_scored_grid()?;
        let free = self.load_free_grid()?;
        let ordinal: HashMap<&str, usize> = self
            .instances
            .iter()
            .enumerate()
            .map(|(n, i)| (i.instance_id.as_str(), n))
            .collect();
        let agent_ordinal: HashMap<&str, usize> =
            self.agents.iter().map(|a| (a.agent_id.as_str(), a.m)).collect();

        let grid = self.agents.len() * self.cfg.k;
        let mut scores = Vec::with_capacity(dcot.len());
        for record in &dcot {
            let n = *ordinal.get(record.id.as_str()).ok_or_else(|| {
                BatchError::UnknownId(record.id.clone())
            })?;
            let selection = InstanceSelection {
                instance_id: record.id.clone(),
                chosen_m: *agent_ordinal
                    .get(record.agent_id.as_str())
                    .ok_or_else(|| BatchError::UnknownId(record.agent_id.clone()))?,
                chosen_k: record.k,
                chosen_cot: record.cot.clone(),
                per_agent_a: Vec::new(),
                per_agent_v: Vec::new(),
                chosen_score: 0.0,
                fallback_used: false,
            };
            let free_runs: Vec<PlayerRun> = free[n]
                .iter()
                .map(|r| PlayerRun {
                    instance_id: record.id.clone(),
                    index: Some(SampleIndex::new(r.n, r.m, r.k)),
                    with_cot: false,
                    answer_text: r.answer.clone(),
                    confidence: r.confidence,
                    judge_ok: r.judged_ok,
                    failed: r.failed,
                })
                .collect();
            scores.push(batch_select::score_instance(
                &selection,
                &candidates[n],
                &free_runs,
                grid,
                &self.cfg.weights,
            )?);
        }

        let cut = batch_select::rank_and_cut(&scores, self.cfg.eta)?;
        if cut.n_prime == 0 {
            eprintln!(
                "select-batch: warning: eta {} floors to an empty cut over {} records",
                self.cfg.eta,
                scores.len()
            );
        }
        dataset::write_records_atomic(&self.path(files::SCORES), "scores", scores.iter())?;
        let refined = batch_select::build_dcot_prime(&dcot, &scores, &cut)?;
        dataset::write_records_atomic(&self.path(files::DCOT_PRIME), "dcot_prime", refined.iter())?;

        if let Some(sweep) = &self.cfg.eta_sweep {
            for &eta in sweep {
                let sweep_cut = batch_select::rank_and_cut(&scores, eta)?;
                let sweep_refined = batch_select::build_dcot_prime(&dcot, &scores, &sweep_cut)?;
                dataset::write_records_atomic(
                    &self.path(&format!("dcot_prime_eta{eta}.jsonl")),
                    "dcot_prime",
                    sweep_refined.iter(),
                )?;
            }
        }
        eprintln!(
            "select-batch: kept {}/{} records at eta {}",
            cut.n_prime,
            cut.ranked_ids.len(),
            self.cfg.eta
        );
        Ok((scores, cut))
    }

    /// Compute and persist the stats report for the selected dataset.
    pub fn stage_stats(&self) -> Result<StatsReport, PipelineError> {
        let dcot: Vec<DcotRecord> = dataset::read_records(&self.path(files::DCOT), "dcot")?;
        let validity = self.winner_validity()?;
        let report = dataset::compute_stats(
            &dcot,
            &self.cfg.trigger_lexicon,
            Some(&validity),
            &self.path(files::DCOT),
        )?;
        let rendered = serde_json::to_string_pretty(&report).expect("stats serialize");
        std::fs::write(self.path(files::STATS), rendered + "\n").map_err(|e| DataError::Io {
            path: self.path(files::STATS),
            source: e,
        })?;
        Ok(report)
    }

    /// Winner player verdict per instance id, for CoT-validity stats.
    fn winner_validity(&self) -> Result<HashMap<String, bool>, PipelineError> {
        let dcot: Vec<DcotRecord> = dataset::read_records(&self.path(files::DCOT), "dcot")?;
        let candidates = self.load_scored_grid()?;
        let ordinal: HashMap<&str, usize> = self
            .instances
            .iter()
            .enumerate()
            .map(|(n, i)| (i.instance_id.as_str(), n))
            .collect();
        let agent_ordinal: HashMap<&str, usize> =
            self.agents.iter().map(|a| (a.agent_id.as_str(), a.m)).collect();
        let mut out = HashMap::new();
        for record in &dcot {
            let n = ordinal[record.id.as_str()];
            let m = agent_ordinal[record.agent_id.as_str()];
            let ok = candidates[n]
                .iter()
                .find(|c| c.index.m == m && c.index.k == record.k)
                .map(|c| c.player_judge_ok)
                .unwrap_or(false);
            out.insert(record.id.clone(), ok);
        }
        Ok(out)
    }

    /// Run every stage in order; resumable at each boundary.
    pub fn run_all(&self, cancel: &CancelToken) -> Result<RunSummary, PipelineError> {
        let mut summary = RunSummary::default();
        summary.synthesized = self.stage_synth(cancel)?;
        let (kept, excluded) = self.stage_instance_select(cancel)?;
        summary.dcot_records = kept;
        summary.excluded = excluded;
        let (_, cut) = self.stage_batch_select()?;
        summary.refined_records = cut.n_prime;
        summary.stats = Some(self.stage_stats()?);
        Ok(summary)
    }

    /// Validate config and report the grid without touching any endpoint.
    pub fn dry_run(&self) -> (usize, usize, usize) {
        self.grid()
    }
}
