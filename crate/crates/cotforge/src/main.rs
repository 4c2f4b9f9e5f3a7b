//! Thin CLI over the cotforge library: one subcommand per pipeline
//! stage. Progress goes to stderr; machine-readable artifacts go to
//! files in the run directory.

use std::collections::HashMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cotforge::config::{CliOverrides, ConfigError, FileConfig, RunConfig};
use cotforge::dataset::{self, DataError};
use cotforge::pipeline::{Pipeline, PipelineError};
use cotforge::CancelToken;

/// Exit codes per error class.
mod exit {
    pub const CONFIG: u8 = 2;
    pub const FATAL_ENDPOINT: u8 = 3;
    pub const INCOMPLETE_GRID: u8 = 4;
    pub const MISSING_RUNS: u8 = 5;
    pub const EMPTY: u8 = 6;
    pub const CORRUPT: u8 = 7;
    pub const INTERRUPTED: u8 = 8;
    pub const OTHER: u8 = 1;
}

#[derive(Parser)]
#[command(name = "cotforge", version, about = "Synthesize and select chain-of-thought training data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonFlags {
    /// TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Raw corpus JSONL ({id, query, image, answer} per line).
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Run directory for checkpoints and artifacts.
    #[arg(long)]
    run_dir: Option<PathBuf>,
    /// Selection ratio in (0, 1].
    #[arg(long)]
    eta: Option<f64>,
    /// Comma-separated eta values; emits one refined file per value.
    #[arg(long)]
    eta_sweep: Option<String>,
    /// Score weights as "lambda_k,lambda_alpha,lambda_beta,lambda_gamma".
    #[arg(long)]
    weights: Option<String>,
    /// Worker threads for endpoint fan-out.
    #[arg(long)]
    concurrency: Option<usize>,
    /// Base seed for the sample grid.
    #[arg(long)]
    base_seed: Option<u64>,
    /// Samples per agent per instance.
    #[arg(long)]
    k: Option<usize>,
    /// Route every role to the built-in deterministic mock backend.
    #[arg(long)]
    mock: bool,
    /// Start over instead of resuming from checkpoints.
    #[arg(long)]
    no_resume: bool,
    /// Validate config and print the grid without any endpoint call.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Stage I: generate the N*M*K candidate grid.
    Synth(CommonFlags),
    /// Stage II: judge, probe, extract, and pick one CoT per instance.
    SelectInstance(CommonFlags),
    /// Stage III: score instances and cut the top-eta subset.
    SelectBatch(CommonFlags),
    /// All stages in order, resumable at each boundary.
    Run(CommonFlags),
    /// Print the quality report for a record file.
    Stats {
        /// A dcot or dcot_prime record file.
        path: PathBuf,
        /// Candidate file for CoT-validity computation.
        #[arg(long)]
        candidates: Option<PathBuf>,
        /// Trigger tokens counted as reflection markers.
        #[arg(long, value_delimiter = ',')]
        lexicon: Option<Vec<String>>,
    },
}

fn overrides(flags: &CommonFlags) -> Result<CliOverrides, ConfigError> {
    Ok(CliOverrides {
        corpus: flags.corpus.clone(),
        run_dir: flags.run_dir.clone(),
        eta: flags.eta,
        eta_sweep: flags
            .eta_sweep
            .as_deref()
            .map(RunConfig::parse_eta_sweep)
            .transpose()?,
        weights: flags.weights.as_deref().map(RunConfig::parse_weights).transpose()?,
        concurrency: flags.concurrency,
        base_seed: flags.base_seed,
        k: flags.k,
        mock: flags.mock,
        resume: !flags.no_resume,
        dry_run: flags.dry_run,
    })
}

fn build_pipeline(flags: &CommonFlags) -> Result<Pipeline, PipelineError> {
    let file: Option<FileConfig> = flags
        .config
        .as_deref()
        .map(RunConfig::load)
        .transpose()?;
    let cfg = RunConfig::resolve(file, &overrides(flags)?)?;
    Pipeline::new(cfg)
}

fn exit_code_for(err: &PipelineError) -> u8 {
    match err {
        PipelineError::Config(_) => exit::CONFIG,
        PipelineError::Synthesis(cotforge::synthesis::SynthesisError::FatalEndpoint { .. }) => {
            exit::FATAL_ENDPOINT
        }
        PipelineError::IncompleteGrid { .. } => exit::INCOMPLETE_GRID,
        PipelineError::Batch(cotforge::batch_select::BatchError::MissingRuns { .. }) => {
            exit::MISSING_RUNS
        }
        PipelineError::Batch(cotforge::batch_select::BatchError::EmptyInput) => exit::EMPTY,
        PipelineError::Data(DataError::EmptyFile { .. }) => exit::EMPTY,
        PipelineError::Data(
            DataError::SchemaMismatch { .. }
            | DataError::CorruptLine { .. }
            | DataError::CorruptCheckpoint { .. },
        ) => exit::CORRUPT,
        PipelineError::Interrupted => exit::INTERRUPTED,
        _ => exit::OTHER,
    }
}

fn run_stage(flags: &CommonFlags, stage: &str) -> Result<(), PipelineError> {
    let pipeline = build_pipeline(flags)?;
    if flags.dry_run {
        let (n, m, k) = pipeline.dry_run();
        println!(
            "dry-run ok: corpus {} instances x {m} agents x {k} samples = {} grid cells",
            n,
            n * m * k
        );
        return Ok(());
    }
    let cancel = CancelToken::new();
    match stage {
        "synth" => {
            let written = pipeline.stage_synth(&cancel)?;
            eprintln!("synth complete: {written} new records");
        }
        "select-instance" => {
            pipeline.stage_synth(&cancel)?;
            let (kept, notes) = pipeline.stage_instance_select(&cancel)?;
            eprintln!("select-instance complete: {kept} records, {notes} report entries");
        }
        "select-batch" => {
            let (scores, cut) = pipeline.stage_batch_select()?;
            eprintln!(
                "select-batch complete: {} scored, {} kept",
                scores.len(),
                cut.n_prime
            );
        }
        "run" => {
            let summary = pipeline.run_all(&cancel)?;
            eprintln!(
                "run complete: {} candidates synthesized, {} selected, {} excluded, {} refined",
                summary.synthesized, summary.dcot_records, summary.excluded, summary.refined_records
            );
            if let Some(stats) = summary.stats {
                print_stats(&stats);
            }
        }
        _ => unreachable!(),
    }
    Ok(())
}

fn print_stats(report: &dataset::StatsReport) {
    println!("{}", serde_json::to_string_pretty(report).expect("stats serialize"));
    let validity = report
        .cot_validity
        .map(|v| format!("{v:.4}"))
        .unwrap_or_else(|| "n/a (no candidate file)".to_string());
    eprintln!();
    eprintln!("{:<28} {:>12}", "metric", "value");
    eprintln!("{:<28} {:>12}", "records", report.total_records);
    eprintln!("{:<28} {:>12.2}", "mean CoT length (words)", report.mean_cot_length_units);
    eprintln!("{:<28} {:>12.2}", "stddev CoT length", report.stddev_cot_length_units);
    eprintln!("{:<28} {:>12.4}", "mean aha count", report.mean_aha);
    eprintln!("{:<28} {:>12.4}", "mean rationale ratio", report.mean_rationale_ratio);
    eprintln!("{:<28} {:>12}", "CoT validity", validity);
    for (agent, count) in &report.per_agent_counts {
        eprintln!("{:<28} {:>12}", format!("records from {agent}"), count);
    }
}

fn run_stats(path: &PathBuf, candidates: Option<&PathBuf>, lexicon: Option<Vec<String>>) -> Result<(), PipelineError> {
    let lexicon = lexicon.unwrap_or_else(|| vec!["wait".to_string()]);
    let validity = match candidates {
        None => None,
        Some(cpath) => {
            let cands: Vec<cotforge::model::Candidate> =
                dataset::load_checkpoint(cpath, "candidates")?;
            let dcot: Vec<dataset::DcotRecord> = match dataset::read_records(path, "dcot") {
                Ok(r) => r,
                Err(_) => Vec::new(),
            };
            let mut lookup: HashMap<String, bool> = HashMap::new();
            for record in &dcot {
                let ok = cands
                    .iter()
                    .find(|c| {
                        c.agent_id == record.agent_id
                            && c.index.k == record.k
                            && c.cot_text == record.cot
                    })
                    .map(|c| c.player_judge_ok)
                    .unwrap_or(false);
                lookup.insert(record.id.clone(), ok);
            }
            Some(lookup)
        }
    };
    let report = dataset::stats_for_file(path, &lexicon, validity.as_ref())?;
    print_stats(&report);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(flags) => run_stage(flags, "synth"),
        Command::SelectInstance(flags) => run_stage(flags, "select-instance"),
        Command::SelectBatch(flags) => run_stage(flags, "select-batch"),
        Command::Run(flags) => run_stage(flags, "run"),
        Command::Stats { path, candidates, lexicon } => {
            run_stats(path, candidates.as_ref(), lexicon.clone())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
