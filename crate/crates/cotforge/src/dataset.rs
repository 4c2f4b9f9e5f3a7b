//! Record files, checkpoint/resume, and the statistics report.
//!
//! Every file this pipeline writes is line-delimited JSON in UTF-8 with
//! no BOM: a first-line header object declaring the schema version and
//! record kind, then one record per line. Writers flush per line so a
//! torn write can only affect the final line; final artifacts are
//! written to a temp file and renamed into place.
//!
//! Field names and spellings are frozen in `docs/SCHEMAS.md`; any change
//! bumps [`SCHEMA_VERSION`].

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Seek, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Instance, SampleIndex};
use crate::rationale::{count_aha, length_units};

pub const SCHEMA_VERSION: &str = "1";

/// Standard file names inside a run directory.
pub mod files {
    pub const CANDIDATES_RAW: &str = "candidates_raw.jsonl";
    pub const CANDIDATES: &str = "candidates.jsonl";
    pub const PLAYER_FREE: &str = "player_free.jsonl";
    pub const DCOT: &str = "dcot.jsonl";
    pub const EXCLUSIONS: &str = "exclusions.jsonl";
    pub const SCORES: &str = "scores.jsonl";
    pub const DCOT_PRIME: &str = "dcot_prime.jsonl";
    pub const STATS: &str = "stats.json";
    pub const AUDIT: &str = "audit.jsonl";
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: expected schema {expected_version}/{expected_kind}, found {found}")]
    SchemaMismatch {
        path: PathBuf,
        expected_version: String,
        expected_kind: String,
        found: String,
    },
    #[error("{path}:{line}: corrupt record: {reason}")]
    CorruptLine {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{path}: corrupt checkpoint: {reason}")]
    CorruptCheckpoint { path: PathBuf, reason: String },
    #[error("{path}: file has no records")]
    EmptyFile { path: PathBuf },
    #[error("{path}: invalid corpus record at line {line}: {reason}")]
    InvalidCorpus {
        path: PathBuf,
        line: usize,
        reason: String,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    schema_version: String,
    kind: String,
}

/// One record of the refined per-instance dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcotRecord {
    pub id: String,
    pub query: String,
    pub image: Option<String>,
    pub answer: String,
    pub cot: String,
    pub agent_id: String,
    pub k: usize,
    pub phi: f64,
    pub ratio: f64,
}

/// A [`DcotRecord`] carrying its batch-score breakdown; the field
/// prefix is byte-compatible with the plain record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcotPrimeRecord {
    pub id: String,
    pub query: String,
    pub image: Option<String>,
    pub answer: String,
    pub cot: String,
    pub agent_id: String,
    pub k: usize,
    pub phi: f64,
    pub ratio: f64,
    pub alpha: i64,
    pub alpha_tilde: i64,
    pub delta_alpha: i64,
    pub delta_beta: f64,
    pub delta_gamma: f64,
    pub s: f64,
}

impl DcotPrimeRecord {
    pub fn new(record: DcotRecord, score: &crate::model::BatchScore) -> Self {
        Self {
            id: record.id,
            query: record.query,
            image: record.image,
            answer: record.answer,
            cot: record.cot,
            agent_id: record.agent_id,
            k: record.k,
            phi: record.phi,
            ratio: record.ratio,
            alpha: score.alpha,
            alpha_tilde: score.alpha_tilde,
            delta_alpha: score.delta_alpha,
            delta_beta: score.delta_beta,
            delta_gamma: score.delta_gamma,
            s: score.s,
        }
    }
}

/// Append-only record writer with a per-line flush.
pub struct RecordWriter<T> {
    writer: BufWriter<File>,
    path: PathBuf,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Serialize> RecordWriter<T> {
    /// Create the file (truncating any existing one) and write the header.
    pub fn create(path: &Path, kind: &str) -> Result<Self, DataError> {
        let file = File::create(path).map_err(|e| io_err(path, e))?;
        let mut writer = BufWriter::new(file);
        write_header(&mut writer, path, kind)?;
        Ok(Self {
            writer,
            path: path.to_path_buf(),
            _marker: std::marker::PhantomData,
        })
    }

    /// Open an existing checkpoint for appending, creating it when
    /// missing. A torn final line is truncated away first.
    pub fn open_or_create(path: &Path, kind: &str) -> Result<Self, DataError> {
        if !path.exists() {
            return Self::create(path, kind);
        }
        let keep = scan_checkpoint::<serde_json::Value>(path, kind)?.keep_bytes;
        let file = OpenOptions::new()
            .read(true)
            .write(true)
            .open(path)
            .map_err(|e| io_err(path, e))?;
        file.set_len(keep).map_err(|e| io_err(path, e))?;
        let mut file = file;
        file.seek(std::io::SeekFrom::End(0)).map_err(|e| io_err(path, e))?;
        Ok(Self {
            writer: BufWriter::new(file),
            path: path.to_path_buf(),
            _marker: std::marker::PhantomData,
        })
    }

    /// Append one record and flush it to the OS.
    pub fn append(&mut self, record: &T) -> Result<(), DataError> {
        serde_json::to_writer(&mut self.writer, record)
            .map_err(|e| io_err(&self.path, std::io::Error::other(e)))?;
        self.writer
            .write_all(b"\n")
            .and_then(|_| self.writer.flush())
            .map_err(|e| io_err(&self.path, e))?;
        Ok(())
    }
}

fn write_header(w: &mut impl Write, path: &Path, kind: &str) -> Result<(), DataError> {
    let header = Header {
        schema_version: SCHEMA_VERSION.to_string(),
        kind: kind.to_string(),
    };
    serde_json::to_writer(&mut *w, &header)
        .map_err(|e| io_err(path, std::io::Error::other(e)))?;
    w.write_all(b"\n")
        .and_then(|_| w.flush())
        .map_err(|e| io_err(path, e))
}

/// Write a complete record file atomically: temp file, then rename.
pub fn write_records_atomic<T: Serialize>(
    path: &Path,
    kind: &str,
    records: impl IntoIterator<Item = T>,
) -> Result<(), DataError> {
    let tmp = path.with_extension("tmp");
    {
        let mut writer = RecordWriter::create(&tmp, kind)?;
        for record in records {
            writer.append(&record)?;
        }
    }
    std::fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

fn check_header(path: &Path, kind: &str, line: &str) -> Result<(), DataError> {
    let mismatch = |found: String| DataError::SchemaMismatch {
        path: path.to_path_buf(),
        expected_version: SCHEMA_VERSION.to_string(),
        expected_kind: kind.to_string(),
        found,
    };
    let header: Header =
        serde_json::from_str(line).map_err(|_| mismatch(format!("unparseable header {line:?}")))?;
    if header.schema_version != SCHEMA_VERSION || header.kind != kind {
        return Err(mismatch(format!("{}/{}", header.schema_version, header.kind)));
    }
    Ok(())
}

/// Read all records, failing on the first corrupt line.
pub fn read_records<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<Vec<T>, DataError> {
    read_records_inner(path, kind, false).map(|(records, _)| records)
}

/// Read records, skipping corrupt lines; returns the 1-based line
/// numbers that were skipped.
pub fn read_records_tolerant<T: DeserializeOwned>(
    path: &Path,
    kind: &str,
) -> Result<(Vec<T>, Vec<usize>), DataError> {
    read_records_inner(path, kind, true)
}

fn read_records_inner<T: DeserializeOwned>(
    path: &Path,
    kind: &str,
    tolerant: bool,
) -> Result<(Vec<T>, Vec<usize>), DataError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if i == 0 {
            check_header(path, kind, &line)?;
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<T>(&line) {
            Ok(record) => records.push(record),
            Err(_) if tolerant => skipped.push(i + 1),
            Err(e) => {
                return Err(DataError::CorruptLine {
                    path: path.to_path_buf(),
                    line: i + 1,
                    reason: e.to_string(),
                })
            }
        }
    }
    Ok((records, skipped))
}

struct CheckpointScan<T> {
    records: Vec<T>,
    /// Byte length of the well-formed prefix (header + intact lines).
    keep_bytes: u64,
}

/// Read a checkpoint file: every line must parse except the final one,
/// which a crash may have torn; a corrupt line mid-file is an error.
fn scan_checkpoint<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<CheckpointScan<T>, DataError> {
    let raw = std::fs::read(path).map_err(|e| io_err(path, e))?;
    let text = String::from_utf8_lossy(&raw);
    let mut records = Vec::new();
    let mut keep_bytes = 0u64;
    let mut offset = 0usize;
    let mut line_no = 0usize;
    for segment in text.split_inclusive('\n') {
        line_no += 1;
        let complete = segment.ends_with('\n');
        let line = segment.trim_end_matches('\n');
        offset += segment.len();
        if line_no == 1 {
            if !complete {
                return Err(DataError::CorruptCheckpoint {
                    path: path.to_path_buf(),
                    reason: "torn header line".into(),
                });
            }
            check_header(path, kind, line)?;
            keep_bytes = offset as u64;
            continue;
        }
        if line.trim().is_empty() {
            if complete {
                keep_bytes = offset as u64;
            }
            continue;
        }
        match serde_json::from_str::<T>(line) {
            Ok(record) if complete => {
                records.push(record);
                keep_bytes = offset as u64;
            }
            // A parseable but unterminated final line is still torn:
            // the writer flushes the newline with the record.
            Ok(_) => {}
            Err(e) => {
                let is_final = offset == text.len();
                if !is_final {
                    return Err(DataError::CorruptCheckpoint {
                        path: path.to_path_buf(),
                        reason: format!("line {} corrupt mid-file: {e}", line_no),
                    });
                }
            }
        }
    }
    Ok(CheckpointScan { records, keep_bytes })
}

/// Load the intact records of a checkpoint file, ignoring a torn tail.
/// A missing file is an empty checkpoint.
pub fn load_checkpoint<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<Vec<T>, DataError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    Ok(scan_checkpoint(path, kind)?.records)
}

#[derive(Deserialize)]
struct IndexOnly {
    n: usize,
    m: usize,
    k: usize,
}

/// The set of grid cells whose records were fully flushed to
/// `candidates_raw.jsonl` in `run_dir`; synthesis skips these on resume.
pub fn checkpoint_resume(run_dir: &Path) -> Result<HashSet<SampleIndex>, DataError> {
    indices_in(&run_dir.join(files::CANDIDATES_RAW), "candidates_raw")
}

/// Completed cells of any index-keyed checkpoint file.
pub fn indices_in(path: &Path, kind: &str) -> Result<HashSet<SampleIndex>, DataError> {
    let records: Vec<IndexOnly> = load_checkpoint(path, kind)?;
    Ok(records
        .into_iter()
        .map(|r| SampleIndex::new(r.n, r.m, r.k))
        .collect())
}

/// Load the raw corpus: headerless JSONL of `{id, query, image, answer}`
/// (a header line is tolerated and skipped). Ids must be unique and
/// answers non-empty.
pub fn load_corpus(path: &Path) -> Result<Vec<Instance>, DataError> {
    #[derive(Deserialize)]
    struct DrawRecord {
        id: String,
        query: String,
        #[serde(default)]
        image: Option<String>,
        answer: String,
    }
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let mut instances = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        if i == 0 && serde_json::from_str::<Header>(&line).is_ok() {
            continue;
        }
        let record: DrawRecord = serde_json::from_str(&line).map_err(|e| DataError::CorruptLine {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        let invalid = |reason: &str| DataError::InvalidCorpus {
            path: path.to_path_buf(),
            line: i + 1,
            reason: reason.to_string(),
        };
        if record.id.trim().is_empty() {
            return Err(invalid("empty id"));
        }
        if record.answer.trim().is_empty() {
            return Err(invalid("empty answer"));
        }
        if !ids.insert(record.id.clone()) {
            return Err(invalid(&format!("duplicate id '{}'", record.id)));
        }
        instances.push(Instance {
            instance_id: record.id,
            query_text: record.query,
            image_ref: record.image,
            gold_answer: record.answer,
        });
    }
    if instances.is_empty() {
        return Err(DataError::EmptyFile { path: path.to_path_buf() });
    }
    Ok(instances)
}

/// Dataset quality report over a refined record file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub total_records: usize,
    pub mean_cot_length_units: f64,
    pub stddev_cot_length_units: f64,
    pub per_agent_counts: BTreeMap<String, usize>,
    pub mean_aha: f64,
    pub mean_rationale_ratio: f64,
    /// Fraction of records whose CoT-aided player run was judged
    /// correct; `None` when no per-candidate data was supplied.
    pub cot_validity: Option<f64>,
}

/// Compute the report over parsed records.
///
/// `validity_by_id` maps instance id to the winner's CoT-aided player
/// verdict; records missing from the map count as invalid.
pub fn compute_stats(
    records: &[DcotRecord],
    trigger_lexicon: &[String],
    validity_by_id: Option<&HashMap<String, bool>>,
    path: &Path,
) -> Result<StatsReport, DataError> {
    if records.is_empty() {
        return Err(DataError::EmptyFile { path: path.to_path_buf() });
    }
    let total = records.len();
    let lengths: Vec<f64> = records.iter().map(|r| length_units(&r.cot) as f64).collect();
    let mean = lengths.iter().sum::<f64>() / total as f64;
    let variance = lengths.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / total as f64;
    let mut per_agent_counts = BTreeMap::new();
    for r in records {
        *per_agent_counts.entry(r.agent_id.clone()).or_insert(0usize) += 1;
    }
    let mean_aha = records
        .iter()
        .map(|r| count_aha(&r.cot, trigger_lexicon) as f64)
        .sum::<f64>()
        / total as f64;
    let mean_rationale_ratio = records.iter().map(|r| r.ratio).sum::<f64>() / total as f64;
    let cot_validity = validity_by_id.map(|lookup| {
        records
            .iter()
            .filter(|r| lookup.get(&r.id).copied().unwrap_or(false))
            .count() as f64
            / total as f64
    });
    Ok(StatsReport {
        total_records: total,
        mean_cot_length_units: mean,
        stddev_cot_length_units: variance.sqrt(),
        per_agent_counts,
        mean_aha,
        mean_rationale_ratio,
        cot_validity,
    })
}

/// Read a record file (plain or refined) and compute its stats.
pub fn stats_for_file(
    path: &Path,
    trigger_lexicon: &[String],
    validity_by_id: Option<&HashMap<String, bool>>,
) -> Result<StatsReport, DataError> {
    let records: Vec<DcotRecord> = match read_records(path, "dcot") {
        Ok(r) => r,
        // A refined file parses as its own superset schema.
        Err(DataError::SchemaMismatch { .. }) => read_records::<DcotPrimeRecord>(path, "dcot_prime")?
            .into_iter()
            .map(|r| DcotRecord {
                id: r.id,
                query: r.query,
                image: r.image,
                answer: r.answer,
                cot: r.cot,
                agent_id: r.agent_id,
                k: r.k,
                phi: r.phi,
                ratio: r.ratio,
            })
            .collect(),
        Err(e) => return Err(e),
    };
    compute_stats(&records, trigger_lexicon, validity_by_id, path)
}
