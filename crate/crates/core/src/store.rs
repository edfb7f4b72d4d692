//! Line-oriented persistence for datasets, run records and reports.
//!
//! Run directory layout:
//!
//! ```text
//! run.json        RunConfig
//! records.jsonl   one ValidationRecord per line, appended in input order
//! report.json     ReliabilityReport
//! cache/          response cache (see backends::ResponseCache)
//! ```

use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::domain::{
    check_profiles, ConsensusPolicy, EndpointConfig, Question, ValidationRecord, ValidatorProfile,
    FORMAT_VERSION,
};
use crate::error::{ConfigError, StoreError};
use crate::stats::ReliabilityReport;

pub const RUN_CONFIG_FILE: &str = "run.json";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const CACHE_DIR: &str = "cache";

fn default_version() -> u32 {
    FORMAT_VERSION
}

fn default_parallelism() -> usize {
    4
}

fn check_version(path: &Path, found: u32) -> Result<(), StoreError> {
    if found != FORMAT_VERSION {
        return Err(StoreError::VersionMismatch {
            path: path.to_path_buf(),
            found,
            expected: FORMAT_VERSION,
        });
    }
    Ok(())
}

/// Validators, policy and execution settings for a run. Also the schema of
/// the user-facing config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default = "default_version")]
    pub format_version: u32,
    pub validators: Vec<ValidatorProfile>,
    pub policy: ConsensusPolicy,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn check(&self) -> Result<(), ConfigError> {
        if self.validators.len() < 2 {
            return Err(ConfigError::TooFewValidators(self.validators.len()));
        }
        check_profiles(&self.validators).map_err(ConfigError::Profile)?;
        self.policy.check_for(self.validators.len())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let read_err = |reason: String| ConfigError::Read {
            path: path.to_path_buf(),
            reason,
        };
        let text = fs::read_to_string(path).map_err(|e| read_err(e.to_string()))?;
        let config: RunConfig = serde_json::from_str(&text).map_err(|e| read_err(e.to_string()))?;
        if config.format_version != FORMAT_VERSION {
            return Err(read_err(format!(
                "unsupported format version {}",
                config.format_version
            )));
        }
        Ok(config)
    }

    pub fn validator_names(&self) -> Vec<String> {
        self.validators.iter().map(|v| v.name.clone()).collect()
    }

    /// Makes replay fixture paths and the cache directory absolute, taking
    /// relative ones from `base_dir`, so a stored copy works from anywhere.
    pub fn resolve_paths(&mut self, base_dir: &Path) -> std::io::Result<()> {
        let resolve = |p: &Path| std::path::absolute(base_dir.join(p));
        for v in &mut self.validators {
            if let EndpointConfig::Replay(r) = &mut v.endpoint {
                r.fixture = resolve(&r.fixture)?;
            }
        }
        if let Some(dir) = &self.cache_dir {
            self.cache_dir = Some(resolve(dir)?);
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct QuestionLine {
    #[serde(default = "default_version")]
    format_version: u32,
    #[serde(flatten)]
    question: Question,
}

/// Reads a JSON Lines dataset. Any malformed or invalid line rejects the
/// whole file.
pub fn load_questions(path: &Path) -> Result<Vec<Question>, StoreError> {
    let text = fs::read_to_string(path).map_err(|e| StoreError::io(path, e))?;
    parse_questions(path, &text)
}

pub fn parse_questions(path: &Path, text: &str) -> Result<Vec<Question>, StoreError> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: QuestionLine = serde_json::from_str(line).map_err(|e| StoreError::Parse {
            path: path.to_path_buf(),
            line: line_no,
            column: e.column(),
            reason: e.to_string(),
        })?;
        check_version(path, parsed.format_version)?;
        let q = parsed.question;
        if let Some(issue) = q.validate().into_iter().next() {
            return Err(StoreError::Invalid {
                path: path.to_path_buf(),
                line: line_no,
                field: issue.field().to_string(),
                reason: issue.to_string(),
            });
        }
        if !ids.insert(q.id.clone()) {
            return Err(StoreError::Invalid {
                path: path.to_path_buf(),
                line: line_no,
                field: "id".into(),
                reason: format!("duplicate question id {:?}", q.id),
            });
        }
        out.push(q);
    }
    Ok(out)
}

/// Writes questions as JSON Lines.
pub fn write_questions(path: &Path, questions: &[Question]) -> Result<(), StoreError> {
    let mut buf = String::new();
    for q in questions {
        buf.push_str(&serde_json::to_string(q)?);
        buf.push('\n');
    }
    fs::write(path, buf).map_err(|e| StoreError::io(path, e))
}

/// Records loaded from a possibly damaged `records.jsonl`.
#[derive(Debug, Clone)]
pub struct RecoveredRecords {
    pub records: Vec<ValidationRecord>,
    /// Byte offset of a truncated final line, if one was found.
    pub truncated_at: Option<u64>,
}

fn read_records(path: &Path) -> Result<RecoveredRecords, StoreError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(StoreError::io(path, e)),
    };
    let mut records = Vec::new();
    let mut offset = 0u64;
    let mut rest = text.as_str();
    let mut line_no = 0;
    while !rest.is_empty() {
        line_no += 1;
        let (line, complete) = match rest.find('\n') {
            Some(i) => (&rest[..i], true),
            None => (rest, false),
        };
        let consumed = line.len() + usize::from(complete);
        if !line.trim().is_empty() {
            match serde_json::from_str::<ValidationRecord>(line) {
                Ok(r) => {
                    check_version(path, r.format_version)?;
                    records.push(r);
                }
                Err(_) if !complete => {
                    return Ok(RecoveredRecords {
                        records,
                        truncated_at: Some(offset),
                    })
                }
                Err(e) => {
                    return Err(StoreError::Parse {
                        path: path.to_path_buf(),
                        line: line_no,
                        column: e.column(),
                        reason: e.to_string(),
                    })
                }
            }
        }
        offset += consumed as u64;
        rest = &rest[consumed..];
    }
    Ok(RecoveredRecords {
        records,
        truncated_at: None,
    })
}

fn read_config(run_dir: &Path) -> Result<RunConfig, StoreError> {
    let path = run_dir.join(RUN_CONFIG_FILE);
    let text = fs::read_to_string(&path).map_err(|e| StoreError::Layout {
        path: run_dir.to_path_buf(),
        reason: format!("cannot read {RUN_CONFIG_FILE}: {e}"),
    })?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| StoreError::Parse {
        path: path.clone(),
        line: e.line(),
        column: e.column(),
        reason: e.to_string(),
    })?;
    let version = value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| StoreError::Layout {
            path: path.clone(),
            reason: "missing format_version".into(),
        })?;
    check_version(&path, version as u32)?;
    serde_json::from_value(value).map_err(|e| StoreError::Parse {
        path,
        line: 1,
        column: 0,
        reason: e.to_string(),
    })
}

/// Reads a run directory; a truncated final line is an error.
pub fn load_run(run_dir: &Path) -> Result<(RunConfig, Vec<ValidationRecord>), StoreError> {
    let config = read_config(run_dir)?;
    let path = run_dir.join(RECORDS_FILE);
    let recovered = read_records(&path)?;
    if let Some(offset) = recovered.truncated_at {
        return Err(StoreError::Truncated { path, offset });
    }
    Ok((config, recovered.records))
}

/// Like [`load_run`] but returns every complete record before a truncated
/// final line.
pub fn load_run_recovering(run_dir: &Path) -> Result<(RunConfig, RecoveredRecords), StoreError> {
    let config = read_config(run_dir)?;
    Ok((config, read_records(&run_dir.join(RECORDS_FILE))?))
}

pub fn write_report(run_dir: &Path, report: &ReliabilityReport) -> Result<(), StoreError> {
    let path = run_dir.join(REPORT_FILE);
    let mut body = serde_json::to_string_pretty(report)?;
    body.push('\n');
    fs::write(&path, body).map_err(|e| StoreError::io(&path, e))
}

pub fn read_report(run_dir: &Path) -> Result<ReliabilityReport, StoreError> {
    let path = run_dir.join(REPORT_FILE);
    let text = fs::read_to_string(&path).map_err(|e| StoreError::io(&path, e))?;
    let report: ReliabilityReport = serde_json::from_str(&text).map_err(|e| StoreError::Parse {
        path: path.clone(),
        line: e.line(),
        column: e.column(),
        reason: e.to_string(),
    })?;
    check_version(&path, report.format_version)?;
    Ok(report)
}

struct Writer {
    file: File,
    ids: HashSet<String>,
}

/// Single-writer handle on a run directory. Appends are serialized and
/// synced before returning.
pub struct RunStore {
    dir: PathBuf,
    config: RunConfig,
    writer: Mutex<Writer>,
}

impl RunStore {
    /// Creates a run directory, or reopens it when `run.json` already holds
    /// the same configuration. A truncated trailing record is cut off so
    /// appends start on a clean line.
    pub fn create(dir: &Path, config: &RunConfig) -> Result<Self, StoreError> {
        fs::create_dir_all(dir).map_err(|e| StoreError::io(dir, e))?;
        let config_path = dir.join(RUN_CONFIG_FILE);
        if config_path.exists() {
            let existing = read_config(dir)?;
            if &existing != config {
                return Err(StoreError::Layout {
                    path: dir.to_path_buf(),
                    reason: "run.json exists with a different configuration".into(),
                });
            }
        } else {
            let mut body = serde_json::to_string_pretty(config)?;
            body.push('\n');
            fs::write(&config_path, body).map_err(|e| StoreError::io(&config_path, e))?;
        }
        Self::open(dir)
    }

    pub fn open(dir: &Path) -> Result<Self, StoreError> {
        let config = read_config(dir)?;
        let path = dir.join(RECORDS_FILE);
        let recovered = read_records(&path)?;
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| StoreError::io(&path, e))?;
        if let Some(offset) = recovered.truncated_at {
            warn!(path = %path.display(), offset, "dropping truncated final record");
            file.set_len(offset).map_err(|e| StoreError::io(&path, e))?;
        }
        let ids = recovered.records.into_iter().map(|r| r.question.id).collect();
        Ok(Self {
            dir: dir.to_path_buf(),
            config,
            writer: Mutex::new(Writer { file, ids }),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn records(&self) -> Result<Vec<ValidationRecord>, StoreError> {
        let _guard = self.writer.lock().expect("writer lock poisoned");
        Ok(read_records(&self.dir.join(RECORDS_FILE))?.records)
    }

    pub fn contains(&self, question_id: &str) -> bool {
        self.writer
            .lock()
            .expect("writer lock poisoned")
            .ids
            .contains(question_id)
    }

    /// Appends one record as a JSON line. A second record for the same
    /// question id is refused.
    pub fn append_record(&self, record: &ValidationRecord) -> Result<(), StoreError> {
        let mut line = serde_json::to_string(record)?;
        line.push('\n');
        let mut w = self.writer.lock().expect("writer lock poisoned");
        if w.ids.contains(&record.question.id) {
            return Err(StoreError::DuplicateId(record.question.id.clone()));
        }
        let path = self.dir.join(RECORDS_FILE);
        w.file
            .write_all(line.as_bytes())
            .and_then(|_| w.file.sync_data())
            .map_err(|e| StoreError::io(&path, e))?;
        w.ids.insert(record.question.id.clone());
        Ok(())
    }
}

/// `records.jsonl` content with every timestamp blanked, for determinism
/// comparisons.
pub fn records_without_timestamps(run_dir: &Path) -> Result<String, StoreError> {
    let path = run_dir.join(RECORDS_FILE);
    let text = fs::read_to_string(&path).map_err(|e| StoreError::io(&path, e))?;
    let mut out = String::new();
    for line in text.lines() {
        let mut v: serde_json::Value = serde_json::from_str(line)?;
        if let Some(obj) = v.as_object_mut() {
            obj.remove("timestamp");
        }
        out.push_str(&serde_json::to_string(&v)?);
        out.push('\n');
    }
    Ok(out)
}
