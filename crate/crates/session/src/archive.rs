//! Trial-log archive: one line-delimited JSON file per trial plus a
//! `manifest.json` indexing the session(s).
//!
//! A trial file is a `header` record, then one `sample` record per recorded
//! force sample, one `event` record per task event, and a closing `summary`.
//! Every record carries a `record` tag; the header carries the schema version.
//! Output is a pure function of its input (no timestamps, no hash-map
//! ordering), so identical runs give byte-identical archives.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ballbowl_core::anova::Group;
use ballbowl_core::dynamics::ForceSample;
use ballbowl_core::sim::{TaskEvent, TrialLog};
use ballbowl_core::task::{DistributionId, LoadLevel, TrialSpec, TrialState};
use serde::{Deserialize, Serialize};

use crate::config::{ProfileChoice, SessionConfig};
use crate::error::{Result, SessionError};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// How the trial was produced. Logs are otherwise identical in shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Simulated,
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Record {
    Header {
        schema_version: u32,
        subject: String,
        group: Group,
        source: Source,
        spec: TrialSpec,
        flags: Vec<[f64; 2]>,
    },
    Sample(ForceSample),
    Event(TaskEvent),
    Summary {
        final_state: TrialState,
        valid: bool,
        fault: Option<String>,
    },
}

/// A trial log with the subject it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchivedTrial {
    pub subject: String,
    pub group: Group,
    pub source: Source,
    pub log: TrialLog,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialEntry {
    /// Path relative to the archive root, `/`-separated.
    pub file: String,
    pub trial_index: u32,
    pub set_index: u32,
    pub load: LoadLevel,
    pub distribution: DistributionId,
    pub valid: bool,
    pub flags_collected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectEntry {
    pub subject: String,
    pub group: Group,
    pub profile: ProfileChoice,
    pub protocol_seed: u64,
    pub trials: Vec<TrialEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    /// Seed of the cohort, when the archive came from a cohort run.
    pub cohort_seed: Option<u64>,
    pub config: SessionConfig,
    pub subjects: Vec<SubjectEntry>,
}

impl Manifest {
    pub fn new(config: &SessionConfig, cohort_seed: Option<u64>) -> Self {
        Self { schema_version: SCHEMA_VERSION, cohort_seed, config: config.clone(), subjects: Vec::new() }
    }

    pub fn trial_count(&self) -> usize {
        self.subjects.iter().map(|s| s.trials.len()).sum()
    }
}

pub fn trial_file_name(subject: &str, trial_index: u32) -> String {
    format!("{subject}/trial_{trial_index:02}.jsonl")
}

fn write_line<W: Write>(out: &mut W, record: &Record, path: &Path) -> Result<()> {
    serde_json::to_writer(&mut *out, record).map_err(|e| SessionError::Format {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })?;
    out.write_all(b"\n").map_err(SessionError::io(path))
}

/// Write one trial under `root` and return its manifest entry.
pub fn write_trial(root: &Path, trial: &ArchivedTrial) -> Result<TrialEntry> {
    let log = &trial.log;
    let file = trial_file_name(&trial.subject, log.spec.trial_index);
    let path = root.join(&file);
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(SessionError::io(dir))?;
    }
    let mut out = BufWriter::new(File::create(&path).map_err(SessionError::io(&path))?);
    let header = Record::Header {
        schema_version: SCHEMA_VERSION,
        subject: trial.subject.clone(),
        group: trial.group,
        source: trial.source,
        spec: log.spec,
        flags: log.flags.clone(),
    };
    write_line(&mut out, &header, &path)?;
    for s in &log.samples {
        write_line(&mut out, &Record::Sample(*s), &path)?;
    }
    for e in &log.events {
        write_line(&mut out, &Record::Event(*e), &path)?;
    }
    let summary = Record::Summary { final_state: log.final_state.clone(), valid: log.valid, fault: log.fault.clone() };
    write_line(&mut out, &summary, &path)?;
    out.flush().map_err(SessionError::io(&path))?;
    Ok(TrialEntry {
        file,
        trial_index: log.spec.trial_index,
        set_index: log.spec.set_index,
        load: log.spec.load,
        distribution: log.spec.distribution,
        valid: log.valid,
        flags_collected: log.flags_collected(),
    })
}

pub fn read_trial(path: &Path) -> Result<ArchivedTrial> {
    let reader = BufReader::new(File::open(path).map_err(SessionError::io(path))?);
    let fail = |line: usize, message: String| SessionError::Format { path: path.to_path_buf(), line, message };
    let mut head = None;
    let mut samples = Vec::new();
    let mut events = Vec::new();
    let mut summary = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(SessionError::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| fail(i + 1, e.to_string()))?;
        match record {
            Record::Header { schema_version, subject, group, source, spec, flags } => {
                if schema_version != SCHEMA_VERSION {
                    return Err(SessionError::Schema { found: schema_version, expected: SCHEMA_VERSION });
                }
                if head.is_some() || i != 0 {
                    return Err(fail(i + 1, "header must be the first record".into()));
                }
                head = Some((subject, group, source, spec, flags));
            }
            _ if head.is_none() => return Err(fail(i + 1, "missing header".into())),
            _ if summary.is_some() => return Err(fail(i + 1, "record after summary".into())),
            Record::Sample(s) => samples.push(s),
            Record::Event(e) => events.push(e),
            Record::Summary { final_state, valid, fault } => summary = Some((final_state, valid, fault)),
        }
    }
    let (subject, group, source, spec, flags) = head.ok_or_else(|| fail(0, "empty trial file".into()))?;
    let (final_state, valid, fault) = summary.ok_or_else(|| fail(0, "truncated: no summary record".into()))?;
    Ok(ArchivedTrial {
        subject,
        group,
        source,
        log: TrialLog { spec, flags, samples, events, final_state, valid, fault },
    })
}

pub fn write_manifest(root: &Path, manifest: &Manifest) -> Result<()> {
    fs::create_dir_all(root).map_err(SessionError::io(root))?;
    let path = root.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(manifest).map_err(|e| SessionError::Format {
        path: path.clone(),
        line: 0,
        message: e.to_string(),
    })?;
    text.push('\n');
    // write-then-rename so a live session never leaves a half-written manifest
    let tmp = root.join(format!("{MANIFEST_FILE}.tmp"));
    fs::write(&tmp, text).map_err(SessionError::io(&tmp))?;
    fs::rename(&tmp, &path).map_err(SessionError::io(&path))
}

pub fn read_manifest(root: &Path) -> Result<Manifest> {
    let path = root.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(SessionError::io(&path))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| SessionError::Format {
        path: path.clone(),
        line: e.line(),
        message: e.to_string(),
    })?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(SessionError::Schema { found: manifest.schema_version, expected: SCHEMA_VERSION });
    }
    Ok(manifest)
}

/// Resolve every trial file listed in a manifest.
pub fn trial_paths(root: &Path, manifest: &Manifest) -> Vec<PathBuf> {
    manifest
        .subjects
        .iter()
        .flat_map(|s| s.trials.iter().map(|t| root.join(&t.file)))
        .collect()
}
