//! Append-only decision log with an optional JSON-lines sink.
//!
//! Sink lines carry `seq, cycle, stage, fragment_id, text, sector, level,
//! outcome, rules, reason` in that order, one compact object per line.

use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filter::{Outcome, Stage};
use crate::manifold::{Coordinate, FragmentId, SectorId};

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("audit sink write failed: {0}")]
    SinkWriteFailure(#[source] io::Error),
    #[error("invalid cycle range {min}..{max}")]
    InvalidRange { min: u64, max: u64 },
    #[error("audit sink line {line}: {message}")]
    Decode { line: usize, message: String },
    #[error("audit sink read failed: {0}")]
    Read(#[from] io::Error),
}

/// Filter stage or one of the bookkeeping pseudo-stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AuditStage {
    Filter(Stage),
    ConflictEmission,
    ConflictResolution,
    Operator,
}

impl AuditStage {
    pub fn as_str(self) -> &'static str {
        match self {
            AuditStage::Filter(stage) => stage.as_str(),
            AuditStage::ConflictEmission => "conflict-emission",
            AuditStage::ConflictResolution => "conflict-resolution",
            AuditStage::Operator => "operator",
        }
    }
}

impl FromStr for AuditStage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "conflict-emission" => Ok(AuditStage::ConflictEmission),
            "conflict-resolution" => Ok(AuditStage::ConflictResolution),
            "operator" => Ok(AuditStage::Operator),
            other => other.parse().map(AuditStage::Filter),
        }
    }
}

impl fmt::Display for AuditStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What a record decided: a verdict outcome, a conflict resolution effect,
/// an operator action, or an engine failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AuditOutcome {
    Verdict(Outcome),
    Downweight,
    Promote,
    Purge,
    Error,
}

impl AuditOutcome {
    pub fn as_str(self) -> &'static str {
        match self {
            AuditOutcome::Verdict(o) => o.as_str(),
            AuditOutcome::Downweight => "downweight",
            AuditOutcome::Promote => "promote",
            AuditOutcome::Purge => "purge",
            AuditOutcome::Error => "error",
        }
    }
}

impl FromStr for AuditOutcome {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "accept" => AuditOutcome::Verdict(Outcome::Accept),
            "reject" => AuditOutcome::Verdict(Outcome::Reject),
            "quarantine" => AuditOutcome::Verdict(Outcome::Quarantine),
            "downweight" => AuditOutcome::Downweight,
            "promote" => AuditOutcome::Promote,
            "purge" => AuditOutcome::Purge,
            "error" => AuditOutcome::Error,
            other => return Err(format!("unknown outcome {other:?}")),
        })
    }
}

impl fmt::Display for AuditOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Everything about a decision except its sequence number.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditEntry {
    pub cycle: u64,
    pub stage: AuditStage,
    pub fragment_id: Option<FragmentId>,
    /// Normalized text at decision time.
    pub text_snapshot: String,
    pub coordinate: Coordinate,
    pub outcome: AuditOutcome,
    pub matched_rules: Vec<String>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditRecord {
    pub seq: u64,
    pub entry: AuditEntry,
}

impl std::ops::Deref for AuditRecord {
    type Target = AuditEntry;

    fn deref(&self) -> &AuditEntry {
        &self.entry
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SinkLine {
    seq: u64,
    cycle: u64,
    stage: String,
    fragment_id: Option<FragmentId>,
    text: String,
    sector: String,
    level: u32,
    outcome: String,
    rules: Vec<String>,
    reason: String,
}

impl AuditRecord {
    /// One sink line, without the trailing newline.
    pub fn to_json_line(&self) -> String {
        let line = SinkLine {
            seq: self.seq,
            cycle: self.cycle,
            stage: self.stage.as_str().to_owned(),
            fragment_id: self.fragment_id,
            text: self.text_snapshot.clone(),
            sector: self.coordinate.sector.to_string(),
            level: self.coordinate.level,
            outcome: self.outcome.as_str().to_owned(),
            rules: self.matched_rules.clone(),
            reason: self.reason.clone(),
        };
        serde_json::to_string(&line).expect("audit lines are plain data")
    }

    pub fn from_json_line(line: &str) -> Result<Self, String> {
        let raw: SinkLine = serde_json::from_str(line).map_err(|e| e.to_string())?;
        Ok(AuditRecord {
            seq: raw.seq,
            entry: AuditEntry {
                cycle: raw.cycle,
                stage: raw.stage.parse()?,
                fragment_id: raw.fragment_id,
                text_snapshot: raw.text,
                coordinate: Coordinate::new(raw.sector.parse::<SectorId>().map_err(|e| e.to_string())?, raw.level),
                outcome: raw.outcome.parse()?,
                matched_rules: raw.rules,
                reason: raw.reason,
            },
        })
    }
}

enum Sink {
    None,
    Open(Box<dyn Write + Send>),
    Closed,
}

/// Criteria for [`AuditLog::query`]. Unset fields match everything.
#[derive(Debug, Clone, Default)]
pub struct AuditQuery {
    pub stage: Option<AuditStage>,
    pub rule: Option<String>,
    pub outcome: Option<AuditOutcome>,
    pub cycles: Option<(u64, u64)>,
}

pub struct AuditLog {
    records: Vec<AuditRecord>,
    sink: Sink,
    next_seq: u64,
}

impl fmt::Debug for AuditLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AuditLog")
            .field("records", &self.records.len())
            .field("next_seq", &self.next_seq)
            .finish()
    }
}

impl Default for AuditLog {
    fn default() -> Self {
        Self::new()
    }
}

impl AuditLog {
    pub fn new() -> Self {
        Self { records: Vec::new(), sink: Sink::None, next_seq: 0 }
    }

    pub fn with_sink(sink: impl Write + Send + 'static) -> Self {
        Self { records: Vec::new(), sink: Sink::Open(Box::new(sink)), next_seq: 0 }
    }

    /// Creates (truncating) a sink file.
    pub fn create_file(path: &Path) -> io::Result<Self> {
        Ok(Self::with_sink(File::create(path)?))
    }

    /// Opens an existing sink file for appending, loading its records so
    /// sequence numbers continue.
    pub fn append_to_file(path: &Path) -> Result<Self, AuditError> {
        let records = read_sink(path)?;
        let next_seq = records.last().map_or(0, |r| r.seq + 1);
        let file = std::fs::OpenOptions::new().append(true).open(path)?;
        Ok(Self { records, sink: Sink::Open(Box::new(file)), next_seq })
    }

    /// Drops the sink. Later appends fail.
    pub fn close_sink(&mut self) {
        self.sink = Sink::Closed;
    }

    /// Persists one record. With a sink, the line is written and flushed
    /// before the record joins the in-memory log.
    pub fn append(&mut self, entry: AuditEntry) -> Result<u64, AuditError> {
        let record = AuditRecord { seq: self.next_seq, entry };
        match &mut self.sink {
            Sink::None => {}
            Sink::Open(w) => {
                let mut line = record.to_json_line();
                line.push('\n');
                w.write_all(line.as_bytes())
                    .and_then(|_| w.flush())
                    .map_err(AuditError::SinkWriteFailure)?;
            }
            Sink::Closed => {
                return Err(AuditError::SinkWriteFailure(io::Error::new(
                    io::ErrorKind::BrokenPipe,
                    "sink is closed",
                )))
            }
        }
        self.next_seq += 1;
        self.records.push(record);
        Ok(self.next_seq - 1)
    }

    pub fn records(&self) -> &[AuditRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn query(&self, q: &AuditQuery) -> Result<Vec<&AuditRecord>, AuditError> {
        query_records(&self.records, q)
    }
}

/// Filters records by every criterion in `q`, keeping seq order.
pub fn query_records<'a>(records: &'a [AuditRecord], q: &AuditQuery) -> Result<Vec<&'a AuditRecord>, AuditError> {
    if let Some((min, max)) = q.cycles {
        if min > max {
            return Err(AuditError::InvalidRange { min, max });
        }
    }
    Ok(records
        .iter()
        .filter(|r| q.stage.is_none_or(|s| r.stage == s))
        .filter(|r| q.rule.as_ref().is_none_or(|id| r.matched_rules.contains(id)))
        .filter(|r| q.outcome.is_none_or(|o| r.outcome == o))
        .filter(|r| q.cycles.is_none_or(|(min, max)| (min..=max).contains(&r.cycle)))
        .collect())
}

pub fn read_sink(path: &Path) -> Result<Vec<AuditRecord>, AuditError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let record = AuditRecord::from_json_line(&line)
            .map_err(|message| AuditError::Decode { line: i + 1, message })?;
        out.push(record);
    }
    Ok(out)
}
