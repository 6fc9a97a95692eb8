//! Line-oriented input files and the engine state dump.
//!
//! Corpus and event files hold one flat JSON object per line. In an event
//! file a blank line closes the current cycle.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cycle::{Engine, InputEvent};
use crate::manifold::{BeliefFragment, Coordinate, FragmentId, ManifoldError, SectorId, Status};

#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}: {message}")]
pub struct RecordError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CorpusLine {
    text: String,
    sector: String,
    level: u32,
    source: String,
    confidence: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EventLine {
    kind: String,
    text: String,
    sector: Option<String>,
    level: Option<u32>,
    source: Option<String>,
    confidence: Option<f64>,
}

/// Everything one cycle consumes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CycleInput {
    pub events: Vec<InputEvent>,
    pub plans: Vec<InputEvent>,
    pub queries: Vec<String>,
}

impl CycleInput {
    fn is_empty(&self) -> bool {
        self.events.is_empty() && self.plans.is_empty() && self.queries.is_empty()
    }
}

fn event(text: String, sector: &str, level: u32, source: String, confidence: Option<f64>) -> Result<InputEvent, String> {
    let sector: SectorId = sector.parse().map_err(|e: ManifoldError| e.to_string())?;
    if let Some(c) = confidence {
        if !(0.0..=1.0).contains(&c) {
            return Err(ManifoldError::InvalidConfidence(c).to_string());
        }
    }
    Ok(InputEvent { text, sector, level, source, confidence })
}

/// Parses a belief corpus. Blank lines are ignored.
pub fn parse_corpus(src: &str) -> Result<Vec<InputEvent>, RecordError> {
    let mut out = Vec::new();
    for (i, line) in src.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| RecordError { line: i + 1, message };
        let rec: CorpusLine = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        out.push(event(rec.text, &rec.sector, rec.level, rec.source, rec.confidence).map_err(err)?);
    }
    Ok(out)
}

/// Parses an event stream into per-cycle inputs. Runs of blank lines count
/// as one boundary; leading and trailing blank lines open no cycle.
pub fn parse_events(src: &str) -> Result<Vec<CycleInput>, RecordError> {
    let mut cycles = Vec::new();
    let mut current = CycleInput::default();
    for (i, line) in src.lines().enumerate() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                cycles.push(std::mem::take(&mut current));
            }
            continue;
        }
        let err = |message: String| RecordError { line: i + 1, message };
        let rec: EventLine = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        match rec.kind.as_str() {
            "query" => {
                if rec.sector.is_some() || rec.level.is_some() || rec.source.is_some() || rec.confidence.is_some() {
                    return Err(err("query records carry only text".into()));
                }
                current.queries.push(rec.text);
            }
            kind @ ("event" | "plan") => {
                let (Some(sector), Some(level), Some(source)) = (rec.sector, rec.level, rec.source) else {
                    return Err(err(format!("{kind} records need sector, level and source")));
                };
                let ev = event(rec.text, &sector, level, source, rec.confidence).map_err(err)?;
                if kind == "event" {
                    current.events.push(ev);
                } else {
                    current.plans.push(ev);
                }
            }
            other => return Err(err(format!("unknown kind {other:?}"))),
        }
    }
    if !current.is_empty() {
        cycles.push(current);
    }
    Ok(cycles)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FragmentRecord {
    pub id: FragmentId,
    pub text: String,
    pub sector: String,
    pub level: u32,
    pub confidence: f64,
    pub source: String,
    pub status: Status,
    pub created_cycle: u64,
}

impl From<&BeliefFragment> for FragmentRecord {
    fn from(f: &BeliefFragment) -> Self {
        Self {
            id: f.id,
            text: f.text.clone(),
            sector: f.coordinate.sector.to_string(),
            level: f.coordinate.level,
            confidence: f.confidence,
            source: f.source.clone(),
            status: f.status,
            created_cycle: f.created_cycle,
        }
    }
}

impl FragmentRecord {
    pub fn to_fragment(&self) -> Result<BeliefFragment, ManifoldError> {
        let coordinate = Coordinate::new(self.sector.parse()?, self.level);
        let mut f = BeliefFragment::new(self.id, &self.text, coordinate, &self.source, self.confidence, self.created_cycle)?;
        f.status = self.status;
        Ok(f)
    }
}

/// Belief state, memory membership and resolution history of an engine.
/// Filters, budgets and trust come from the rule file and are not dumped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateDump {
    pub cycle: u64,
    pub next_id: FragmentId,
    pub fragments: Vec<FragmentRecord>,
    pub memory: Vec<FragmentId>,
    pub resolved: Vec<(String, FragmentId, FragmentId)>,
}

impl StateDump {
    pub fn capture(engine: &Engine) -> Self {
        Self {
            cycle: engine.state.current_cycle(),
            next_id: engine.state.next_id(),
            fragments: engine.state.fragments().map(FragmentRecord::from).collect(),
            memory: engine.memory.fragments().map(|f| f.id).collect(),
            resolved: engine.resolved_pairs().iter().cloned().collect(),
        }
    }

    /// Loads the dump into an engine that has not run yet.
    pub fn restore(&self, engine: &mut Engine) -> Result<(), ManifoldError> {
        for rec in &self.fragments {
            let fragment = rec.to_fragment()?;
            if self.memory.contains(&fragment.id) {
                engine.memory.store(fragment.clone());
            }
            engine.state.insert(fragment)?;
        }
        if let Some(missing) = self.memory.iter().find(|id| !engine.memory.contains(**id)) {
            return Err(ManifoldError::UnknownId(*missing));
        }
        engine.state.set_current_cycle(self.cycle);
        engine.state.reserve_through(self.next_id);
        engine.restore_resolved(self.resolved.iter().cloned().collect::<BTreeSet<_>>());
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("state dump serializes");
        s.push('\n');
        s
    }

    pub fn from_json(src: &str) -> Result<Self, String> {
        serde_json::from_str(src).map_err(|e| e.to_string())
    }
}
