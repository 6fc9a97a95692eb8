//! Belief-state data model: fragments addressed by (sector, level)
//! coordinates, the active belief state, and the long-term memory store.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{collapse_whitespace, has_control_chars, normalize_text, tokens};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ManifoldError {
    #[error("fragment text is empty after normalization")]
    EmptyText,
    #[error("fragment text contains control characters")]
    ControlCharacter,
    #[error("invalid sector name {0:?}")]
    InvalidSector(String),
    #[error("invalid level range {min}..{max}")]
    InvalidRange { min: u32, max: u32 },
    #[error("unknown fragment id {0}")]
    UnknownId(FragmentId),
    #[error("duplicate fragment id {0}")]
    DuplicateId(FragmentId),
    #[error("confidence factor {0} outside (0, 1]")]
    InvalidFactor(f64),
    #[error("confidence {0} outside [0, 1]")]
    InvalidConfidence(f64),
    #[error("unknown status {0:?}")]
    UnknownStatus(String),
}

pub type Result<T, E = ManifoldError> = std::result::Result<T, E>;

/// Functional domain of a belief fragment.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SectorId {
    Perc,
    Plan,
    Mem,
    Refl,
    Know,
    Custom(String),
}

impl SectorId {
    pub fn as_str(&self) -> &str {
        match self {
            SectorId::Perc => "perc",
            SectorId::Plan => "plan",
            SectorId::Mem => "mem",
            SectorId::Refl => "refl",
            SectorId::Know => "know",
            SectorId::Custom(name) => name,
        }
    }

    /// Custom names: a lowercase ASCII letter followed by lowercase letters,
    /// digits, `_`, `-` or `.`.
    pub fn custom(name: &str) -> Result<Self> {
        let mut chars = name.chars();
        let valid = matches!(chars.next(), Some(c) if c.is_ascii_lowercase())
            && chars.all(|c| {
                c.is_ascii_lowercase() || c.is_ascii_digit() || matches!(c, '_' | '-' | '.')
            });
        if !valid {
            return Err(ManifoldError::InvalidSector(name.to_owned()));
        }
        Ok(match name {
            "perc" => SectorId::Perc,
            "plan" => SectorId::Plan,
            "mem" => SectorId::Mem,
            "refl" => SectorId::Refl,
            "know" => SectorId::Know,
            other => SectorId::Custom(other.to_owned()),
        })
    }
}

impl FromStr for SectorId {
    type Err = ManifoldError;

    fn from_str(s: &str) -> Result<Self> {
        SectorId::custom(s)
    }
}

impl fmt::Display for SectorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Location of a fragment: sector plus abstraction level (0 = concrete).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Coordinate {
    pub sector: SectorId,
    pub level: u32,
}

impl Coordinate {
    pub fn new(sector: SectorId, level: u32) -> Self {
        Self { sector, level }
    }
}

impl fmt::Display for Coordinate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.sector, self.level)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Active,
    Quarantined,
    Suppressed,
    Superseded,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Active => "active",
            Status::Quarantined => "quarantined",
            Status::Suppressed => "suppressed",
            Status::Superseded => "superseded",
        }
    }
}

impl FromStr for Status {
    type Err = ManifoldError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "active" => Ok(Status::Active),
            "quarantined" => Ok(Status::Quarantined),
            "suppressed" => Ok(Status::Suppressed),
            "superseded" => Ok(Status::Superseded),
            other => Err(ManifoldError::UnknownStatus(other.to_owned())),
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub type FragmentId = u64;

/// One natural-language belief held at a coordinate.
///
/// `text` keeps the author's casing with whitespace collapsed; `normalized`
/// is what every matcher sees.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefFragment {
    pub id: FragmentId,
    pub text: String,
    pub normalized: String,
    pub coordinate: Coordinate,
    pub confidence: f64,
    pub source: String,
    pub status: Status,
    pub created_cycle: u64,
}

impl BeliefFragment {
    /// Builds a validated fragment. Does not register it anywhere.
    pub fn new(
        id: FragmentId,
        text: &str,
        coordinate: Coordinate,
        source: &str,
        confidence: f64,
        created_cycle: u64,
    ) -> Result<Self> {
        let normalized = normalize_text(text);
        if normalized.is_empty() {
            return Err(ManifoldError::EmptyText);
        }
        if has_control_chars(&normalized) {
            return Err(ManifoldError::ControlCharacter);
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(ManifoldError::InvalidConfidence(confidence));
        }
        Ok(Self {
            id,
            text: collapse_whitespace(text),
            normalized,
            coordinate,
            confidence,
            source: source.to_owned(),
            status: Status::Active,
            created_cycle,
        })
    }

    pub fn is_active(&self) -> bool {
        self.status == Status::Active
    }
}

/// Initial confidence by source tag, longest prefix wins.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceTrustTable {
    entries: BTreeMap<String, f64>,
    default: f64,
}

impl Default for SourceTrustTable {
    fn default() -> Self {
        Self { entries: BTreeMap::new(), default: 1.0 }
    }
}

impl SourceTrustTable {
    pub fn with_default(default: f64) -> Result<Self> {
        check_unit(default)?;
        Ok(Self { entries: BTreeMap::new(), default })
    }

    pub fn insert(&mut self, prefix: impl Into<String>, trust: f64) -> Result<()> {
        check_unit(trust)?;
        self.entries.insert(prefix.into(), trust);
        Ok(())
    }

    pub fn entries(&self) -> &BTreeMap<String, f64> {
        &self.entries
    }

    pub fn default_trust(&self) -> f64 {
        self.default
    }

    pub fn lookup(&self, source: &str) -> f64 {
        self.entries
            .iter()
            .filter(|(prefix, _)| source.starts_with(prefix.as_str()))
            .max_by_key(|(prefix, _)| prefix.len())
            .map_or(self.default, |(_, &trust)| trust)
    }
}

fn check_unit(value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(ManifoldError::InvalidConfidence(value))
    }
}

/// The active ensemble of fragments with a coordinate index.
#[derive(Debug, Clone, Default)]
pub struct BeliefState {
    fragments: BTreeMap<FragmentId, BeliefFragment>,
    coordinate_index: BTreeMap<Coordinate, BTreeSet<FragmentId>>,
    current_cycle: u64,
    next_id: FragmentId,
}

impl BeliefState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn current_cycle(&self) -> u64 {
        self.current_cycle
    }

    pub fn advance_cycle(&mut self) -> u64 {
        self.current_cycle += 1;
        self.current_cycle
    }

    /// Reserves a fresh id. Ids strictly increase and are never reused, even
    /// when the reserved id never reaches the state.
    pub fn allocate_id(&mut self) -> FragmentId {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    pub fn next_id(&self) -> FragmentId {
        self.next_id
    }

    pub fn add_fragment(
        &mut self,
        text: &str,
        coordinate: Coordinate,
        source: &str,
        trust: &SourceTrustTable,
    ) -> Result<FragmentId> {
        let id = self.next_id;
        let fragment = BeliefFragment::new(
            id,
            text,
            coordinate,
            source,
            trust.lookup(source),
            self.current_cycle,
        )?;
        self.allocate_id();
        self.insert(fragment)?;
        Ok(id)
    }

    /// Registers a prebuilt fragment, e.g. one whose id came from
    /// [`allocate_id`](Self::allocate_id) or from a state dump.
    pub fn insert(&mut self, fragment: BeliefFragment) -> Result<()> {
        if self.fragments.contains_key(&fragment.id) {
            return Err(ManifoldError::DuplicateId(fragment.id));
        }
        self.next_id = self.next_id.max(fragment.id + 1);
        self.coordinate_index
            .entry(fragment.coordinate.clone())
            .or_default()
            .insert(fragment.id);
        self.fragments.insert(fragment.id, fragment);
        Ok(())
    }

    pub fn get(&self, id: FragmentId) -> Option<&BeliefFragment> {
        self.fragments.get(&id)
    }

    pub fn len(&self) -> usize {
        self.fragments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fragments.is_empty()
    }

    /// All fragments in id order.
    pub fn fragments(&self) -> impl Iterator<Item = &BeliefFragment> {
        self.fragments.values()
    }

    pub fn active(&self) -> impl Iterator<Item = &BeliefFragment> {
        self.fragments.values().filter(|f| f.is_active())
    }

    /// Fragments matching every given criterion, in ascending id order.
    pub fn query_state(
        &self,
        sector: Option<&SectorId>,
        level_range: Option<(u32, u32)>,
        status: Option<Status>,
    ) -> Result<Vec<&BeliefFragment>> {
        if let Some((min, max)) = level_range {
            if min > max {
                return Err(ManifoldError::InvalidRange { min, max });
            }
        }
        let status_ok = |f: &&BeliefFragment| status.is_none_or(|s| f.status == s);

        let mut out: Vec<&BeliefFragment> = match sector {
            Some(sector) => {
                let (min, max) = level_range.unwrap_or((0, u32::MAX));
                let lo = Coordinate::new(sector.clone(), min);
                let hi = Coordinate::new(sector.clone(), max);
                self.coordinate_index
                    .range(lo..=hi)
                    .flat_map(|(_, ids)| ids.iter().map(|id| &self.fragments[id]))
                    .filter(status_ok)
                    .collect()
            }
            None => self
                .fragments
                .values()
                .filter(|f| {
                    level_range.is_none_or(|(min, max)| {
                        (min..=max).contains(&f.coordinate.level)
                    })
                })
                .filter(status_ok)
                .collect(),
        };
        out.sort_by_key(|f| f.id);
        Ok(out)
    }

    /// Replaces status and/or scales confidence. Confidence never increases.
    pub fn update_fragment(
        &mut self,
        id: FragmentId,
        new_status: Option<Status>,
        confidence_factor: Option<f64>,
    ) -> Result<&BeliefFragment> {
        if let Some(factor) = confidence_factor {
            check_factor(factor)?;
        }
        let fragment = self.fragments.get_mut(&id).ok_or(ManifoldError::UnknownId(id))?;
        if let Some(status) = new_status {
            fragment.status = status;
        }
        if let Some(factor) = confidence_factor {
            fragment.confidence *= factor;
        }
        Ok(fragment)
    }

    /// Rebuilds the coordinate index from scratch and compares.
    pub fn index_is_consistent(&self) -> bool {
        let mut rebuilt: BTreeMap<Coordinate, BTreeSet<FragmentId>> = BTreeMap::new();
        for f in self.fragments.values() {
            rebuilt.entry(f.coordinate.clone()).or_default().insert(f.id);
        }
        rebuilt == self.coordinate_index
    }

    pub(crate) fn set_current_cycle(&mut self, cycle: u64) {
        self.current_cycle = cycle;
    }

    pub(crate) fn reserve_through(&mut self, next_id: FragmentId) {
        self.next_id = self.next_id.max(next_id);
    }
}

pub(crate) fn check_factor(factor: f64) -> Result<()> {
    if factor > 0.0 && factor <= 1.0 {
        Ok(())
    } else {
        Err(ManifoldError::InvalidFactor(factor))
    }
}

/// Long-term memory with an inverted token index.
#[derive(Debug, Clone, Default)]
pub struct MemoryStore {
    fragments: BTreeMap<FragmentId, BeliefFragment>,
    term_index: BTreeMap<String, BTreeSet<FragmentId>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores a copy of `fragment`, replacing any previous copy with its id.
    pub fn store(&mut self, fragment: BeliefFragment) {
        self.remove_terms(fragment.id);
        for token in tokens(&fragment.normalized) {
            self.term_index.entry(token.to_owned()).or_default().insert(fragment.id);
        }
        self.fragments.insert(fragment.id, fragment);
    }

    fn remove_terms(&mut self, id: FragmentId) {
        let Some(old) = self.fragments.get(&id) else { return };
        for token in tokens(&old.normalized) {
            if let Some(ids) = self.term_index.get_mut(token) {
                ids.remove(&id);
                if ids.is_empty() {
                    self.term_index.remove(token);
                }
            }
        }
    }

    pub fn get(&self, id: FragmentId) -> Option<&BeliefFragment> {
        self.fragments.get(&id)
    }

    pub fn contains(&self, id: FragmentId) -> bool {
        self.fragments.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.fragments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fragments.is_empty()
    }

    pub fn fragments(&self) -> impl Iterator<Item = &BeliefFragment> {
        self.fragments.values()
    }

    /// Mirrors a status/confidence change made in the active state.
    pub fn sync(&mut self, fragment: &BeliefFragment) {
        if let Some(stored) = self.fragments.get_mut(&fragment.id) {
            stored.status = fragment.status;
            stored.confidence = fragment.confidence;
        }
    }

    /// Active fragments sharing at least one token with `query_text`, by
    /// descending shared-token count, then newer cycle, then lower id.
    pub fn retrieve_candidates(&self, query_text: &str, limit: usize) -> Vec<&BeliefFragment> {
        let query = normalize_text(query_text);
        let query_tokens: BTreeSet<&str> = tokens(&query).collect();

        let mut overlap: BTreeMap<FragmentId, usize> = BTreeMap::new();
        for token in query_tokens {
            if let Some(ids) = self.term_index.get(token) {
                for &id in ids {
                    *overlap.entry(id).or_default() += 1;
                }
            }
        }

        let mut ranked: Vec<(usize, &BeliefFragment)> = overlap
            .into_iter()
            .map(|(id, score)| (score, &self.fragments[&id]))
            .filter(|(_, f)| f.is_active())
            .collect();
        ranked.sort_by(|(sa, a), (sb, b)| {
            sb.cmp(sa)
                .then(b.created_cycle.cmp(&a.created_cycle))
                .then(a.id.cmp(&b.id))
        });
        ranked.into_iter().take(limit).map(|(_, f)| f).collect()
    }

    /// Rebuilds the term index and compares.
    pub fn index_is_consistent(&self) -> bool {
        let mut rebuilt: BTreeMap<String, BTreeSet<FragmentId>> = BTreeMap::new();
        for f in self.fragments.values() {
            for token in tokens(&f.normalized) {
                rebuilt.entry(token.to_owned()).or_default().insert(f.id);
            }
        }
        rebuilt == self.term_index
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn perc0() -> Coordinate {
        Coordinate::new(SectorId::Perc, 0)
    }

    #[test]
    fn add_fragment_uses_default_trust() {
        let mut state = BeliefState::new();
        let id = state
            .add_fragment("The traffic light ahead is red.", perc0(), "sensor:cam", &SourceTrustTable::default())
            .unwrap();
        let f = state.get(id).unwrap();
        assert_eq!(f.confidence, 1.0);
        assert_eq!(f.status, Status::Active);
        assert_eq!(f.created_cycle, 0);
    }

    #[test]
    fn add_fragment_rejects_blank_text() {
        let mut state = BeliefState::new();
        let err = state.add_fragment("   ", perc0(), "sensor:cam", &SourceTrustTable::default());
        assert_eq!(err, Err(ManifoldError::EmptyText));
        assert!(state.is_empty());
        assert_eq!(state.next_id(), 0);
    }

    #[test]
    fn add_fragment_rejects_control_chars() {
        let mut state = BeliefState::new();
        let err = state.add_fragment("bell\u{7}", perc0(), "x", &SourceTrustTable::default());
        assert_eq!(err, Err(ManifoldError::ControlCharacter));
    }

    #[test]
    fn trust_lookup_prefers_longest_prefix() {
        let mut trust = SourceTrustTable::default();
        trust.insert("comm:", 0.6).unwrap();
        trust.insert("comm:unverified", 0.2).unwrap();
        assert_eq!(trust.lookup("comm:unverified"), 0.2);
        assert_eq!(trust.lookup("comm:peer-3"), 0.6);
        assert_eq!(trust.lookup("sensor:lidar"), 1.0);
        assert!(trust.insert("x", 1.5).is_err());

        let mut state = BeliefState::new();
        let id = state
            .add_fragment(
                "System X is now obsolete (source: unverified)",
                Coordinate::new(SectorId::Know, 1),
                "comm:unverified",
                &trust,
            )
            .unwrap();
        assert_eq!(state.get(id).unwrap().confidence, 0.2);
    }

    #[test]
    fn sector_names() {
        assert_eq!("plan".parse::<SectorId>().unwrap(), SectorId::Plan);
        assert_eq!(
            "comms".parse::<SectorId>().unwrap(),
            SectorId::Custom("comms".into())
        );
        for bad in ["", "Plan", "two words", "*", "9lives", "a{b"] {
            assert!(bad.parse::<SectorId>().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn query_by_sector_range_and_status() {
        let trust = SourceTrustTable::default();
        let mut state = BeliefState::new();
        for i in 0..3 {
            state.add_fragment(&format!("obs {i}"), perc0(), "s", &trust).unwrap();
        }
        let plan1 = Coordinate::new(SectorId::Plan, 1);
        let p1 = state.add_fragment("plan one", plan1.clone(), "s", &trust).unwrap();
        let p2 = state.add_fragment("plan two", plan1, "s", &trust).unwrap();

        let plans: Vec<_> = state
            .query_state(Some(&SectorId::Plan), None, None)
            .unwrap()
            .iter()
            .map(|f| f.id)
            .collect();
        assert_eq!(plans, [p1, p2]);

        let all: Vec<_> = state.query_state(None, None, None).unwrap().iter().map(|f| f.id).collect();
        assert_eq!(all, [0, 1, 2, 3, 4]);

        state.update_fragment(p2, Some(Status::Quarantined), None).unwrap();
        let q: Vec<_> = state
            .query_state(Some(&SectorId::Plan), None, Some(Status::Quarantined))
            .unwrap()
            .iter()
            .map(|f| f.id)
            .collect();
        assert_eq!(q, [p2]);
        let active_plans = state.query_state(Some(&SectorId::Plan), None, Some(Status::Active)).unwrap();
        assert!(active_plans.iter().all(|f| f.id != p2));

        assert_eq!(
            state.query_state(None, Some((3, 1)), None).unwrap_err(),
            ManifoldError::InvalidRange { min: 3, max: 1 }
        );
        assert_eq!(state.query_state(None, Some((1, 1)), None).unwrap().len(), 2);
    }

    #[test]
    fn update_scales_confidence() {
        let mut state = BeliefState::new();
        let id = state.add_fragment("x", perc0(), "s", &SourceTrustTable::default()).unwrap();
        assert_eq!(state.update_fragment(id, None, Some(0.5)).unwrap().confidence, 0.5);
        assert_eq!(state.update_fragment(id, None, Some(1.0)).unwrap().confidence, 0.5);
        assert_eq!(
            state.update_fragment(id, None, Some(0.0)).unwrap_err(),
            ManifoldError::InvalidFactor(0.0)
        );
        assert_eq!(
            state.update_fragment(id, None, Some(1.5)).unwrap_err(),
            ManifoldError::InvalidFactor(1.5)
        );
        assert_eq!(
            state.update_fragment(99, None, None).unwrap_err(),
            ManifoldError::UnknownId(99)
        );
    }

    fn remember(memory: &mut MemoryStore, id: FragmentId, text: &str, cycle: u64) {
        let f = BeliefFragment::new(id, text, Coordinate::new(SectorId::Mem, 0), "t", 1.0, cycle).unwrap();
        memory.store(f);
    }

    #[test]
    fn retrieval_ranks_by_overlap() {
        let mut memory = MemoryStore::new();
        remember(&mut memory, 0, "Cafeteria opens at noon", 0);
        remember(&mut memory, 1, "Access code for Door A is 1234", 0);
        let hits = memory.retrieve_candidates("door A access", 5);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].id, 1);
        assert!(memory.retrieve_candidates("", 5).is_empty());
    }

    #[test]
    fn retrieval_tie_breaks_on_recency_then_id() {
        let mut memory = MemoryStore::new();
        remember(&mut memory, 0, "red valve", 5);
        remember(&mut memory, 1, "red light", 9);
        remember(&mut memory, 2, "red door", 9);
        let ids: Vec<_> = memory.retrieve_candidates("red", 5).iter().map(|f| f.id).collect();
        assert_eq!(ids, [1, 2, 0]);
        assert_eq!(memory.retrieve_candidates("red", 1).len(), 1);
    }

    #[test]
    fn retrieval_skips_inactive() {
        let mut memory = MemoryStore::new();
        remember(&mut memory, 0, "red valve", 0);
        let mut f = memory.get(0).unwrap().clone();
        f.status = Status::Quarantined;
        memory.sync(&f);
        assert!(memory.retrieve_candidates("red", 5).is_empty());
        assert!(memory.index_is_consistent());
    }
}
