//! The per-cycle lifecycle: assimilation gatekeeping, filtered memory
//! retrieval, reflective contradiction monitoring and plan pruning.
//!
//! Every filtering decision is written to the audit log before it takes
//! effect. Candidates get their fragment id before filtering, so rejected
//! candidates still have a (provisional) id in the log.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use thiserror::Error;

use crate::audit::{AuditEntry, AuditError, AuditLog, AuditOutcome, AuditStage};
use crate::dsl::RuleFile;
use crate::filter::{apply_filters, EvaluationContext, FilterError, FilterSet, Matcher, Outcome, Stage, Verdict};
use crate::knowledge::Knowledge;
use crate::manifold::{
    BeliefFragment, BeliefState, Coordinate, FragmentId, ManifoldError, MemoryStore, SectorId, SourceTrustTable,
    Status,
};
use crate::text::normalize_text;

/// How many memory candidates a query considers during a cycle.
/// Source tag of conflict fragments emitted by reflection.
pub const CONFLICT_SOURCE: &str = "internal:reflection";

pub const DEFAULT_RETRIEVAL_LIMIT: usize = 5;

const REFLECTIVE_LEVEL: u32 = 1;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Audit(#[from] AuditError),
    #[error("plan candidate {index} is in sector {sector}, not plan")]
    NonPlanSector { index: usize, sector: SectorId },
    #[error("retrieval limit must be at least 1")]
    InvalidLimit,
    #[error("fragment {0} is not quarantined")]
    NotQuarantined(FragmentId),
    #[error("invalid contradiction {id}: {message}")]
    InvalidConflict { id: String, message: String },
}

pub type Result<T, E = EngineError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Resolution {
    QuarantineNewer,
    DownweightNewer(f64),
    FlagOnly,
}

/// A declared pair of mutually contradictory belief patterns.
#[derive(Debug, Clone, PartialEq)]
pub struct ConflictDeclaration {
    pub id: String,
    pub pattern_a: Matcher,
    pub pattern_b: Matcher,
    pub resolve: Resolution,
}

impl ConflictDeclaration {
    pub fn new(id: impl Into<String>, pattern_a: Matcher, pattern_b: Matcher, resolve: Resolution) -> Result<Self> {
        let decl = Self { id: id.into(), pattern_a, pattern_b, resolve };
        decl.validate()?;
        Ok(decl)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |message: String| EngineError::InvalidConflict { id: self.id.clone(), message };
        for m in [&self.pattern_a, &self.pattern_b] {
            if !matches!(m, Matcher::Contains(_) | Matcher::Pattern(_)) {
                return Err(err("patterns must be contains or pattern matchers".into()));
            }
            m.validate().map_err(err)?;
        }
        if let Resolution::DownweightNewer(f) = self.resolve {
            if !(f > 0.0 && f < 1.0) {
                return Err(err(format!("downweight factor {f} outside (0, 1)")));
            }
        }
        Ok(())
    }
}

/// New information arriving from outside (or a plan proposal).
#[derive(Debug, Clone, PartialEq)]
pub struct InputEvent {
    pub text: String,
    pub sector: SectorId,
    pub level: u32,
    pub source: String,
    /// Overrides the source-trust lookup when set.
    pub confidence: Option<f64>,
}

impl InputEvent {
    pub fn new(text: impl Into<String>, sector: SectorId, level: u32, source: impl Into<String>) -> Self {
        Self { text: text.into(), sector, level, source: source.into(), confidence: None }
    }

    fn coordinate(&self) -> Coordinate {
        Coordinate::new(self.sector.clone(), self.level)
    }
}

/// Fragment ids touched during one cycle, grouped by final outcome.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CycleReport {
    pub cycle: u64,
    pub admitted: Vec<FragmentId>,
    pub rejected: Vec<FragmentId>,
    pub quarantined: Vec<FragmentId>,
    pub conflicts_emitted: Vec<FragmentId>,
    pub plans_pruned: Vec<FragmentId>,
}

impl CycleReport {
    /// `cycle 2: admitted=[3] rejected=[] quarantined=[3] conflicts=[5] pruned=[]`
    pub fn summary_line(&self) -> String {
        fn list(ids: &[FragmentId]) -> String {
            let parts: Vec<String> = ids.iter().map(u64::to_string).collect();
            format!("[{}]", parts.join(","))
        }
        format!(
            "cycle {}: admitted={} rejected={} quarantined={} conflicts={} pruned={}",
            self.cycle,
            list(&self.admitted),
            list(&self.rejected),
            list(&self.quarantined),
            list(&self.conflicts_emitted),
            list(&self.plans_pruned),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Category {
    Admitted,
    Rejected,
    Quarantined,
    Conflict,
    Pruned,
}

/// Last classification of each id wins, so report lists stay disjoint.
#[derive(Debug, Default)]
struct Tally(Vec<(FragmentId, Category)>);

impl Tally {
    fn record(&mut self, id: FragmentId, category: Category) {
        self.0.retain(|(other, _)| *other != id);
        self.0.push((id, category));
    }

    fn ids(&self, category: Category) -> Vec<FragmentId> {
        self.0.iter().filter(|(_, c)| *c == category).map(|(id, _)| *id).collect()
    }
}

/// One agent's belief state, memory, filters and audit log.
#[derive(Debug)]
pub struct Engine {
    pub state: BeliefState,
    pub memory: MemoryStore,
    pub filters: Arc<FilterSet>,
    pub conflicts: Vec<ConflictDeclaration>,
    pub budgets: BTreeMap<String, f64>,
    pub trust: SourceTrustTable,
    pub knowledge: Arc<Knowledge>,
    pub audit: AuditLog,
    pub retrieval_limit: usize,
    /// (declaration, lower id, higher id) pairs already resolved.
    resolved: BTreeSet<(String, FragmentId, FragmentId)>,
    tally: Tally,
}

impl Engine {
    pub fn new(filters: Arc<FilterSet>, knowledge: Arc<Knowledge>, audit: AuditLog) -> Self {
        Self {
            state: BeliefState::new(),
            memory: MemoryStore::new(),
            filters,
            conflicts: Vec::new(),
            budgets: BTreeMap::new(),
            trust: SourceTrustTable::default(),
            knowledge,
            audit,
            retrieval_limit: DEFAULT_RETRIEVAL_LIMIT,
            resolved: BTreeSet::new(),
            tally: Tally::default(),
        }
    }

    /// An engine wired to everything a rule file declares.
    pub fn configured(rules: &RuleFile, knowledge: Arc<Knowledge>, audit: AuditLog) -> Self {
        Self::new(Arc::new(rules.filter_set.clone()), knowledge, audit)
            .with_conflicts(rules.contradictions.clone())
            .with_budgets(rules.budgets.clone())
            .with_trust(rules.trust.clone())
    }

    pub fn with_conflicts(mut self, conflicts: Vec<ConflictDeclaration>) -> Self {
        self.conflicts = conflicts;
        self
    }

    pub fn with_budgets(mut self, budgets: BTreeMap<String, f64>) -> Self {
        self.budgets = budgets;
        self
    }

    pub fn with_trust(mut self, trust: SourceTrustTable) -> Self {
        self.trust = trust;
        self
    }

    pub(crate) fn resolved_pairs(&self) -> &BTreeSet<(String, FragmentId, FragmentId)> {
        &self.resolved
    }

    pub(crate) fn restore_resolved(&mut self, resolved: BTreeSet<(String, FragmentId, FragmentId)>) {
        self.resolved = resolved;
    }

    fn context(&self) -> EvaluationContext {
        EvaluationContext::from_state(&self.state, &self.budgets)
    }

    /// Builds a candidate fragment carrying the next free id, and reserves it.
    fn candidate(&mut self, text: &str, coordinate: Coordinate, source: &str, confidence: f64) -> Result<BeliefFragment> {
        let fragment = BeliefFragment::new(
            self.state.next_id(),
            text,
            coordinate,
            source,
            confidence,
            self.state.current_cycle(),
        )?;
        self.state.allocate_id();
        Ok(fragment)
    }

    fn filter(&self, fragment: &BeliefFragment, stage: Stage) -> Result<Verdict> {
        Ok(apply_filters(&self.filters, fragment, stage, &self.context(), &self.knowledge)?)
    }

    fn log(
        &mut self,
        stage: AuditStage,
        fragment: &BeliefFragment,
        outcome: AuditOutcome,
        matched_rules: Vec<String>,
        reason: String,
    ) -> Result<()> {
        self.audit.append(AuditEntry {
            cycle: self.state.current_cycle(),
            stage,
            fragment_id: Some(fragment.id),
            text_snapshot: fragment.normalized.clone(),
            coordinate: fragment.coordinate.clone(),
            outcome,
            matched_rules,
            reason,
        })?;
        Ok(())
    }

    fn log_verdict(&mut self, stage: AuditStage, fragment: &BeliefFragment, verdict: &Verdict) -> Result<()> {
        self.log(stage, fragment, AuditOutcome::Verdict(verdict.outcome), verdict.matched_rules.clone(), verdict_reason(verdict))
    }

    fn set_status(&mut self, id: FragmentId, status: Option<Status>, factor: Option<f64>) -> Result<()> {
        let updated = self.state.update_fragment(id, status, factor)?.clone();
        self.memory.sync(&updated);
        Ok(())
    }

    /// Filters one incoming event at the assimilation stage and routes it:
    /// accepted fragments join the active state and memory, quarantined ones
    /// are held inactive, rejected ones leave a reflective note.
    pub fn assimilate(&mut self, event: &InputEvent) -> Result<Verdict> {
        let trust = event.confidence.unwrap_or_else(|| self.trust.lookup(&event.source));
        let mut fragment = self.candidate(&event.text, event.coordinate(), &event.source, trust)?;
        let verdict = self.filter(&fragment, Stage::Assimilation)?;
        self.log_verdict(AuditStage::Filter(Stage::Assimilation), &fragment, &verdict)?;

        match verdict.outcome {
            Outcome::Accept => {
                fragment.confidence *= verdict.confidence_factor;
                self.tally.record(fragment.id, Category::Admitted);
                self.memory.store(fragment.clone());
                self.state.insert(fragment)?;
            }
            Outcome::Quarantine => {
                fragment.confidence *= verdict.confidence_factor;
                fragment.status = Status::Quarantined;
                self.tally.record(fragment.id, Category::Quarantined);
                self.state.insert(fragment)?;
            }
            Outcome::Reject => {
                self.tally.record(fragment.id, Category::Rejected);
                let cause = verdict.deciding_rule().unwrap_or(verdict.reason.as_str());
                let note = self.candidate(
                    &format!("rejected at assimilation: {cause}"),
                    Coordinate::new(SectorId::Refl, REFLECTIVE_LEVEL),
                    "internal:assimilation-filter",
                    1.0,
                )?;
                self.state.insert(note)?;
            }
        }
        Ok(verdict)
    }

    /// Retrieves memory candidates for `query` and re-activates those the
    /// retrieval-stage filters accept, under fresh ids.
    pub fn retrieve_filtered(&mut self, query: &str, limit: usize) -> Result<Vec<BeliefFragment>> {
        if limit == 0 {
            return Err(EngineError::InvalidLimit);
        }
        let candidates: Vec<BeliefFragment> =
            self.memory.retrieve_candidates(query, limit).into_iter().cloned().collect();
        let mut admitted = Vec::new();
        for original in candidates {
            let mut fragment = self.candidate(
                &original.text,
                original.coordinate.clone(),
                &format!("memory:{}", original.id),
                original.confidence,
            )?;
            let verdict = self.filter(&fragment, Stage::Retrieval)?;
            self.log_verdict(AuditStage::Filter(Stage::Retrieval), &fragment, &verdict)?;
            if verdict.is_accept() {
                fragment.confidence *= verdict.confidence_factor;
                self.tally.record(fragment.id, Category::Admitted);
                self.state.insert(fragment.clone())?;
                admitted.push(fragment);
            } else {
                self.tally.record(fragment.id, Category::Rejected);
            }
        }
        Ok(admitted)
    }

    /// Scans active beliefs for declared contradictions. Each hit emits a
    /// reflective conflict fragment (itself filtered at the reflection
    /// stage) and resolves against the newer belief of the pair. Returns the
    /// ids of admitted conflict fragments. Conflict fragments never pair
    /// with anything themselves.
    pub fn reflect(&mut self) -> Result<Vec<FragmentId>> {
        let snapshot: Vec<FragmentId> =
            self.state.active().filter(|f| f.source != CONFLICT_SOURCE).map(|f| f.id).collect();
        let declarations = self.conflicts.clone();
        let mut emitted = Vec::new();

        for decl in &declarations {
            let mut seen: BTreeSet<(FragmentId, FragmentId)> = BTreeSet::new();
            for &x in &snapshot {
                for &y in &snapshot {
                    if x == y {
                        continue;
                    }
                    let pair = (x.min(y), x.max(y));
                    if seen.contains(&pair) {
                        continue;
                    }
                    if decl.resolve != Resolution::FlagOnly
                        && self.resolved.contains(&(decl.id.clone(), pair.0, pair.1))
                    {
                        continue;
                    }
                    let (Some(fx), Some(fy)) = (self.state.get(x), self.state.get(y)) else { continue };
                    if !fx.is_active() || !fy.is_active() {
                        continue;
                    }
                    if !(text_matches(&decl.pattern_a, fx) && text_matches(&decl.pattern_b, fy)) {
                        continue;
                    }
                    seen.insert(pair);
                    let newer = if (fx.created_cycle, fx.id) > (fy.created_cycle, fy.id) { x } else { y };
                    if let Some(id) = self.emit_conflict(decl, x, y)? {
                        emitted.push(id);
                    }
                    self.resolve(decl, pair, newer)?;
                }
            }
        }
        Ok(emitted)
    }

    fn emit_conflict(&mut self, decl: &ConflictDeclaration, x: FragmentId, y: FragmentId) -> Result<Option<FragmentId>> {
        let mut fragment = self.candidate(
            &format!("Contradictory beliefs detected: {x} vs {y} ({})", decl.id),
            Coordinate::new(SectorId::Refl, REFLECTIVE_LEVEL),
            CONFLICT_SOURCE,
            1.0,
        )?;
        let verdict = self.filter(&fragment, Stage::Reflection)?;
        let mut rules = vec![decl.id.clone()];
        rules.extend(verdict.matched_rules.iter().cloned());
        self.log(
            AuditStage::ConflictEmission,
            &fragment,
            AuditOutcome::Verdict(verdict.outcome),
            rules,
            verdict_reason(&verdict),
        )?;
        if verdict.is_accept() {
            fragment.confidence *= verdict.confidence_factor;
            let id = fragment.id;
            self.tally.record(id, Category::Conflict);
            self.state.insert(fragment)?;
            Ok(Some(id))
        } else {
            self.tally.record(fragment.id, Category::Rejected);
            Ok(None)
        }
    }

    fn resolve(&mut self, decl: &ConflictDeclaration, pair: (FragmentId, FragmentId), newer: FragmentId) -> Result<()> {
        let (outcome, reason, status, factor) = match decl.resolve {
            Resolution::FlagOnly => return Ok(()),
            Resolution::QuarantineNewer => (
                AuditOutcome::Verdict(Outcome::Quarantine),
                "quarantine-newer".to_owned(),
                Some(Status::Quarantined),
                None,
            ),
            Resolution::DownweightNewer(f) => {
                (AuditOutcome::Downweight, format!("downweight-newer {f}"), None, Some(f))
            }
        };
        let target = self.state.get(newer).ok_or(ManifoldError::UnknownId(newer))?.clone();
        self.log(AuditStage::ConflictResolution, &target, outcome, vec![decl.id.clone()], reason)?;
        self.set_status(newer, status, factor)?;
        if status == Some(Status::Quarantined) {
            self.tally.record(newer, Category::Quarantined);
        }
        self.resolved.insert((decl.id.clone(), pair.0, pair.1));
        Ok(())
    }

    /// Filters an internally generated reflective fragment (a self-critique,
    /// hypothesis or coherence note) at the reflection stage.
    pub fn submit_reflection(&mut self, text: &str, level: u32, source: &str) -> Result<Verdict> {
        let trust = self.trust.lookup(source);
        let mut fragment = self.candidate(text, Coordinate::new(SectorId::Refl, level), source, trust)?;
        let verdict = self.filter(&fragment, Stage::Reflection)?;
        self.log_verdict(AuditStage::Filter(Stage::Reflection), &fragment, &verdict)?;
        fragment.confidence *= verdict.confidence_factor;
        match verdict.outcome {
            Outcome::Accept => {
                self.tally.record(fragment.id, Category::Admitted);
                self.state.insert(fragment)?;
            }
            Outcome::Quarantine => {
                fragment.status = Status::Quarantined;
                self.tally.record(fragment.id, Category::Quarantined);
                self.state.insert(fragment)?;
            }
            Outcome::Reject => self.tally.record(fragment.id, Category::Rejected),
        }
        Ok(verdict)
    }

    /// Filters plan proposals at the planning stage. Accepted plans join the
    /// plan sector; the rest are dropped without a reflective note.
    pub fn plan_filter(&mut self, candidates: &[InputEvent]) -> Result<Vec<BeliefFragment>> {
        if let Some((index, c)) = candidates.iter().enumerate().find(|(_, c)| c.sector != SectorId::Plan) {
            return Err(EngineError::NonPlanSector { index, sector: c.sector.clone() });
        }
        let mut admitted = Vec::new();
        for event in candidates {
            let trust = event.confidence.unwrap_or_else(|| self.trust.lookup(&event.source));
            let mut fragment = self.candidate(&event.text, event.coordinate(), &event.source, trust)?;
            let verdict = self.filter(&fragment, Stage::Planning)?;
            self.log_verdict(AuditStage::Filter(Stage::Planning), &fragment, &verdict)?;
            if verdict.is_accept() {
                fragment.confidence *= verdict.confidence_factor;
                self.tally.record(fragment.id, Category::Admitted);
                self.state.insert(fragment.clone())?;
                admitted.push(fragment);
            } else {
                self.tally.record(fragment.id, Category::Pruned);
            }
        }
        Ok(admitted)
    }

    /// Runs one cycle: assimilate → retrieve → reflect → plan.
    pub fn run_cycle(&mut self, events: &[InputEvent], plans: &[InputEvent], queries: &[String]) -> Result<CycleReport> {
        let cycle = self.state.advance_cycle();
        self.tally = Tally::default();

        for event in events {
            if let Err(err) = self.assimilate(event) {
                if !matches!(err, EngineError::Audit(_)) {
                    self.audit.append(AuditEntry {
                        cycle,
                        stage: AuditStage::Filter(Stage::Assimilation),
                        fragment_id: None,
                        text_snapshot: normalize_text(&event.text),
                        coordinate: event.coordinate(),
                        outcome: AuditOutcome::Error,
                        matched_rules: Vec::new(),
                        reason: err.to_string(),
                    })?;
                }
                return Err(err);
            }
        }
        for query in queries {
            self.retrieve_filtered(query, self.retrieval_limit)?;
        }
        self.reflect()?;
        self.plan_filter(plans)?;

        let tally = std::mem::take(&mut self.tally);
        Ok(CycleReport {
            cycle,
            admitted: tally.ids(Category::Admitted),
            rejected: tally.ids(Category::Rejected),
            quarantined: tally.ids(Category::Quarantined),
            conflicts_emitted: tally.ids(Category::Conflict),
            plans_pruned: tally.ids(Category::Pruned),
        })
    }

    /// Seeds the initial belief state. Each record passes through
    /// assimilation at the current cycle like any other event.
    pub fn load_corpus(&mut self, events: &[InputEvent]) -> Result<Vec<Verdict>> {
        let verdicts = events.iter().map(|e| self.assimilate(e)).collect();
        self.tally = Tally::default();
        verdicts
    }

    pub fn quarantined(&self) -> Vec<&BeliefFragment> {
        self.state.fragments().filter(|f| f.status == Status::Quarantined).collect()
    }

    /// Operator release of a quarantined fragment into the active state.
    pub fn promote(&mut self, id: FragmentId) -> Result<()> {
        self.operator_action(id, AuditOutcome::Promote, Status::Active)?;
        let fragment = self.state.get(id).cloned().ok_or(ManifoldError::UnknownId(id))?;
        if !self.memory.contains(id) {
            self.memory.store(fragment);
        }
        Ok(())
    }

    /// Operator disposal of a quarantined fragment.
    pub fn purge(&mut self, id: FragmentId) -> Result<()> {
        self.operator_action(id, AuditOutcome::Purge, Status::Suppressed)
    }

    fn operator_action(&mut self, id: FragmentId, outcome: AuditOutcome, status: Status) -> Result<()> {
        let fragment = self.state.get(id).ok_or(ManifoldError::UnknownId(id))?.clone();
        if fragment.status != Status::Quarantined {
            return Err(EngineError::NotQuarantined(id));
        }
        self.log(AuditStage::Operator, &fragment, outcome, Vec::new(), format!("operator {outcome}"))?;
        self.set_status(id, Some(status), None)
    }
}

fn text_matches(matcher: &Matcher, fragment: &BeliefFragment) -> bool {
    matcher.matches_normalized(&fragment.normalized)
}

fn verdict_reason(verdict: &Verdict) -> String {
    if verdict.flags.is_empty() {
        verdict.reason.as_str().to_owned()
    } else {
        format!("{} flags={}", verdict.reason, verdict.flags.join(","))
    }
}
