//! Filter rules, matchers, scoping and verdict composition.
//!
//! A [`FilterSet`] is evaluated against one fragment at one [`Stage`]:
//!
//! 1. Rules run in descending priority, ties by ascending rule id.
//! 2. Rules out of scope for (stage, sector, level) are skipped. Rules
//!    whose context conditions fail cannot match.
//! 3. A matching blacklist rule with `reject`/`quarantine` ends evaluation
//!    with that outcome. `flag`/`downweight` accumulate and evaluation
//!    continues. A matching whitelist rule marks the fragment admitted and
//!    evaluation continues.
//! 4. If at least one in-scope whitelist rule was reached and none matched,
//!    the fragment is rejected (`whitelist-unmatched`). Otherwise it is
//!    accepted with the accumulated flags and confidence factor.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::knowledge::Knowledge;
use crate::manifold::{BeliefFragment, BeliefState, Coordinate, SectorId};
use crate::pattern::{Pattern, PatternError};
use crate::text::normalize_text;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Assimilation,
    Retrieval,
    Reflection,
    Planning,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Assimilation, Stage::Retrieval, Stage::Reflection, Stage::Planning];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Assimilation => "assimilation",
            Stage::Retrieval => "retrieval",
            Stage::Reflection => "reflection",
            Stage::Planning => "planning",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Stage::ALL
            .into_iter()
            .find(|stage| stage.as_str() == s)
            .ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Comparator {
    Gt,
    Ge,
    Lt,
    Le,
    Eq,
    Ne,
}

impl Comparator {
    pub fn as_str(self) -> &'static str {
        match self {
            Comparator::Gt => ">",
            Comparator::Ge => ">=",
            Comparator::Lt => "<",
            Comparator::Le => "<=",
            Comparator::Eq => "==",
            Comparator::Ne => "!=",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            ">" => Comparator::Gt,
            ">=" => Comparator::Ge,
            "<" => Comparator::Lt,
            "<=" => Comparator::Le,
            "==" => Comparator::Eq,
            "!=" => Comparator::Ne,
            _ => return None,
        })
    }

    pub fn apply(self, lhs: f64, rhs: f64) -> bool {
        match self {
            Comparator::Gt => lhs > rhs,
            Comparator::Ge => lhs >= rhs,
            Comparator::Lt => lhs < rhs,
            Comparator::Le => lhs <= rhs,
            Comparator::Eq => lhs == rhs,
            Comparator::Ne => lhs != rhs,
        }
    }
}

/// Classifier threshold direction: fire when `score >= t` or `score < t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    AtLeast,
    Below,
}

/// Right-hand side of a numeric comparison.
#[derive(Debug, Clone, PartialEq)]
pub enum Bound {
    Value(f64),
    Budget(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Matcher {
    Contains(String),
    Pattern(Pattern),
    Concept(String),
    Classifier { scorer: String, threshold: f64, direction: Direction },
    Numeric { pattern: Pattern, comparator: Comparator, bound: Bound },
}

impl Matcher {
    pub fn contains(literal: impl Into<String>) -> Self {
        Matcher::Contains(literal.into())
    }

    pub fn pattern(source: &str) -> Result<Self, PatternError> {
        Pattern::compile(source).map(Matcher::Pattern)
    }

    pub fn numeric(source: &str, comparator: Comparator, bound: Bound) -> Result<Self, PatternError> {
        Ok(Matcher::Numeric { pattern: Pattern::compile(source)?, comparator, bound })
    }

    /// Structural checks independent of any knowledge base.
    pub fn validate(&self) -> Result<(), String> {
        match self {
            Matcher::Contains(lit) if normalize_text(lit).is_empty() => {
                Err("contains literal is empty after normalization".into())
            }
            Matcher::Pattern(p) if p.capture_count() > 0 => {
                Err("capture groups are only allowed in numeric matchers".into())
            }
            Matcher::Classifier { threshold, .. } if !(0.0..=1.0).contains(threshold) => {
                Err(format!("classifier threshold {threshold} outside [0, 1]"))
            }
            Matcher::Numeric { pattern, .. } if pattern.capture_count() != 1 => {
                Err("numeric pattern needs exactly one (\\d+) capture".into())
            }
            Matcher::Numeric { bound: Bound::Value(v), .. } if !v.is_finite() => {
                Err("numeric bound must be finite".into())
            }
            _ => Ok(()),
        }
    }

    pub fn is_textual(&self) -> bool {
        matches!(self, Matcher::Contains(_) | Matcher::Pattern(_))
    }

    /// Contains/pattern match against already-normalized text. Other
    /// matcher kinds never match here.
    pub fn matches_normalized(&self, normalized: &str) -> bool {
        match self {
            Matcher::Contains(lit) => normalized.contains(normalize_text(lit).as_str()),
            Matcher::Pattern(p) => p.is_match(normalized),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MatchError {
    #[error("unknown scorer {0:?}")]
    UnknownScorer(String),
    #[error("unknown concept {0:?}")]
    UnknownConcept(String),
    #[error("unknown budget key {0:?}")]
    UnknownBudgetKey(String),
}

/// Evaluates one matcher against one fragment.
pub fn matches(
    matcher: &Matcher,
    fragment: &BeliefFragment,
    ctx: &EvaluationContext,
    knowledge: &Knowledge,
) -> Result<bool, MatchError> {
    let text = fragment.normalized.as_str();
    Ok(match matcher {
        Matcher::Contains(_) | Matcher::Pattern(_) => matcher.matches_normalized(text),
        Matcher::Concept(class) => {
            if !knowledge.ontology.contains(class) {
                return Err(MatchError::UnknownConcept(class.clone()));
            }
            knowledge
                .lexicon
                .concepts_in(text)
                .into_iter()
                .any(|c| knowledge.ontology.is_subsumed(c, class).unwrap_or(false))
        }
        Matcher::Classifier { scorer, threshold, direction } => {
            let scorer = knowledge
                .scorer(scorer)
                .ok_or_else(|| MatchError::UnknownScorer(scorer.clone()))?;
            let score = scorer.score(text);
            match direction {
                Direction::AtLeast => score >= *threshold,
                Direction::Below => score < *threshold,
            }
        }
        Matcher::Numeric { pattern, comparator, bound } => {
            let rhs = match bound {
                Bound::Value(v) => *v,
                Bound::Budget(key) => *ctx
                    .budgets
                    .get(key)
                    .ok_or_else(|| MatchError::UnknownBudgetKey(key.clone()))?,
            };
            match pattern.capture_number(text) {
                Some(value) => comparator.apply(value, rhs),
                None => false,
            }
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    When,
    Unless,
}

/// Gate on the current active beliefs. `when` needs some active text to
/// match; `unless` needs none to.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextCondition {
    pub polarity: Polarity,
    pub matcher: Matcher,
    /// Restricts which active fragments are consulted; `None` means all.
    pub sectors: Option<BTreeSet<SectorId>>,
}

impl ContextCondition {
    pub fn when(matcher: Matcher) -> Self {
        Self { polarity: Polarity::When, matcher, sectors: None }
    }

    pub fn unless(matcher: Matcher) -> Self {
        Self { polarity: Polarity::Unless, matcher, sectors: None }
    }

    pub fn in_sectors(mut self, sectors: impl IntoIterator<Item = SectorId>) -> Self {
        self.sectors = Some(sectors.into_iter().collect());
        self
    }

    pub fn holds(&self, ctx: &EvaluationContext) -> bool {
        let found = ctx
            .active
            .iter()
            .filter(|a| self.sectors.as_ref().is_none_or(|s| s.contains(&a.sector)))
            .any(|a| self.matcher.matches_normalized(&a.text));
        match self.polarity {
            Polarity::When => found,
            Polarity::Unless => !found,
        }
    }
}

/// Inclusive level range; `max: None` is unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LevelRange {
    pub min: u32,
    pub max: Option<u32>,
}

impl LevelRange {
    pub fn contains(&self, level: u32) -> bool {
        level >= self.min && self.max.is_none_or(|max| level <= max)
    }
}

/// Where a rule applies. `None` in any field is the wildcard.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scope {
    pub stages: Option<BTreeSet<Stage>>,
    pub sectors: Option<BTreeSet<SectorId>>,
    pub levels: Option<LevelRange>,
}

impl Scope {
    pub fn any() -> Self {
        Self::default()
    }

    pub fn stages(mut self, stages: impl IntoIterator<Item = Stage>) -> Self {
        self.stages = Some(stages.into_iter().collect());
        self
    }

    pub fn sectors(mut self, sectors: impl IntoIterator<Item = SectorId>) -> Self {
        self.sectors = Some(sectors.into_iter().collect());
        self
    }

    pub fn levels(mut self, min: u32, max: Option<u32>) -> Self {
        self.levels = Some(LevelRange { min, max });
        self
    }

    pub fn includes_stage(&self, stage: Stage) -> bool {
        self.stages.as_ref().is_none_or(|s| s.contains(&stage))
    }

    pub fn includes_sector(&self, sector: &SectorId) -> bool {
        self.sectors.as_ref().is_none_or(|s| s.contains(sector))
    }

    pub fn includes_level(&self, level: u32) -> bool {
        self.levels.is_none_or(|r| r.contains(level))
    }

    fn validate(&self) -> Result<(), String> {
        if self.stages.as_ref().is_some_and(BTreeSet::is_empty) {
            return Err("stage scope is empty".into());
        }
        if self.sectors.as_ref().is_some_and(BTreeSet::is_empty) {
            return Err("sector scope is empty".into());
        }
        if let Some(LevelRange { min, max: Some(max) }) = self.levels {
            if min > max {
                return Err(format!("level range {min}..{max} is inverted"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Reject,
    Quarantine,
    Flag(String),
    Downweight(f64),
}

impl Action {
    pub fn is_terminal(&self) -> bool {
        matches!(self, Action::Reject | Action::Quarantine)
    }
}

/// Whitelist rules have a fixed effect; blacklist rules carry an action.
#[derive(Debug, Clone, PartialEq)]
pub enum Mode {
    Whitelist,
    Blacklist(Action),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterRule {
    pub id: String,
    pub mode: Mode,
    pub scope: Scope,
    pub matcher: Matcher,
    pub context: Vec<ContextCondition>,
    pub priority: i64,
}

impl FilterRule {
    pub fn blacklist(id: impl Into<String>, matcher: Matcher, action: Action) -> Self {
        Self {
            id: id.into(),
            mode: Mode::Blacklist(action),
            scope: Scope::any(),
            matcher,
            context: Vec::new(),
            priority: 0,
        }
    }

    pub fn whitelist(id: impl Into<String>, matcher: Matcher) -> Self {
        Self {
            id: id.into(),
            mode: Mode::Whitelist,
            scope: Scope::any(),
            matcher,
            context: Vec::new(),
            priority: 0,
        }
    }

    pub fn scoped(mut self, scope: Scope) -> Self {
        self.scope = scope;
        self
    }

    pub fn with_priority(mut self, priority: i64) -> Self {
        self.priority = priority;
        self
    }

    pub fn with_context(mut self, condition: ContextCondition) -> Self {
        self.context.push(condition);
        self
    }

    pub fn is_whitelist(&self) -> bool {
        self.mode == Mode::Whitelist
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("rule id is empty".into());
        }
        self.scope.validate()?;
        self.matcher.validate()?;
        for cond in &self.context {
            if !cond.matcher.is_textual() {
                return Err("context conditions take contains or pattern matchers only".into());
            }
            cond.matcher.validate()?;
            if cond.sectors.as_ref().is_some_and(BTreeSet::is_empty) {
                return Err("context sector scope is empty".into());
            }
        }
        match &self.mode {
            Mode::Blacklist(Action::Downweight(f)) if !(*f > 0.0 && *f < 1.0) => {
                Err(format!("downweight factor {f} outside (0, 1)"))
            }
            Mode::Blacklist(Action::Flag(label)) if label.trim().is_empty() => {
                Err("flag label is empty".into())
            }
            _ => Ok(()),
        }
    }

    fn context_holds(&self, ctx: &EvaluationContext) -> bool {
        self.context.iter().all(|c| c.holds(ctx))
    }
}

pub fn in_scope(rule: &FilterRule, stage: Stage, coordinate: &Coordinate) -> bool {
    rule.scope.includes_stage(stage)
        && rule.scope.includes_sector(&coordinate.sector)
        && rule.scope.includes_level(coordinate.level)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FilterError {
    #[error("rule {rule}: {source}")]
    Match { rule: String, source: MatchError },
    #[error("duplicate rule id {0:?}")]
    DuplicateRuleId(String),
    #[error("rule {rule}: {message}")]
    InvalidRule { rule: String, message: String },
}

/// Rules held in evaluation order: descending priority, then ascending id.
#[derive(Debug, Clone, Default)]
pub struct FilterSet {
    rules: Vec<FilterRule>,
    // positions of rules whose stage scope includes each stage
    by_stage: [Vec<usize>; 4],
}

impl PartialEq for FilterSet {
    fn eq(&self, other: &Self) -> bool {
        self.rules == other.rules
    }
}

fn evaluation_order(a: &FilterRule, b: &FilterRule) -> std::cmp::Ordering {
    b.priority.cmp(&a.priority).then_with(|| a.id.cmp(&b.id))
}

impl FilterSet {
    pub fn new(rules: impl IntoIterator<Item = FilterRule>) -> Result<Self, FilterError> {
        let mut rules: Vec<FilterRule> = rules.into_iter().collect();
        let mut seen = BTreeSet::new();
        for rule in &rules {
            if !seen.insert(rule.id.as_str()) {
                return Err(FilterError::DuplicateRuleId(rule.id.clone()));
            }
            rule.validate()
                .map_err(|message| FilterError::InvalidRule { rule: rule.id.clone(), message })?;
        }
        rules.sort_by(evaluation_order);
        let mut by_stage: [Vec<usize>; 4] = Default::default();
        for (pos, rule) in rules.iter().enumerate() {
            for stage in Stage::ALL {
                if rule.scope.includes_stage(stage) {
                    by_stage[stage.index()].push(pos);
                }
            }
        }
        Ok(Self { rules, by_stage })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// Rules in evaluation order.
    pub fn rules(&self) -> &[FilterRule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&FilterRule> {
        self.rules.iter().find(|r| r.id == id)
    }

    /// Copy of this set with one more rule.
    pub fn with_rule(&self, rule: FilterRule) -> Result<Self, FilterError> {
        Self::new(self.rules.iter().cloned().chain(std::iter::once(rule)))
    }
}

/// Union of several sets under the global evaluation order.
pub fn compose_filter_sets(sets: &[&FilterSet]) -> Result<FilterSet, FilterError> {
    FilterSet::new(sets.iter().flat_map(|s| s.rules.iter().cloned()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Outcome {
    Accept,
    Reject,
    Quarantine,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Accept => "accept",
            Outcome::Reject => "reject",
            Outcome::Quarantine => "quarantine",
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Reason {
    NoRuleMatched,
    BlacklistTerminal,
    WhitelistMatched,
    WhitelistUnmatched,
}

impl Reason {
    pub fn as_str(self) -> &'static str {
        match self {
            Reason::NoRuleMatched => "no-rule-matched",
            Reason::BlacklistTerminal => "blacklist-terminal",
            Reason::WhitelistMatched => "whitelist-matched",
            Reason::WhitelistUnmatched => "whitelist-unmatched",
        }
    }
}

impl fmt::Display for Reason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub outcome: Outcome,
    pub flags: Vec<String>,
    pub confidence_factor: f64,
    pub matched_rules: Vec<String>,
    pub reason: Reason,
}

impl Verdict {
    pub fn is_accept(&self) -> bool {
        self.outcome == Outcome::Accept
    }

    /// The last matched rule, which for terminal outcomes is the deciding one.
    pub fn deciding_rule(&self) -> Option<&str> {
        self.matched_rules.last().map(String::as_str)
    }
}

/// Normalized text of one active belief, with its sector.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextText {
    pub sector: SectorId,
    pub text: String,
}

/// Per-call state consulted by context conditions and numeric matchers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvaluationContext {
    pub active: Vec<ContextText>,
    pub budgets: BTreeMap<String, f64>,
    pub cycle: u64,
}

impl EvaluationContext {
    pub fn from_state(state: &BeliefState, budgets: &BTreeMap<String, f64>) -> Self {
        Self {
            active: state
                .active()
                .map(|f| ContextText { sector: f.coordinate.sector.clone(), text: f.normalized.clone() })
                .collect(),
            budgets: budgets.clone(),
            cycle: state.current_cycle(),
        }
    }
}

pub fn apply_filters(
    set: &FilterSet,
    fragment: &BeliefFragment,
    stage: Stage,
    ctx: &EvaluationContext,
    knowledge: &Knowledge,
) -> Result<Verdict, FilterError> {
    let mut flags = Vec::new();
    let mut factor = 1.0;
    let mut matched = Vec::new();
    let mut whitelist_applicable = false;
    let mut whitelisted = false;

    for &pos in &set.by_stage[stage.index()] {
        let rule = &set.rules[pos];
        if !in_scope(rule, stage, &fragment.coordinate) {
            continue;
        }
        // An in-scope whitelist demands admission even when its context
        // keeps it from matching.
        if rule.is_whitelist() {
            whitelist_applicable = true;
        }
        if !rule.context_holds(ctx) {
            continue;
        }
        let hit = matches(&rule.matcher, fragment, ctx, knowledge)
            .map_err(|source| FilterError::Match { rule: rule.id.clone(), source })?;
        if !hit {
            continue;
        }
        matched.push(rule.id.clone());
        match &rule.mode {
            Mode::Whitelist => whitelisted = true,
            Mode::Blacklist(Action::Reject) => {
                return Ok(Verdict {
                    outcome: Outcome::Reject,
                    flags,
                    confidence_factor: factor,
                    matched_rules: matched,
                    reason: Reason::BlacklistTerminal,
                })
            }
            Mode::Blacklist(Action::Quarantine) => {
                return Ok(Verdict {
                    outcome: Outcome::Quarantine,
                    flags,
                    confidence_factor: factor,
                    matched_rules: matched,
                    reason: Reason::BlacklistTerminal,
                })
            }
            Mode::Blacklist(Action::Flag(label)) => flags.push(label.clone()),
            Mode::Blacklist(Action::Downweight(f)) => factor *= f,
        }
    }

    let (outcome, reason) = match (whitelist_applicable, whitelisted) {
        (true, false) => (Outcome::Reject, Reason::WhitelistUnmatched),
        (true, true) => (Outcome::Accept, Reason::WhitelistMatched),
        (false, _) => (Outcome::Accept, Reason::NoRuleMatched),
    };
    Ok(Verdict { outcome, flags, confidence_factor: factor, matched_rules: matched, reason })
}
