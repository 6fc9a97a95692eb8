//! Belief-state filtering for agents whose knowledge lives on a sector ×
//! abstraction-level grid.
//!
//! Rules written in a small DSL gate what enters the belief state, what is
//! recalled from memory, which reflective conclusions are kept and which
//! plans survive. Every decision lands in an append-only audit log.

pub mod audit;
pub mod cli;
pub mod cycle;
pub mod dsl;
pub mod filter;
pub mod knowledge;
pub mod manifold;
pub mod pattern;
pub mod records;
pub mod scenarios;
pub mod text;

pub use audit::{AuditEntry, AuditLog, AuditOutcome, AuditQuery, AuditRecord, AuditStage};
pub use cycle::{ConflictDeclaration, CycleReport, Engine, EngineError, InputEvent, Resolution};
pub use dsl::{parse_rules, serialize_rules, ParseError, ParseErrorKind, RuleFile};
pub use filter::{
    apply_filters, compose_filter_sets, Action, EvaluationContext, FilterRule, FilterSet, Matcher, Mode, Outcome,
    Reason, Scope, Stage, Verdict,
};
pub use knowledge::{KeywordScorer, Knowledge, Lexicon, Ontology, Scorer};
pub use manifold::{BeliefFragment, BeliefState, Coordinate, FragmentId, MemoryStore, SectorId, SourceTrustTable, Status};
