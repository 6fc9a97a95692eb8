//! Shared generators and independent oracles for the integration tests.
//!
//! The oracles are written against the documented behaviour, not against
//! the library internals: a backtracking pattern matcher, a Warshall
//! closure for subsumption, an evaluate-everything-then-decide filter
//! evaluator and a sort-everything retrieval ranking.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use manifold_guard::filter::{Bound, Comparator, ContextCondition, Direction, Polarity};
use manifold_guard::text::normalize_text;
use manifold_guard::{
    Action, BeliefFragment, Coordinate, EvaluationContext, FilterRule, KeywordScorer, Knowledge, Matcher, Mode,
    Outcome, Reason, Scope, SectorId, Stage,
};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub use rand::SeedableRng;

pub type TestRng = ChaCha8Rng;

pub fn rng(seed: u64) -> TestRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub const WORDS: &[&str] = &[
    "alpha", "beta", "door", "server", "zone", "fly", "safety", "units", "energy", "truthful", "deceptive", "plan",
    "online", "offline", "requires", "no-fly", "système", "ÉTAT",
];

pub fn sectors() -> Vec<SectorId> {
    vec![SectorId::Perc, SectorId::Plan, SectorId::Mem, SectorId::Refl, SectorId::Know, SectorId::custom("comm").unwrap()]
}

pub fn pick<'a, T>(rng: &mut TestRng, items: &'a [T]) -> &'a T {
    items.choose(rng).expect("non-empty")
}

fn random_case(rng: &mut TestRng, word: &str) -> String {
    match rng.gen_range(0..3) {
        0 => word.to_owned(),
        1 => word.to_uppercase(),
        _ => word.chars().enumerate().map(|(i, c)| if i % 2 == 0 { c.to_ascii_uppercase() } else { c }).collect(),
    }
}

/// Random text over a small vocabulary so that matchers actually fire.
pub fn gen_text(rng: &mut TestRng) -> String {
    let n = rng.gen_range(1..=6);
    let mut parts = Vec::new();
    for _ in 0..n {
        let part = if rng.gen_bool(0.2) {
            rng.gen_range(0..200).to_string()
        } else {
            { let w = *pick(rng, WORDS); random_case(rng, w) }
        };
        parts.push(part);
    }
    let sep = if rng.gen_bool(0.2) { "  \t" } else { " " };
    parts.join(sep)
}

pub fn gen_sector(rng: &mut TestRng) -> SectorId {
    pick(rng, &sectors()).clone()
}

pub fn gen_stage(rng: &mut TestRng) -> Stage {
    *pick(rng, &Stage::ALL)
}

pub fn gen_fragment(rng: &mut TestRng, id: u64) -> BeliefFragment {
    let coord = Coordinate::new(gen_sector(rng), rng.gen_range(0..4));
    BeliefFragment::new(id, &gen_text(rng), coord, "test:gen", rng.gen_range(0.0..=1.0), 1).unwrap()
}

/// Description of a knowledge base, kept around so oracles can recompute
/// everything without asking the library.
#[derive(Debug, Clone)]
pub struct KnowledgeSpec {
    pub concepts: Vec<String>,
    /// (child, parent) indices into `concepts`.
    pub edges: Vec<(usize, usize)>,
    pub phrases: Vec<(String, Vec<usize>)>,
    pub scorers: BTreeMap<String, (f64, BTreeMap<String, f64>)>,
    pub budgets: BTreeMap<String, f64>,
}

impl KnowledgeSpec {
    pub fn generate(rng: &mut TestRng) -> Self {
        let concepts: Vec<String> = (0..6).map(|i| format!("c{i}")).collect();
        let mut edges = Vec::new();
        for child in 0..concepts.len() {
            for parent in 0..child {
                if rng.gen_bool(0.3) {
                    edges.push((child, parent));
                }
            }
        }
        let mut phrases = Vec::new();
        for _ in 0..4 {
            let phrase = { let w = *pick(rng, WORDS); random_case(rng, w) };
            let tagged: Vec<usize> = (0..rng.gen_range(1..=2)).map(|_| rng.gen_range(0..concepts.len())).collect();
            phrases.push((phrase, tagged));
        }
        let mut scorers = BTreeMap::new();
        for name in ["risk", "tone"] {
            let mut weights = BTreeMap::new();
            for _ in 0..4 {
                weights.insert(pick(rng, WORDS).to_lowercase(), (rng.gen_range(-0.5..1.0f64) * 100.0).round() / 100.0);
            }
            scorers.insert(name.to_owned(), ((rng.gen_range(0.0..0.5f64) * 100.0).round() / 100.0, weights));
        }
        let budgets = BTreeMap::from([
            ("energy".to_owned(), rng.gen_range(0..150) as f64),
            ("cap".to_owned(), rng.gen_range(0..150) as f64),
        ]);
        Self { concepts, edges, phrases, scorers, budgets }
    }

    pub fn build(&self) -> Knowledge {
        let mut k = Knowledge::new();
        for c in &self.concepts {
            k.ontology.add_concept(c).unwrap();
        }
        for &(child, parent) in &self.edges {
            k.ontology.add_is_a(&self.concepts[child], &self.concepts[parent]).unwrap();
        }
        for (phrase, tagged) in &self.phrases {
            let names: Vec<&str> = tagged.iter().map(|&i| self.concepts[i].as_str()).collect();
            k.lexicon.insert(&k.ontology, phrase, names).unwrap();
        }
        for (name, (bias, weights)) in &self.scorers {
            let mut s = KeywordScorer::new(name.clone(), *bias);
            for (w, v) in weights {
                s = s.with_weight(w, *v);
            }
            k.add_scorer(name.clone(), Arc::new(s)).unwrap();
        }
        k
    }

    fn concept_index(&self, name: &str) -> Option<usize> {
        self.concepts.iter().position(|c| c == name)
    }

    /// Oracle: concepts mentioned in `normalized` that sit under `class`.
    pub fn concept_hit(&self, normalized: &str, class: &str) -> bool {
        let Some(target) = self.concept_index(class) else { return false };
        let closure = warshall(self.concepts.len(), &self.edges);
        self.phrases
            .iter()
            .filter(|(p, _)| normalized.contains(&normalize_text(p)))
            .flat_map(|(_, tagged)| tagged.iter())
            .any(|&c| closure[c][target])
    }

    /// Oracle: bias plus the weight of every distinct token, clamped.
    pub fn score(&self, scorer: &str, normalized: &str) -> f64 {
        let (bias, weights) = &self.scorers[scorer];
        let distinct: BTreeSet<&str> =
            normalized.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).collect();
        let sum: f64 = distinct.iter().filter_map(|t| weights.get(*t)).sum();
        (bias + sum).clamp(0.0, 1.0)
    }
}

/// Reflexive-transitive closure by Warshall's algorithm.
pub fn warshall(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<bool>> {
    let mut reach = vec![vec![false; n]; n];
    for (i, row) in reach.iter_mut().enumerate() {
        row[i] = true;
    }
    for &(a, b) in edges {
        reach[a][b] = true;
    }
    for k in 0..n {
        for i in 0..n {
            if reach[i][k] {
                for j in 0..n {
                    if reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
    }
    reach
}

const PATTERN_PIECES: &[&str] = &["alpha", "door", "zone", "fly", "units", "e", "a", "-"];

pub fn gen_pattern_source(rng: &mut TestRng) -> String {
    let mut s = String::new();
    for _ in 0..rng.gen_range(1..=3) {
        match rng.gen_range(0..6) {
            0 => s.push('.'),
            1 => s.push_str("\\d"),
            2 => s.push_str(".*"),
            3 => s.push(' '),
            _ => s.push_str(&{ let w = *pick(rng, PATTERN_PIECES); random_case(rng, w) }),
        }
        if rng.gen_bool(0.15) && !s.ends_with('*') {
            s.push('*');
        }
    }
    s
}

pub fn gen_textual(rng: &mut TestRng) -> Matcher {
    if rng.gen_bool(0.5) {
        let w = { let w = *pick(rng, WORDS); random_case(rng, w) };
        Matcher::contains(if rng.gen_bool(0.2) { format!("{w} {}", pick(rng, WORDS)) } else { w })
    } else {
        Matcher::pattern(&gen_pattern_source(rng)).unwrap()
    }
}

pub fn gen_matcher(rng: &mut TestRng, spec: &KnowledgeSpec) -> Matcher {
    match rng.gen_range(0..10) {
        0..=4 => gen_textual(rng),
        5 | 6 => Matcher::Concept(pick(rng, &spec.concepts).clone()),
        7 => Matcher::Classifier {
            scorer: pick(rng, &["risk", "tone"]).to_string(),
            threshold: (rng.gen_range(0.0..=1.0f64) * 20.0).round() / 20.0,
            direction: if rng.gen_bool(0.5) { Direction::AtLeast } else { Direction::Below },
        },
        _ => {
            let source = pick(rng, &["requires (\\d+) units", "(\\d+)", "(\\d+) units", "energy (\\d+)"]);
            let comparator = *pick(
                rng,
                &[Comparator::Gt, Comparator::Ge, Comparator::Lt, Comparator::Le, Comparator::Eq, Comparator::Ne],
            );
            let bound = if rng.gen_bool(0.5) {
                Bound::Budget(pick(rng, &["energy", "cap"]).to_string())
            } else {
                Bound::Value(rng.gen_range(0..150) as f64)
            };
            Matcher::numeric(source, comparator, bound).unwrap()
        }
    }
}

pub fn gen_scope(rng: &mut TestRng) -> Scope {
    let mut scope = Scope::any();
    if rng.gen_bool(0.6) {
        let mut stages: Vec<Stage> = Stage::ALL.iter().copied().filter(|_| rng.gen_bool(0.5)).collect();
        if stages.is_empty() {
            stages.push(gen_stage(rng));
        }
        scope = scope.stages(stages);
    }
    if rng.gen_bool(0.6) {
        let mut picked: Vec<SectorId> = sectors().into_iter().filter(|_| rng.gen_bool(0.4)).collect();
        if picked.is_empty() {
            picked.push(gen_sector(rng));
        }
        scope = scope.sectors(picked);
    }
    if rng.gen_bool(0.3) {
        let min = rng.gen_range(0..3);
        let max = if rng.gen_bool(0.3) { None } else { Some(min + rng.gen_range(0..3)) };
        scope = scope.levels(min, max);
    }
    scope
}

pub fn gen_action(rng: &mut TestRng) -> Action {
    match rng.gen_range(0..4) {
        0 => Action::Reject,
        1 => Action::Quarantine,
        2 => Action::Flag(pick(rng, &["review", "doubt", "stale"]).to_string()),
        _ => Action::Downweight(*pick(rng, &[0.5, 0.25, 0.9])),
    }
}

pub fn gen_context(rng: &mut TestRng) -> ContextCondition {
    let m = gen_textual(rng);
    let mut c = if rng.gen_bool(0.5) { ContextCondition::when(m) } else { ContextCondition::unless(m) };
    if rng.gen_bool(0.3) {
        c = c.in_sectors([gen_sector(rng)]);
    }
    c
}

pub fn gen_rule(rng: &mut TestRng, id: String, spec: &KnowledgeSpec) -> FilterRule {
    let matcher = gen_matcher(rng, spec);
    let mut rule = if rng.gen_bool(0.25) {
        FilterRule::whitelist(id, matcher)
    } else {
        FilterRule::blacklist(id, matcher, gen_action(rng))
    };
    rule = rule.scoped(gen_scope(rng)).with_priority(rng.gen_range(-3..=3));
    for _ in 0..rng.gen_range(0..=2) {
        if rng.gen_bool(0.4) {
            rule = rule.with_context(gen_context(rng));
        }
    }
    rule
}

pub fn gen_rules(rng: &mut TestRng, spec: &KnowledgeSpec, max: usize) -> Vec<FilterRule> {
    let n = rng.gen_range(0..=max);
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(rng);
    ids.into_iter().map(|i| gen_rule(rng, format!("r{i}"), spec)).collect()
}

pub fn gen_eval_context(rng: &mut TestRng, spec: &KnowledgeSpec) -> EvaluationContext {
    let mut ctx = EvaluationContext { budgets: spec.budgets.clone(), cycle: 1, ..Default::default() };
    for _ in 0..rng.gen_range(0..=5) {
        ctx.active.push(manifold_guard::filter::ContextText {
            sector: gen_sector(rng),
            text: normalize_text(&gen_text(rng)),
        });
    }
    ctx
}

// ---------------------------------------------------------------------------
// Backtracking pattern oracle

#[derive(Debug, Clone, Copy)]
enum Tok {
    Lit(char),
    Any,
    Digit,
    Star(Atomish),
    Capture,
}

#[derive(Debug, Clone, Copy)]
enum Atomish {
    Lit(char),
    Any,
    Digit,
}

impl Atomish {
    fn ok(self, c: char) -> bool {
        match self {
            Atomish::Lit(l) => l == c,
            Atomish::Any => true,
            Atomish::Digit => c.is_ascii_digit(),
        }
    }
}

fn lower(c: char) -> char {
    let mut l = c.to_lowercase();
    match (l.next(), l.next()) {
        (Some(x), None) => x,
        _ => c,
    }
}

/// Tokenizes a pattern the library already accepted.
fn tokenize_pattern(src: &str) -> Vec<Tok> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let atom = if chars[i..].starts_with(&['(', '\\', 'd', '+', ')']) {
            out.push(Tok::Capture);
            i += 5;
            continue;
        } else if chars[i] == '.' {
            Atomish::Any
        } else if chars[i] == '\\' {
            i += 1;
            if chars[i] == 'd' {
                Atomish::Digit
            } else {
                Atomish::Lit(chars[i])
            }
        } else {
            Atomish::Lit(lower(chars[i]))
        };
        i += 1;
        if chars.get(i) == Some(&'*') {
            out.push(Tok::Star(atom));
            i += 1;
        } else {
            out.push(match atom {
                Atomish::Lit(c) => Tok::Lit(c),
                Atomish::Any => Tok::Any,
                Atomish::Digit => Tok::Digit,
            });
        }
    }
    out
}

fn bt(toks: &[Tok], text: &[char], pos: usize, cap: &mut Option<(usize, usize)>) -> bool {
    let Some((first, rest)) = toks.split_first() else { return true };
    let one = |a: Atomish| pos < text.len() && a.ok(text[pos]);
    match *first {
        Tok::Lit(c) => one(Atomish::Lit(c)) && bt(rest, text, pos + 1, cap),
        Tok::Any => one(Atomish::Any) && bt(rest, text, pos + 1, cap),
        Tok::Digit => one(Atomish::Digit) && bt(rest, text, pos + 1, cap),
        Tok::Star(a) => {
            let mut end = pos;
            while end < text.len() && a.ok(text[end]) {
                end += 1;
            }
            (pos..=end).rev().any(|e| bt(rest, text, e, cap))
        }
        Tok::Capture => {
            let mut end = pos;
            while end < text.len() && text[end].is_ascii_digit() {
                end += 1;
            }
            for e in (pos + 1..=end).rev() {
                let saved = *cap;
                if cap.is_none() {
                    *cap = Some((pos, e));
                }
                if bt(rest, text, e, cap) {
                    return true;
                }
                *cap = saved;
            }
            false
        }
    }
}

/// Oracle: leftmost, greedy-first match. `Some(capture)` on a match.
pub fn oracle_find(src: &str, text: &str) -> Option<Option<String>> {
    let toks = tokenize_pattern(src);
    let chars: Vec<char> = text.chars().collect();
    for start in 0..=chars.len() {
        let mut cap = None;
        if bt(&toks, &chars, start, &mut cap) {
            return Some(cap.map(|(a, b)| chars[a..b].iter().collect()));
        }
    }
    None
}

// ---------------------------------------------------------------------------
// Naive filter evaluator

#[derive(Debug, Clone, PartialEq)]
pub struct RefVerdict {
    pub outcome: Outcome,
    pub reason: Reason,
    pub flags: Vec<String>,
    pub factor: f64,
    pub matched: Vec<String>,
}

fn oracle_textual(m: &Matcher, normalized: &str) -> bool {
    match m {
        Matcher::Contains(lit) => normalized.contains(&normalize_text(lit)),
        Matcher::Pattern(p) => oracle_find(p.source(), normalized).is_some(),
        _ => unreachable!("context conditions are textual"),
    }
}

fn oracle_match(m: &Matcher, normalized: &str, ctx: &EvaluationContext, spec: &KnowledgeSpec) -> bool {
    match m {
        Matcher::Contains(_) | Matcher::Pattern(_) => oracle_textual(m, normalized),
        Matcher::Concept(class) => spec.concept_hit(normalized, class),
        Matcher::Classifier { scorer, threshold, direction } => {
            let s = spec.score(scorer, normalized);
            match direction {
                Direction::AtLeast => s >= *threshold,
                Direction::Below => s < *threshold,
            }
        }
        Matcher::Numeric { pattern, comparator, bound } => {
            let rhs = match bound {
                Bound::Value(v) => *v,
                Bound::Budget(k) => ctx.budgets[k],
            };
            match oracle_find(pattern.source(), normalized) {
                Some(Some(digits)) => {
                    let lhs: f64 = digits.parse().unwrap();
                    match comparator {
                        Comparator::Gt => lhs > rhs,
                        Comparator::Ge => lhs >= rhs,
                        Comparator::Lt => lhs < rhs,
                        Comparator::Le => lhs <= rhs,
                        Comparator::Eq => lhs == rhs,
                        Comparator::Ne => lhs != rhs,
                    }
                }
                _ => false,
            }
        }
    }
}

fn oracle_condition(c: &ContextCondition, ctx: &EvaluationContext) -> bool {
    let mut any = false;
    for a in &ctx.active {
        if let Some(s) = &c.sectors {
            if !s.contains(&a.sector) {
                continue;
            }
        }
        if oracle_textual(&c.matcher, &a.text) {
            any = true;
        }
    }
    match c.polarity {
        Polarity::When => any,
        Polarity::Unless => !any,
    }
}

fn oracle_in_scope(rule: &FilterRule, stage: Stage, coord: &Coordinate) -> bool {
    let stage_ok = match &rule.scope.stages {
        None => true,
        Some(s) => s.iter().any(|x| *x == stage),
    };
    let sector_ok = match &rule.scope.sectors {
        None => true,
        Some(s) => s.iter().any(|x| *x == coord.sector),
    };
    let level_ok = match rule.scope.levels {
        None => true,
        Some(r) => coord.level >= r.min && r.max.is_none_or(|m| coord.level <= m),
    };
    stage_ok && sector_ok && level_ok
}

/// Evaluates every applicable rule first, then decides.
pub fn reference_verdict(
    rules: &[FilterRule],
    fragment: &BeliefFragment,
    stage: Stage,
    ctx: &EvaluationContext,
    spec: &KnowledgeSpec,
) -> RefVerdict {
    let mut ordered: Vec<&FilterRule> = rules.iter().collect();
    ordered.sort_by(|a, b| b.priority.cmp(&a.priority).then_with(|| a.id.cmp(&b.id)));

    let applicable: Vec<&FilterRule> =
        ordered.into_iter().filter(|r| oracle_in_scope(r, stage, &fragment.coordinate)).collect();
    let hits: Vec<bool> = applicable
        .iter()
        .map(|r| {
            r.context.iter().all(|c| oracle_condition(c, ctx)) && oracle_match(&r.matcher, &fragment.normalized, ctx, spec)
        })
        .collect();

    let terminal = applicable.iter().zip(&hits).position(|(r, hit)| {
        *hit && matches!(r.mode, Mode::Blacklist(Action::Reject) | Mode::Blacklist(Action::Quarantine))
    });
    let upto = terminal.map_or(applicable.len(), |t| t + 1);

    let mut v = RefVerdict { outcome: Outcome::Accept, reason: Reason::NoRuleMatched, flags: vec![], factor: 1.0, matched: vec![] };
    for (r, hit) in applicable[..upto].iter().zip(&hits[..upto]) {
        if !hit {
            continue;
        }
        v.matched.push(r.id.clone());
        match &r.mode {
            Mode::Blacklist(Action::Flag(l)) => v.flags.push(l.clone()),
            Mode::Blacklist(Action::Downweight(f)) => v.factor *= f,
            _ => {}
        }
    }
    if let Some(t) = terminal {
        v.reason = Reason::BlacklistTerminal;
        v.outcome = match applicable[t].mode {
            Mode::Blacklist(Action::Reject) => Outcome::Reject,
            _ => Outcome::Quarantine,
        };
        return v;
    }
    let whitelists: Vec<bool> =
        applicable.iter().zip(&hits).filter(|(r, _)| r.mode == Mode::Whitelist).map(|(_, h)| *h).collect();
    if !whitelists.is_empty() {
        if whitelists.iter().any(|h| *h) {
            v.reason = Reason::WhitelistMatched;
        } else {
            v.outcome = Outcome::Reject;
            v.reason = Reason::WhitelistUnmatched;
        }
    }
    v
}

// ---------------------------------------------------------------------------
// Retrieval oracle

/// Brute-force ranking: score every active fragment by the number of
/// distinct shared tokens, drop zero scores, sort, truncate.
pub fn oracle_retrieve(fragments: &[BeliefFragment], query: &str, limit: usize) -> Vec<u64> {
    let toks = |s: &str| -> BTreeSet<String> {
        normalize_text(s).split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(String::from).collect()
    };
    let q = toks(query);
    let mut scored: Vec<(usize, u64, u64)> = fragments
        .iter()
        .filter(|f| f.is_active())
        .map(|f| (toks(&f.text).intersection(&q).count(), f.created_cycle, f.id))
        .filter(|(s, _, _)| *s > 0)
        .collect();
    scored.sort_by(|a, b| b.0.cmp(&a.0).then(b.1.cmp(&a.1)).then(a.2.cmp(&b.2)));
    scored.into_iter().take(limit).map(|(_, _, id)| id).collect()
}

// ---------------------------------------------------------------------------
// Random DAGs

/// Random DAG on `n` nodes: edges only from higher to lower index, then
/// relabelled by a random permutation so the order is not visible.
pub fn gen_dag(rng: &mut TestRng, n: usize, density: f64) -> Vec<(usize, usize)> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let mut edges = Vec::new();
    for a in 0..n {
        for b in 0..a {
            if rng.gen_bool(density) {
                edges.push((perm[a], perm[b]));
            }
        }
    }
    edges
}

// ---------------------------------------------------------------------------
// Rule files

use manifold_guard::cycle::{ConflictDeclaration, Resolution};
use manifold_guard::{FilterSet, RuleFile, SourceTrustTable};

const AWKWARD: &[&str] = &["\"", "\\", "ü", "\t", "#", "{", "}", ":", ",", "..", "\u{1F600}", "\\d", "'"];

fn gen_literal(rng: &mut TestRng) -> String {
    let mut s = { let w = *pick(rng, WORDS); random_case(rng, w) };
    for _ in 0..rng.gen_range(0..3) {
        s.push_str(pick(rng, AWKWARD));
        if rng.gen_bool(0.5) {
            s.push_str(pick(rng, WORDS));
        }
    }
    s
}

fn gen_dsl_pattern(rng: &mut TestRng) -> String {
    let mut s = gen_pattern_source(rng);
    if rng.gen_bool(0.3) {
        s.push_str(pick(rng, &["\\.", "\\\\", "\\*", "\\(", "\\)"]));
    }
    s
}

fn gen_dsl_textual(rng: &mut TestRng) -> Matcher {
    if rng.gen_bool(0.5) {
        Matcher::contains(gen_literal(rng))
    } else {
        Matcher::pattern(&gen_dsl_pattern(rng)).unwrap()
    }
}

fn gen_custom_sector(rng: &mut TestRng) -> SectorId {
    if rng.gen_bool(0.7) {
        gen_sector(rng)
    } else {
        SectorId::custom(pick(rng, &["ops.log-2", "comm_in", "x"])).unwrap()
    }
}

fn gen_dsl_rule(rng: &mut TestRng, id: String) -> FilterRule {
    let matcher = match rng.gen_range(0..5) {
        0 | 1 => gen_dsl_textual(rng),
        2 => Matcher::Concept(pick(rng, &["c0", "hazardous-action", "a.b"]).to_string()),
        3 => Matcher::Classifier {
            scorer: pick(rng, &["risk", "tone-2"]).to_string(),
            threshold: rng.gen_range(0.0..=1.0),
            direction: if rng.gen_bool(0.5) { Direction::AtLeast } else { Direction::Below },
        },
        _ => Matcher::numeric(
            pick(rng, &["requires (\\d+) units", "(\\d+)", "x\\.(\\d+)"]),
            *pick(rng, &[Comparator::Gt, Comparator::Ge, Comparator::Lt, Comparator::Le, Comparator::Eq, Comparator::Ne]),
            if rng.gen_bool(0.5) {
                Bound::Budget(pick(rng, &["energy", "cap_2"]).to_string())
            } else {
                Bound::Value(rng.gen_range(-1e6..1e6))
            },
        )
        .unwrap(),
    };
    let mut rule = if rng.gen_bool(0.3) {
        FilterRule::whitelist(id, matcher)
    } else {
        let action = match rng.gen_range(0..4) {
            0 => Action::Reject,
            1 => Action::Quarantine,
            2 => Action::Flag(pick(rng, &["review", "x.y-z", "resolve_1"]).to_string()),
            _ => Action::Downweight(rng.gen_range(0.001..0.999)),
        };
        FilterRule::blacklist(id, matcher, action)
    };
    let mut scope = gen_scope(rng);
    if rng.gen_bool(0.3) {
        scope = scope.sectors([gen_custom_sector(rng), gen_custom_sector(rng)]);
    }
    rule = rule.scoped(scope).with_priority(*pick(rng, &[0, 1, -7, 42, i64::MAX, i64::MIN]));
    for _ in 0..rng.gen_range(0..=2) {
        let m = gen_dsl_textual(rng);
        let mut c = if rng.gen_bool(0.5) { ContextCondition::when(m) } else { ContextCondition::unless(m) };
        if rng.gen_bool(0.4) {
            c = c.in_sectors([gen_custom_sector(rng), gen_custom_sector(rng)]);
        }
        rule = rule.with_context(c);
    }
    rule
}

/// A random, valid rule file using every construct of the language.
pub fn gen_rule_file(rng: &mut TestRng) -> RuleFile {
    let mut used = BTreeSet::new();
    let mut id = |rng: &mut TestRng, prefix: &str| loop {
        let candidate = format!("{prefix}{}{}", pick(rng, &["", "-", "_", "."]), rng.gen_range(0..1000));
        if used.insert(candidate.clone()) {
            return candidate;
        }
    };
    let mut rules = Vec::new();
    for _ in 0..rng.gen_range(0..=8) {
        let rule_id = id(rng, "r");
        rules.push(gen_dsl_rule(rng, rule_id));
    }
    let mut contradictions = Vec::new();
    for _ in 0..rng.gen_range(0..=3) {
        let resolve = match rng.gen_range(0..3) {
            0 => Resolution::QuarantineNewer,
            1 => Resolution::DownweightNewer(rng.gen_range(0.01..0.99)),
            _ => Resolution::FlagOnly,
        };
        let decl_id = id(rng, "k");
        let (a, b) = (gen_dsl_textual(rng), gen_dsl_textual(rng));
        contradictions.push(ConflictDeclaration::new(decl_id, a, b, resolve).unwrap());
    }
    let mut budgets = BTreeMap::new();
    for _ in 0..rng.gen_range(0..=3) {
        budgets.insert(pick(rng, &["energy", "cap_2", "time.s"]).to_string(), rng.gen_range(-1e9..1e9));
    }
    let mut trust = SourceTrustTable::default();
    for _ in 0..rng.gen_range(0..=3) {
        let prefix = pick(rng, &["sensor:", "comm:peer-\"3\"", "", "internal:\\x"]).to_string();
        trust.insert(prefix, rng.gen_range(0.0..=1.0)).unwrap();
    }
    RuleFile { filter_set: FilterSet::new(rules).unwrap(), contradictions, budgets, trust }
}
