//! Concept taxonomy, phrase lexicon and keyword scorers.
//!
//! These back the `concept` and `classifier` matchers. Everything here is
//! immutable once loaded and safe to share between engines.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::text::{normalize_text, tokens};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KnowledgeError {
    #[error("unknown concept {0:?}")]
    UnknownConcept(String),
    #[error("invalid concept name {0:?}")]
    InvalidConcept(String),
    #[error("is-a cycle through concept {0:?}")]
    Cycle(String),
    #[error("duplicate scorer {0:?}")]
    DuplicateScorer(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type Result<T, E = KnowledgeError> = std::result::Result<T, E>;

/// Concept names: non-empty, no whitespace or DSL punctuation.
pub fn valid_concept_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| !c.is_whitespace() && !c.is_control() && !matches!(c, '{' | '}' | ':' | ',' | '"' | '#'))
}

/// An is-a DAG over named concepts. Multiple parents are allowed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Ontology {
    concepts: BTreeSet<String>,
    parents: BTreeMap<String, BTreeSet<String>>,
}

impl Ontology {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_concept(&mut self, name: &str) -> Result<()> {
        if !valid_concept_name(name) {
            return Err(KnowledgeError::InvalidConcept(name.to_owned()));
        }
        self.concepts.insert(name.to_owned());
        Ok(())
    }

    /// Adds `child is-a parent`. Both must be declared; the edge must not
    /// close a cycle.
    pub fn add_is_a(&mut self, child: &str, parent: &str) -> Result<()> {
        self.require(child)?;
        self.require(parent)?;
        if self.reaches(parent, child) {
            return Err(KnowledgeError::Cycle(child.to_owned()));
        }
        self.parents.entry(child.to_owned()).or_default().insert(parent.to_owned());
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.concepts.contains(name)
    }

    pub fn concepts(&self) -> impl Iterator<Item = &str> {
        self.concepts.iter().map(String::as_str)
    }

    pub fn parents(&self, name: &str) -> impl Iterator<Item = &str> {
        self.parents.get(name).into_iter().flatten().map(String::as_str)
    }

    fn require(&self, name: &str) -> Result<()> {
        if self.contains(name) {
            Ok(())
        } else {
            Err(KnowledgeError::UnknownConcept(name.to_owned()))
        }
    }

    /// Reflexive-transitive is-a.
    pub fn is_subsumed(&self, concept: &str, ancestor: &str) -> Result<bool> {
        self.require(concept)?;
        self.require(ancestor)?;
        Ok(self.reaches(concept, ancestor))
    }

    fn reaches(&self, from: &str, to: &str) -> bool {
        let mut seen = BTreeSet::new();
        let mut stack = vec![from];
        while let Some(node) = stack.pop() {
            if node == to {
                return true;
            }
            if seen.insert(node) {
                stack.extend(self.parents(node));
            }
        }
        false
    }
}

/// Phrase → concepts lookup over normalized text.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Lexicon {
    entries: BTreeMap<String, BTreeSet<String>>,
}

impl Lexicon {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a phrase. Concepts must exist in `ontology`.
    pub fn insert<'a>(
        &mut self,
        ontology: &Ontology,
        phrase: &str,
        concepts: impl IntoIterator<Item = &'a str>,
    ) -> Result<()> {
        let key = normalize_text(phrase);
        if key.is_empty() {
            return Err(KnowledgeError::Parse { line: 0, message: "empty lexicon phrase".into() });
        }
        let entry = self.entries.entry(key).or_default();
        for concept in concepts {
            ontology.require(concept)?;
            entry.insert(concept.to_owned());
        }
        Ok(())
    }

    pub fn entries(&self) -> &BTreeMap<String, BTreeSet<String>> {
        &self.entries
    }

    /// Union of the concepts of every phrase occurring in the normalized text.
    pub fn concepts_in(&self, text: &str) -> BTreeSet<&str> {
        let normalized = normalize_text(text);
        self.entries
            .iter()
            .filter(|(phrase, _)| normalized.contains(phrase.as_str()))
            .flat_map(|(_, concepts)| concepts.iter().map(String::as_str))
            .collect()
    }
}

/// A text scorer producing a value in `[0, 1]`.
pub trait Scorer: Send + Sync + fmt::Debug {
    fn score(&self, text: &str) -> f64;
}

/// Fixed-weight bag-of-words scorer. Each distinct token counts once.
#[derive(Debug, Clone, PartialEq)]
pub struct KeywordScorer {
    pub name: String,
    pub weights: BTreeMap<String, f64>,
    pub bias: f64,
}

impl KeywordScorer {
    pub fn new(name: impl Into<String>, bias: f64) -> Self {
        Self { name: name.into(), weights: BTreeMap::new(), bias }
    }

    pub fn with_weight(mut self, token: &str, weight: f64) -> Self {
        self.weights.insert(normalize_text(token), weight);
        self
    }
}

impl Scorer for KeywordScorer {
    fn score(&self, text: &str) -> f64 {
        let normalized = normalize_text(text);
        let distinct: BTreeSet<&str> = tokens(&normalized).collect();
        let sum: f64 = distinct.iter().filter_map(|t| self.weights.get(*t)).sum();
        (self.bias + sum).clamp(0.0, 1.0)
    }
}

pub fn keyword_score(scorer: &KeywordScorer, text: &str) -> f64 {
    scorer.score(text)
}

/// Everything a matcher may consult beyond the fragment itself.
#[derive(Debug, Clone, Default)]
pub struct Knowledge {
    pub ontology: Ontology,
    pub lexicon: Lexicon,
    scorers: BTreeMap<String, Arc<dyn Scorer>>,
}

impl Knowledge {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_scorer(&mut self, name: impl Into<String>, scorer: Arc<dyn Scorer>) -> Result<()> {
        let name = name.into();
        if self.scorers.contains_key(&name) {
            return Err(KnowledgeError::DuplicateScorer(name));
        }
        self.scorers.insert(name, scorer);
        Ok(())
    }

    pub fn scorer(&self, name: &str) -> Option<&dyn Scorer> {
        self.scorers.get(name).map(|s| s.as_ref())
    }

    pub fn has_scorer(&self, name: &str) -> bool {
        self.scorers.contains_key(name)
    }

    /// Loads the line-oriented knowledge file:
    ///
    /// ```text
    /// concept <name>
    /// isa <child> <parent>
    /// term "<phrase>" -> <concept>[,<concept>...]
    /// scorer <name> bias <real>
    /// w <token> <real>
    /// ```
    ///
    /// `#` starts a comment. `isa` and `term` may reference concepts
    /// declared later in the file; `w` lines attach to the preceding scorer.
    pub fn parse(source: &str) -> Result<Self> {
        let mut concepts: Vec<(usize, String)> = Vec::new();
        let mut edges: Vec<(usize, String, String)> = Vec::new();
        let mut terms: Vec<(usize, String, Vec<String>)> = Vec::new();
        let mut scorers: Vec<KeywordScorer> = Vec::new();

        for (index, raw) in source.lines().enumerate() {
            let line = index + 1;
            let perr = |message: String| KnowledgeError::Parse { line, message };
            let content = strip_comment(raw).trim();
            if content.is_empty() {
                continue;
            }
            let (directive, rest) = content.split_once(char::is_whitespace).unwrap_or((content, ""));
            let rest = rest.trim();
            match directive {
                "concept" => {
                    let name = single_word(rest).ok_or_else(|| perr("expected `concept <name>`".into()))?;
                    if !valid_concept_name(name) {
                        return Err(perr(format!("invalid concept name {name:?}")));
                    }
                    concepts.push((line, name.to_owned()));
                }
                "isa" => {
                    let parts: Vec<&str> = rest.split_whitespace().collect();
                    let [child, parent] = parts[..] else {
                        return Err(perr("expected `isa <child> <parent>`".into()));
                    };
                    edges.push((line, child.to_owned(), parent.to_owned()));
                }
                "term" => {
                    let (phrase, after) = quoted(rest).ok_or_else(|| perr("expected quoted phrase".into()))?;
                    let targets = after
                        .trim()
                        .strip_prefix("->")
                        .ok_or_else(|| perr("expected `->` after phrase".into()))?;
                    let names: Vec<String> = targets.split(',').map(|s| s.trim().to_owned()).collect();
                    if names.iter().any(|n| n.is_empty() || n.contains(char::is_whitespace)) {
                        return Err(perr("expected comma-separated concept names".into()));
                    }
                    terms.push((line, phrase, names));
                }
                "scorer" => {
                    let parts: Vec<&str> = rest.split_whitespace().collect();
                    let [name, "bias", bias] = parts[..] else {
                        return Err(perr("expected `scorer <name> bias <real>`".into()));
                    };
                    let bias = parse_real(bias).ok_or_else(|| perr(format!("invalid bias {bias:?}")))?;
                    if scorers.iter().any(|s| s.name == name) {
                        return Err(perr(format!("duplicate scorer {name:?}")));
                    }
                    scorers.push(KeywordScorer::new(name, bias));
                }
                "w" => {
                    let parts: Vec<&str> = rest.split_whitespace().collect();
                    let [token, weight] = parts[..] else {
                        return Err(perr("expected `w <token> <real>`".into()));
                    };
                    let weight = parse_real(weight).ok_or_else(|| perr(format!("invalid weight {weight:?}")))?;
                    let scorer = scorers.last_mut().ok_or_else(|| perr("`w` before any `scorer`".into()))?;
                    let normalized = normalize_text(token);
                    if tokens(&normalized).collect::<Vec<_>>() != [normalized.as_str()] {
                        return Err(perr(format!("{token:?} is not a single token")));
                    }
                    scorer.weights.insert(normalized, weight);
                }
                other => return Err(perr(format!("unknown directive {other:?}"))),
            }
        }

        let mut knowledge = Knowledge::new();
        for (_, name) in &concepts {
            knowledge.ontology.add_concept(name)?;
        }
        for (line, child, parent) in edges {
            knowledge
                .ontology
                .add_is_a(&child, &parent)
                .map_err(|e| KnowledgeError::Parse { line, message: e.to_string() })?;
        }
        for (line, phrase, names) in terms {
            knowledge
                .lexicon
                .insert(&knowledge.ontology, &phrase, names.iter().map(String::as_str))
                .map_err(|e| KnowledgeError::Parse { line, message: e.to_string() })?;
        }
        for scorer in scorers {
            let name = scorer.name.clone();
            knowledge.add_scorer(name, Arc::new(scorer))?;
        }
        Ok(knowledge)
    }
}

fn strip_comment(line: &str) -> &str {
    // `#` inside a quoted phrase is not a comment.
    let mut in_quote = false;
    let mut escaped = false;
    for (i, c) in line.char_indices() {
        match c {
            _ if escaped => escaped = false,
            '\\' if in_quote => escaped = true,
            '"' => in_quote = !in_quote,
            '#' if !in_quote => return &line[..i],
            _ => {}
        }
    }
    line
}

fn single_word(s: &str) -> Option<&str> {
    let mut words = s.split_whitespace();
    match (words.next(), words.next()) {
        (Some(w), None) => Some(w),
        _ => None,
    }
}

/// Parses a leading `"..."` (with `\"` and `\\` escapes), returning the
/// phrase and the remainder.
fn quoted(s: &str) -> Option<(String, &str)> {
    let body = s.strip_prefix('"')?;
    let mut out = String::new();
    let mut chars = body.char_indices();
    while let Some((i, c)) = chars.next() {
        match c {
            '"' => return Some((out, &body[i + 1..])),
            '\\' => match chars.next() {
                Some((_, e @ ('"' | '\\'))) => out.push(e),
                Some((_, e)) => {
                    out.push('\\');
                    out.push(e);
                }
                None => return None,
            },
            c => out.push(c),
        }
    }
    None
}

fn parse_real(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}
