//! The rule-file language.
//!
//! ```text
//! file          := item*
//! item          := rule | contradiction | budget | trust
//! rule          := "rule" ID "{" rule-field* "}"
//! rule-field    := "mode" ":" ("whitelist" | "blacklist")
//!                | "stage" ":" ("*" | STAGE ("," STAGE)*)
//!                | "sector" ":" ("*" | SECTOR ("," SECTOR)*)
//!                | "level" ":" ("*" | INT ".." INT? )
//!                | "match" ":" matcher
//!                | ("when-context" | "unless-context") ":" text-matcher ("in" SECTOR ("," SECTOR)*)?
//!                | "action" ":" ("reject" | "quarantine" | "flag" ID | "downweight" REAL)
//!                | "priority" ":" INT
//! matcher       := text-matcher
//!                | "concept" NAME
//!                | "classifier" NAME (">=" | "<") REAL
//!                | "numeric" STRING CMP (REAL | "budget" ID)
//! text-matcher  := "contains" STRING | "pattern" STRING
//! contradiction := "contradiction" ID "{" "a" ":" text-matcher "b" ":" text-matcher
//!                  "resolve" ":" ("quarantine-newer" | "downweight-newer" REAL | "flag-only") "}"
//! budget        := "budget" ID REAL
//! trust         := "trust" STRING REAL
//! ```
//!
//! Fields may appear in any order; `when-context`/`unless-context` may
//! repeat. `#` starts a comment. Strings are double-quoted with `\"`, `\\`,
//! `\n`, `\t`, `\r` and `\u{HEX}` escapes; any other backslash sequence is
//! kept verbatim so patterns can be written as `"requires (\d+) units"`.
//!
//! Rule and contradiction ids share one namespace. Parsing stops at the
//! first error.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use thiserror::Error;

use crate::cycle::{ConflictDeclaration, Resolution};
use crate::filter::{
    Action, Bound, Comparator, ContextCondition, Direction, FilterRule, FilterSet, LevelRange, Matcher, Mode,
    Polarity, Scope, Stage,
};
use crate::knowledge::{valid_concept_name, Knowledge};
use crate::manifold::{SectorId, SourceTrustTable};
use crate::pattern::Pattern;
use crate::text::normalize_text;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseErrorKind {
    Syntax,
    DuplicateId,
    InvalidThreshold,
    InvalidFactor,
    UnknownKeyword,
    UnterminatedString,
}

impl ParseErrorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ParseErrorKind::Syntax => "syntax",
            ParseErrorKind::DuplicateId => "duplicate-id",
            ParseErrorKind::InvalidThreshold => "invalid-threshold",
            ParseErrorKind::InvalidFactor => "invalid-factor",
            ParseErrorKind::UnknownKeyword => "unknown-keyword",
            ParseErrorKind::UnterminatedString => "unterminated-string",
        }
    }
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// 1-based line and column (in characters) of the offending token.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{line}:{column}: {kind}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub kind: ParseErrorKind,
    pub message: String,
}

/// A parsed rule file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RuleFile {
    pub filter_set: FilterSet,
    pub contradictions: Vec<ConflictDeclaration>,
    pub budgets: BTreeMap<String, f64>,
    pub trust: SourceTrustTable,
}

/// A reference from a rule to something the rule file does not define.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("rule {rule}: {message}")]
pub struct LinkError {
    pub rule: String,
    pub message: String,
}

impl RuleFile {
    /// Checks scorer, concept and budget references against `knowledge`
    /// and this file's budgets.
    pub fn link(&self, knowledge: &Knowledge) -> Vec<LinkError> {
        let mut errors = Vec::new();
        for rule in self.filter_set.rules() {
            let err = |message: String| LinkError { rule: rule.id.clone(), message };
            match &rule.matcher {
                Matcher::Concept(name) if !knowledge.ontology.contains(name) => {
                    errors.push(err(format!("unknown concept {name:?}")))
                }
                Matcher::Classifier { scorer, .. } if !knowledge.has_scorer(scorer) => {
                    errors.push(err(format!("unknown scorer {scorer:?}")))
                }
                Matcher::Numeric { bound: Bound::Budget(key), .. } if !self.budgets.contains_key(key) => {
                    errors.push(err(format!("unknown budget key {key:?}")))
                }
                _ => {}
            }
        }
        errors
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Str(String),
    LBrace,
    RBrace,
    Colon,
    Comma,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Word(w) => format!("`{w}`"),
            Tok::Str(_) => "string".into(),
            Tok::LBrace => "`{`".into(),
            Tok::RBrace => "`}`".into(),
            Tok::Colon => "`:`".into(),
            Tok::Comma => "`,`".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Pos {
    line: usize,
    column: usize,
}

fn error(pos: Pos, kind: ParseErrorKind, message: impl Into<String>) -> ParseError {
    ParseError { line: pos.line, column: pos.column, kind, message: message.into() }
}

fn is_word_char(c: char) -> bool {
    !c.is_whitespace() && !c.is_control() && !matches!(c, '{' | '}' | ':' | ',' | '"' | '#')
}

fn lex(source: &str) -> Result<Vec<(Tok, Pos)>, ParseError> {
    let mut out = Vec::new();
    let mut chars = source.chars().peekable();
    let mut pos = Pos { line: 1, column: 1 };

    // advances `pos` past `c`
    fn step(pos: &mut Pos, c: char) {
        if c == '\n' {
            pos.line += 1;
            pos.column = 1;
        } else {
            pos.column += 1;
        }
    }

    while let Some(&c) = chars.peek() {
        let start = pos;
        match c {
            '#' => {
                while let Some(&c) = chars.peek() {
                    if c == '\n' {
                        break;
                    }
                    chars.next();
                    step(&mut pos, c);
                }
            }
            c if c.is_whitespace() => {
                chars.next();
                step(&mut pos, c);
            }
            '{' | '}' | ':' | ',' => {
                chars.next();
                step(&mut pos, c);
                out.push((
                    match c {
                        '{' => Tok::LBrace,
                        '}' => Tok::RBrace,
                        ':' => Tok::Colon,
                        _ => Tok::Comma,
                    },
                    start,
                ));
            }
            '"' => {
                chars.next();
                step(&mut pos, c);
                let mut text = String::new();
                loop {
                    let Some(c) = chars.next() else {
                        return Err(error(start, ParseErrorKind::UnterminatedString, "string is never closed"));
                    };
                    let here = pos;
                    match c {
                        '"' => {
                            step(&mut pos, c);
                            break;
                        }
                        '\n' | '\r' => {
                            return Err(error(
                                start,
                                ParseErrorKind::UnterminatedString,
                                "string is not closed before end of line",
                            ))
                        }
                        '\\' => {
                            step(&mut pos, c);
                            match chars.peek().copied() {
                                Some(e @ ('"' | '\\')) => {
                                    chars.next();
                                    step(&mut pos, e);
                                    text.push(e);
                                }
                                Some(e @ ('n' | 't' | 'r')) => {
                                    chars.next();
                                    step(&mut pos, e);
                                    text.push(match e {
                                        'n' => '\n',
                                        't' => '\t',
                                        _ => '\r',
                                    });
                                }
                                Some('u') => {
                                    chars.next();
                                    step(&mut pos, 'u');
                                    if chars.peek() != Some(&'{') {
                                        text.push_str("\\u");
                                        continue;
                                    }
                                    chars.next();
                                    step(&mut pos, '{');
                                    let mut hex = String::new();
                                    loop {
                                        match chars.next() {
                                            Some('}') => {
                                                step(&mut pos, '}');
                                                break;
                                            }
                                            Some(h) if h.is_ascii_hexdigit() && hex.len() < 6 => {
                                                step(&mut pos, h);
                                                hex.push(h);
                                            }
                                            Some('\n') | None => {
                                                return Err(error(
                                                    start,
                                                    ParseErrorKind::UnterminatedString,
                                                    "string is not closed before end of line",
                                                ))
                                            }
                                            Some(_) => {
                                                return Err(error(here, ParseErrorKind::Syntax, "malformed \\u{...} escape"))
                                            }
                                        }
                                    }
                                    let decoded = u32::from_str_radix(&hex, 16).ok().and_then(char::from_u32);
                                    match decoded {
                                        Some(ch) => text.push(ch),
                                        None => {
                                            return Err(error(here, ParseErrorKind::Syntax, "invalid \\u{...} escape"))
                                        }
                                    }
                                }
                                _ => text.push('\\'),
                            }
                        }
                        c if c.is_control() && c != '\t' => {
                            return Err(error(here, ParseErrorKind::Syntax, "control character in string"))
                        }
                        c => {
                            step(&mut pos, c);
                            text.push(c);
                        }
                    }
                }
                out.push((Tok::Str(text), start));
            }
            c if is_word_char(c) => {
                let mut word = String::new();
                while let Some(&c) = chars.peek() {
                    if !is_word_char(c) {
                        break;
                    }
                    chars.next();
                    step(&mut pos, c);
                    word.push(c);
                }
                out.push((Tok::Word(word), start));
            }
            _ => return Err(error(start, ParseErrorKind::Syntax, format!("unexpected character {c:?}"))),
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, Pos)>,
    at: usize,
    end: Pos,
}

type PResult<T> = Result<T, ParseError>;

fn valid_ident(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.at).map(|(t, _)| t)
    }

    fn next(&mut self, what: &str) -> PResult<(Tok, Pos)> {
        match self.toks.get(self.at) {
            Some(t) => {
                self.at += 1;
                Ok(t.clone())
            }
            None => Err(error(self.end, ParseErrorKind::Syntax, format!("expected {what}, found end of input"))),
        }
    }

    fn expect(&mut self, tok: Tok) -> PResult<Pos> {
        let (t, pos) = self.next(&tok.describe())?;
        if t == tok {
            Ok(pos)
        } else {
            Err(error(pos, ParseErrorKind::Syntax, format!("expected {}, found {}", tok.describe(), t.describe())))
        }
    }

    fn word(&mut self, what: &str) -> PResult<(String, Pos)> {
        match self.next(what)? {
            (Tok::Word(w), pos) => Ok((w, pos)),
            (t, pos) => Err(error(pos, ParseErrorKind::Syntax, format!("expected {what}, found {}", t.describe()))),
        }
    }

    fn ident(&mut self, what: &str) -> PResult<(String, Pos)> {
        let (w, pos) = self.word(what)?;
        if valid_ident(&w) {
            Ok((w, pos))
        } else {
            Err(error(pos, ParseErrorKind::Syntax, format!("invalid {what} `{w}`")))
        }
    }

    fn string(&mut self, what: &str) -> PResult<(String, Pos)> {
        match self.next(what)? {
            (Tok::Str(s), pos) => Ok((s, pos)),
            (t, pos) => Err(error(pos, ParseErrorKind::Syntax, format!("expected {what}, found {}", t.describe()))),
        }
    }

    fn real(&mut self, what: &str) -> PResult<(f64, Pos)> {
        let (w, pos) = self.word(what)?;
        match w.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok((v, pos)),
            _ => Err(error(pos, ParseErrorKind::Syntax, format!("expected {what}, found `{w}`"))),
        }
    }

    fn eat_comma(&mut self) -> bool {
        if self.peek() == Some(&Tok::Comma) {
            self.at += 1;
            true
        } else {
            false
        }
    }

    fn file(&mut self) -> PResult<RuleFile> {
        let mut rules: Vec<FilterRule> = Vec::new();
        let mut contradictions = Vec::new();
        let mut ids = BTreeSet::new();
        let mut budgets = BTreeMap::new();
        let mut trust = SourceTrustTable::default();

        while self.peek().is_some() {
            let (keyword, pos) = self.word("a declaration")?;
            match keyword.as_str() {
                "rule" => {
                    let (id, id_pos) = self.ident("rule id")?;
                    if !ids.insert(id.clone()) {
                        return Err(error(id_pos, ParseErrorKind::DuplicateId, format!("id `{id}` is already declared")));
                    }
                    rules.push(self.rule_body(id)?);
                }
                "contradiction" => {
                    let (id, id_pos) = self.ident("contradiction id")?;
                    if !ids.insert(id.clone()) {
                        return Err(error(id_pos, ParseErrorKind::DuplicateId, format!("id `{id}` is already declared")));
                    }
                    contradictions.push(self.contradiction_body(id)?);
                }
                "budget" => {
                    let (key, key_pos) = self.ident("budget key")?;
                    let (value, _) = self.real("budget value")?;
                    if budgets.insert(key.clone(), value).is_some() {
                        return Err(error(key_pos, ParseErrorKind::DuplicateId, format!("budget `{key}` is already declared")));
                    }
                }
                "trust" => {
                    let (prefix, prefix_pos) = self.string("source prefix")?;
                    let (value, value_pos) = self.real("trust value")?;
                    if trust.entries().contains_key(&prefix) {
                        return Err(error(prefix_pos, ParseErrorKind::DuplicateId, format!("trust {prefix:?} is already declared")));
                    }
                    trust.insert(prefix, value).map_err(|_| {
                        error(value_pos, ParseErrorKind::InvalidThreshold, format!("trust {value} outside [0, 1]"))
                    })?;
                }
                other => {
                    return Err(error(pos, ParseErrorKind::UnknownKeyword, format!("unknown declaration `{other}`")))
                }
            }
        }

        let filter_set = FilterSet::new(rules).map_err(|e| {
            // every rule was validated while parsing
            error(self.end, ParseErrorKind::Syntax, e.to_string())
        })?;
        Ok(RuleFile { filter_set, contradictions, budgets, trust })
    }

    fn rule_body(&mut self, id: String) -> PResult<FilterRule> {
        self.expect(Tok::LBrace)?;
        let mut seen: BTreeSet<String> = BTreeSet::new();
        let mut mode: Option<(bool, Pos)> = None;
        let mut action: Option<(Action, Pos)> = None;
        let mut scope = Scope::any();
        let mut matcher: Option<Matcher> = None;
        let mut context = Vec::new();
        let mut priority = 0i64;

        let close = loop {
            if self.peek() == Some(&Tok::RBrace) {
                break self.expect(Tok::RBrace)?;
            }
            let (key, key_pos) = self.word("a rule field or `}`")?;
            let repeatable = matches!(key.as_str(), "when-context" | "unless-context");
            if !repeatable && seen.contains(&key) {
                return Err(error(key_pos, ParseErrorKind::Syntax, format!("field `{key}` given twice")));
            }
            match key.as_str() {
                "mode" | "stage" | "sector" | "level" | "match" | "when-context" | "unless-context" | "action"
                | "priority" => {}
                other => return Err(error(key_pos, ParseErrorKind::UnknownKeyword, format!("unknown rule field `{other}`"))),
            }
            seen.insert(key.clone());
            self.expect(Tok::Colon)?;
            match key.as_str() {
                "mode" => {
                    let (value, pos) = self.word("mode")?;
                    let is_white = match value.as_str() {
                        "whitelist" => true,
                        "blacklist" => false,
                        other => return Err(error(pos, ParseErrorKind::UnknownKeyword, format!("unknown mode `{other}`"))),
                    };
                    mode = Some((is_white, key_pos));
                }
                "stage" => scope.stages = self.stage_list()?,
                "sector" => scope.sectors = self.sector_list()?,
                "level" => scope.levels = self.level_range()?,
                "match" => matcher = Some(self.matcher(false)?),
                "when-context" | "unless-context" => {
                    let polarity = if key == "when-context" { Polarity::When } else { Polarity::Unless };
                    let m = self.matcher(true)?;
                    let mut sectors = None;
                    if self.peek() == Some(&Tok::Word("in".into())) {
                        self.at += 1;
                        sectors = Some(self.sectors()?);
                    }
                    context.push(ContextCondition { polarity, matcher: m, sectors });
                }
                "action" => action = Some((self.action()?, key_pos)),
                "priority" => {
                    let (w, pos) = self.word("priority")?;
                    priority = w
                        .parse()
                        .map_err(|_| error(pos, ParseErrorKind::Syntax, format!("expected integer priority, found `{w}`")))?;
                }
                _ => unreachable!(),
            }
        };

        let Some((is_white, _)) = mode else {
            return Err(error(close, ParseErrorKind::Syntax, format!("rule `{id}` has no `mode`")));
        };
        let Some(matcher) = matcher else {
            return Err(error(close, ParseErrorKind::Syntax, format!("rule `{id}` has no `match`")));
        };
        let mode = match (is_white, action) {
            (true, Some((_, pos))) => {
                return Err(error(pos, ParseErrorKind::Syntax, "whitelist rules take no `action`"))
            }
            (true, None) => Mode::Whitelist,
            (false, Some((action, _))) => Mode::Blacklist(action),
            (false, None) => {
                return Err(error(close, ParseErrorKind::Syntax, format!("blacklist rule `{id}` has no `action`")))
            }
        };
        Ok(FilterRule { id, mode, scope, matcher, context, priority })
    }

    fn stage_list(&mut self) -> PResult<Option<BTreeSet<Stage>>> {
        if self.peek() == Some(&Tok::Word("*".into())) {
            self.at += 1;
            return Ok(None);
        }
        let mut stages = BTreeSet::new();
        loop {
            let (w, pos) = self.word("stage")?;
            let stage = w
                .parse::<Stage>()
                .map_err(|_| error(pos, ParseErrorKind::UnknownKeyword, format!("unknown stage `{w}`")))?;
            stages.insert(stage);
            if !self.eat_comma() {
                break;
            }
        }
        Ok(Some(stages))
    }

    fn sector_list(&mut self) -> PResult<Option<BTreeSet<SectorId>>> {
        if self.peek() == Some(&Tok::Word("*".into())) {
            self.at += 1;
            return Ok(None);
        }
        self.sectors().map(Some)
    }

    fn sectors(&mut self) -> PResult<BTreeSet<SectorId>> {
        let mut sectors = BTreeSet::new();
        loop {
            let (w, pos) = self.word("sector")?;
            let sector = w
                .parse::<SectorId>()
                .map_err(|_| error(pos, ParseErrorKind::Syntax, format!("invalid sector name `{w}`")))?;
            sectors.insert(sector);
            if !self.eat_comma() {
                break;
            }
        }
        Ok(sectors)
    }

    fn level_range(&mut self) -> PResult<Option<LevelRange>> {
        let (w, pos) = self.word("level range")?;
        if w == "*" {
            return Ok(None);
        }
        let bad = || error(pos, ParseErrorKind::Syntax, format!("expected `*`, `a..b` or `a..`, found `{w}`"));
        let (lo, hi) = w.split_once("..").ok_or_else(bad)?;
        let min: u32 = lo.parse().map_err(|_| bad())?;
        let max = if hi.is_empty() { None } else { Some(hi.parse::<u32>().map_err(|_| bad())?) };
        if max.is_some_and(|max| max < min) {
            return Err(error(pos, ParseErrorKind::Syntax, format!("level range `{w}` is inverted")));
        }
        Ok(Some(LevelRange { min, max }))
    }

    fn pattern(&mut self, captures: usize) -> PResult<Pattern> {
        let (src, pos) = self.string("pattern string")?;
        let pattern = Pattern::compile(&src).map_err(|e| error(pos, ParseErrorKind::Syntax, e.to_string()))?;
        if pattern.capture_count() != captures {
            let msg = if captures == 0 {
                "capture groups are only allowed in numeric matchers"
            } else {
                "numeric pattern needs exactly one (\\d+) capture"
            };
            return Err(error(pos, ParseErrorKind::Syntax, msg));
        }
        Ok(pattern)
    }

    fn matcher(&mut self, textual_only: bool) -> PResult<Matcher> {
        let (kind, kind_pos) = self.word("matcher kind")?;
        match kind.as_str() {
            "contains" => {
                let (lit, pos) = self.string("literal string")?;
                if normalize_text(&lit).is_empty() {
                    return Err(error(pos, ParseErrorKind::Syntax, "contains literal is empty"));
                }
                Ok(Matcher::Contains(lit))
            }
            "pattern" => Ok(Matcher::Pattern(self.pattern(0)?)),
            "concept" | "classifier" | "numeric" if textual_only => Err(error(
                kind_pos,
                ParseErrorKind::Syntax,
                "context conditions take `contains` or `pattern` only",
            )),
            "concept" => {
                let (name, pos) = self.word("concept name")?;
                if !valid_concept_name(&name) {
                    return Err(error(pos, ParseErrorKind::Syntax, format!("invalid concept name `{name}`")));
                }
                Ok(Matcher::Concept(name))
            }
            "classifier" => {
                let (scorer, _) = self.ident("scorer name")?;
                let (dir, dir_pos) = self.word("`>=` or `<`")?;
                let direction = match dir.as_str() {
                    ">=" => Direction::AtLeast,
                    "<" => Direction::Below,
                    _ => return Err(error(dir_pos, ParseErrorKind::Syntax, format!("expected `>=` or `<`, found `{dir}`"))),
                };
                let (threshold, pos) = self.real("threshold")?;
                if !(0.0..=1.0).contains(&threshold) {
                    return Err(error(pos, ParseErrorKind::InvalidThreshold, format!("threshold {threshold} outside [0, 1]")));
                }
                Ok(Matcher::Classifier { scorer, threshold, direction })
            }
            "numeric" => {
                let pattern = self.pattern(1)?;
                let (cmp, cmp_pos) = self.word("comparator")?;
                let comparator = Comparator::parse(&cmp)
                    .ok_or_else(|| error(cmp_pos, ParseErrorKind::Syntax, format!("unknown comparator `{cmp}`")))?;
                let bound = if self.peek() == Some(&Tok::Word("budget".into())) {
                    self.at += 1;
                    Bound::Budget(self.ident("budget key")?.0)
                } else {
                    Bound::Value(self.real("number or `budget <key>`")?.0)
                };
                Ok(Matcher::Numeric { pattern, comparator, bound })
            }
            other => Err(error(kind_pos, ParseErrorKind::UnknownKeyword, format!("unknown matcher `{other}`"))),
        }
    }

    fn action(&mut self) -> PResult<Action> {
        let (w, pos) = self.word("action")?;
        match w.as_str() {
            "reject" => Ok(Action::Reject),
            "quarantine" => Ok(Action::Quarantine),
            "flag" => Ok(Action::Flag(self.ident("flag label")?.0)),
            "downweight" => Ok(Action::Downweight(self.factor()?)),
            other => Err(error(pos, ParseErrorKind::UnknownKeyword, format!("unknown action `{other}`"))),
        }
    }

    fn factor(&mut self) -> PResult<f64> {
        let (f, pos) = self.real("factor")?;
        if f > 0.0 && f < 1.0 {
            Ok(f)
        } else {
            Err(error(pos, ParseErrorKind::InvalidFactor, format!("factor {f} outside (0, 1)")))
        }
    }

    fn contradiction_body(&mut self, id: String) -> PResult<ConflictDeclaration> {
        self.expect(Tok::LBrace)?;
        let mut a = None;
        let mut b = None;
        let mut resolve = None;
        let close = loop {
            if self.peek() == Some(&Tok::RBrace) {
                break self.expect(Tok::RBrace)?;
            }
            let (key, key_pos) = self.word("a contradiction field or `}`")?;
            let slot_taken = match key.as_str() {
                "a" => a.is_some(),
                "b" => b.is_some(),
                "resolve" => resolve.is_some(),
                other => {
                    return Err(error(key_pos, ParseErrorKind::UnknownKeyword, format!("unknown contradiction field `{other}`")))
                }
            };
            if slot_taken {
                return Err(error(key_pos, ParseErrorKind::Syntax, format!("field `{key}` given twice")));
            }
            self.expect(Tok::Colon)?;
            match key.as_str() {
                "a" => a = Some(self.matcher(true)?),
                "b" => b = Some(self.matcher(true)?),
                _ => {
                    let (w, pos) = self.word("resolution")?;
                    resolve = Some(match w.as_str() {
                        "quarantine-newer" => Resolution::QuarantineNewer,
                        "downweight-newer" => Resolution::DownweightNewer(self.factor()?),
                        "flag-only" => Resolution::FlagOnly,
                        other => {
                            return Err(error(pos, ParseErrorKind::UnknownKeyword, format!("unknown resolution `{other}`")))
                        }
                    });
                }
            }
        };
        let missing = |field: &str| error(close, ParseErrorKind::Syntax, format!("contradiction `{id}` has no `{field}`"));
        Ok(ConflictDeclaration {
            pattern_a: a.ok_or_else(|| missing("a"))?,
            pattern_b: b.ok_or_else(|| missing("b"))?,
            resolve: resolve.ok_or_else(|| missing("resolve"))?,
            id,
        })
    }
}

pub fn parse_rules(source: &str) -> Result<RuleFile, ParseError> {
    let toks = lex(source)?;
    let end = end_position(source);
    Parser { toks, at: 0, end }.file()
}

fn end_position(source: &str) -> Pos {
    let line = source.matches('\n').count() + 1;
    let column = source.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    Pos { line, column }
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c if c.is_control() => {
                let _ = write!(out, "\\u{{{:x}}}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn join<T>(items: impl IntoIterator<Item = T>, f: impl Fn(T) -> String) -> String {
    items.into_iter().map(f).collect::<Vec<_>>().join(", ")
}

fn matcher_text(m: &Matcher) -> String {
    match m {
        Matcher::Contains(lit) => format!("contains {}", quote(lit)),
        Matcher::Pattern(p) => format!("pattern {}", quote(p.source())),
        Matcher::Concept(name) => format!("concept {name}"),
        Matcher::Classifier { scorer, threshold, direction } => {
            let dir = match direction {
                Direction::AtLeast => ">=",
                Direction::Below => "<",
            };
            format!("classifier {scorer} {dir} {threshold}")
        }
        Matcher::Numeric { pattern, comparator, bound } => {
            let rhs = match bound {
                Bound::Value(v) => v.to_string(),
                Bound::Budget(key) => format!("budget {key}"),
            };
            format!("numeric {} {} {rhs}", quote(pattern.source()), comparator.as_str())
        }
    }
}

/// Canonical text: rules in evaluation order, then contradictions, budgets
/// and trust entries. Every field is written out, defaults included.
pub fn serialize_rules(file: &RuleFile) -> String {
    let mut out = String::new();
    for rule in file.filter_set.rules() {
        let _ = writeln!(out, "rule {} {{", rule.id);
        let mode = if rule.is_whitelist() { "whitelist" } else { "blacklist" };
        let _ = writeln!(out, "  mode: {mode}");
        let stages = match &rule.scope.stages {
            None => "*".to_owned(),
            Some(s) => join(s, |st| st.as_str().to_owned()),
        };
        let _ = writeln!(out, "  stage: {stages}");
        let sectors = match &rule.scope.sectors {
            None => "*".to_owned(),
            Some(s) => join(s, |sec| sec.to_string()),
        };
        let _ = writeln!(out, "  sector: {sectors}");
        let levels = match rule.scope.levels {
            None => "*".to_owned(),
            Some(LevelRange { min, max: None }) => format!("{min}.."),
            Some(LevelRange { min, max: Some(max) }) => format!("{min}..{max}"),
        };
        let _ = writeln!(out, "  level: {levels}");
        let _ = writeln!(out, "  match: {}", matcher_text(&rule.matcher));
        for cond in &rule.context {
            let key = match cond.polarity {
                Polarity::When => "when-context",
                Polarity::Unless => "unless-context",
            };
            let _ = write!(out, "  {key}: {}", matcher_text(&cond.matcher));
            if let Some(sectors) = &cond.sectors {
                let _ = write!(out, " in {}", join(sectors, |s| s.to_string()));
            }
            out.push('\n');
        }
        if let Mode::Blacklist(action) = &rule.mode {
            let action = match action {
                Action::Reject => "reject".to_owned(),
                Action::Quarantine => "quarantine".to_owned(),
                Action::Flag(label) => format!("flag {label}"),
                Action::Downweight(f) => format!("downweight {f}"),
            };
            let _ = writeln!(out, "  action: {action}");
        }
        let _ = writeln!(out, "  priority: {}", rule.priority);
        out.push_str("}\n");
    }
    for c in &file.contradictions {
        let _ = writeln!(out, "contradiction {} {{", c.id);
        let _ = writeln!(out, "  a: {}", matcher_text(&c.pattern_a));
        let _ = writeln!(out, "  b: {}", matcher_text(&c.pattern_b));
        let resolve = match c.resolve {
            Resolution::QuarantineNewer => "quarantine-newer".to_owned(),
            Resolution::DownweightNewer(f) => format!("downweight-newer {f}"),
            Resolution::FlagOnly => "flag-only".to_owned(),
        };
        let _ = writeln!(out, "  resolve: {resolve}");
        out.push_str("}\n");
    }
    for (key, value) in &file.budgets {
        let _ = writeln!(out, "budget {key} {value}");
    }
    for (prefix, value) in file.trust.entries() {
        let _ = writeln!(out, "trust {} {value}", quote(prefix));
    }
    out
}
