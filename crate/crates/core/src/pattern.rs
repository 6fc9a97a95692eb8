//! A deliberately small pattern language for rule matchers.
//!
//! ```text
//! pattern := element*
//! element := atom '*'? | '(\d+)'
//! atom    := literal | '.' | '\d' | '\' metachar
//! ```
//!
//! Matching is an unanchored search over normalized text. Literal characters
//! are lower-cased at compile time so that patterns line up with normalized
//! fragment text. The `(\d+)` capture group is only legal in numeric
//! matchers, which read the captured digits as a number.
//!
//! Matching fills a suffix table over (element, position), so the work is
//! `elements × text length` regardless of how stars are arranged.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("pattern error at offset {offset}: {message}")]
pub struct PatternError {
    /// Character offset into the pattern source.
    pub offset: usize,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Atom {
    Char(char),
    Any,
    Digit,
}

impl Atom {
    fn accepts(self, c: char) -> bool {
        match self {
            Atom::Char(want) => want == c,
            Atom::Any => true,
            Atom::Digit => c.is_ascii_digit(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Element {
    One(Atom),
    Star(Atom),
}

#[derive(Debug, Clone)]
pub struct Pattern {
    source: String,
    elements: Vec<Element>,
    /// Index of the first element of the first capture group. A capture is
    /// lowered to `One(Digit) Star(Digit)`.
    capture_at: Option<usize>,
    captures: usize,
}

impl PartialEq for Pattern {
    fn eq(&self, other: &Self) -> bool {
        self.source == other.source
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

const CAPTURE: [char; 5] = ['(', '\\', 'd', '+', ')'];

fn err(offset: usize, message: impl Into<String>) -> PatternError {
    PatternError { offset, message: message.into() }
}

impl Pattern {
    pub fn compile(source: &str) -> Result<Self, PatternError> {
        let chars: Vec<char> = source.chars().collect();
        let mut elements = Vec::new();
        let mut capture_at = None;
        let mut captures = 0;
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let atom = match c {
                '(' => {
                    if chars[i..].starts_with(&CAPTURE) {
                        capture_at.get_or_insert(elements.len());
                        elements.push(Element::One(Atom::Digit));
                        elements.push(Element::Star(Atom::Digit));
                        captures += 1;
                        i += CAPTURE.len();
                        if chars.get(i) == Some(&'*') {
                            return Err(err(i, "'*' cannot follow a capture group"));
                        }
                        continue;
                    }
                    return Err(err(i, "only the capture group '(\\d+)' is supported"));
                }
                ')' => return Err(err(i, "unbalanced ')'")),
                '*' => return Err(err(i, "'*' must follow an atom")),
                '.' => Atom::Any,
                '\\' => {
                    i += 1;
                    match chars.get(i) {
                        None => return Err(err(i - 1, "dangling escape")),
                        Some('d') => Atom::Digit,
                        Some(&m) if is_meta(m) => Atom::Char(m),
                        Some(&other) => {
                            return Err(err(i, format!("unknown escape '\\{other}'")))
                        }
                    }
                }
                other => {
                    let mut lower = other.to_lowercase();
                    match (lower.next(), lower.next()) {
                        (Some(l), None) => Atom::Char(l),
                        _ => Atom::Char(other),
                    }
                }
            };
            i += 1;
            if chars.get(i) == Some(&'*') {
                elements.push(Element::Star(atom));
                i += 1;
            } else {
                elements.push(Element::One(atom));
            }
        }
        Ok(Self { source: source.to_owned(), elements, capture_at, captures })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn capture_count(&self) -> usize {
        self.captures
    }

    pub fn is_match(&self, text: &str) -> bool {
        let chars: Vec<char> = text.chars().collect();
        let table = self.suffix_table(&chars);
        (0..=chars.len()).any(|start| table.get(0, start))
    }

    /// Leftmost match with greedy stars. Returns the digits of the first
    /// capture group, or an empty string when the pattern has none.
    pub fn find(&self, text: &str) -> Option<String> {
        let chars: Vec<char> = text.chars().collect();
        let table = self.suffix_table(&chars);
        let start = (0..=chars.len()).find(|&s| table.get(0, s))?;
        let Some(cap) = self.capture_at else { return Some(String::new()) };

        // Walk the greedy path through the table.
        let mut pos = start;
        let mut cap_start = start;
        for (el, element) in self.elements.iter().enumerate() {
            if el == cap {
                cap_start = pos;
            }
            match *element {
                Element::One(_) => pos += 1,
                Element::Star(atom) => {
                    while pos < chars.len() && atom.accepts(chars[pos]) && table.get(el, pos + 1) {
                        pos += 1;
                    }
                }
            }
            if el == cap + 1 {
                return Some(chars[cap_start..pos].iter().collect());
            }
        }
        unreachable!("capture elements lie inside the pattern")
    }

    /// First captured number, if the pattern matches.
    pub fn capture_number(&self, text: &str) -> Option<f64> {
        if self.captures == 0 {
            return None;
        }
        self.find(text)?.parse().ok()
    }

    /// `table.get(el, pos)`: does `elements[el..]` match some prefix of
    /// `text[pos..]`?
    fn suffix_table(&self, text: &[char]) -> Table {
        let n = self.elements.len();
        let width = text.len() + 1;
        let mut table = Table { width, cells: vec![false; (n + 1) * width] };
        for pos in 0..width {
            table.set(n, pos, true);
        }
        for el in (0..n).rev() {
            for pos in (0..width).rev() {
                let ok = match self.elements[el] {
                    Element::One(atom) => {
                        pos < text.len() && atom.accepts(text[pos]) && table.get(el + 1, pos + 1)
                    }
                    Element::Star(atom) => {
                        table.get(el + 1, pos)
                            || (pos < text.len() && atom.accepts(text[pos]) && table.get(el, pos + 1))
                    }
                };
                table.set(el, pos, ok);
            }
        }
        table
    }
}

struct Table {
    width: usize,
    cells: Vec<bool>,
}

impl Table {
    fn get(&self, el: usize, pos: usize) -> bool {
        self.cells[el * self.width + pos]
    }

    fn set(&mut self, el: usize, pos: usize, v: bool) {
        self.cells[el * self.width + pos] = v;
    }
}

pub(crate) fn is_meta(c: char) -> bool {
    matches!(c, '.' | '*' | '\\' | '(' | ')')
}
