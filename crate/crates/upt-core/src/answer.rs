//! Rule-based extraction of a canonical final answer from free-form response
//! text, plus the equivalence relation used for voting and reward checks.
//!
//! Extraction tries, in priority order:
//! 1. the content of the last `\boxed{...}` marker,
//! 2. the text after the last case-insensitive "answer is" / "answer:",
//! 3. a standalone option letter A-E in parentheses or trailing position,
//! 4. the last numeric literal (integer, decimal, or simple fraction `a/b`),
//! 5. otherwise no answer.
//!
//! Numeric answers are held as exact rationals so equality is a true
//! equivalence relation; `3/4`, `0.75`, and `\boxed{0.750}` all canonicalize
//! to the same value. Decimals are truncated to 12 fractional digits before
//! rationalization.

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{One, Zero};
use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};

/// Longest decimal tail kept when converting to a rational.
const MAX_DECIMAL_DIGITS: usize = 12;

/// What sort of answer was extracted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerKind {
    Numeric,
    Choice,
    Text,
    None,
}

impl AnswerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            AnswerKind::Numeric => "numeric",
            AnswerKind::Choice => "choice",
            AnswerKind::Text => "text",
            AnswerKind::None => "none",
        }
    }
}

/// A canonicalized final answer.
///
/// Invariants: `kind == None` iff `canonical` is empty; `value` is present
/// iff `kind == Numeric`; canonicalization is idempotent.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ExtractedAnswer {
    kind: AnswerKind,
    canonical: String,
    value: Option<BigRational>,
}

impl ExtractedAnswer {
    /// The empty (unextractable) answer.
    pub fn none() -> Self {
        ExtractedAnswer {
            kind: AnswerKind::None,
            canonical: String::new(),
            value: None,
        }
    }

    /// An exact numeric answer.
    pub fn numeric(value: BigRational) -> Self {
        let canonical = rational_canonical(&value);
        ExtractedAnswer {
            kind: AnswerKind::Numeric,
            canonical,
            value: Some(value),
        }
    }

    /// A numeric answer from an integer.
    pub fn integer(n: i64) -> Self {
        Self::numeric(BigRational::from_integer(BigInt::from(n)))
    }

    /// An option-letter answer; `letter` must be in `A..=E` (either case).
    pub fn choice(letter: char) -> Self {
        let up = letter.to_ascii_uppercase();
        debug_assert!(('A'..='E').contains(&up));
        ExtractedAnswer {
            kind: AnswerKind::Choice,
            canonical: up.to_string(),
            value: None,
        }
    }

    /// A free-text answer, canonicalized (lowercased, whitespace collapsed).
    /// Empty text collapses to the none answer.
    pub fn text(s: &str) -> Self {
        let canonical = canonicalize_text(s);
        if canonical.is_empty() {
            return Self::none();
        }
        ExtractedAnswer {
            kind: AnswerKind::Text,
            canonical,
            value: None,
        }
    }

    pub fn kind(&self) -> AnswerKind {
        self.kind
    }

    pub fn canonical(&self) -> &str {
        &self.canonical
    }

    pub fn value(&self) -> Option<&BigRational> {
        self.value.as_ref()
    }

    pub fn is_none(&self) -> bool {
        self.kind == AnswerKind::None
    }

    /// Rebuild an answer from its serialized (kind, canonical) pair,
    /// reconstructing the exact rational for numeric answers.
    pub fn from_parts(kind: AnswerKind, canonical: &str) -> Option<Self> {
        match kind {
            AnswerKind::None => {
                if canonical.is_empty() {
                    Some(Self::none())
                } else {
                    None
                }
            }
            AnswerKind::Numeric => parse_numeric(canonical).map(Self::numeric),
            AnswerKind::Choice => {
                let mut chars = canonical.chars();
                match (chars.next(), chars.next()) {
                    (Some(c), None) if ('A'..='E').contains(&c) => Some(Self::choice(c)),
                    _ => None,
                }
            }
            AnswerKind::Text => {
                let a = Self::text(canonical);
                // Canonical forms round-trip unchanged.
                (a.canonical == canonical).then_some(a)
            }
        }
    }
}

// Serialize as (kind, canonical); the rational value is reconstructed on read.
impl Serialize for ExtractedAnswer {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("ExtractedAnswer", 2)?;
        st.serialize_field("kind", &self.kind)?;
        st.serialize_field("canonical", &self.canonical)?;
        st.end()
    }
}

impl<'de> Deserialize<'de> for ExtractedAnswer {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            kind: AnswerKind,
            canonical: String,
        }
        let raw = Raw::deserialize(d)?;
        ExtractedAnswer::from_parts(raw.kind, &raw.canonical).ok_or_else(|| {
            serde::de::Error::custom(format!(
                "invalid {} answer {:?}",
                raw.kind.as_str(),
                raw.canonical
            ))
        })
    }
}

/// True iff the two answers agree: kinds match and the canonical values are
/// equal (exact rational equality for numerics). A `none` answer is
/// equivalent to nothing, including another `none`.
pub fn equivalent(a: &ExtractedAnswer, b: &ExtractedAnswer) -> bool {
    if a.kind == AnswerKind::None || b.kind == AnswerKind::None || a.kind != b.kind {
        return false;
    }
    match a.kind {
        AnswerKind::Numeric => a.value == b.value,
        _ => a.canonical == b.canonical,
    }
}

static NUMBER_RE: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"[+-]?\d+/\d+|[+-]?\d+\.\d+|[+-]?\.\d+|[+-]?\d+").unwrap());
static ANSWER_PHRASE_RE: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"(?i)answer\s+is|answer:").unwrap());
static PAREN_LETTER_RE: Lazy<Regex> = Lazy::new(|| Regex::new(r"\(([A-Ea-e])\)").unwrap());
static TRAILING_LETTER_RE: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"(?:^|[\s(])([A-E])\)?\s*$").unwrap());
static FRAGMENT_LETTER_RE: Lazy<Regex> = Lazy::new(|| Regex::new(r"^\(?([A-Ea-e])\)?$").unwrap());

/// Extract a canonical answer from response text. Total: unparseable input
/// yields the `none` answer, never an error.
pub fn extract(response_text: &str) -> ExtractedAnswer {
    // Rule 1: last \boxed{...}.
    if let Some(inner) = last_boxed_content(response_text) {
        let a = interpret_fragment(&inner);
        if !a.is_none() {
            return a;
        }
    }
    // Rule 2: text after the last "answer is" / "answer:".
    if let Some(m) = ANSWER_PHRASE_RE.find_iter(response_text).last() {
        let tail = &response_text[m.end()..];
        let a = interpret_fragment(tail);
        if !a.is_none() {
            return a;
        }
    }
    // Rule 3: standalone option letter, parenthesized (last wins) or trailing.
    if let Some(cap) = PAREN_LETTER_RE.captures_iter(response_text).last() {
        let c = cap[1].chars().next().unwrap();
        return ExtractedAnswer::choice(c);
    }
    let stripped = strip_trailing_punct(response_text.trim());
    if let Some(cap) = TRAILING_LETTER_RE.captures(stripped) {
        let c = cap[1].chars().next().unwrap();
        return ExtractedAnswer::choice(c);
    }
    // Rule 4: last numeric literal anywhere in the text.
    if let Some(m) = NUMBER_RE.find_iter(response_text).last() {
        if let Some(v) = parse_numeric(m.as_str()) {
            return ExtractedAnswer::numeric(v);
        }
    }
    ExtractedAnswer::none()
}

/// Content of the last `\boxed{` marker, brace-balanced. A box left open at
/// the end of the text yields the remaining text.
fn last_boxed_content(text: &str) -> Option<String> {
    let marker = r"\boxed{";
    let start = text.rfind(marker)? + marker.len();
    let mut depth = 1usize;
    let mut content = String::new();
    for ch in text[start..].chars() {
        match ch {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(content);
                }
            }
            _ => {}
        }
        content.push(ch);
    }
    Some(content)
}

/// Classify a fragment pulled out by rule 1 or 2: numeric, option letter,
/// or canonicalized text.
fn interpret_fragment(fragment: &str) -> ExtractedAnswer {
    let trimmed = strip_trailing_punct(fragment.trim_start_matches([':', ',', '-']).trim())
        .trim();
    if trimmed.is_empty() {
        return ExtractedAnswer::none();
    }
    if let Some(cap) = FRAGMENT_LETTER_RE.captures(trimmed) {
        return ExtractedAnswer::choice(cap[1].chars().next().unwrap());
    }
    if let Some(v) = parse_numeric(trimmed) {
        return ExtractedAnswer::numeric(v);
    }
    ExtractedAnswer::text(trimmed)
}

fn strip_trailing_punct(s: &str) -> &str {
    s.trim_end_matches(['.', ',', ';', ':', '!', '?'])
}

fn canonicalize_text(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut last_space = true;
    for ch in s.trim().chars() {
        if ch.is_whitespace() {
            if !last_space {
                out.push(' ');
                last_space = true;
            }
        } else {
            out.extend(ch.to_lowercase());
            last_space = false;
        }
    }
    while out.ends_with(' ') {
        out.pop();
    }
    out
}

/// Parse a complete numeric literal: integer, decimal, or simple fraction
/// `a/b`. Returns `None` if the string is not entirely a number or the
/// denominator is zero.
pub fn parse_numeric(s: &str) -> Option<BigRational> {
    let s = s.trim();
    if let Some((numer, denom)) = s.split_once('/') {
        let n: BigInt = numer.trim().parse().ok()?;
        let d_str = denom.trim();
        if d_str.starts_with(['+', '-']) {
            return None;
        }
        let d: BigInt = d_str.parse().ok()?;
        if d.is_zero() {
            return None;
        }
        return Some(BigRational::new(n, d));
    }
    if let Some((int_part, frac_part)) = s.split_once('.') {
        if !frac_part.chars().all(|c| c.is_ascii_digit()) || frac_part.is_empty() {
            return None;
        }
        let negative = int_part.starts_with('-');
        let int_digits = int_part.trim_start_matches(['+', '-']);
        if !int_digits.chars().all(|c| c.is_ascii_digit()) {
            return None;
        }
        let int_val: BigInt = if int_digits.is_empty() {
            BigInt::zero()
        } else {
            int_digits.parse().ok()?
        };
        let frac_digits: String = frac_part.chars().take(MAX_DECIMAL_DIGITS).collect();
        let frac_val: BigInt = frac_digits.parse().ok()?;
        let scale = num::pow::pow(BigInt::from(10), frac_digits.len());
        let unsigned = BigRational::new(int_val * &scale + frac_val, scale);
        return Some(if negative { -unsigned } else { unsigned });
    }
    let n: BigInt = s.parse().ok()?;
    Some(BigRational::from_integer(n))
}

/// Canonical string form of a rational: the integer when the denominator is
/// one, otherwise `numer/denom` reduced, sign on the numerator.
fn rational_canonical(v: &BigRational) -> String {
    if v.denom().is_one() {
        v.numer().to_string()
    } else {
        format!("{}/{}", v.numer(), v.denom())
    }
}
