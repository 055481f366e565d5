//! Tolerant recognizer for the label→text dictionaries LLMs emit, and the
//! canonical serializer that is its inverse.
//!
//! The grammar is deliberately small: a brace-delimited mapping of quoted
//! string keys to quoted string values. The recognizer tolerates the drift
//! seen in real completions (single quotes, trailing commas, prose or code
//! fences around the mapping, key case and padding) and reports every repair
//! it applied. Unquoted keys or values and truncated output are errors.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Instruction, LabeledSampleSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Repair {
    QuoteStyle,
    TrailingComma,
    CodeFenceStrip,
    KeyCaseFold,
    WhitespaceTrim,
}

impl fmt::Display for Repair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Repair::QuoteStyle => "quote_style",
            Repair::TrailingComma => "trailing_comma",
            Repair::CodeFenceStrip => "code_fence_strip",
            Repair::KeyCaseFold => "key_case_fold",
            Repair::WhitespaceTrim => "whitespace_trim",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Error, Serialize, Deserialize)]
pub enum ParseError {
    #[error("missing label {0:?}")]
    MissingLabel(String),
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("malformed syntax at byte {0}")]
    MalformedSyntax(usize),
    #[error("empty value for label {0:?}")]
    EmptyValue(String),
    #[error("more than one key maps to label {0:?}")]
    AmbiguousKeyMatch(String),
}

/// Result of one parse attempt. `repairs` is sorted and duplicate-free.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseReport {
    pub outcome: Result<LabeledSampleSet, ParseError>,
    pub repairs: Vec<Repair>,
    pub raw: String,
}

impl ParseReport {
    pub fn is_ok(&self) -> bool {
        self.outcome.is_ok()
    }

    pub fn sample(&self) -> Option<&LabeledSampleSet> {
        self.outcome.as_ref().ok()
    }
}

/// One `key: value` entry as it appeared in the raw text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct RawEntry {
    pub key: String,
    pub value: String,
}

/// A lexed brace region.
#[derive(Debug, Clone)]
pub(crate) struct Region {
    pub start: usize,
    /// Byte offset one past the closing brace.
    pub end: usize,
    pub lexed: Result<(Vec<RawEntry>, BTreeSet<Repair>), usize>,
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(src: &'a str, pos: usize) -> Self {
        Self { src, pos }
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.peek() {
            if c.is_whitespace() {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
    }

    fn next_non_ws(&self) -> Option<char> {
        self.src[self.pos..].chars().find(|c| !c.is_whitespace())
    }
}

/// Reads a quoted string starting at the opening quote under the cursor.
///
/// A matching quote only closes the string when the next non-whitespace
/// character is one of `terminators` (or input ends); otherwise it is taken
/// as a literal character and `stray` is set. Returns `Err(pos)` when input
/// ends inside the string.
fn read_quoted(
    cur: &mut Cursor<'_>,
    terminators: &[char],
    stray: &mut bool,
) -> Result<String, usize> {
    let quote = cur.bump().expect("caller checked opening quote");
    let mut out = String::new();
    loop {
        let Some(c) = cur.bump() else {
            return Err(cur.src.len());
        };
        match c {
            '\\' => {
                let Some(e) = cur.bump() else {
                    return Err(cur.src.len());
                };
                match e {
                    'n' => out.push('\n'),
                    't' => out.push('\t'),
                    'r' => out.push('\r'),
                    'b' => out.push('\u{8}'),
                    'f' => out.push('\u{c}'),
                    '"' | '\'' | '\\' | '/' => out.push(e),
                    'u' => {
                        let hex_start = cur.pos;
                        let hex: String = cur.src[hex_start..].chars().take(4).collect();
                        match (hex.len() == 4)
                            .then(|| u32::from_str_radix(&hex, 16).ok())
                            .flatten()
                            .and_then(char::from_u32)
                        {
                            Some(ch) => {
                                cur.pos += 4;
                                out.push(ch);
                            }
                            None => {
                                out.push('\\');
                                out.push('u');
                            }
                        }
                    }
                    other => {
                        out.push('\\');
                        out.push(other);
                    }
                }
            }
            c if c == quote => match cur.next_non_ws() {
                None => return Ok(out),
                Some(n) if terminators.contains(&n) => return Ok(out),
                Some(_) => {
                    *stray = true;
                    out.push(c);
                }
            },
            c => out.push(c),
        }
    }
}

const KEY_TERMINATORS: &[char] = &[':'];
const VALUE_TERMINATORS: &[char] = &[',', '}'];

/// Lexes one `{ ... }` mapping starting at `start` (which must be `{`).
/// On success returns the entries, the repairs that fired and the offset one
/// past the closing brace.
fn lex_dict(src: &str, start: usize) -> Result<(Vec<RawEntry>, BTreeSet<Repair>, usize), usize> {
    let mut cur = Cursor::new(src, start);
    let mut repairs = BTreeSet::new();
    let mut entries = Vec::new();
    if cur.bump() != Some('{') {
        return Err(start);
    }
    let mut after_comma = false;
    loop {
        cur.skip_ws();
        match cur.peek() {
            None => return Err(src.len()),
            Some('}') => {
                if after_comma {
                    repairs.insert(Repair::TrailingComma);
                }
                cur.bump();
                return Ok((entries, repairs, cur.pos));
            }
            Some(q @ ('"' | '\'')) => {
                if !entries.is_empty() && !after_comma {
                    return Err(cur.pos);
                }
                if q == '\'' {
                    repairs.insert(Repair::QuoteStyle);
                }
                let mut stray = false;
                let key = read_quoted(&mut cur, KEY_TERMINATORS, &mut stray)?;
                cur.skip_ws();
                if cur.peek() != Some(':') {
                    return Err(cur.pos.min(src.len()));
                }
                cur.bump();
                cur.skip_ws();
                let value = match cur.peek() {
                    Some(q @ ('"' | '\'')) => {
                        if q == '\'' {
                            repairs.insert(Repair::QuoteStyle);
                        }
                        read_quoted(&mut cur, VALUE_TERMINATORS, &mut stray)?
                    }
                    None => return Err(src.len()),
                    Some(_) => return Err(cur.pos),
                };
                if stray {
                    repairs.insert(Repair::QuoteStyle);
                }
                entries.push(RawEntry { key, value });
                cur.skip_ws();
                match cur.peek() {
                    Some(',') => {
                        cur.bump();
                        after_comma = true;
                    }
                    Some('}') => after_comma = false,
                    None => return Err(src.len()),
                    Some(_) => return Err(cur.pos),
                }
            }
            Some(_) => return Err(cur.pos),
        }
    }
}

/// Finds every top-level brace region in `src` and lexes it. Regions that are
/// never closed are reported with `end == src.len()` and a lex error.
pub(crate) fn find_regions(src: &str) -> Vec<Region> {
    let mut regions = Vec::new();
    let mut pos = 0;
    while let Some(off) = src[pos..].find('{') {
        let start = pos + off;
        match lex_dict(src, start) {
            Ok((entries, repairs, end)) => {
                regions.push(Region {
                    start,
                    end,
                    lexed: Ok((entries, repairs)),
                });
                pos = end;
            }
            Err(err_pos) => {
                let end = balanced_end(src, start).unwrap_or(src.len());
                regions.push(Region {
                    start,
                    end,
                    lexed: Err(err_pos),
                });
                if end >= src.len() {
                    break;
                }
                pos = end;
            }
        }
    }
    regions
}

/// Quote-aware brace matching used to skip over a region that failed to lex.
/// Quotes only open strings directly after `{`, `,` or `:`.
fn balanced_end(src: &str, start: usize) -> Option<usize> {
    let mut cur = Cursor::new(src, start);
    let mut depth = 0usize;
    let mut prev_sig = ' ';
    while let Some(c) = cur.peek() {
        match c {
            '"' | '\'' if matches!(prev_sig, '{' | ',' | ':') => {
                let mut stray = false;
                let terms: &[char] = &[',', ':', '}'];
                if read_quoted(&mut cur, terms, &mut stray).is_err() {
                    return None;
                }
                prev_sig = c;
                continue;
            }
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(cur.pos + 1);
                }
            }
            _ => {}
        }
        if !c.is_whitespace() {
            prev_sig = c;
        }
        cur.bump();
    }
    None
}

fn count_matching_labels(entries: &[RawEntry], labels: &[String]) -> usize {
    labels
        .iter()
        .filter(|l| {
            let lf = l.to_lowercase();
            entries.iter().any(|e| e.key.trim().to_lowercase() == lf)
        })
        .count()
}

/// Resolves lexed entries against a declared label set.
pub(crate) fn resolve_entries(
    entries: &[RawEntry],
    instruction: &Instruction,
    repairs: &mut BTreeSet<Repair>,
) -> Result<LabeledSampleSet, ParseError> {
    let labels = instruction.labels();
    let mut slots: Vec<Option<String>> = vec![None; labels.len()];
    for entry in entries {
        let key = entry.key.trim();
        if key != entry.key {
            repairs.insert(Repair::WhitespaceTrim);
        }
        let idx = match labels.iter().position(|l| l == key) {
            Some(i) => i,
            None => {
                let folded = key.to_lowercase();
                let candidates: Vec<usize> = labels
                    .iter()
                    .enumerate()
                    .filter(|(_, l)| l.to_lowercase() == folded)
                    .map(|(i, _)| i)
                    .collect();
                match candidates.as_slice() {
                    [] => return Err(ParseError::UnknownKey(key.to_string())),
                    [i] => {
                        repairs.insert(Repair::KeyCaseFold);
                        *i
                    }
                    _ => return Err(ParseError::AmbiguousKeyMatch(key.to_string())),
                }
            }
        };
        if slots[idx].is_some() {
            return Err(ParseError::AmbiguousKeyMatch(labels[idx].clone()));
        }
        let value = entry.value.trim();
        if value != entry.value {
            repairs.insert(Repair::WhitespaceTrim);
        }
        if value.is_empty() {
            return Err(ParseError::EmptyValue(labels[idx].clone()));
        }
        slots[idx] = Some(value.to_string());
    }
    let mut texts = Vec::with_capacity(labels.len());
    for (label, slot) in labels.iter().zip(slots) {
        match slot {
            Some(t) => texts.push(t),
            None => return Err(ParseError::MissingLabel(label.clone())),
        }
    }
    Ok(LabeledSampleSet::from_ordered(instruction, texts)
        .expect("texts are non-empty and one per label"))
}

fn has_outside_text(src: &str, start: usize, end: usize) -> bool {
    !src[..start].trim().is_empty() || !src[end..].trim().is_empty()
}

/// Parses raw model output into a sample for `instruction`.
///
/// When several brace regions are present, the one whose keys cover the most
/// declared labels wins; ties go to the earliest region.
pub fn parse_sample(raw: &str, instruction: &Instruction) -> ParseReport {
    let mut repairs = BTreeSet::new();
    let outcome = parse_inner(raw, instruction, &mut repairs);
    ParseReport {
        outcome,
        repairs: repairs.into_iter().collect(),
        raw: raw.to_string(),
    }
}

fn parse_inner(
    raw: &str,
    instruction: &Instruction,
    repairs: &mut BTreeSet<Repair>,
) -> Result<LabeledSampleSet, ParseError> {
    let regions = find_regions(raw);
    let best = regions
        .iter()
        .filter_map(|r| match &r.lexed {
            Ok((entries, _)) => Some((r, count_matching_labels(entries, instruction.labels()))),
            Err(_) => None,
        })
        // max_by_key keeps the last maximum; reverse so the earliest wins ties
        .rev()
        .max_by_key(|(_, score)| *score)
        .map(|(r, _)| r);
    let Some(region) = best else {
        let pos = regions
            .iter()
            .find_map(|r| r.lexed.as_ref().err().copied())
            .unwrap_or(raw.len());
        return Err(ParseError::MalformedSyntax(pos));
    };
    let (entries, lex_repairs) = region.lexed.as_ref().expect("filtered to lexed regions");
    repairs.extend(lex_repairs.iter().copied());
    if has_outside_text(raw, region.start, region.end) {
        repairs.insert(Repair::CodeFenceStrip);
    }
    resolve_entries(entries, instruction, repairs)
}

/// Appends `s` as a double-quoted string with minimal escaping.
pub(crate) fn push_quoted(out: &mut String, s: &str) {
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04x}", c as u32)),
            c => out.push(c),
        }
    }
    out.push('"');
}

/// Canonical form: double quotes, keys in canonical label order, `", "`
/// between entries and `": "` between key and value.
pub fn serialize_sample(sample: &LabeledSampleSet, instruction: &Instruction) -> String {
    let mut out = String::from("{");
    for (i, (label, text)) in sample.entries(instruction).enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        push_quoted(&mut out, label);
        out.push_str(": ");
        push_quoted(&mut out, text);
    }
    out.push('}');
    out
}

/// Reads the value of a `"<marker>": "<value>"` field that appears outside
/// braces, as in `"Input": "..."`. Matching on the marker is
/// case-insensitive.
pub(crate) fn read_marked_string(src: &str, marker: &str, before: usize) -> Option<String> {
    let lower = src[..before].to_ascii_lowercase();
    let marker = marker.to_ascii_lowercase();
    let at = lower.find(&marker)?;
    let mut cur = Cursor::new(src, at + marker.len());
    if matches!(cur.peek(), Some('"' | '\'')) {
        cur.bump();
    }
    cur.skip_ws();
    if cur.bump() != Some(':') {
        return None;
    }
    cur.skip_ws();
    if !matches!(cur.peek(), Some('"' | '\'')) {
        return None;
    }
    let mut stray = false;
    read_quoted(&mut cur, &[',', '"', '\'', '{'], &mut stray).ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_instruction;

    fn pn() -> Instruction {
        validate_instruction("sentiment", &["positive", "negative"]).unwrap()
    }

    #[test]
    fn well_formed_literal() {
        let r = parse_sample(r#"{"positive": "I love it!", "negative": "Awful."}"#, &pn());
        let s = r.outcome.unwrap();
        assert_eq!(s.texts(), ["I love it!", "Awful."]);
        assert!(r.repairs.is_empty());
    }

    #[test]
    fn prose_single_quotes_trailing_comma_and_case() {
        let r = parse_sample(
            "Here you go: {'Positive': 'Great!', 'negative': 'Bad.',}",
            &pn(),
        );
        assert_eq!(r.outcome.unwrap().texts(), ["Great!", "Bad."]);
        assert_eq!(
            r.repairs,
            vec![
                Repair::QuoteStyle,
                Repair::TrailingComma,
                Repair::CodeFenceStrip,
                Repair::KeyCaseFold
            ]
        );
    }

    #[test]
    fn missing_label() {
        let r = parse_sample(r#"{"positive": "ok"}"#, &pn());
        assert_eq!(r.outcome, Err(ParseError::MissingLabel("negative".into())));
    }

    #[test]
    fn serialize_canonical_and_escaped() {
        let i = pn();
        let s = LabeledSampleSet::from_ordered(&i, vec!["a".into(), "b".into()]).unwrap();
        assert_eq!(
            serialize_sample(&s, &i),
            r#"{"positive": "a", "negative": "b"}"#
        );
        let s =
            LabeledSampleSet::from_ordered(&i, vec!["say \"hi\"".into(), "b\\c".into()]).unwrap();
        let out = serialize_sample(&s, &i);
        assert_eq!(out, r#"{"positive": "say \"hi\"", "negative": "b\\c"}"#);
        let back = parse_sample(&out, &i);
        assert_eq!(back.outcome.unwrap(), s);
        assert!(back.repairs.is_empty());
    }

    #[test]
    fn apostrophes_inside_single_quotes() {
        let r = parse_sample("{'positive': 'It's great', 'negative': 'don't'}", &pn());
        assert_eq!(r.outcome.unwrap().texts(), ["It's great", "don't"]);
        assert_eq!(r.repairs, vec![Repair::QuoteStyle]);
    }

    #[test]
    fn nested_braces_in_quoted_values() {
        let r = parse_sample(r#"{"positive": "set {a, b}", "negative": "}{"}"#, &pn());
        assert_eq!(r.outcome.unwrap().texts(), ["set {a, b}", "}{"]);
    }

    #[test]
    fn unquoted_value_is_malformed() {
        let raw = r#"{"positive": great, "negative": "bad"}"#;
        let r = parse_sample(raw, &pn());
        assert_eq!(r.outcome, Err(ParseError::MalformedSyntax(13)));
    }

    #[test]
    fn truncated_is_malformed_at_end() {
        let raw = r#"{"positive": "great", "negative": "ba"#;
        assert_eq!(
            parse_sample(raw, &pn()).outcome,
            Err(ParseError::MalformedSyntax(raw.len()))
        );
        assert_eq!(
            parse_sample("no braces here", &pn()).outcome,
            Err(ParseError::MalformedSyntax(14))
        );
    }

    #[test]
    fn best_region_wins() {
        let raw = r#"Example: {"x": "y"} Answer: {"positive": "p", "negative": "n"}"#;
        let r = parse_sample(raw, &pn());
        assert_eq!(r.outcome.unwrap().texts(), ["p", "n"]);
        // tie on label coverage goes to the earliest region
        let raw = r#"{"positive": "1", "negative": "2"} {"positive": "3", "negative": "4"}"#;
        assert_eq!(
            parse_sample(raw, &pn()).outcome.unwrap().texts(),
            ["1", "2"]
        );
    }

    #[test]
    fn ambiguous_and_unknown_keys() {
        let raw = r#"{"Positive": "a", "positive": "b", "negative": "c"}"#;
        assert_eq!(
            parse_sample(raw, &pn()).outcome,
            Err(ParseError::AmbiguousKeyMatch("positive".into()))
        );
        let raw = r#"{"positive": "a", "negative": "c", "neutral": "d"}"#;
        assert_eq!(
            parse_sample(raw, &pn()).outcome,
            Err(ParseError::UnknownKey("neutral".into()))
        );
        let raw = r#"{"positive": "a", "negative": "  "}"#;
        assert_eq!(
            parse_sample(raw, &pn()).outcome,
            Err(ParseError::EmptyValue("negative".into()))
        );
    }

    #[test]
    fn marked_string() {
        let src = "\"Input\": \"Sort emails\"\n\"Output\": {\"a\": \"b\"}";
        let brace = src.find('{').unwrap();
        assert_eq!(
            read_marked_string(src, "input", brace).as_deref(),
            Some("Sort emails")
        );
    }
}
