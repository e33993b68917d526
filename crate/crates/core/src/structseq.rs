//! Structured reasoning sequences: ordered (meta, question, answer) steps
//! extracted from a raw reasoning path.
//!
//! Two interchangeable surface forms are supported. The tagged text form is
//!
//! ```text
//! <step>
//! <meta>TEXT</meta>
//! <question>TEXT</question>
//! <answer>TEXT</answer>
//! </step>
//! ```
//!
//! repeated once per step, with `&`, `<` and `>` escaped as `&amp;`, `&lt;`
//! and `&gt;`. The JSON form is
//! `{"source_id": string|null, "steps": [{"meta": .., "question": .., "answer": ..}]}`.
//! [`parse_any`] accepts either.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One meta-reasoning / solving step.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ReasoningStep {
    /// Sub-problem selection content.
    pub meta: String,
    /// The selected sub-problem, stated explicitly.
    pub question: String,
    /// Result of solving the sub-problem.
    pub answer: String,
}

impl ReasoningStep {
    pub fn new(
        meta: impl Into<String>,
        question: impl Into<String>,
        answer: impl Into<String>,
    ) -> Self {
        Self {
            meta: meta.into(),
            question: question.into(),
            answer: answer.into(),
        }
    }

    pub fn field(&self, field: StepField) -> &str {
        match field {
            StepField::Meta => &self.meta,
            StepField::Question => &self.question,
            StepField::Answer => &self.answer,
        }
    }
}

/// The three fields of a step, in their fixed serialization order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepField {
    Meta,
    Question,
    Answer,
}

impl StepField {
    pub const ALL: [StepField; 3] = [StepField::Meta, StepField::Question, StepField::Answer];

    pub fn tag(self) -> &'static str {
        match self {
            StepField::Meta => "meta",
            StepField::Question => "question",
            StepField::Answer => "answer",
        }
    }
}

impl fmt::Display for StepField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// An ordered list of reasoning steps. Step indices are implicit (1-based in
/// reports, document order).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StructuredSequence {
    #[serde(default)]
    pub source_id: Option<String>,
    pub steps: Vec<ReasoningStep>,
}

impl StructuredSequence {
    pub fn new(steps: Vec<ReasoningStep>) -> Self {
        Self {
            source_id: None,
            steps,
        }
    }

    pub fn with_source_id(mut self, id: impl Into<String>) -> Self {
        self.source_id = Some(id.into());
        self
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("sequence serializes")
    }
}

/// An unstructured reasoning trace together with its problem statement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningPath {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub problem: String,
    pub body: String,
    #[serde(default)]
    pub final_answer: Option<String>,
}

impl ReasoningPath {
    pub fn new(problem: impl Into<String>, body: impl Into<String>) -> Result<Self, PathError> {
        let body = body.into();
        if body.trim().is_empty() {
            return Err(PathError::EmptyBody);
        }
        Ok(Self {
            id: None,
            problem: problem.into(),
            body,
            final_answer: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PathError {
    #[error("reasoning path body is empty")]
    EmptyBody,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    /// Expected the named tag (e.g. `<meta>` or `</step>`).
    MissingTag(String),
    /// The field is empty after trimming.
    EmptyField(StepField),
    /// The named tag was opened but never closed.
    UnclosedTag(String),
    /// The input contains no step.
    ZeroSteps,
    /// Input bytes are not valid UTF-8.
    InvalidUtf8,
    /// JSON form could not be decoded.
    Json(String),
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseErrorKind::MissingTag(t) => write!(f, "expected {t}"),
            ParseErrorKind::EmptyField(field) => write!(f, "empty {field} field"),
            ParseErrorKind::UnclosedTag(t) => write!(f, "unclosed tag <{t}>"),
            ParseErrorKind::ZeroSteps => f.write_str("zero steps"),
            ParseErrorKind::InvalidUtf8 => f.write_str("invalid UTF-8"),
            ParseErrorKind::Json(msg) => write!(f, "invalid JSON sequence: {msg}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("parse error at byte {offset}: {kind}")]
pub struct ParseError {
    pub offset: usize,
    pub kind: ParseErrorKind,
}

impl ParseError {
    fn new(offset: usize, kind: ParseErrorKind) -> Self {
        Self { offset, kind }
    }
}

/// Escapes `&`, `<` and `>` for the tagged form.
pub fn escape_text(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for ch in text.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            c => out.push(c),
        }
    }
    out
}

/// Reverses [`escape_text`]. Unknown `&` sequences are kept literally.
pub fn unescape_text(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(pos) = rest.find('&') {
        out.push_str(&rest[..pos]);
        rest = &rest[pos..];
        let mut matched = false;
        for (entity, ch) in [("&amp;", '&'), ("&lt;", '<'), ("&gt;", '>')] {
            if let Some(tail) = rest.strip_prefix(entity) {
                out.push(ch);
                rest = tail;
                matched = true;
                break;
            }
        }
        if !matched {
            out.push('&');
            rest = &rest[1..];
        }
    }
    out.push_str(rest);
    out
}

/// Emits the tagged text form.
pub fn serialize_sequence(seq: &StructuredSequence) -> String {
    let mut out = String::new();
    for step in &seq.steps {
        out.push_str("<step>\n");
        for field in StepField::ALL {
            let tag = field.tag();
            out.push('<');
            out.push_str(tag);
            out.push('>');
            out.push_str(&escape_text(step.field(field)));
            out.push_str("</");
            out.push_str(tag);
            out.push_str(">\n");
        }
        out.push_str("</step>\n");
    }
    out
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_ws(&mut self) {
        let rest = &self.src[self.pos..];
        self.pos += rest.len() - rest.trim_start().len();
    }

    fn at_end(&self) -> bool {
        self.pos >= self.src.len()
    }

    fn expect(&mut self, token: &str) -> Result<(), ParseError> {
        self.skip_ws();
        if self.src[self.pos..].starts_with(token) {
            self.pos += token.len();
            Ok(())
        } else {
            Err(ParseError::new(
                self.pos,
                ParseErrorKind::MissingTag(token.to_string()),
            ))
        }
    }

    /// Reads field content up to the closing tag, which is consumed.
    fn field(&mut self, field: StepField) -> Result<String, ParseError> {
        let tag = field.tag();
        let open_at = self.pos;
        self.expect(&format!("<{tag}>"))?;
        let start = self.pos;
        let rest = &self.src[start..];
        let end = match rest.find('<') {
            Some(i) => i,
            None => {
                return Err(ParseError::new(
                    open_at,
                    ParseErrorKind::UnclosedTag(tag.to_string()),
                ))
            }
        };
        let close = format!("</{tag}>");
        if !rest[end..].starts_with(&close) {
            return Err(ParseError::new(
                start + end,
                ParseErrorKind::MissingTag(close),
            ));
        }
        let content = unescape_text(&rest[..end]);
        let content = content.trim();
        if content.is_empty() {
            return Err(ParseError::new(start, ParseErrorKind::EmptyField(field)));
        }
        self.pos = start + end + close.len();
        Ok(content.to_string())
    }
}

/// Parses the tagged text form. Whitespace between tags is ignored and field
/// content is trimmed.
pub fn parse_sequence(raw: &str) -> Result<StructuredSequence, ParseError> {
    let mut cur = Cursor { src: raw, pos: 0 };
    let mut steps = Vec::new();
    loop {
        cur.skip_ws();
        if cur.at_end() {
            break;
        }
        let step_at = cur.pos;
        cur.expect("<step>")?;
        let meta = cur.field(StepField::Meta)?;
        let question = cur.field(StepField::Question)?;
        let answer = cur.field(StepField::Answer)?;
        cur.skip_ws();
        if cur.at_end() {
            return Err(ParseError::new(
                step_at,
                ParseErrorKind::UnclosedTag("step".into()),
            ));
        }
        cur.expect("</step>")?;
        steps.push(ReasoningStep {
            meta,
            question,
            answer,
        });
    }
    if steps.is_empty() {
        return Err(ParseError::new(0, ParseErrorKind::ZeroSteps));
    }
    Ok(StructuredSequence::new(steps))
}

/// Parses raw bytes; invalid UTF-8 is reported at the first bad byte.
pub fn parse_bytes(raw: &[u8]) -> Result<StructuredSequence, ParseError> {
    match std::str::from_utf8(raw) {
        Ok(s) => parse_any(s),
        Err(e) => Err(ParseError::new(e.valid_up_to(), ParseErrorKind::InvalidUtf8)),
    }
}

/// Parses the JSON form. Fields are trimmed so both forms normalize to the
/// same sequence.
pub fn parse_sequence_json(raw: &str) -> Result<StructuredSequence, ParseError> {
    let mut seq: StructuredSequence = serde_json::from_str(raw).map_err(|e| {
        ParseError::new(
            line_col_to_offset(raw, e.line(), e.column()),
            ParseErrorKind::Json(e.to_string()),
        )
    })?;
    if seq.steps.is_empty() {
        return Err(ParseError::new(0, ParseErrorKind::ZeroSteps));
    }
    for step in &mut seq.steps {
        for field in StepField::ALL {
            let slot = match field {
                StepField::Meta => &mut step.meta,
                StepField::Question => &mut step.question,
                StepField::Answer => &mut step.answer,
            };
            let trimmed = slot.trim();
            if trimmed.is_empty() {
                return Err(ParseError::new(0, ParseErrorKind::EmptyField(field)));
            }
            if trimmed.len() != slot.len() {
                *slot = trimmed.to_string();
            }
        }
    }
    Ok(seq)
}

/// Accepts either the JSON or the tagged form.
pub fn parse_any(raw: &str) -> Result<StructuredSequence, ParseError> {
    if raw.trim_start().starts_with('{') {
        parse_sequence_json(raw)
    } else {
        parse_sequence(raw)
    }
}

fn line_col_to_offset(src: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = src
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(src.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    NoSteps,
    EmptyField { step: usize, field: StepField },
    DuplicateStep { step: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub step_count: usize,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Structural checks. Violations are data; this never fails.
pub fn validate_sequence(seq: &StructuredSequence) -> ValidationReport {
    let mut violations = Vec::new();
    if seq.steps.is_empty() {
        violations.push(Violation::NoSteps);
    }
    for (i, step) in seq.steps.iter().enumerate() {
        for field in StepField::ALL {
            if step.field(field).trim().is_empty() {
                violations.push(Violation::EmptyField { step: i + 1, field });
            }
        }
        if i > 0 && seq.steps[i - 1] == *step {
            violations.push(Violation::DuplicateStep { step: i + 1 });
        }
    }
    ValidationReport {
        step_count: seq.steps.len(),
        violations,
    }
}
