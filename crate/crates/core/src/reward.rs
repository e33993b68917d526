//! Structured reward between teacher and student sequences, auxiliary
//! outcome/format rewards, and their weighted combination.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matching::{normalize_text, JudgeError, Matcher};
use crate::structseq::{StepField, StructuredSequence};

const THINK_OPEN: &str = "<think>";
const THINK_CLOSE: &str = "</think>";

/// Result of the step-wise comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructuredScore {
    pub reward: f64,
    pub matched_prefix_len: usize,
}

/// Walks both sequences in lockstep. A step whose meta matches scores 1,
/// halved once for a question mismatch and once more for an answer mismatch;
/// the first meta mismatch ends accumulation.
pub fn structured_reward<M: Matcher + ?Sized>(
    teacher: &StructuredSequence,
    student: &StructuredSequence,
    matcher: &M,
) -> Result<StructuredScore, JudgeError> {
    let mut reward = 0.0;
    let mut matched = 0;
    for (t, s) in teacher.steps.iter().zip(&student.steps) {
        if !matcher.is_match(&t.meta, &s.meta, StepField::Meta)? {
            break;
        }
        let mut v = 1.0;
        if !matcher.is_match(&t.question, &s.question, StepField::Question)? {
            v *= 0.5;
        }
        if !matcher.is_match(&t.answer, &s.answer, StepField::Answer)? {
            v *= 0.5;
        }
        reward += v;
        matched += 1;
    }
    Ok(StructuredScore {
        reward,
        matched_prefix_len: matched,
    })
}

/// [`structured_reward`] divided by the teacher length, in `[0, 1]`.
pub fn normalized_structured_reward<M: Matcher + ?Sized>(
    teacher: &StructuredSequence,
    student: &StructuredSequence,
    matcher: &M,
) -> Result<f64, JudgeError> {
    if teacher.is_empty() {
        return Ok(0.0);
    }
    Ok(structured_reward(teacher, student, matcher)?.reward / teacher.len() as f64)
}

/// Parses integers, decimals (with optional exponent) and `p/q` fractions
/// exactly.
pub fn parse_rational(text: &str) -> Option<BigRational> {
    let t = text.trim();
    if let Some((num, den)) = t.split_once('/') {
        let n = parse_decimal(num.trim())?;
        let d = parse_decimal(den.trim())?;
        if d.is_zero() {
            return None;
        }
        return Some(n / d);
    }
    parse_decimal(t)
}

fn parse_decimal(t: &str) -> Option<BigRational> {
    let (neg, body) = match t.as_bytes().first()? {
        b'-' => (true, &t[1..]),
        b'+' => (false, &t[1..]),
        _ => (false, t),
    };
    let (mantissa, exp) = match body.find(['e', 'E']) {
        Some(i) => {
            let e: i32 = body[i + 1..].parse().ok()?;
            (&body[..i], e)
        }
        None => (body, 0),
    };
    // Bounded so that hostile inputs cannot allocate huge powers of ten.
    if exp.unsigned_abs() > 400 {
        return None;
    }
    let (int_part, frac_part) = match mantissa.split_once('.') {
        Some((i, f)) => (i, f),
        None => (mantissa, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.bytes().all(|b| b.is_ascii_digit()) || !frac_part.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let digits = format!("{int_part}{frac_part}");
    let mut value = BigRational::from_integer(digits.parse::<BigInt>().ok()?);
    let scale = exp - frac_part.len() as i32;
    let ten = BigRational::from_integer(BigInt::from(10));
    let mut pow = BigRational::one();
    for _ in 0..scale.unsigned_abs() {
        pow *= &ten;
    }
    if scale >= 0 {
        value *= pow;
    } else {
        value /= pow;
    }
    Some(if neg { -value } else { value })
}

/// 1 when the normalized strings agree or both parse to the same rational.
pub fn accuracy_reward(predicted: &str, gold: &str) -> f64 {
    if normalize_text(predicted) == normalize_text(gold) {
        return 1.0;
    }
    match (parse_rational(predicted), parse_rational(gold)) {
        (Some(p), Some(g)) if p == g => 1.0,
        _ => 0.0,
    }
}

/// 1 for `<think>BODY</think>TAIL` with non-blank body and tail and no
/// further think tags.
pub fn format_reward(response: &str) -> f64 {
    let Some(rest) = response.trim_start().strip_prefix(THINK_OPEN) else {
        return 0.0;
    };
    let Some(close) = rest.find(THINK_CLOSE) else {
        return 0.0;
    };
    let body = &rest[..close];
    let tail = &rest[close + THINK_CLOSE.len()..];
    let ok = !body.trim().is_empty()
        && !tail.trim().is_empty()
        && !body.contains(THINK_OPEN)
        && !tail.contains(THINK_OPEN)
        && !tail.contains(THINK_CLOSE);
    if ok {
        1.0
    } else {
        0.0
    }
}

/// 0.25 per satisfied condition: one `<think>`, one `</think>`, open before
/// close, non-blank text after the last `</think>`.
pub fn tag_count_reward(response: &str) -> f64 {
    let opens = response.matches(THINK_OPEN).count();
    let closes = response.matches(THINK_CLOSE).count();
    let mut score = 0.0;
    if opens == 1 {
        score += 0.25;
    }
    if closes == 1 {
        score += 0.25;
    }
    if opens == 1 && closes == 1 {
        let o = response.find(THINK_OPEN).unwrap_or(usize::MAX);
        let c = response.find(THINK_CLOSE).unwrap_or(0);
        if o < c {
            score += 0.25;
        }
    }
    if let Some(c) = response.rfind(THINK_CLOSE) {
        if !response[c + THINK_CLOSE.len()..].trim().is_empty() {
            score += 0.25;
        }
    }
    score
}

/// The answer a response commits to: text after the last `</think>`, or the
/// whole response when there is no closing tag.
pub fn extract_answer(response: &str) -> &str {
    match response.rfind(THINK_CLOSE) {
        Some(c) => response[c + THINK_CLOSE.len()..].trim(),
        None => response.trim(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardWeights {
    pub w_acc: f64,
    pub w_gsrm: f64,
    pub w_format: f64,
    pub w_tag: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            w_acc: 3.0,
            w_gsrm: 3.0,
            w_format: 2.0,
            w_tag: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WeightError {
    #[error("reward weights must be finite and non-negative")]
    Negative,
    #[error("all reward weights are zero")]
    AllZero,
}

impl RewardWeights {
    pub fn new(w_acc: f64, w_gsrm: f64, w_format: f64, w_tag: f64) -> Result<Self, WeightError> {
        let w = Self {
            w_acc,
            w_gsrm,
            w_format,
            w_tag,
        };
        w.validate()?;
        Ok(w)
    }

    fn as_array(&self) -> [f64; 4] {
        [self.w_acc, self.w_gsrm, self.w_format, self.w_tag]
    }

    pub fn validate(&self) -> Result<(), WeightError> {
        let ws = self.as_array();
        if ws.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(WeightError::Negative);
        }
        if ws.iter().all(|w| *w == 0.0) {
            return Err(WeightError::AllZero);
        }
        Ok(())
    }

    /// Outcome-only ablation: the structure weight set to zero.
    pub fn without_structure(self) -> Self {
        Self { w_gsrm: 0.0, ..self }
    }
}

/// Component rewards prior to weighting.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardParts {
    pub r_acc: f64,
    pub r_gsrm_raw: f64,
    pub r_gsrm_norm: f64,
    pub r_format: f64,
    pub r_tag: f64,
    pub matched_prefix_len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_acc: f64,
    pub r_gsrm_raw: f64,
    pub r_gsrm_norm: f64,
    pub r_format: f64,
    pub r_tag: f64,
    pub total: f64,
    pub matched_prefix_len: usize,
}

/// Weighted mean of the four components; the result lies in `[0, 1]` when
/// every component does.
pub fn combine_rewards(parts: &RewardParts, w: &RewardWeights) -> Result<RewardBreakdown, WeightError> {
    w.validate()?;
    let total = (w.w_acc * parts.r_acc
        + w.w_gsrm * parts.r_gsrm_norm
        + w.w_format * parts.r_format
        + w.w_tag * parts.r_tag)
        / (w.w_acc + w.w_gsrm + w.w_format + w.w_tag);
    Ok(RewardBreakdown {
        r_acc: parts.r_acc,
        r_gsrm_raw: parts.r_gsrm_raw,
        r_gsrm_norm: parts.r_gsrm_norm,
        r_format: parts.r_format,
        r_tag: parts.r_tag,
        total,
        matched_prefix_len: parts.matched_prefix_len,
    })
}

/// Inputs for a full reward evaluation. Components whose inputs are absent
/// are excluded from the weighted mean.
#[derive(Debug, Clone, Copy)]
pub struct ScoreRequest<'a> {
    pub teacher: &'a StructuredSequence,
    pub student: &'a StructuredSequence,
    pub gold_answer: Option<&'a str>,
    pub response_text: Option<&'a str>,
}

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error(transparent)]
    Judge(#[from] JudgeError),
    #[error(transparent)]
    Weights(#[from] WeightError),
}

pub fn score<M: Matcher + ?Sized>(
    req: ScoreRequest<'_>,
    weights: &RewardWeights,
    matcher: &M,
) -> Result<RewardBreakdown, ScoreError> {
    weights.validate()?;
    let s = structured_reward(req.teacher, req.student, matcher)?;
    let mut parts = RewardParts {
        r_gsrm_raw: s.reward,
        r_gsrm_norm: if req.teacher.is_empty() {
            0.0
        } else {
            s.reward / req.teacher.len() as f64
        },
        matched_prefix_len: s.matched_prefix_len,
        ..RewardParts::default()
    };
    let mut w = *weights;
    match (req.gold_answer, req.response_text) {
        (Some(gold), Some(resp)) => parts.r_acc = accuracy_reward(extract_answer(resp), gold),
        _ => w.w_acc = 0.0,
    }
    match req.response_text {
        Some(resp) => {
            parts.r_format = format_reward(resp);
            parts.r_tag = tag_count_reward(resp);
        }
        None => {
            w.w_format = 0.0;
            w.w_tag = 0.0;
        }
    }
    Ok(combine_rewards(&parts, &w)?)
}
