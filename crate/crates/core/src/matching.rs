//! Pairwise text matching used by the structured reward.
//!
//! Matching is reflexive and symmetric for the deterministic strategies but
//! it is *not* transitive: `a~b` and `b~c` under a Jaccard threshold does not
//! imply `a~c`. The structured reward only ever needs pairwise verdicts.

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::http::{HttpError, InFlightLimit, JsonClient};
use crate::structseq::StepField;

/// Fixed instruction template a judge service may wrap around the two texts.
pub const JUDGE_PROMPT_V1: &str = include_str!("../resources/judge_prompt_v1.txt");
pub const JUDGE_PROMPT_VERSION: &str = "v1";

pub const DEFAULT_JACCARD_THRESHOLD: f64 = 0.6;
pub const DEFAULT_JUDGE_TIMEOUT: Duration = Duration::from_secs(10);
pub const DEFAULT_JUDGE_MAX_IN_FLIGHT: usize = 8;
pub const JUDGE_RETRIES: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MatchStrategy {
    ExactNormalized,
    #[default]
    TokenJaccard,
    ExternalJudge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchConfig {
    pub strategy: MatchStrategy,
    pub jaccard_threshold: f64,
    pub judge_endpoint: Option<String>,
    #[serde(with = "duration_secs")]
    pub judge_timeout: Duration,
    pub judge_max_in_flight: usize,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            strategy: MatchStrategy::TokenJaccard,
            jaccard_threshold: DEFAULT_JACCARD_THRESHOLD,
            judge_endpoint: None,
            judge_timeout: DEFAULT_JUDGE_TIMEOUT,
            judge_max_in_flight: DEFAULT_JUDGE_MAX_IN_FLIGHT,
        }
    }
}

impl MatchConfig {
    pub fn exact() -> Self {
        Self {
            strategy: MatchStrategy::ExactNormalized,
            ..Self::default()
        }
    }

    pub fn jaccard(threshold: f64) -> Self {
        Self {
            strategy: MatchStrategy::TokenJaccard,
            jaccard_threshold: threshold,
            ..Self::default()
        }
    }

    pub fn judge(endpoint: impl Into<String>) -> Self {
        Self {
            strategy: MatchStrategy::ExternalJudge,
            judge_endpoint: Some(endpoint.into()),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), MatchConfigError> {
        if !(0.0..=1.0).contains(&self.jaccard_threshold) {
            return Err(MatchConfigError::Threshold(self.jaccard_threshold));
        }
        if self.strategy == MatchStrategy::ExternalJudge && self.judge_endpoint.is_none() {
            return Err(MatchConfigError::MissingEndpoint);
        }
        Ok(())
    }
}

mod duration_secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MatchConfigError {
    #[error("jaccard_threshold must lie in [0, 1], got {0}")]
    Threshold(f64),
    #[error("external judge strategy requires judge_endpoint")]
    MissingEndpoint,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum JudgeError {
    #[error("judge timed out")]
    Timeout,
    #[error("judge returned a malformed response: {0}")]
    MalformedResponse(String),
    #[error("judge transport failure: {0}")]
    Transport(String),
    #[error("judge not configured: {0}")]
    Config(String),
}

impl From<HttpError> for JudgeError {
    fn from(e: HttpError) -> Self {
        match e {
            HttpError::Timeout => JudgeError::Timeout,
            HttpError::Malformed(m) => JudgeError::MalformedResponse(m),
            HttpError::Status(code) => JudgeError::Transport(format!("HTTP status {code}")),
            HttpError::Transport(m) => JudgeError::Transport(m),
        }
    }
}

/// Lowercase, NFC, single-spaced, trimmed, terminal `.,;:!?` stripped.
pub fn normalize_text(text: &str) -> String {
    let lowered: String = text.nfc().collect::<String>().to_lowercase();
    let composed: String = lowered.nfc().collect();
    let mut out = String::with_capacity(composed.len());
    for word in composed.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    let kept = out
        .trim_end_matches(|c: char| matches!(c, '.' | ',' | ';' | ':' | '!' | '?') || c.is_whitespace())
        .len();
    out.truncate(kept);
    out
}

fn token_set(text: &str) -> BTreeSet<String> {
    normalize_text(text)
        .split(' ')
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Jaccard similarity of normalized whitespace-token sets; two empty texts
/// have similarity 1.
pub fn token_jaccard(a: &str, b: &str) -> f64 {
    let ta = token_set(a);
    let tb = token_set(b);
    let union = ta.union(&tb).count();
    if union == 0 {
        return 1.0;
    }
    ta.intersection(&tb).count() as f64 / union as f64
}

/// A pairwise matching oracle. `role` says which step field is compared.
pub trait Matcher {
    fn is_match(&self, a: &str, b: &str, role: StepField) -> Result<bool, JudgeError>;
}

impl<M: Matcher + ?Sized> Matcher for &M {
    fn is_match(&self, a: &str, b: &str, role: StepField) -> Result<bool, JudgeError> {
        (**self).is_match(a, b, role)
    }
}

impl<M: Matcher + ?Sized> Matcher for Arc<M> {
    fn is_match(&self, a: &str, b: &str, role: StepField) -> Result<bool, JudgeError> {
        (**self).is_match(a, b, role)
    }
}

/// The two in-process strategies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeterministicMatcher {
    ExactNormalized,
    TokenJaccard { threshold: f64 },
}

impl DeterministicMatcher {
    pub fn matches(&self, a: &str, b: &str) -> bool {
        match *self {
            DeterministicMatcher::ExactNormalized => normalize_text(a) == normalize_text(b),
            DeterministicMatcher::TokenJaccard { threshold } => token_jaccard(a, b) >= threshold,
        }
    }
}

impl Matcher for DeterministicMatcher {
    fn is_match(&self, a: &str, b: &str, _role: StepField) -> Result<bool, JudgeError> {
        Ok(self.matches(a, b))
    }
}

#[derive(Debug, Serialize)]
struct JudgeRequest<'a> {
    text_a: &'a str,
    text_b: &'a str,
    role: StepField,
}

#[derive(Debug, Deserialize)]
struct JudgeResponse {
    verdict: String,
}

/// HTTP client for an external matching judge.
///
/// POSTs `{"text_a", "text_b", "role"}` and expects `{"verdict": "match"|"mismatch"}`.
/// Transient failures are retried twice; concurrent callers share a bounded
/// number of in-flight requests.
#[derive(Debug)]
pub struct JudgeClient {
    endpoint: String,
    http: JsonClient,
    limit: InFlightLimit,
}

impl JudgeClient {
    pub fn new(endpoint: impl Into<String>, timeout: Duration, max_in_flight: usize) -> Self {
        Self {
            endpoint: endpoint.into(),
            http: JsonClient::new(timeout, JUDGE_RETRIES),
            limit: InFlightLimit::new(max_in_flight),
        }
    }

    pub fn from_config(cfg: &MatchConfig) -> Result<Self, JudgeError> {
        let endpoint = cfg
            .judge_endpoint
            .clone()
            .ok_or_else(|| JudgeError::Config("missing judge_endpoint".into()))?;
        Ok(Self::new(endpoint, cfg.judge_timeout, cfg.judge_max_in_flight))
    }

    pub fn max_in_flight(&self) -> usize {
        self.limit.max()
    }

    pub fn judge(&self, a: &str, b: &str, role: StepField) -> Result<bool, JudgeError> {
        let _slot = self.limit.acquire();
        let req = JudgeRequest {
            text_a: a,
            text_b: b,
            role,
        };
        let verdict = self
            .http
            .post_validated(&self.endpoint, &req, |r: JudgeResponse| match r.verdict.as_str() {
                "match" => Ok(true),
                "mismatch" => Ok(false),
                other => Err(format!("unknown verdict {other:?}")),
            })?;
        Ok(verdict)
    }
}

impl Matcher for JudgeClient {
    fn is_match(&self, a: &str, b: &str, role: StepField) -> Result<bool, JudgeError> {
        self.judge(a, b, role)
    }
}

/// Matcher selected by a [`MatchConfig`].
#[derive(Debug)]
pub enum TextMatcher {
    Deterministic(DeterministicMatcher),
    Judge(JudgeClient),
}

impl TextMatcher {
    pub fn from_config(cfg: &MatchConfig) -> Result<Self, MatchConfigError> {
        cfg.validate()?;
        Ok(match cfg.strategy {
            MatchStrategy::ExactNormalized => {
                TextMatcher::Deterministic(DeterministicMatcher::ExactNormalized)
            }
            MatchStrategy::TokenJaccard => TextMatcher::Deterministic(DeterministicMatcher::TokenJaccard {
                threshold: cfg.jaccard_threshold,
            }),
            MatchStrategy::ExternalJudge => TextMatcher::Judge(
                JudgeClient::from_config(cfg).map_err(|_| MatchConfigError::MissingEndpoint)?,
            ),
        })
    }
}

impl Matcher for TextMatcher {
    fn is_match(&self, a: &str, b: &str, role: StepField) -> Result<bool, JudgeError> {
        match self {
            TextMatcher::Deterministic(m) => m.is_match(a, b, role),
            TextMatcher::Judge(j) => j.is_match(a, b, role),
        }
    }
}

/// One-shot match under `cfg`. For repeated judge calls build a
/// [`TextMatcher`] once so the in-flight limit is shared.
pub fn match_texts(a: &str, b: &str, cfg: &MatchConfig) -> Result<bool, JudgeError> {
    let matcher = TextMatcher::from_config(cfg).map_err(|e| JudgeError::Config(e.to_string()))?;
    matcher.is_match(a, b, StepField::Meta)
}

/// Asks the configured judge directly.
pub fn judge_match(a: &str, b: &str, role: StepField, cfg: &MatchConfig) -> Result<bool, JudgeError> {
    JudgeClient::from_config(cfg)?.judge(a, b, role)
}

/// Fills the versioned judge prompt for a judge service that wraps an LLM.
pub fn render_judge_prompt(a: &str, b: &str, role: StepField) -> String {
    JUDGE_PROMPT_V1
        .replace("{role}", role.tag())
        .replace("{text_a}", a)
        .replace("{text_b}", b)
}
