//! Structured reward engine for reinforcement-learning based reasoning
//! distillation.
//!
//! A reasoning trace is decomposed into a [`StructuredSequence`] of
//! (meta, question, answer) steps. Teacher and student sequences are compared
//! step by step with early exit on the first meta mismatch, combined with
//! outcome/format rewards, and turned into group-relative advantages. The
//! [`simenv`] module runs the whole loop on a synthetic multi-branch world.

pub mod config;
pub mod grpo;
pub mod http;
pub mod matching;
pub mod metrics;
pub mod reward;
pub mod simenv;
pub mod structseq;
pub mod train;

pub use grpo::{group_advantages, AdvantageVector, RewardGroup, SoftmaxPolicy};
pub use matching::{match_texts, normalize_text, MatchConfig, MatchStrategy, Matcher};
pub use reward::{
    combine_rewards, normalized_structured_reward, structured_reward, RewardBreakdown,
    RewardParts, RewardWeights,
};
pub use structseq::{
    parse_sequence, serialize_sequence, validate_sequence, ParseError, ReasoningPath,
    ReasoningStep, StructuredSequence,
};
