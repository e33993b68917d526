//! Group-relative advantages and a tabular softmax policy updated with
//! REINFORCE using those advantages.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GroupError {
    #[error("reward group is empty")]
    Empty,
    #[error("reward {index} is not finite")]
    NonFinite { index: usize },
}

/// Rewards of the G samples drawn for one prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardGroup {
    rewards: Vec<f64>,
}

impl RewardGroup {
    pub fn new(rewards: Vec<f64>) -> Result<Self, GroupError> {
        if rewards.is_empty() {
            return Err(GroupError::Empty);
        }
        if let Some(index) = rewards.iter().position(|r| !r.is_finite()) {
            return Err(GroupError::NonFinite { index });
        }
        Ok(Self { rewards })
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageVector {
    pub advantages: Vec<f64>,
}

impl AdvantageVector {
    pub fn zeros(g: usize) -> Self {
        Self {
            advantages: vec![0.0; g],
        }
    }

    pub fn len(&self) -> usize {
        self.advantages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.advantages.is_empty()
    }
}

/// `(r_i - mean) / (popstd + eps)`; a group whose rewards are all equal gets
/// exactly zero advantages.
pub fn group_advantages(group: &RewardGroup, eps: f64) -> AdvantageVector {
    let r = group.rewards();
    let first = r[0];
    if r.iter().all(|x| x.to_bits() == first.to_bits()) {
        return AdvantageVector::zeros(r.len());
    }
    let n = r.len() as f64;
    let mean = r.iter().sum::<f64>() / n;
    let var = r.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std == 0.0 {
        return AdvantageVector::zeros(r.len());
    }
    AdvantageVector {
        advantages: r.iter().map(|x| (x - mean) / (std + eps)).collect(),
    }
}

/// Tabular state: reasoning step, branch taken at the previous step (None at
/// the first step) and the problem cue observed at this step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StateKey {
    pub step: u32,
    pub prev: Option<u32>,
    pub cue: u32,
}

impl StateKey {
    pub fn new(step: usize, prev: Option<usize>, cue: usize) -> Self {
        Self {
            step: step as u32,
            prev: prev.map(|p| p as u32),
            cue: cue as u32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub state: StateKey,
    pub action: usize,
}

/// Anything that records the decisions taken along a rollout.
pub trait DecisionPath {
    fn decisions(&self) -> &[Decision];
}

impl DecisionPath for Vec<Decision> {
    fn decisions(&self) -> &[Decision] {
        self
    }
}

impl DecisionPath for [Decision] {
    fn decisions(&self) -> &[Decision] {
        self
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Softmax policy over `n_actions` branches per state. Unknown states have
/// zero logits (uniform).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxPolicy {
    pub n_actions: usize,
    pub learning_rate: f64,
    pub logits: BTreeMap<StateKey, Vec<f64>>,
}

impl SoftmaxPolicy {
    pub fn new(n_actions: usize, learning_rate: f64) -> Self {
        assert!(n_actions >= 1, "policy needs at least one action");
        assert!(learning_rate > 0.0, "learning rate must be positive");
        Self {
            n_actions,
            learning_rate,
            logits: BTreeMap::new(),
        }
    }

    pub fn logits(&self, state: &StateKey) -> Vec<f64> {
        self.logits
            .get(state)
            .cloned()
            .unwrap_or_else(|| vec![0.0; self.n_actions])
    }

    pub fn set_logits(&mut self, state: StateKey, logits: Vec<f64>) {
        assert_eq!(logits.len(), self.n_actions);
        self.logits.insert(state, logits);
    }

    pub fn probabilities(&self, state: &StateKey) -> Vec<f64> {
        match self.logits.get(state) {
            Some(z) => softmax(z),
            None => vec![1.0 / self.n_actions as f64; self.n_actions],
        }
    }

    /// In-place version of [`policy_gradient_update`].
    pub fn apply_update<P: DecisionPath + ?Sized>(&mut self, trajectories: &[&P], advantages: &AdvantageVector) {
        assert_eq!(
            trajectories.len(),
            advantages.len(),
            "one advantage per trajectory"
        );
        let snapshot = self.clone();
        let mut deltas: BTreeMap<StateKey, Vec<f64>> = BTreeMap::new();
        for (traj, &adv) in trajectories.iter().zip(&advantages.advantages) {
            if adv == 0.0 {
                continue;
            }
            for d in traj.decisions() {
                let probs = snapshot.probabilities(&d.state);
                let delta = deltas
                    .entry(d.state)
                    .or_insert_with(|| vec![0.0; self.n_actions]);
                for (a, p) in probs.iter().enumerate() {
                    let onehot = if a == d.action { 1.0 } else { 0.0 };
                    delta[a] += self.learning_rate * adv * (onehot - p);
                }
            }
        }
        for (state, delta) in deltas {
            let n = self.n_actions;
            let z = self.logits.entry(state).or_insert_with(|| vec![0.0; n]);
            for (zi, di) in z.iter_mut().zip(delta) {
                *zi += di;
            }
        }
    }
}

/// REINFORCE step: for every decision `(s, c)` of trajectory `i`,
/// `logits[s] += lr * a_i * (onehot(c) - softmax(logits[s]))`, with all
/// softmax terms taken from the policy before the update.
pub fn policy_gradient_update<P: DecisionPath>(
    policy: &SoftmaxPolicy,
    trajectories: &[P],
    advantages: &AdvantageVector,
) -> SoftmaxPolicy {
    let mut next = policy.clone();
    let refs: Vec<&P> = trajectories.iter().collect();
    next.apply_update(&refs, advantages);
    next
}
