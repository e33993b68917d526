//! Synthetic multi-branch reasoning world for desk-scale distillation runs.
//!
//! A problem is solved in `depth` steps; at every step one of `branching`
//! sub-problems is selected. Each problem instance exposes one observable cue
//! per step, and the teacher's choice is a fixed function of
//! `(step, previous choice, cue)`. Averaged over cues, the teacher therefore
//! follows the per-state branch distribution in [`TeacherSpec::branch_dist`]
//! and is genuinely multi-branch. Some branches are dead ends: taking one ends
//! the trajectory and makes the final answer wrong.
//!
//! The student is a tabular softmax policy over the same states. It starts
//! from an imitation-style prior that favours the teacher's most common
//! branch in each state regardless of cue, and is trained with group-relative REINFORCE on the
//! combined reward.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grpo::{group_advantages, Decision, DecisionPath, RewardGroup, SoftmaxPolicy, StateKey, DEFAULT_EPS};
use crate::matching::{MatchConfig, MatchStrategy, TextMatcher};
use crate::metrics::{diversity_score, EmbeddingSet};
use crate::reward::{combine_rewards, structured_reward, RewardBreakdown, RewardParts, RewardWeights};
use crate::structseq::{ReasoningStep, StructuredSequence};

const MAX_CORRECT_PATHS: usize = 1 << 20;
const EVAL_SALT: u64 = 0xe7a1_0002;
const KL_FLOOR: f64 = 1e-12;

const SYLLABLES: [&str; 20] = [
    "ba", "ko", "li", "mu", "ne", "ra", "so", "ti", "vu", "ze", "da", "fi", "go", "he", "ju", "ka",
    "lo", "mi", "pu", "we",
];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("depth must be at least 1")]
    Depth,
    #[error("branching must be at least 2")]
    Branching,
    #[error("cue count must be at least 1")]
    Cues,
    #[error("min_support must lie in 1..=branching")]
    MinSupport,
    #[error("support_floor must lie in [0, 1]")]
    SupportFloor,
    #[error("{dead} dead branches leave no viable branch (zero correct paths)")]
    TooManyDeadBranches { dead: usize, min_support: usize },
    #[error("{cues} cues cannot give {min_support} branches probability >= {floor} each")]
    CuesTooFew { cues: usize, min_support: usize, floor: f64 },
    #[error("world has more than {MAX_CORRECT_PATHS} correct paths")]
    TooLarge,
    #[error("teacher: {0}")]
    Teacher(String),
    #[error("training: {0}")]
    Training(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    /// Number of reasoning steps T.
    pub depth: usize,
    /// Candidate sub-problems per step B.
    pub branching: usize,
    /// Distinct observable cues per step.
    pub cues: usize,
    /// Dead-end branches per state, lowered if needed so that
    /// `min_support` branches stay viable.
    pub dead_branches: usize,
    /// Teacher branches with probability >= `support_floor` in every state.
    pub min_support: usize,
    pub support_floor: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            depth: 3,
            branching: 3,
            cues: 10,
            dead_branches: 1,
            min_support: 2,
            support_floor: 0.1,
        }
    }
}

/// A state of the world: the step index and the branch chosen before it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Bucket {
    pub step: usize,
    pub prev: Option<usize>,
}

impl Bucket {
    pub fn new(step: usize, prev: Option<usize>) -> Self {
        Self { step, prev }
    }
}

/// Observable cues of one problem, one per step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemInstance {
    pub cues: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchWorld {
    pub depth: usize,
    pub branching: usize,
    pub cues: usize,
    pub seed: u64,
    /// Indexed `[step][branch]`.
    pub meta_templates: Vec<Vec<String>>,
    pub question_templates: Vec<Vec<String>>,
    pub answer_templates: Vec<Vec<String>>,
    viable: BTreeMap<Bucket, Vec<bool>>,
    pub correct_paths: BTreeSet<Vec<usize>>,
}

impl BranchWorld {
    /// All states in canonical order.
    pub fn buckets(&self) -> Vec<Bucket> {
        let mut out = vec![Bucket::new(0, None)];
        for step in 1..self.depth {
            out.extend((0..self.branching).map(|b| Bucket::new(step, Some(b))));
        }
        out
    }

    pub fn is_viable(&self, bucket: Bucket, branch: usize) -> bool {
        self.viable.get(&bucket).is_some_and(|v| v.get(branch).copied().unwrap_or(false))
    }

    pub fn viable_branches(&self, bucket: Bucket) -> Vec<usize> {
        (0..self.branching).filter(|&b| self.is_viable(bucket, b)).collect()
    }

    pub fn is_correct(&self, choices: &[usize]) -> bool {
        self.correct_paths.contains(choices)
    }

    pub fn step_text(&self, step: usize, branch: usize) -> ReasoningStep {
        ReasoningStep::new(
            self.meta_templates[step][branch].clone(),
            self.question_templates[step][branch].clone(),
            self.answer_templates[step][branch].clone(),
        )
    }

    pub fn render(&self, choices: &[usize]) -> StructuredSequence {
        StructuredSequence::new(
            choices.iter().enumerate().map(|(t, &b)| self.step_text(t, b)).collect(),
        )
    }

    pub fn sample_problem<R: Rng + ?Sized>(&self, rng: &mut R) -> ProblemInstance {
        ProblemInstance {
            cues: (0..self.depth).map(|_| rng.random_range(0..self.cues)).collect(),
        }
    }

    /// Concatenated per-step one-hot branch indicators (zeros past the end of
    /// a short trajectory).
    pub fn embed(&self, choices: &[usize]) -> Vec<f64> {
        let mut v = vec![0.0; self.depth * self.branching];
        for (t, &b) in choices.iter().enumerate() {
            v[t * self.branching + b] = 1.0;
        }
        v
    }
}

/// Teacher behaviour: a branch per `(state, cue)` and the implied marginal
/// distribution per state under uniformly drawn cues.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherSpec {
    pub branch_dist: BTreeMap<Bucket, Vec<f64>>,
    pub rule: BTreeMap<Bucket, Vec<usize>>,
}

impl TeacherSpec {
    pub fn from_rule(world: &BranchWorld, rule: BTreeMap<Bucket, Vec<usize>>) -> Result<Self, ConfigError> {
        let mut branch_dist = BTreeMap::new();
        for bucket in world.buckets() {
            let choices = rule
                .get(&bucket)
                .ok_or_else(|| ConfigError::Teacher(format!("no rule for {bucket:?}")))?;
            if choices.len() != world.cues {
                return Err(ConfigError::Teacher(format!(
                    "rule for {bucket:?} covers {} cues, expected {}",
                    choices.len(),
                    world.cues
                )));
            }
            let mut counts = vec![0usize; world.branching];
            for &b in choices {
                if b >= world.branching {
                    return Err(ConfigError::Teacher(format!("branch {b} out of range")));
                }
                counts[b] += 1;
            }
            let dist = counts.iter().map(|&c| c as f64 / world.cues as f64).collect();
            branch_dist.insert(bucket, dist);
        }
        Ok(Self { branch_dist, rule })
    }

    /// A teacher that always takes `branch`.
    pub fn degenerate(world: &BranchWorld, branch: usize) -> Result<Self, ConfigError> {
        let rule = world
            .buckets()
            .into_iter()
            .map(|b| (b, vec![branch; world.cues]))
            .collect();
        Self::from_rule(world, rule)
    }

    pub fn choose(&self, bucket: Bucket, cue: usize) -> usize {
        self.rule[&bucket][cue]
    }

    /// States the teacher visits with positive probability.
    pub fn reachable(&self, world: &BranchWorld) -> Vec<Bucket> {
        let mut out = vec![Bucket::new(0, None)];
        let mut frontier = vec![Bucket::new(0, None)];
        for step in 1..world.depth {
            let mut next = BTreeSet::new();
            for bucket in &frontier {
                for (b, &p) in self.branch_dist[bucket].iter().enumerate() {
                    if p > 0.0 && world.is_viable(*bucket, b) {
                        next.insert(Bucket::new(step, Some(b)));
                    }
                }
            }
            frontier = next.into_iter().collect();
            out.extend(frontier.iter().copied());
        }
        out
    }
}

fn make_vocabulary(n: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut syllables_per_word = 2;
    while SYLLABLES.len().pow(syllables_per_word as u32) < n {
        syllables_per_word += 1;
    }
    let total = SYLLABLES.len().pow(syllables_per_word as u32);
    let mut ids: Vec<usize> = (0..total).collect();
    ids.shuffle(rng);
    ids.truncate(n);
    ids.into_iter()
        .map(|mut id| {
            let mut w = String::new();
            for _ in 0..syllables_per_word {
                w.push_str(SYLLABLES[id % SYLLABLES.len()]);
                id /= SYLLABLES.len();
            }
            w
        })
        .collect()
}

/// Builds a world and its teacher, deterministically in `seed`.
pub fn build_world(config: &WorldConfig, seed: u64) -> Result<(BranchWorld, TeacherSpec), ConfigError> {
    let WorldConfig { depth, branching, cues, dead_branches, min_support, support_floor } = *config;
    if depth == 0 {
        return Err(ConfigError::Depth);
    }
    if branching < 2 {
        return Err(ConfigError::Branching);
    }
    if cues == 0 {
        return Err(ConfigError::Cues);
    }
    if min_support == 0 || min_support > branching {
        return Err(ConfigError::MinSupport);
    }
    if !(0.0..=1.0).contains(&support_floor) {
        return Err(ConfigError::SupportFloor);
    }
    if dead_branches >= branching {
        return Err(ConfigError::TooManyDeadBranches { dead: dead_branches, min_support });
    }
    let dead_branches = dead_branches.min(branching - min_support);
    let floor_count = ((support_floor * cues as f64) - 1e-9).ceil().max(1.0) as usize;
    if min_support * floor_count > cues {
        return Err(ConfigError::CuesTooFew { cues, min_support, floor: support_floor });
    }
    let viable_count = branching - dead_branches;
    if (viable_count as f64).powi(depth as i32) > MAX_CORRECT_PATHS as f64 {
        return Err(ConfigError::TooLarge);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = make_vocabulary(depth * branching * 5, &mut rng);
    let word = |t: usize, b: usize, slot: usize| vocab[(t * branching + b) * 5 + slot].as_str();
    let mut meta_templates = Vec::with_capacity(depth);
    let mut question_templates = Vec::with_capacity(depth);
    let mut answer_templates = Vec::with_capacity(depth);
    for t in 0..depth {
        meta_templates.push((0..branching).map(|b| format!("focus on {} {}", word(t, b, 0), word(t, b, 1))).collect());
        question_templates.push((0..branching).map(|b| format!("find {} {}", word(t, b, 2), word(t, b, 3))).collect());
        answer_templates.push((0..branching).map(|b| format!("{} gives {}", word(t, b, 4), t * branching + b)).collect());
    }

    let mut world = BranchWorld {
        depth,
        branching,
        cues,
        seed,
        meta_templates,
        question_templates,
        answer_templates,
        viable: BTreeMap::new(),
        correct_paths: BTreeSet::new(),
    };

    let support = viable_count.min(cues / floor_count);
    let mut rule = BTreeMap::new();
    for bucket in world.buckets() {
        let mut order: Vec<usize> = (0..branching).collect();
        order.shuffle(&mut rng);
        let mut viable = vec![true; branching];
        for &dead in &order[..dead_branches] {
            viable[dead] = false;
        }
        world.viable.insert(bucket, viable);

        let mut live: Vec<usize> = order[dead_branches..].to_vec();
        live.shuffle(&mut rng);
        live.truncate(support);
        let mut counts = vec![floor_count; support];
        for _ in 0..cues - support * floor_count {
            counts[rng.random_range(0..support)] += 1;
        }
        let mut choices: Vec<usize> = live
            .iter()
            .zip(&counts)
            .flat_map(|(&b, &c)| std::iter::repeat_n(b, c))
            .collect();
        choices.shuffle(&mut rng);
        rule.insert(bucket, choices);
    }

    let mut paths = BTreeSet::new();
    let mut prefix = Vec::with_capacity(depth);
    collect_correct(&world, &mut prefix, &mut paths);
    world.correct_paths = paths;

    let teacher = TeacherSpec::from_rule(&world, rule)?;
    Ok((world, teacher))
}

fn collect_correct(world: &BranchWorld, prefix: &mut Vec<usize>, out: &mut BTreeSet<Vec<usize>>) {
    if prefix.len() == world.depth {
        out.insert(prefix.clone());
        return;
    }
    let bucket = Bucket::new(prefix.len(), prefix.last().copied());
    for b in world.viable_branches(bucket) {
        prefix.push(b);
        collect_correct(world, prefix, out);
        prefix.pop();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub choices: Vec<usize>,
    pub sequence: StructuredSequence,
    pub final_correct: bool,
    pub decisions: Vec<Decision>,
}

impl DecisionPath for Trajectory {
    fn decisions(&self) -> &[Decision] {
        &self.decisions
    }
}

fn finish(world: &BranchWorld, choices: Vec<usize>, decisions: Vec<Decision>) -> Trajectory {
    Trajectory {
        sequence: world.render(&choices),
        final_correct: world.is_correct(&choices),
        choices,
        decisions,
    }
}

/// Follows the teacher on a given problem. Deterministic.
pub fn teacher_rollout_on(world: &BranchWorld, teacher: &TeacherSpec, problem: &ProblemInstance) -> Trajectory {
    let mut choices = Vec::with_capacity(world.depth);
    let mut decisions = Vec::with_capacity(world.depth);
    let mut prev = None;
    for (t, &cue) in problem.cues.iter().enumerate().take(world.depth) {
        let bucket = Bucket::new(t, prev);
        let b = teacher.choose(bucket, cue);
        choices.push(b);
        decisions.push(Decision { state: StateKey::new(t, prev, cue), action: b });
        if !world.is_viable(bucket, b) {
            break;
        }
        prev = Some(b);
    }
    finish(world, choices, decisions)
}

/// Draws a fresh problem and follows the teacher on it.
pub fn teacher_rollout<R: Rng + ?Sized>(world: &BranchWorld, teacher: &TeacherSpec, rng: &mut R) -> Trajectory {
    let problem = world.sample_problem(rng);
    teacher_rollout_on(world, teacher, &problem)
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Samples the student policy on a given problem, stopping at a dead end.
pub fn student_rollout_on<R: Rng + ?Sized>(
    world: &BranchWorld,
    policy: &SoftmaxPolicy,
    problem: &ProblemInstance,
    rng: &mut R,
) -> Trajectory {
    let mut choices = Vec::with_capacity(world.depth);
    let mut decisions = Vec::with_capacity(world.depth);
    let mut prev = None;
    for (t, &cue) in problem.cues.iter().enumerate().take(world.depth) {
        let state = StateKey::new(t, prev, cue);
        let b = sample_index(&policy.probabilities(&state), rng);
        choices.push(b);
        decisions.push(Decision { state, action: b });
        if !world.is_viable(Bucket::new(t, prev), b) {
            break;
        }
        prev = Some(b);
    }
    finish(world, choices, decisions)
}

pub fn student_rollout<R: Rng + ?Sized>(world: &BranchWorld, policy: &SoftmaxPolicy, rng: &mut R) -> Trajectory {
    let problem = world.sample_problem(rng);
    student_rollout_on(world, policy, &problem, rng)
}

/// Student branch distribution at a state, averaged over cues.
pub fn student_marginal(policy: &SoftmaxPolicy, world: &BranchWorld, bucket: Bucket) -> Vec<f64> {
    let mut acc = vec![0.0; world.branching];
    for cue in 0..world.cues {
        let p = policy.probabilities(&StateKey::new(bucket.step, bucket.prev, cue));
        for (a, x) in acc.iter_mut().zip(p) {
            *a += x;
        }
    }
    acc.into_iter().map(|x| x / world.cues as f64).collect()
}

/// Mean over teacher-reachable states of KL(teacher || student marginal).
pub fn branch_kl(policy: &SoftmaxPolicy, teacher: &TeacherSpec, world: &BranchWorld) -> f64 {
    let states = teacher.reachable(world);
    let total: f64 = states
        .iter()
        .map(|bucket| {
            let q = &teacher.branch_dist[bucket];
            let p = student_marginal(policy, world, *bucket);
            q.iter()
                .zip(&p)
                .filter(|(qi, _)| **qi > 0.0)
                .map(|(qi, pi)| qi * (qi.max(KL_FLOOR).ln() - pi.max(KL_FLOOR).ln()))
                .sum::<f64>()
        })
        .sum();
    total / states.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    pub episodes: u64,
    pub group_size: usize,
    pub weights: RewardWeights,
    #[serde(rename = "match")]
    pub match_cfg: MatchConfig,
    pub lr: f64,
    pub seed: u64,
    pub checkpoint_every: u64,
    /// Logit bonus of the per-state teacher mode in the initial student; 0 starts
    /// from a uniform policy.
    pub sft_strength: f64,
    /// Problems evaluated at every checkpoint.
    pub eval_problems: usize,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            episodes: 5000,
            group_size: 4,
            weights: RewardWeights::default(),
            match_cfg: MatchConfig::default(),
            lr: 0.1,
            seed: 42,
            checkpoint_every: 250,
            sft_strength: 2.0,
            eval_problems: 256,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Training(m.to_string()));
        if self.group_size == 0 {
            return bad("group_size must be at least 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint_every must be at least 1");
        }
        if self.eval_problems < 2 {
            return bad("eval_problems must be at least 2");
        }
        if !self.sft_strength.is_finite() || self.sft_strength < 0.0 {
            return bad("sft_strength must be finite and non-negative");
        }
        if let Err(e) = self.weights.validate() {
            return Err(ConfigError::Training(e.to_string()));
        }
        if let Err(e) = self.match_cfg.validate() {
            return Err(ConfigError::Training(e.to_string()));
        }
        if self.match_cfg.strategy == MatchStrategy::ExternalJudge {
            return bad("the toy loop needs a deterministic match strategy");
        }
        Ok(())
    }
}

/// Metrics recorded at one checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub episode: u64,
    pub mean_reward: f64,
    pub alignment: f64,
    pub mean_len: f64,
    pub branch_kl: f64,
    pub diversity_student: f64,
    pub diversity_teacher: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExperimentLog {
    pub checkpoints: Vec<Checkpoint>,
}

impl ExperimentLog {
    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for c in &self.checkpoints {
            out.push_str(&serde_json::to_string(c).expect("checkpoint serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(self.to_jsonl().as_bytes())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, serde_json::Error> {
        let mut checkpoints = Vec::new();
        for line in r.lines() {
            let line = line.map_err(serde_json::Error::io)?;
            if line.trim().is_empty() {
                continue;
            }
            checkpoints.push(serde_json::from_str(&line)?);
        }
        Ok(Self { checkpoints })
    }

    pub fn first(&self) -> Option<&Checkpoint> {
        self.checkpoints.first()
    }

    pub fn last(&self) -> Option<&Checkpoint> {
        self.checkpoints.last()
    }
}

/// The imitation-style starting student: in every state the teacher's most
/// frequent branch gets a logit bonus, whatever the cue. Such a student
/// reproduces the teacher's typical path but none of its branching.
pub fn initial_student(world: &BranchWorld, teacher: &TeacherSpec, cfg: &DistillConfig) -> SoftmaxPolicy {
    let mut policy = SoftmaxPolicy::new(world.branching, cfg.lr);
    if cfg.sft_strength == 0.0 {
        return policy;
    }
    for bucket in world.buckets() {
        let q = &teacher.branch_dist[&bucket];
        let mode = (0..q.len()).fold(0, |best, b| if q[b] > q[best] { b } else { best });
        for cue in 0..world.cues {
            let mut z = vec![0.0; world.branching];
            z[mode] = cfg.sft_strength;
            policy.set_logits(StateKey::new(bucket.step, bucket.prev, cue), z);
        }
    }
    policy
}

/// Reward of one student trajectory against the teacher reference. Format
/// and tag rewards are 1: toy output is structured by construction.
pub fn trajectory_reward(
    reference: &Trajectory,
    student: &Trajectory,
    matcher: &TextMatcher,
    weights: &RewardWeights,
) -> RewardBreakdown {
    let s = structured_reward(&reference.sequence, &student.sequence, matcher)
        .expect("deterministic matchers never fail");
    let n = reference.sequence.len().max(1) as f64;
    let parts = RewardParts {
        r_acc: if student.final_correct { 1.0 } else { 0.0 },
        r_gsrm_raw: s.reward,
        r_gsrm_norm: s.reward / n,
        r_format: 1.0,
        r_tag: 1.0,
        matched_prefix_len: s.matched_prefix_len,
    };
    combine_rewards(&parts, weights).expect("weights validated")
}

fn evaluate(
    episode: u64,
    world: &BranchWorld,
    teacher: &TeacherSpec,
    policy: &SoftmaxPolicy,
    cfg: &DistillConfig,
    matcher: &TextMatcher,
) -> Checkpoint {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ EVAL_SALT);
    let n = cfg.eval_problems;
    let (mut reward, mut alignment, mut len) = (0.0, 0.0, 0.0);
    let mut student_vecs = Vec::with_capacity(n);
    let mut teacher_vecs = Vec::with_capacity(n);
    for _ in 0..n {
        let problem = world.sample_problem(&mut rng);
        let reference = teacher_rollout_on(world, teacher, &problem);
        let student = student_rollout_on(world, policy, &problem, &mut rng);
        let b = trajectory_reward(&reference, &student, matcher, &cfg.weights);
        reward += b.total;
        alignment += b.r_gsrm_norm;
        len += student.choices.len() as f64;
        student_vecs.push(world.embed(&student.choices));
        teacher_vecs.push(world.embed(&reference.choices));
    }
    let diversity = |vs: Vec<Vec<f64>>| {
        EmbeddingSet::new(vs)
            .ok()
            .and_then(|es| diversity_score(&es).ok())
            .map_or(f64::NAN, |d| d.diversity)
    };
    Checkpoint {
        episode,
        mean_reward: reward / n as f64,
        alignment: alignment / n as f64,
        mean_len: len / n as f64,
        branch_kl: branch_kl(policy, teacher, world),
        diversity_student: diversity(student_vecs),
        diversity_teacher: diversity(teacher_vecs),
    }
}

/// Result of a distillation run: the checkpoint log and the final student.
#[derive(Debug, Clone)]
pub struct DistillOutcome {
    pub log: ExperimentLog,
    pub policy: SoftmaxPolicy,
}

/// Runs the RL distillation loop and returns its checkpoint log.
pub fn run_distillation(world: &BranchWorld, teacher: &TeacherSpec, cfg: &DistillConfig) -> Result<ExperimentLog, ConfigError> {
    Ok(run_distillation_with_policy(world, teacher, cfg)?.log)
}

pub fn run_distillation_with_policy(
    world: &BranchWorld,
    teacher: &TeacherSpec,
    cfg: &DistillConfig,
) -> Result<DistillOutcome, ConfigError> {
    cfg.validate()?;
    let matcher = TextMatcher::from_config(&cfg.match_cfg).map_err(|e| ConfigError::Training(e.to_string()))?;
    let mut policy = initial_student(world, teacher, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = ExperimentLog::default();
    log.checkpoints.push(evaluate(0, world, teacher, &policy, cfg, &matcher));

    for episode in 1..=cfg.episodes {
        let problem = world.sample_problem(&mut rng);
        let reference = teacher_rollout_on(world, teacher, &problem);
        let group: Vec<Trajectory> = (0..cfg.group_size)
            .map(|_| student_rollout_on(world, &policy, &problem, &mut rng))
            .collect();
        let rewards: Vec<f64> = group
            .iter()
            .map(|s| trajectory_reward(&reference, s, &matcher, &cfg.weights).total)
            .collect();
        let advantages = group_advantages(&RewardGroup::new(rewards).expect("finite rewards"), DEFAULT_EPS);
        let refs: Vec<&Trajectory> = group.iter().collect();
        policy.apply_update(&refs, &advantages);

        if episode % cfg.checkpoint_every == 0 || episode == cfg.episodes {
            log.checkpoints.push(evaluate(episode, world, teacher, &policy, cfg, &matcher));
        }
    }
    Ok(DistillOutcome { log, policy })
}
