//! Fine-grained loss weighting for the structure generator and the
//! generate/verify/regenerate loop that builds its training data.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::http::{HttpError, InFlightLimit, JsonClient};
use crate::structseq::{parse_any, serialize_sequence, ReasoningPath, StructuredSequence};

pub const DEFAULT_ALPHA: u64 = 100;
/// One initial generation plus three regenerations.
pub const MAX_ATTEMPTS: usize = 4;
pub const CLIENT_RETRIES: u32 = 2;
pub const DEFAULT_PIPELINE_IN_FLIGHT: usize = 4;
pub const UNPARSEABLE_FEEDBACK: &str = "output not parseable";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenSet {
    Meta,
    Solving,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenLossRecord {
    pub token_index: u64,
    pub set_label: TokenSet,
    pub nll: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SchedulerError {
    #[error("loss history is empty")]
    EmptyHistory,
    #[error("loss {0} is negative or not finite")]
    InvalidLoss(f64),
    #[error("initial weights must be positive (got a={a}, b={b})")]
    NonPositiveWeights { a: f64, b: f64 },
    #[error("alpha must be at least 1")]
    ZeroAlpha,
}

fn check_loss(x: f64) -> Result<f64, SchedulerError> {
    if x.is_finite() && x >= 0.0 {
        Ok(x)
    } else {
        Err(SchedulerError::InvalidLoss(x))
    }
}

impl TokenLossRecord {
    pub fn new(token_index: u64, set_label: TokenSet, nll: f64) -> Result<Self, SchedulerError> {
        Ok(Self { token_index, set_label, nll: check_loss(nll)? })
    }
}

/// Sum of per-token losses over one token set.
pub fn masked_loss(records: &[TokenLossRecord], which: TokenSet) -> f64 {
    records.iter().filter(|r| r.set_label == which).map(|r| r.nll).sum()
}

pub fn unmasked_loss(records: &[TokenLossRecord]) -> f64 {
    records.iter().map(|r| r.nll).sum()
}

/// How the loss ratio maps onto the weight ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioDirection {
    /// The set with the higher loss gets the higher weight.
    #[default]
    Proportional,
    Inverse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSchedulerState {
    pub a: f64,
    pub b: f64,
    pub alpha: u64,
    pub window_sum_meta: f64,
    pub window_sum_solving: f64,
    pub window_count: u64,
    pub step: u64,
    #[serde(default)]
    pub direction: RatioDirection,
}

impl WeightSchedulerState {
    pub fn new(a: f64, b: f64, alpha: u64) -> Result<Self, SchedulerError> {
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(SchedulerError::NonPositiveWeights { a, b });
        }
        if alpha == 0 {
            return Err(SchedulerError::ZeroAlpha);
        }
        Ok(Self {
            a,
            b,
            alpha,
            window_sum_meta: 0.0,
            window_sum_solving: 0.0,
            window_count: 0,
            step: 0,
            direction: RatioDirection::Proportional,
        })
    }

    pub fn with_direction(mut self, direction: RatioDirection) -> Self {
        self.direction = direction;
        self
    }
}

pub fn weighted_loss(records: &[TokenLossRecord], state: &WeightSchedulerState) -> f64 {
    state.a * masked_loss(records, TokenSet::Meta) + state.b * masked_loss(records, TokenSet::Solving)
}

/// Records one step's losses. At every multiple of `alpha` the weights are
/// rebalanced so that `a / b` equals the window loss ratio while `a + b` is
/// kept, and the window restarts. A window where either set had zero total
/// loss leaves the weights alone.
pub fn scheduler_step(state: &WeightSchedulerState, batch_meta_loss: f64, batch_solving_loss: f64) -> WeightSchedulerState {
    debug_assert!(batch_meta_loss >= 0.0 && batch_solving_loss >= 0.0);
    let mut next = state.clone();
    next.window_sum_meta += batch_meta_loss;
    next.window_sum_solving += batch_solving_loss;
    next.window_count += 1;
    next.step += 1;
    if next.step.is_multiple_of(next.alpha) {
        if next.window_sum_meta > 0.0 && next.window_sum_solving > 0.0 {
            let n = next.window_count as f64;
            let ratio = (next.window_sum_meta / n) / (next.window_sum_solving / n);
            let rho = match next.direction {
                RatioDirection::Proportional => ratio,
                RatioDirection::Inverse => 1.0 / ratio,
            };
            let s = next.a + next.b;
            next.a = s * rho / (1.0 + rho);
            next.b = s / (1.0 + rho);
        }
        next.window_sum_meta = 0.0;
        next.window_sum_solving = 0.0;
        next.window_count = 0;
    }
    next
}

fn compensated_mean(xs: &[f64]) -> Result<f64, SchedulerError> {
    if xs.is_empty() {
        return Err(SchedulerError::EmptyHistory);
    }
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for &x in xs {
        check_loss(x)?;
        let t = sum + x;
        if sum.abs() >= x.abs() {
            c += (sum - t) + x;
        } else {
            c += (x - t) + sum;
        }
        sum = t;
    }
    Ok((sum + c) / xs.len() as f64)
}

/// Starts the scheduler from the mean per-step losses of the meta-only and
/// solving-only epochs.
pub fn init_scheduler(epoch1_losses: &[f64], epoch2_losses: &[f64], alpha: u64) -> Result<WeightSchedulerState, SchedulerError> {
    let a = compensated_mean(epoch1_losses)?;
    let b = compensated_mean(epoch2_losses)?;
    WeightSchedulerState::new(a, b, alpha)
}

/// Losses fed to the optimizer over the three training epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch1_losses: Vec<f64>,
    pub epoch2_losses: Vec<f64>,
    pub epoch3_losses: Vec<f64>,
    /// `(step, a, b)` in effect for each mixed-epoch step.
    pub weight_trace: Vec<(u64, f64, f64)>,
    pub final_state: WeightSchedulerState,
}

/// Epoch 1 trains on meta tokens only, epoch 2 on solving tokens only, and
/// epoch 3 on the dynamically weighted mix initialised from the first two.
/// Each batch is the token losses of one training step.
pub fn run_three_epochs(
    epoch1: &[Vec<TokenLossRecord>],
    epoch2: &[Vec<TokenLossRecord>],
    epoch3: &[Vec<TokenLossRecord>],
    alpha: u64,
    direction: RatioDirection,
) -> Result<EpochReport, SchedulerError> {
    let epoch1_losses: Vec<f64> = epoch1.iter().map(|b| masked_loss(b, TokenSet::Meta)).collect();
    let epoch2_losses: Vec<f64> = epoch2.iter().map(|b| masked_loss(b, TokenSet::Solving)).collect();
    let mut state = init_scheduler(&epoch1_losses, &epoch2_losses, alpha)?.with_direction(direction);
    let mut epoch3_losses = Vec::with_capacity(epoch3.len());
    let mut weight_trace = Vec::with_capacity(epoch3.len());
    for batch in epoch3 {
        weight_trace.push((state.step, state.a, state.b));
        epoch3_losses.push(weighted_loss(batch, &state));
        state = scheduler_step(&state, masked_loss(batch, TokenSet::Meta), masked_loss(batch, TokenSet::Solving));
    }
    Ok(EpochReport { epoch1_losses, epoch2_losses, epoch3_losses, weight_trace, final_state: state })
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClientError {
    #[error(transparent)]
    Http(#[from] HttpError),
    #[error("client failure: {0}")]
    Other(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerdictKind {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub verdict: VerdictKind,
    #[serde(default)]
    pub feedback: String,
}

impl Verdict {
    pub fn pass() -> Self {
        Self { verdict: VerdictKind::Pass, feedback: String::new() }
    }

    pub fn fail(feedback: impl Into<String>) -> Self {
        Self { verdict: VerdictKind::Fail, feedback: feedback.into() }
    }
}

/// Turns a raw reasoning path into a tagged structured sequence. On a
/// regeneration, `candidate` is the previous output and `feedback` the
/// verifier's complaint about it.
pub trait GeneratorClient {
    fn generate(&self, path: &ReasoningPath, candidate: Option<&str>, feedback: Option<&str>) -> Result<String, ClientError>;
}

pub trait VerifierClient {
    fn verify(&self, path: &ReasoningPath, candidate: &str) -> Result<Verdict, ClientError>;
}

impl<G: GeneratorClient + ?Sized> GeneratorClient for &G {
    fn generate(&self, path: &ReasoningPath, candidate: Option<&str>, feedback: Option<&str>) -> Result<String, ClientError> {
        (**self).generate(path, candidate, feedback)
    }
}

impl<V: VerifierClient + ?Sized> VerifierClient for &V {
    fn verify(&self, path: &ReasoningPath, candidate: &str) -> Result<Verdict, ClientError> {
        (**self).verify(path, candidate)
    }
}

#[derive(Debug, Serialize)]
struct WireRequest<'a> {
    role: &'a str,
    path: &'a str,
    candidate: Option<&'a str>,
    feedback: Option<&'a str>,
}

#[derive(Debug, Deserialize)]
struct GenerateResponse {
    output: String,
}

#[derive(Debug, Clone)]
pub struct HttpGenerator {
    endpoint: String,
    client: JsonClient,
}

impl HttpGenerator {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        Self { endpoint: endpoint.into(), client: JsonClient::new(timeout, CLIENT_RETRIES) }
    }
}

impl GeneratorClient for HttpGenerator {
    fn generate(&self, path: &ReasoningPath, candidate: Option<&str>, feedback: Option<&str>) -> Result<String, ClientError> {
        let req = WireRequest { role: "generate", path: &path.body, candidate, feedback };
        let resp: GenerateResponse = self.client.post(&self.endpoint, &req)?;
        Ok(resp.output)
    }
}

#[derive(Debug, Clone)]
pub struct HttpVerifier {
    endpoint: String,
    client: JsonClient,
}

impl HttpVerifier {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        Self { endpoint: endpoint.into(), client: JsonClient::new(timeout, CLIENT_RETRIES) }
    }
}

impl VerifierClient for HttpVerifier {
    fn verify(&self, path: &ReasoningPath, candidate: &str) -> Result<Verdict, ClientError> {
        let req = WireRequest { role: "verify", path: &path.body, candidate: Some(candidate), feedback: None };
        Ok(self.client.post(&self.endpoint, &req)?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attempt {
    pub generated: String,
    pub verdict: VerdictKind,
    pub feedback: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleResult {
    Accepted(StructuredSequence),
    Discarded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSample {
    pub path: ReasoningPath,
    pub result: SampleResult,
    pub attempts: Vec<Attempt>,
}

impl PipelineSample {
    pub fn is_accepted(&self) -> bool {
        matches!(self.result, SampleResult::Accepted(_))
    }

    /// The JSON-lines record for an accepted sample.
    pub fn accepted_record(&self) -> Option<AcceptedRecord> {
        match &self.result {
            SampleResult::Accepted(seq) => Some(AcceptedRecord {
                path_id: self.path.id.clone().unwrap_or_default(),
                sequence: seq.clone(),
                attempts: self.attempts.len(),
            }),
            SampleResult::Discarded => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptedRecord {
    pub path_id: String,
    pub sequence: StructuredSequence,
    pub attempts: usize,
}

/// Generate, parse, verify; on failure feed the verdict back and try again,
/// up to [`MAX_ATTEMPTS`] generations in total.
pub fn build_dataset_sample<G, V>(path: &ReasoningPath, gen: &G, ver: &V) -> Result<PipelineSample, ClientError>
where
    G: GeneratorClient + ?Sized,
    V: VerifierClient + ?Sized,
{
    let mut attempts: Vec<Attempt> = Vec::with_capacity(MAX_ATTEMPTS);
    while attempts.len() < MAX_ATTEMPTS {
        let last = attempts.last();
        let generated = gen.generate(
            path,
            last.map(|a| a.generated.as_str()),
            last.map(|a| a.feedback.as_str()),
        )?;
        let seq = match parse_any(&generated) {
            Ok(seq) => seq,
            Err(_) => {
                attempts.push(Attempt { generated, verdict: VerdictKind::Fail, feedback: UNPARSEABLE_FEEDBACK.into() });
                continue;
            }
        };
        let verdict = ver.verify(path, &serialize_sequence(&seq))?;
        let passed = verdict.verdict == VerdictKind::Pass;
        attempts.push(Attempt { generated, verdict: verdict.verdict, feedback: verdict.feedback });
        if passed {
            let seq = match &path.id {
                Some(id) => seq.with_source_id(id.clone()),
                None => seq,
            };
            return Ok(PipelineSample { path: path.clone(), result: SampleResult::Accepted(seq), attempts });
        }
    }
    Ok(PipelineSample { path: path.clone(), result: SampleResult::Discarded, attempts })
}

/// Runs the pipeline over many paths on worker threads, at most
/// `max_in_flight` samples at a time. Output order follows input order.
pub fn build_dataset<G, V>(
    paths: &[ReasoningPath],
    gen: &G,
    ver: &V,
    max_in_flight: usize,
) -> Vec<Result<PipelineSample, ClientError>>
where
    G: GeneratorClient + Sync + ?Sized,
    V: VerifierClient + Sync + ?Sized,
{
    let limit = InFlightLimit::new(max_in_flight.max(1));
    std::thread::scope(|scope| {
        let handles: Vec<_> = paths
            .iter()
            .map(|p| {
                let limit = &limit;
                scope.spawn(move || {
                    let _slot = limit.acquire();
                    build_dataset_sample(p, gen, ver)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("pipeline worker panicked")).collect()
    })
}

/// Test double: replays a fixed list of generator outputs, repeating the last.
#[derive(Debug)]
pub struct ScriptedGenerator {
    outputs: Vec<String>,
    calls: std::sync::atomic::AtomicUsize,
}

impl ScriptedGenerator {
    pub fn new<S: Into<String>>(outputs: impl IntoIterator<Item = S>) -> Self {
        let outputs: Vec<String> = outputs.into_iter().map(Into::into).collect();
        assert!(!outputs.is_empty(), "script needs at least one output");
        Self { outputs, calls: Default::default() }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(std::sync::atomic::Ordering::SeqCst)
    }
}

impl GeneratorClient for ScriptedGenerator {
    fn generate(&self, _: &ReasoningPath, _: Option<&str>, _: Option<&str>) -> Result<String, ClientError> {
        let i = self.calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        Ok(self.outputs[i.min(self.outputs.len() - 1)].clone())
    }
}

/// Test double: fails the first `fail_first` verifications, then passes.
/// `usize::MAX` never passes.
#[derive(Debug)]
pub struct ScriptedVerifier {
    fail_first: usize,
    calls: std::sync::atomic::AtomicUsize,
}

impl ScriptedVerifier {
    pub fn new(fail_first: usize) -> Self {
        Self { fail_first, calls: Default::default() }
    }

    pub fn always_pass() -> Self {
        Self::new(0)
    }

    pub fn always_fail() -> Self {
        Self::new(usize::MAX)
    }

    pub fn calls(&self) -> usize {
        self.calls.load(std::sync::atomic::Ordering::SeqCst)
    }
}

impl VerifierClient for ScriptedVerifier {
    fn verify(&self, _: &ReasoningPath, _: &str) -> Result<Verdict, ClientError> {
        let i = self.calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        Ok(if i < self.fail_first {
            Verdict::fail(format!("rejected attempt {}", i + 1))
        } else {
            Verdict::pass()
        })
    }
}
