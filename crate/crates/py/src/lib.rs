//! Python bindings: `import gsrm`.

use gsrm_core::config::EngineConfig;
use gsrm_core::grpo::{group_advantages as advantages, RewardGroup};
use gsrm_core::matching::{MatchConfig, TextMatcher};
use gsrm_core::metrics::{self, EmbeddingSet, RunMatrix};
use gsrm_core::reward::{self, RewardWeights, ScoreRequest};
use gsrm_core::simenv::{build_world, run_distillation};
use gsrm_core::structseq::{parse_any, serialize_sequence, ReasoningStep, StructuredSequence};
use gsrm_core::train::{self, RatioDirection, WeightSchedulerState};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn from_json<'py, T: serde::Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(value_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

/// A parsed reasoning sequence of (meta, question, answer) steps.
#[pyclass(name = "Sequence", module = "gsrm", eq, from_py_object)]
#[derive(Clone, PartialEq)]
struct PySequence(StructuredSequence);

#[pymethods]
impl PySequence {
    #[new]
    fn new(steps: Vec<(String, String, String)>) -> Self {
        Self(StructuredSequence::new(steps.into_iter().map(|(m, q, a)| ReasoningStep::new(m, q, a)).collect()))
    }

    /// Parses tagged text or the JSON form.
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        parse_any(text).map(Self).map_err(value_err)
    }

    fn serialize(&self) -> String {
        serialize_sequence(&self.0)
    }

    fn to_json(&self) -> String {
        self.0.to_json()
    }

    #[getter]
    fn steps(&self) -> Vec<(String, String, String)> {
        self.0.steps.iter().map(|s| (s.meta.clone(), s.question.clone(), s.answer.clone())).collect()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        format!("Sequence({} steps)", self.0.len())
    }
}

#[pyclass(name = "Weights", module = "gsrm", get_all, from_py_object)]
#[derive(Clone, Copy)]
struct PyWeights {
    w_acc: f64,
    w_gsrm: f64,
    w_format: f64,
    w_tag: f64,
}

#[pymethods]
impl PyWeights {
    #[new]
    #[pyo3(signature = (w_acc=3.0, w_gsrm=3.0, w_format=2.0, w_tag=2.0))]
    fn new(w_acc: f64, w_gsrm: f64, w_format: f64, w_tag: f64) -> PyResult<Self> {
        RewardWeights::new(w_acc, w_gsrm, w_format, w_tag).map_err(value_err)?;
        Ok(Self { w_acc, w_gsrm, w_format, w_tag })
    }

    fn __repr__(&self) -> String {
        format!("Weights({}, {}, {}, {})", self.w_acc, self.w_gsrm, self.w_format, self.w_tag)
    }
}

impl From<PyWeights> for RewardWeights {
    fn from(w: PyWeights) -> Self {
        RewardWeights { w_acc: w.w_acc, w_gsrm: w.w_gsrm, w_format: w.w_format, w_tag: w.w_tag }
    }
}

fn matcher(strategy: &str, threshold: f64, judge_endpoint: Option<String>) -> PyResult<TextMatcher> {
    let cfg = match strategy {
        "exact" => MatchConfig::exact(),
        "jaccard" => MatchConfig::jaccard(threshold),
        "judge" => MatchConfig::judge(judge_endpoint.ok_or_else(|| value_err("judge strategy needs judge_endpoint"))?),
        other => return Err(value_err(format!("unknown strategy {other:?}"))),
    };
    TextMatcher::from_config(&cfg).map_err(value_err)
}

/// Returns `(reward, matched_prefix_len)`.
#[pyfunction]
#[pyo3(signature = (teacher, student, strategy="exact", threshold=0.6, judge_endpoint=None))]
fn structured_reward(
    teacher: &PySequence,
    student: &PySequence,
    strategy: &str,
    threshold: f64,
    judge_endpoint: Option<String>,
) -> PyResult<(f64, usize)> {
    let m = matcher(strategy, threshold, judge_endpoint)?;
    let s = reward::structured_reward(&teacher.0, &student.0, &m).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok((s.reward, s.matched_prefix_len))
}

/// Full reward breakdown as a dict.
#[pyfunction]
#[pyo3(signature = (teacher, student, gold_answer=None, response_text=None, weights=None, strategy="exact", threshold=0.6, judge_endpoint=None))]
#[allow(clippy::too_many_arguments)]
fn score<'py>(
    py: Python<'py>,
    teacher: &PySequence,
    student: &PySequence,
    gold_answer: Option<&str>,
    response_text: Option<&str>,
    weights: Option<PyWeights>,
    strategy: &str,
    threshold: f64,
    judge_endpoint: Option<String>,
) -> PyResult<Bound<'py, PyAny>> {
    let m = matcher(strategy, threshold, judge_endpoint)?;
    let w = weights.map(RewardWeights::from).unwrap_or_default();
    let req = ScoreRequest { teacher: &teacher.0, student: &student.0, gold_answer, response_text };
    let b = py
        .detach(|| reward::score(req, &w, &m))
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    from_json(py, &b)
}

#[pyfunction]
#[pyo3(signature = (rewards, eps=1e-8))]
fn group_advantages(rewards: Vec<f64>, eps: f64) -> PyResult<Vec<f64>> {
    let g = RewardGroup::new(rewards).map_err(value_err)?;
    Ok(advantages(&g, eps).advantages)
}

#[pyfunction]
fn pass_at_k(n: u64, c: u64, k: u64) -> PyResult<f64> {
    metrics::pass_at_k_unbiased(n, c, k).map_err(value_err)
}

#[pyfunction]
fn pass_at_1<'py>(py: Python<'py>, correctness: Vec<Vec<bool>>) -> PyResult<Bound<'py, PyAny>> {
    let runs = RunMatrix::new(correctness).map_err(value_err)?;
    from_json(py, &metrics::pass_at_1(&runs))
}

#[pyfunction]
fn diversity(vectors: Vec<Vec<f64>>) -> PyResult<f64> {
    let set = EmbeddingSet::new(vectors).map_err(value_err)?;
    metrics::diversity_score(&set).map(|d| d.diversity).map_err(value_err)
}

#[pyclass(name = "WeightScheduler", module = "gsrm")]
struct PyScheduler(WeightSchedulerState);

#[pymethods]
impl PyScheduler {
    #[new]
    #[pyo3(signature = (a, b, alpha=100, inverse=false))]
    fn new(a: f64, b: f64, alpha: u64, inverse: bool) -> PyResult<Self> {
        let s = WeightSchedulerState::new(a, b, alpha).map_err(value_err)?;
        let dir = if inverse { RatioDirection::Inverse } else { RatioDirection::Proportional };
        Ok(Self(s.with_direction(dir)))
    }

    /// Starts from the mean losses of the two pre-training epochs.
    #[staticmethod]
    #[pyo3(signature = (epoch1_losses, epoch2_losses, alpha=100))]
    fn from_epochs(epoch1_losses: Vec<f64>, epoch2_losses: Vec<f64>, alpha: u64) -> PyResult<Self> {
        train::init_scheduler(&epoch1_losses, &epoch2_losses, alpha).map(Self).map_err(value_err)
    }

    /// Feeds one batch and returns the current `(a, b)`.
    fn step(&mut self, meta_loss: f64, solving_loss: f64) -> (f64, f64) {
        self.0 = train::scheduler_step(&self.0, meta_loss, solving_loss);
        (self.0.a, self.0.b)
    }

    #[getter]
    fn a(&self) -> f64 {
        self.0.a
    }

    #[getter]
    fn b(&self) -> f64 {
        self.0.b
    }

    #[getter]
    fn steps(&self) -> u64 {
        self.0.step
    }
}

/// Runs the seeded toy distillation and returns its checkpoints.
#[pyfunction]
#[pyo3(signature = (seed=42, episodes=None, no_gsrm=false))]
fn run_toy<'py>(py: Python<'py>, seed: u64, episodes: Option<u64>, no_gsrm: bool) -> PyResult<Bound<'py, PyAny>> {
    let cfg = EngineConfig { seed, ..EngineConfig::default() };
    let mut dc = cfg.distill_config();
    if let Some(n) = episodes {
        dc.episodes = n;
    }
    if no_gsrm {
        dc.weights = dc.weights.without_structure();
    }
    let log = py
        .detach(|| {
            let (world, teacher) = build_world(&cfg.world, cfg.seed)?;
            run_distillation(&world, &teacher, &dc)
        })
        .map_err(value_err)?;
    from_json(py, &log.checkpoints)
}

#[pymodule]
fn gsrm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySequence>()?;
    m.add_class::<PyWeights>()?;
    m.add_class::<PyScheduler>()?;
    m.add_function(wrap_pyfunction!(structured_reward, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    m.add_function(wrap_pyfunction!(group_advantages, m)?)?;
    m.add_function(wrap_pyfunction!(pass_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(pass_at_1, m)?)?;
    m.add_function(wrap_pyfunction!(diversity, m)?)?;
    m.add_function(wrap_pyfunction!(run_toy, m)?)?;
    Ok(())
}
