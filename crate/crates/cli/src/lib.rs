//! Command-line front end and HTTP reward service for `gsrm_core`.

pub mod service;

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use gsrm_core::config::{ConfigFileError, EngineConfig};
use gsrm_core::matching::{JudgeError, TextMatcher};
use gsrm_core::metrics::{
    alignment_curve, diversity_score, pass_at_1, pass_at_k_simple, pass_at_k_unbiased, pass_at_k_unbiased_exact,
    write_alignment_csv, write_pass_at_1_csv, DegenerateSetError, EmbeddingError, EmbeddingSet, RangeError, RunMatrix,
};
use gsrm_core::reward::{score, ScoreError, ScoreRequest};
use gsrm_core::simenv::{build_world, run_distillation};
use gsrm_core::structseq::{parse_any, ParseError, ReasoningPath, StructuredSequence};
use gsrm_core::train::{build_dataset, HttpGenerator, HttpVerifier, DEFAULT_PIPELINE_IN_FLIGHT};
use serde::Deserialize;
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Parser)]
#[command(name = "gsrm", version, about = "Structured reward engine")]
pub struct Cli {
    /// JSON config file; falls back to $GSRM_CONFIG, then built-in defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score a student sequence against a teacher sequence.
    Score(ScoreArgs),
    /// Run the HTTP reward service.
    Serve(ServeArgs),
    /// Run the seeded toy distillation experiment.
    TrainToy(TrainToyArgs),
    /// Evaluation metrics.
    #[command(subcommand)]
    Metrics(MetricsCommand),
    /// Build structured training data from reasoning paths.
    Dataset(DatasetArgs),
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Teacher sequence, tagged text or JSON.
    pub teacher: PathBuf,
    /// Student sequence, tagged text or JSON.
    pub student: PathBuf,
    /// Reference final answer.
    #[arg(long)]
    pub gold: Option<String>,
    /// Full student response text, for the accuracy, format and tag rewards.
    #[arg(long)]
    pub response: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub bind: Option<String>,
    #[arg(long)]
    pub port: Option<u16>,
}

#[derive(Debug, Args)]
pub struct TrainToyArgs {
    /// Output directory for log.jsonl and alignment.csv.
    #[arg(long, default_value = "toy-out")]
    pub out: PathBuf,
    /// Outcome-only ablation: zero weight on the structured reward.
    #[arg(long)]
    pub no_gsrm: bool,
    #[arg(long)]
    pub episodes: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum MetricsCommand {
    /// pass@1 from a correctness matrix (JSON list of per-question 0/1 lists).
    Pass1 {
        #[arg(long, default_value = "-")]
        input: PathBuf,
        /// Also write `question_id,pass_at_1` rows here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// pass@k: unbiased estimator from n, c, k or first-k over a matrix.
    Passk {
        #[arg(long)]
        n: Option<u64>,
        #[arg(long)]
        c: Option<u64>,
        #[arg(long)]
        k: u64,
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Diversity score of an embedding set (JSON list of vectors).
    Diversity {
        #[arg(long, default_value = "-")]
        input: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    /// JSON-lines file of reasoning paths `{"id", "problem", "body"}`.
    #[arg(long)]
    pub paths: PathBuf,
    /// Generator endpoint URL.
    #[arg(long)]
    pub generator: String,
    /// Verifier endpoint URL.
    #[arg(long)]
    pub verifier: String,
    /// Accepted samples are written here as JSON lines.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_PIPELINE_IN_FLIGHT)]
    pub max_in_flight: usize,
    /// Per-request timeout in seconds.
    #[arg(long, default_value_t = 60.0)]
    pub timeout: f64,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Sequence { path: String, source: ParseError },
    #[error("malformed input: {0}")]
    Input(String),
    #[error(transparent)]
    Judge(#[from] JudgeError),
    #[error(transparent)]
    Range(#[from] RangeError),
    #[error(transparent)]
    Degenerate(#[from] DegenerateSetError),
    #[error(transparent)]
    Embedding(EmbeddingError),
    #[error(transparent)]
    Config(#[from] ConfigFileError),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Sequence { .. } | CliError::Input(_) => 2,
            CliError::Judge(_) => 3,
            CliError::Range(_) | CliError::Degenerate(_) | CliError::Embedding(_) => 4,
            CliError::Config(_) | CliError::Other(_) => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

impl From<ScoreError> for CliError {
    fn from(e: ScoreError) -> Self {
        match e {
            ScoreError::Judge(j) => CliError::Judge(j),
            ScoreError::Weights(w) => CliError::Other(w.to_string()),
        }
    }
}

pub fn load_config(cli: &Cli) -> Result<EngineConfig, CliError> {
    let mut cfg = EngineConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn read_input(path: &Path) -> Result<String, CliError> {
    let mut s = String::new();
    if path == Path::new("-") {
        std::io::stdin().read_to_string(&mut s)?;
    } else {
        File::open(path)
            .and_then(|mut f| f.read_to_string(&mut s))
            .map_err(|e| CliError::Other(format!("{}: {e}", path.display())))?;
    }
    Ok(s)
}

pub fn read_sequence(path: &Path) -> Result<StructuredSequence, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Other(format!("{}: {e}", path.display())))?;
    let text = String::from_utf8(bytes).map_err(|e| CliError::Sequence {
        path: path.display().to_string(),
        source: gsrm_core::structseq::parse_bytes(e.as_bytes()).unwrap_err(),
    })?;
    parse_any(&text).map_err(|source| CliError::Sequence { path: path.display().to_string(), source })
}

/// Runs one command, writing its primary output to `out`.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Score(a) => cmd_score(a, &cfg, out),
        Command::Serve(a) => cmd_serve(a, cfg),
        Command::TrainToy(a) => cmd_train_toy(a, &cfg, out),
        Command::Metrics(m) => cmd_metrics(m, out),
        Command::Dataset(a) => cmd_dataset(a, out),
    }
}

pub fn cmd_score(a: &ScoreArgs, cfg: &EngineConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let teacher = read_sequence(&a.teacher)?;
    let student = read_sequence(&a.student)?;
    let response = a.response.as_deref().map(read_input).transpose()?;
    let matcher = TextMatcher::from_config(&cfg.match_cfg).map_err(|e| CliError::Other(e.to_string()))?;
    let req = ScoreRequest {
        teacher: &teacher,
        student: &student,
        gold_answer: a.gold.as_deref(),
        response_text: response.as_deref(),
    };
    let breakdown = score(req, &cfg.weights, &matcher)?;
    writeln!(out, "{}", serde_json::to_string(&breakdown).expect("breakdown serializes"))?;
    Ok(())
}

fn cmd_serve(a: &ServeArgs, mut cfg: EngineConfig) -> Result<(), CliError> {
    if let Some(bind) = &a.bind {
        cfg.service.bind = bind.clone();
    }
    if let Some(port) = a.port {
        cfg.service.port = port;
    }
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(service::serve(cfg)).map_err(|e| CliError::Other(e.to_string()))
}

pub fn cmd_train_toy(a: &TrainToyArgs, cfg: &EngineConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let (world, teacher) = build_world(&cfg.world, cfg.seed).map_err(|e| CliError::Other(e.to_string()))?;
    let mut dc = cfg.distill_config();
    if let Some(n) = a.episodes {
        dc.episodes = n;
    }
    if a.no_gsrm {
        dc.weights = dc.weights.without_structure();
    }
    let log = run_distillation(&world, &teacher, &dc).map_err(|e| CliError::Other(e.to_string()))?;
    std::fs::create_dir_all(&a.out)?;
    std::fs::write(a.out.join("log.jsonl"), log.to_jsonl())?;
    write_alignment_csv(&alignment_curve(&log), File::create(a.out.join("alignment.csv"))?)
        .map_err(|e| CliError::Other(e.to_string()))?;
    let (first, last) = (log.first().expect("initial checkpoint"), log.last().expect("initial checkpoint"));
    let summary = json!({
        "checkpoints": log.checkpoints.len(),
        "initial_alignment": first.alignment,
        "final_alignment": last.alignment,
        "final_branch_kl": last.branch_kl,
        "out": a.out.display().to_string(),
    });
    writeln!(out, "{summary}")?;
    Ok(())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Flag {
    Bool(bool),
    Int(u8),
}

fn parse_matrix(text: &str) -> Result<RunMatrix, CliError> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Shape {
        Matrix(Vec<Vec<Flag>>),
        Row(Vec<Flag>),
    }
    let shape: Shape = serde_json::from_str(text).map_err(|e| CliError::Input(e.to_string()))?;
    let rows = match shape {
        Shape::Matrix(m) => m,
        Shape::Row(r) => vec![r],
    };
    let rows = rows
        .into_iter()
        .map(|r| {
            r.into_iter()
                .map(|f| match f {
                    Flag::Bool(b) => Ok(b),
                    Flag::Int(0) => Ok(false),
                    Flag::Int(1) => Ok(true),
                    Flag::Int(x) => Err(CliError::Input(format!("correctness flag {x} is not 0 or 1"))),
                })
                .collect::<Result<Vec<bool>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    RunMatrix::new(rows).map_err(|e| CliError::Input(e.to_string()))
}

pub fn cmd_metrics(m: &MetricsCommand, out: &mut dyn Write) -> Result<(), CliError> {
    match m {
        MetricsCommand::Pass1 { input, csv } => {
            let runs = parse_matrix(&read_input(input)?)?;
            let p = pass_at_1(&runs);
            if let Some(path) = csv {
                write_pass_at_1_csv(&p, File::create(path)?).map_err(|e| CliError::Other(e.to_string()))?;
            }
            writeln!(out, "{}", serde_json::to_string(&p).expect("serializes"))?;
        }
        MetricsCommand::Passk { n, c, k, input } => match (n, c, input) {
            (Some(n), Some(c), None) => {
                let v = pass_at_k_unbiased(*n, *c, *k)?;
                let exact = pass_at_k_unbiased_exact(*n, *c, *k)?;
                let body = json!({ "n": n, "c": c, "k": k, "pass_at_k": v, "exact": exact.to_string() });
                writeln!(out, "{body}")?;
            }
            (None, None, Some(path)) => {
                let runs = parse_matrix(&read_input(path)?)?;
                let v = pass_at_k_simple(&runs, *k as usize)?;
                writeln!(out, "{}", json!({ "k": k, "pass_at_k": v, "estimator": "first_k" }))?;
            }
            _ => return Err(CliError::Input("give either --n and --c, or --input".into())),
        },
        MetricsCommand::Diversity { input } => {
            let vectors: Vec<Vec<f64>> =
                serde_json::from_str(&read_input(input)?).map_err(|e| CliError::Input(e.to_string()))?;
            let set = EmbeddingSet::new(vectors).map_err(|e| match e {
                EmbeddingError::Dimension { .. } => CliError::Input(e.to_string()),
                other => CliError::Embedding(other),
            })?;
            let d = diversity_score(&set)?;
            writeln!(out, "{}", serde_json::to_string(&d).expect("serializes"))?;
        }
    }
    Ok(())
}

pub fn read_paths(path: &Path) -> Result<Vec<ReasoningPath>, CliError> {
    let reader = BufReader::new(File::open(path).map_err(|e| CliError::Other(format!("{}: {e}", path.display())))?);
    let mut paths = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut p: ReasoningPath =
            serde_json::from_str(&line).map_err(|e| CliError::Input(format!("line {}: {e}", i + 1)))?;
        if p.body.trim().is_empty() {
            return Err(CliError::Input(format!("line {}: empty body", i + 1)));
        }
        if p.id.is_none() {
            p.id = Some(format!("{}", i + 1));
        }
        paths.push(p);
    }
    Ok(paths)
}

pub fn cmd_dataset(a: &DatasetArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let paths = read_paths(&a.paths)?;
    let timeout = Duration::from_secs_f64(a.timeout.max(0.001));
    let gen = HttpGenerator::new(&a.generator, timeout);
    let ver = HttpVerifier::new(&a.verifier, timeout);
    let results = build_dataset(&paths, &gen, &ver, a.max_in_flight);
    let mut file = std::io::BufWriter::new(File::create(&a.out)?);
    let (mut accepted, mut discarded, mut errors) = (0usize, 0usize, 0usize);
    for (p, r) in paths.iter().zip(results) {
        match r {
            Ok(sample) => match sample.accepted_record() {
                Some(rec) => {
                    accepted += 1;
                    writeln!(file, "{}", serde_json::to_string(&rec).expect("serializes"))?;
                }
                None => discarded += 1,
            },
            Err(e) => {
                errors += 1;
                eprintln!("path {}: {e}", p.id.as_deref().unwrap_or("?"));
            }
        }
    }
    file.flush()?;
    writeln!(out, "{}", json!({ "accepted": accepted, "discarded": discarded, "errors": errors }))?;
    if errors > 0 {
        return Err(CliError::Other(format!("{errors} path(s) failed on client errors")));
    }
    Ok(())
}
