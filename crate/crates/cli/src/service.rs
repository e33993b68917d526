//! HTTP reward service.
//!
//! - `GET /healthz` returns `ok`.
//! - `POST /v1/reward` scores a student sequence against a teacher sequence.
//! - `POST /v1/advantages` turns a reward group into advantages.
//!
//! Malformed bodies get 400, judge failures 502.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use gsrm_core::config::EngineConfig;
use gsrm_core::grpo::{group_advantages, RewardGroup, DEFAULT_EPS};
use gsrm_core::matching::{MatchConfigError, TextMatcher};
use gsrm_core::reward::{score, RewardWeights, ScoreError, ScoreRequest};
use gsrm_core::structseq::{parse_any, parse_sequence_json, StructuredSequence};
use serde::Deserialize;
use serde_json::{json, Value};

#[derive(Debug, Clone)]
pub struct AppState {
    pub weights: RewardWeights,
    pub matcher: Arc<TextMatcher>,
}

impl AppState {
    pub fn from_config(cfg: &EngineConfig) -> Result<Self, MatchConfigError> {
        Ok(Self { weights: cfg.weights, matcher: Arc::new(TextMatcher::from_config(&cfg.match_cfg)?) })
    }
}

#[derive(Debug)]
pub enum ApiError {
    BadRequest(String),
    Judge(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, msg) = match self {
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, m),
            ApiError::Judge(m) => (StatusCode::BAD_GATEWAY, m),
        };
        (status, Json(json!({ "error": msg }))).into_response()
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RewardBody {
    teacher: Value,
    student: Value,
    #[serde(default)]
    gold_answer: Option<String>,
    #[serde(default)]
    response_text: Option<String>,
    #[serde(default)]
    weights: Option<RewardWeights>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdvantagesBody {
    rewards: Vec<f64>,
}

/// A sequence given either as tagged text or as a JSON object.
fn sequence_from(v: &Value, name: &str) -> Result<StructuredSequence, ApiError> {
    let parsed = match v {
        Value::String(s) => parse_any(s),
        Value::Object(_) => parse_sequence_json(&v.to_string()),
        _ => return Err(ApiError::BadRequest(format!("{name}: expected a string or an object"))),
    };
    parsed.map_err(|e| ApiError::BadRequest(format!("{name}: {e}")))
}

fn decode<T: for<'de> Deserialize<'de>>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::BadRequest(e.to_string()))
}

/// Scores one `/v1/reward` request body. Blocking when the judge is remote.
pub fn handle_reward(state: &AppState, body: &[u8]) -> Result<Value, ApiError> {
    let req: RewardBody = decode(body)?;
    let teacher = sequence_from(&req.teacher, "teacher")?;
    let student = sequence_from(&req.student, "student")?;
    let weights = req.weights.unwrap_or(state.weights);
    let breakdown = score(
        ScoreRequest {
            teacher: &teacher,
            student: &student,
            gold_answer: req.gold_answer.as_deref(),
            response_text: req.response_text.as_deref(),
        },
        &weights,
        state.matcher.as_ref(),
    )
    .map_err(|e| match e {
        ScoreError::Judge(j) => ApiError::Judge(j.to_string()),
        ScoreError::Weights(w) => ApiError::BadRequest(w.to_string()),
    })?;
    Ok(serde_json::to_value(breakdown).expect("breakdown serializes"))
}

pub fn handle_advantages(body: &[u8]) -> Result<Value, ApiError> {
    let req: AdvantagesBody = decode(body)?;
    let group = RewardGroup::new(req.rewards).map_err(|e| ApiError::BadRequest(e.to_string()))?;
    Ok(json!({ "advantages": group_advantages(&group, DEFAULT_EPS).advantages }))
}

async fn healthz() -> &'static str {
    "ok"
}

async fn reward(State(state): State<AppState>, body: Bytes) -> Result<Json<Value>, ApiError> {
    tokio::task::spawn_blocking(move || handle_reward(&state, &body))
        .await
        .map_err(|e| ApiError::Judge(e.to_string()))?
        .map(Json)
}

async fn advantages(body: Bytes) -> Result<Json<Value>, ApiError> {
    handle_advantages(&body).map(Json)
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/v1/reward", post(reward))
        .route("/v1/advantages", post(advantages))
        .with_state(state)
}

pub async fn serve(cfg: EngineConfig) -> std::io::Result<()> {
    let state = AppState::from_config(&cfg).map_err(std::io::Error::other)?;
    let listener = tokio::net::TcpListener::bind((cfg.service.bind.as_str(), cfg.service.port)).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    serve_on(listener, state).await
}

pub async fn serve_on(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
