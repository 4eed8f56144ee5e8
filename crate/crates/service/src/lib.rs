//! JSON API over the sampler: instance generation, oracle objective ranges
//! and target-conditioned solving against loaded checkpoints.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};
use std::time::Instant;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use goal_core::denoiser::GraphContext;
use goal_core::diffusion::{sample, SamplerConfig, TauKind};
use goal_core::eval::mape;
use goal_core::instance::{generate_instance, GeneratorConfig, Instance, ProblemKind};
use goal_core::model::TrainedModel;
use goal_core::oracle::{enumerate_feasible, normalize_targets};
use goal_core::schedule::{is_feasible, objectives, ObjectiveVector, Schedule};
use serde::{Deserialize, Serialize};
use tower_http::cors::CorsLayer;
use tower_http::services::ServeDir;

/// Oracle sample size behind range hints.
pub const RANGE_LIMIT: usize = 200;
pub const MAX_CANDIDATES: usize = 256;
pub const DEFAULT_PORT: u16 = 8080;

pub struct AppState {
    models: Vec<Arc<TrainedModel>>,
    instances: RwLock<HashMap<String, Instance>>,
}

impl AppState {
    pub fn new(models: Vec<TrainedModel>) -> Self {
        Self {
            models: models.into_iter().map(Arc::new).collect(),
            instances: RwLock::new(HashMap::new()),
        }
    }

    /// Prefers a model trained on the same size.
    fn model_for(&self, inst: &Instance) -> Option<Arc<TrainedModel>> {
        let size = format!("{}x{}", inst.n_jobs, inst.n_machines);
        let covering = || self.models.iter().filter(|m| m.covers(inst.kind));
        covering().find(|m| m.meta.sizes.contains(&size)).or_else(|| covering().next()).cloned()
    }

    fn remember(&self, inst: &Instance) {
        self.instances.write().expect("instance cache lock").insert(inst.id.clone(), inst.clone());
    }

    fn lookup(&self, id: &str) -> Option<Instance> {
        self.instances.read().expect("instance cache lock").get(id).cloned()
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self::bad_request(r.body_text())
    }
}

impl From<goal_core::error::Error> for ApiError {
    fn from(e: goal_core::error::Error) -> Self {
        use goal_core::error::Error as E;
        let status = match e {
            E::Config(_) | E::Size(_) | E::Dimension { .. } | E::Ordering { .. } => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Debug, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub models: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ModelInfo {
    pub id: String,
    pub profile: String,
    pub kinds: Vec<ProblemKind>,
    pub sizes: Vec<String>,
    pub horizon: usize,
    pub hidden: usize,
    pub layers: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct InstanceRequest {
    #[serde(flatten)]
    pub config: GeneratorConfig,
    /// Generator stream index under `seed`.
    #[serde(default)]
    pub index: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RangeHint {
    pub instance_id: String,
    pub samples: usize,
    pub c_max: Bounds,
    pub resilience: Bounds,
}

fn default_candidates() -> usize {
    32
}

fn default_guidance() -> f64 {
    SamplerConfig::default().guidance
}

fn default_steps() -> usize {
    SamplerConfig::default().steps
}

fn default_schedule() -> TauKind {
    SamplerConfig::default().schedule
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveRequest {
    #[serde(default)]
    pub instance: Option<Instance>,
    #[serde(default)]
    pub instance_id: Option<String>,
    pub target: ObjectiveVector,
    #[serde(default = "default_candidates")]
    pub candidates: usize,
    #[serde(default = "default_guidance")]
    pub guidance: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_schedule")]
    pub schedule: TauKind,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolvedCandidate {
    pub schedule: Schedule,
    pub objectives: ObjectiveVector,
    pub mape_cmax: f64,
    pub mape_resilience: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveResponse {
    pub instance_id: String,
    pub candidates: Vec<SolvedCandidate>,
    pub sampling_ms: f64,
    pub checkpoint_id: String,
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        models: state.models.len(),
    })
}

async fn models(State(state): State<Arc<AppState>>) -> Json<Vec<ModelInfo>> {
    Json(
        state
            .models
            .iter()
            .map(|m| ModelInfo {
                id: m.id.clone(),
                profile: m.meta.profile.clone(),
                kinds: m.meta.kinds.clone(),
                sizes: m.meta.sizes.clone(),
                horizon: m.config.horizon,
                hidden: m.config.denoiser.hidden,
                layers: m.config.denoiser.layers,
            })
            .collect(),
    )
}

async fn create_instance(State(state): State<Arc<AppState>>, body: Result<Json<InstanceRequest>, JsonRejection>) -> ApiResult<Instance> {
    let Json(req) = body?;
    req.config.check_padding()?;
    let inst = generate_instance(&req.config, req.index)?;
    state.remember(&inst);
    Ok(Json(inst))
}

fn range_hint(inst: &Instance) -> Result<RangeHint, ApiError> {
    let scheds = enumerate_feasible(inst, RANGE_LIMIT, 0, false);
    let objs: Vec<ObjectiveVector> = scheds.iter().map(|s| objectives(s, inst)).collect::<Result<_, _>>()?;
    let bounds = |f: fn(&ObjectiveVector) -> f64| Bounds {
        min: objs.iter().map(f).fold(f64::INFINITY, f64::min),
        max: objs.iter().map(f).fold(f64::NEG_INFINITY, f64::max),
    };
    if objs.is_empty() {
        return Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "oracle produced no schedule"));
    }
    Ok(RangeHint {
        instance_id: inst.id.clone(),
        samples: objs.len(),
        c_max: bounds(|o| o.c_max),
        resilience: bounds(|o| o.resilience),
    })
}

async fn instance_range(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<RangeHint> {
    let inst = state.lookup(&id).ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown instance `{id}`")))?;
    let hint = tokio::task::spawn_blocking(move || range_hint(&inst))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(hint))
}

fn validate_solve(req: &SolveRequest) -> Result<(), ApiError> {
    if !(1..=MAX_CANDIDATES).contains(&req.candidates) {
        return Err(ApiError::bad_request(format!("candidates must lie in [1, {MAX_CANDIDATES}]")));
    }
    if !(req.guidance >= 1.0) {
        return Err(ApiError::bad_request("guidance must be at least 1"));
    }
    if !(req.target.c_max > 0.0) || !(req.target.resilience >= 0.0) {
        return Err(ApiError::bad_request("target needs c_max > 0 and resilience >= 0"));
    }
    Ok(())
}

/// Runs the sampler and sorts candidates by their larger MAPE.
pub fn solve_blocking(model: &TrainedModel, inst: &Instance, req: &SolveRequest) -> Result<SolveResponse, ApiError> {
    let sampler = SamplerConfig {
        steps: req.steps,
        schedule: req.schedule,
        guidance: req.guidance,
        ..SamplerConfig::default()
    };
    let ctx = GraphContext::new(inst)?;
    let started = Instant::now();
    let u = normalize_targets(&req.target, inst);
    let cands = sample(&model.model, inst, &ctx, u, &model.noise, &sampler, req.candidates, req.seed.unwrap_or(0))?;
    let sampling_ms = started.elapsed().as_secs_f64() * 1e3;
    let mut out: Vec<SolvedCandidate> = cands
        .into_iter()
        .map(|c| SolvedCandidate {
            feasible: is_feasible(&c.schedule, inst).feasible,
            mape_cmax: mape(c.objectives.c_max, req.target.c_max),
            mape_resilience: mape(c.objectives.resilience, req.target.resilience),
            schedule: c.schedule,
            objectives: c.objectives,
        })
        .collect();
    out.sort_by(|a, b| a.mape_cmax.max(a.mape_resilience).total_cmp(&b.mape_cmax.max(b.mape_resilience)));
    Ok(SolveResponse {
        instance_id: inst.id.clone(),
        candidates: out,
        sampling_ms,
        checkpoint_id: model.id.clone(),
    })
}

async fn solve(State(state): State<Arc<AppState>>, body: Result<Json<SolveRequest>, JsonRejection>) -> ApiResult<SolveResponse> {
    let Json(req) = body?;
    validate_solve(&req)?;
    let inst = match (&req.instance, &req.instance_id) {
        (Some(inst), _) => {
            let problems = inst.validate();
            if !problems.is_empty() {
                return Err(ApiError::bad_request(problems.join("; ")));
            }
            state.remember(inst);
            inst.clone()
        }
        (None, Some(id)) => state.lookup(id).ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown instance `{id}`")))?,
        (None, None) => return Err(ApiError::bad_request("request needs `instance` or `instance_id`")),
    };
    let model = state
        .model_for(&inst)
        .ok_or_else(|| ApiError::new(StatusCode::CONFLICT, format!("no loaded checkpoint covers {}", inst.kind)))?;
    let resp = tokio::task::spawn_blocking(move || solve_blocking(&model, &inst, &req))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(resp))
}

/// API routes under `/api`; static files from `static_dir` elsewhere.
pub fn router(state: Arc<AppState>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/health", get(health))
        .route("/api/models", get(models))
        .route("/api/instances", post(create_instance))
        .route("/api/instances/{id}/range", get(instance_range))
        .route("/api/solve", post(solve))
        .with_state(state);
    let app = match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    };
    app.layer(CorsLayer::permissive())
}

pub async fn serve(addr: SocketAddr, state: Arc<AppState>, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state, static_dir)).await
}
