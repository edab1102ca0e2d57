//! Read-only HTTP service over a dataset directory: lists videos and
//! checkpoints, runs inference, renders shot frames and evaluates
//! summaries. Summary selection itself happens on the client.

pub mod render;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use axum::body::Body;
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

pub use intentsum_core::api::EvaluateRequest;
use intentsum_core::api::{InferenceResponse, PrepareResponse, QuerySpec};
use intentsum_core::model::{Model, ScoreCache};
use intentsum_core::store::{load_checkpoint, Dataset, EmbeddingTable, VideoRecord};
use intentsum_core::{Error, Tensor};

pub const DEFAULT_BIND: &str = "127.0.0.1:8080";
pub const DEFAULT_CACHE_SIZE: usize = 256;

/// Published response schemas, by name.
pub const SCHEMAS: [(&str, &str); 5] = [
    ("prepare", include_str!("../schemas/prepare.schema.json")),
    ("inference", include_str!("../schemas/inference.schema.json")),
    ("evaluation", include_str!("../schemas/evaluation.schema.json")),
    ("error", include_str!("../schemas/error.schema.json")),
    (
        "evaluate_request",
        include_str!("../schemas/evaluate_request.schema.json"),
    ),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub bind: String,
    /// Entries kept in each response and score cache.
    pub cache_size: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            data_dir: PathBuf::from("data"),
            bind: DEFAULT_BIND.into(),
            cache_size: DEFAULT_CACHE_SIZE,
        }
    }
}

impl ServiceConfig {
    /// Applies `INTENTSUM_DATA_DIR`, `INTENTSUM_BIND` and
    /// `INTENTSUM_CACHE_SIZE` when set.
    pub fn with_env(mut self) -> Result<Self, Error> {
        if let Ok(v) = std::env::var("INTENTSUM_DATA_DIR") {
            self.data_dir = v.into();
        }
        if let Ok(v) = std::env::var("INTENTSUM_BIND") {
            self.bind = v;
        }
        if let Ok(v) = std::env::var("INTENTSUM_CACHE_SIZE") {
            self.cache_size = v
                .parse()
                .map_err(|_| Error::Config(format!("INTENTSUM_CACHE_SIZE must be an integer, got {v:?}")))?;
        }
        Ok(self)
    }
}

/// Everything a request handler reads. The checkpoint registry is fixed at
/// startup; videos, shot scores and response bodies are cached on demand.
pub struct AppState {
    dataset: Dataset,
    checkpoints: BTreeMap<String, Arc<Model<f32>>>,
    embeddings: Option<EmbeddingTable>,
    videos: ScoreCache<String, VideoRecord>,
    scores: ScoreCache<(String, String), Tensor<f32>>,
    responses: ScoreCache<String, String>,
}

impl AppState {
    pub fn load(cfg: &ServiceConfig) -> Result<Self, Error> {
        let dataset = Dataset::open(&cfg.data_dir)?;
        let mut checkpoints = BTreeMap::new();
        for id in dataset.checkpoint_ids()? {
            let model = load_checkpoint::<f32>(dataset.checkpoint_path(&id))?;
            checkpoints.insert(id, Arc::new(model));
        }
        let embeddings = if dataset.has_embeddings() {
            Some(dataset.embeddings()?)
        } else {
            None
        };
        let n = cfg.cache_size.max(1);
        Ok(AppState {
            dataset,
            checkpoints,
            embeddings,
            videos: ScoreCache::new(n),
            scores: ScoreCache::new(n),
            responses: ScoreCache::new(n),
        })
    }

    pub fn checkpoint_ids(&self) -> Vec<String> {
        self.checkpoints.keys().cloned().collect()
    }

    fn video(&self, id: &str) -> Result<Arc<VideoRecord>, ApiError> {
        if !Dataset::is_valid_id(id) || !self.dataset.video_dir(id).join("meta.json").is_file() {
            return Err(ApiError::not_found(format!("unknown video {id:?}")));
        }
        Ok(self
            .videos
            .get_or_try_insert(id.to_string(), || self.dataset.load_video(id))?)
    }

    fn checkpoint(&self, id: &str) -> Result<Arc<Model<f32>>, ApiError> {
        self.checkpoints
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown checkpoint {id:?}")))
    }

    /// Inference body for one (checkpoint, video, query) triple, cached.
    pub fn infer_body(&self, ckpt: &str, video: &str, query: &QuerySpec) -> Result<Arc<String>, ApiError> {
        let model = self.checkpoint(ckpt)?;
        let record = self.video(video)?;
        let key = serde_json::to_string(&(ckpt, video, query)).expect("key serializes");
        if let Some(hit) = self.responses.get(&key) {
            return Ok(hit);
        }
        let q = query.resolve(self.embeddings.as_ref())?;
        let probs = model.intent_probs(&record.features, &q)?;
        let h = self
            .scores
            .get_or_try_insert((ckpt.to_string(), video.to_string()), || {
                model.shot_scores(&record.features)
            })?;
        let body = InferenceResponse::from_parts(&model, ckpt, video, probs, &h).to_json();
        Ok(self.responses.get_or_try_insert(key, || Ok(body))?)
    }

    pub fn evaluate_body(&self, req: &EvaluateRequest) -> Result<String, ApiError> {
        let record = self.video(&req.video)?;
        let gt = req
            .ground_truth(&self.dataset, &record)?
            .ok_or_else(|| ApiError::not_found(req.missing_ground_truth()))?;
        Ok(req.evaluate(&record, &gt)?.to_json())
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct InferParams {
    pub c1: Option<String>,
    pub c2: Option<String>,
    pub video: Option<String>,
    pub ckpt: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VisualInferRequest {
    pub video: String,
    pub ckpt: String,
    pub shots: Vec<usize>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ShotParams {
    pub video: Option<String>,
    pub shot: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    pub fn bad_request(message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            message: message.into(),
        }
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::NOT_FOUND,
            message: message.into(),
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Vocabulary { .. } | Error::Input(_) | Error::InputTooShort { .. } | Error::Dimension { .. } => {
                StatusCode::BAD_REQUEST
            }
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => StatusCode::NOT_FOUND,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError {
            status,
            message: e.to_string(),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::bad_request(e.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        ApiError::bad_request(e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "error": self.message, "status": self.status.as_u16() });
        (self.status, Json(body)).into_response()
    }
}

fn json_body(body: &str) -> Response {
    (
        [(header::CONTENT_TYPE, HeaderValue::from_static("application/json"))],
        body.to_string(),
    )
        .into_response()
}

fn required(v: Option<String>, name: &str) -> Result<String, ApiError> {
    v.filter(|s| !s.is_empty())
        .ok_or_else(|| ApiError::bad_request(format!("missing parameter {name}")))
}

type Shared = State<Arc<AppState>>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError {
        status: StatusCode::INTERNAL_SERVER_ERROR,
        message: e.to_string(),
    })?
}

async fn prepare(State(s): Shared) -> Result<Response, ApiError> {
    let body = PrepareResponse {
        videos: s.dataset.video_ids()?,
        checkpoints: s.checkpoint_ids(),
        concepts: s.embeddings.as_ref().map_or_else(Vec::new, |t| t.concepts().to_vec()),
    };
    Ok(json_body(&serde_json::to_string(&body).expect("serializes")))
}

async fn infer_text(
    State(s): Shared,
    params: Result<Query<InferParams>, QueryRejection>,
) -> Result<Response, ApiError> {
    let Query(p) = params?;
    let video = required(p.video, "video")?;
    let ckpt = required(p.ckpt, "ckpt")?;
    let query = QuerySpec::Text {
        c1: required(p.c1, "c1")?,
        c2: required(p.c2, "c2")?,
    };
    let body = blocking(move || s.infer_body(&ckpt, &video, &query)).await?;
    Ok(json_body(&body))
}

async fn infer_visual(
    State(s): Shared,
    req: Result<Json<VisualInferRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(r) = req?;
    let query = QuerySpec::Visual { shots: r.shots };
    let body = blocking(move || s.infer_body(&r.ckpt, &r.video, &query)).await?;
    Ok(json_body(&body))
}

fn shot_target(s: &AppState, p: ShotParams) -> Result<(Arc<VideoRecord>, usize), ApiError> {
    let video = required(p.video, "video")?;
    let shot = p.shot.ok_or_else(|| ApiError::bad_request("missing parameter shot"))?;
    let record = s.video(&video)?;
    if shot >= record.shots() {
        return Err(ApiError::not_found(format!(
            "shot {shot} is outside 0..{}",
            record.shots()
        )));
    }
    Ok((record, shot))
}

async fn shot_frame(State(s): Shared, params: Result<Query<ShotParams>, QueryRejection>) -> Result<Response, ApiError> {
    let Query(p) = params?;
    let bytes = blocking(move || {
        let (r, shot) = shot_target(&s, p)?;
        Ok(render::frame_png(r.meta.thumbnail_seed, shot, &r.tags[shot]))
    })
    .await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], Body::from(bytes)).into_response())
}

async fn shot_gif(State(s): Shared, params: Result<Query<ShotParams>, QueryRejection>) -> Result<Response, ApiError> {
    let Query(p) = params?;
    let bytes = blocking(move || {
        let (r, shot) = shot_target(&s, p)?;
        Ok(render::shot_gif(r.meta.thumbnail_seed, shot, &r.tags[shot]))
    })
    .await?;
    Ok(([(header::CONTENT_TYPE, "image/gif")], Body::from(bytes)).into_response())
}

async fn evaluate(State(s): Shared, req: Result<Json<EvaluateRequest>, JsonRejection>) -> Result<Response, ApiError> {
    let Json(r) = req?;
    let body = blocking(move || s.evaluate_body(&r)).await?;
    Ok(json_body(&body))
}

async fn schema(Path(name): Path<String>) -> Result<Response, ApiError> {
    SCHEMAS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, body)| json_body(body))
        .ok_or_else(|| ApiError::not_found(format!("unknown schema {name:?}")))
}

async fn log_requests(req: Request, next: Next) -> Response {
    let start = Instant::now();
    let method = req.method().clone();
    let path = req.uri().path().to_string();
    let response = next.run(req).await;
    tracing::info!(
        target: "intentsum::http",
        %method,
        path,
        status = response.status().as_u16(),
        micros = start.elapsed().as_micros() as u64,
        "request"
    );
    response
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/prepare", get(prepare))
        .route("/api/infer", get(infer_text))
        .route("/api/infer/visual", post(infer_visual))
        .route("/api/shot/frame", get(shot_frame))
        .route("/api/shot/gif", get(shot_gif))
        .route("/api/evaluate", post(evaluate))
        .route("/api/schema/{name}", get(schema))
        .layer(middleware::from_fn(log_requests))
        .with_state(state)
}

/// Loads the state and serves until the process receives Ctrl-C.
pub async fn serve(cfg: ServiceConfig) -> Result<(), Error> {
    let state = Arc::new(AppState::load(&cfg)?);
    let addr: SocketAddr = cfg
        .bind
        .parse()
        .map_err(|_| Error::Config(format!("bind address {:?} is not host:port", cfg.bind)))?;
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::Config(format!("cannot bind {addr}: {e}")))?;
    tracing::info!(
        target: "intentsum::http",
        %addr,
        data_dir = %cfg.data_dir.display(),
        checkpoints = state.checkpoints.len(),
        "listening"
    );
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| Error::Config(format!("server error: {e}")))
}
