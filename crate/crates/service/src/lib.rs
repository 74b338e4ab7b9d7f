//! HTTP JSON API: `GET /health`, `POST /keywords`, `POST /generate` and
//! `POST /reload`. One immutable model bundle is shared by all requests
//! and replaced atomically on reload.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{Request, State};
use axum::http::StatusCode;
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use kpcnet_core::bundle::Bundle;
use kpcnet_core::group::{GenerationGroup, GroupOptions, Strategy};
use kpcnet_core::selection::Blacklist;
use kpcnet_core::Error;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub model_dir: PathBuf,
    pub host: String,
    pub port: u16,
    pub default_strategy: Strategy,
    /// Replaces the model directory's blacklist when set.
    pub blacklist: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            model_dir: PathBuf::from("model"),
            host: "127.0.0.1".into(),
            port: 8080,
            default_strategy: Strategy::Cluster,
            blacklist: None,
        }
    }
}

impl ServiceConfig {
    /// Applies `KPCNET_MODEL_DIR`, `KPCNET_HOST`, `KPCNET_PORT`,
    /// `KPCNET_DEFAULT_STRATEGY` and `KPCNET_BLACKLIST` when set.
    pub fn apply_env(&mut self) -> Result<(), Error> {
        let var = |name: &str| std::env::var(name).ok().filter(|v| !v.is_empty());
        if let Some(v) = var("KPCNET_MODEL_DIR") {
            self.model_dir = v.into();
        }
        if let Some(v) = var("KPCNET_HOST") {
            self.host = v;
        }
        if let Some(v) = var("KPCNET_PORT") {
            self.port = v
                .parse()
                .map_err(|_| Error::Config(format!("KPCNET_PORT `{v}` is not a port")))?;
        }
        if let Some(v) = var("KPCNET_DEFAULT_STRATEGY") {
            self.default_strategy = v.parse()?;
        }
        if let Some(v) = var("KPCNET_BLACKLIST") {
            self.blacklist = Some(v.into());
        }
        Ok(())
    }

    pub fn addr(&self) -> String {
        format!("{}:{}", self.host, self.port)
    }
}

#[derive(Debug, Clone)]
enum Slot {
    Loading,
    Ready(Arc<Bundle>),
    Failed(String),
}

/// Shared server state. Cloning is cheap.
#[derive(Debug, Clone)]
pub struct AppState {
    config: Arc<ServiceConfig>,
    bundle: Arc<RwLock<Slot>>,
}

impl AppState {
    /// State with no model loaded; `/health` answers 503 until a load
    /// succeeds.
    pub fn new(config: ServiceConfig) -> Self {
        AppState {
            config: Arc::new(config),
            bundle: Arc::new(RwLock::new(Slot::Loading)),
        }
    }

    pub fn with_bundle(config: ServiceConfig, bundle: Bundle) -> Self {
        let state = Self::new(config);
        state.install(bundle);
        state
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    fn install(&self, bundle: Bundle) {
        *self.bundle.write().unwrap_or_else(|e| e.into_inner()) = Slot::Ready(Arc::new(bundle));
    }

    fn current(&self) -> Slot {
        self.bundle.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    fn ready(&self) -> Result<Arc<Bundle>, ApiError> {
        match self.current() {
            Slot::Ready(b) => Ok(b),
            _ => Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "model not loaded")),
        }
    }

    /// Loads the configured model directory and swaps it in. A failed load
    /// keeps the previous bundle if there was one.
    pub fn reload_blocking(&self) -> Result<Arc<Bundle>, Error> {
        let loaded = Bundle::load(&self.config.model_dir).and_then(|mut b| {
            if let Some(path) = &self.config.blacklist {
                b.pipeline.blacklist = Blacklist::load(path)?;
            }
            Ok(b)
        });
        match loaded {
            Ok(b) => {
                tracing::info!(model_version = %b.model_version, vocab_hash = %b.vocab_hash, "model loaded");
                self.install(b);
                Ok(self.ready().expect("just installed"))
            }
            Err(e) => {
                tracing::error!(error = %e, "model load failed");
                let mut slot = self.bundle.write().unwrap_or_else(|p| p.into_inner());
                if !matches!(*slot, Slot::Ready(_)) {
                    *slot = Slot::Failed(e.to_string());
                }
                Err(e)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    status: u16,
    pub error: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status: status.as_u16(),
            error: message.into(),
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::EmptyContext | Error::UnknownStrategy(_) | Error::InvalidArgument(_) => StatusCode::BAD_REQUEST,
            Error::MissingTruthKeywords | Error::UnknownKeyword(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "empty request body"));
    }
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("invalid request: {e}")))
}

/// Runs CPU-bound model work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, Error> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("worker failed: {e}")))?
        .map_err(ApiError::from)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_version: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vocab_hash: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

async fn health(State(state): State<AppState>) -> (StatusCode, Json<HealthResponse>) {
    let (code, status, bundle, error) = match state.current() {
        Slot::Ready(b) => (StatusCode::OK, "ok", Some(b), None),
        Slot::Loading => (StatusCode::SERVICE_UNAVAILABLE, "loading", None, None),
        Slot::Failed(e) => (StatusCode::SERVICE_UNAVAILABLE, "error", None, Some(e)),
    };
    let body = HealthResponse {
        status: status.into(),
        model_version: bundle.as_ref().map(|b| b.model_version.clone()),
        vocab_hash: bundle.as_ref().map(|b| b.vocab_hash.clone()),
        error,
    };
    (code, Json(body))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordsRequest {
    pub context: String,
    #[serde(default)]
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredKeyword {
    pub keyword: String,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordsResponse {
    pub keywords: Vec<ScoredKeyword>,
    pub model_version: String,
}

async fn keywords(State(state): State<AppState>, body: Bytes) -> Result<Json<KeywordsResponse>, ApiError> {
    let req: KeywordsRequest = parse_body(&body)?;
    let bundle = state.ready()?;
    blocking(move || {
        let p = &bundle.pipeline;
        let ctx = p.prepare_context(&req.context)?;
        let logits = p.predictor.predict(&ctx)?;
        let limit = req.limit.unwrap_or(logits.len());
        Ok(Json(KeywordsResponse {
            keywords: p
                .ranked_keywords(&logits, limit)
                .into_iter()
                .map(|k| ScoredKeyword {
                    keyword: k.keyword,
                    prob: k.prob,
                })
                .collect(),
            model_version: bundle.model_version.clone(),
        }))
    })
    .await
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRequest {
    pub context: String,
    #[serde(default)]
    pub strategy: Option<String>,
    #[serde(default)]
    pub slots: Option<usize>,
    #[serde(default)]
    pub candidate_budget: Option<usize>,
    #[serde(default)]
    pub exclude_keywords: Vec<String>,
    #[serde(default)]
    pub truth_keywords: Option<Vec<String>>,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Skip blacklist filtering.
    #[serde(default)]
    pub no_filter: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionOut {
    pub text: String,
    /// Keywords found in the question.
    pub keywords: Vec<String>,
    /// Keywords the generator was conditioned on.
    pub conditioned_on: Vec<String>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilteredKeyword {
    pub keyword: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscardedOut {
    pub text: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub questions: Vec<QuestionOut>,
    pub predicted_keywords: Vec<ScoredKeyword>,
    pub filtered_keywords: Vec<FilteredKeyword>,
    pub keyword_groups: Vec<Vec<String>>,
    pub discarded: Vec<DiscardedOut>,
    pub warnings: Vec<String>,
    pub strategy: Strategy,
    pub seed: u64,
    pub model_version: String,
}

impl GenerateResponse {
    fn from_group(group: GenerationGroup, seed: u64, model_version: String) -> Self {
        let mut filtered: BTreeMap<String, String> = BTreeMap::new();
        for audit in &group.keyword_sets {
            for (k, pattern) in &audit.filtered {
                filtered
                    .entry(k.clone())
                    .or_insert_with(|| format!("context already states it (matches \"{pattern}\")"));
            }
            for k in &audit.excluded {
                filtered.entry(k.clone()).or_insert_with(|| "excluded by request".into());
            }
        }
        GenerateResponse {
            questions: group
                .selected
                .iter()
                .map(|m| QuestionOut {
                    text: m.question.to_string(),
                    keywords: m.keywords.iter().cloned().collect(),
                    conditioned_on: m.hypothesis.keyword_set.iter().cloned().collect(),
                    score: m.hypothesis.score,
                })
                .collect(),
            predicted_keywords: group
                .predicted
                .iter()
                .map(|k| ScoredKeyword {
                    keyword: k.keyword.clone(),
                    prob: k.prob,
                })
                .collect(),
            filtered_keywords: filtered
                .into_iter()
                .map(|(keyword, reason)| FilteredKeyword { keyword, reason })
                .collect(),
            keyword_groups: group
                .keyword_sets
                .iter()
                .map(|a| a.used.iter().cloned().collect())
                .collect(),
            discarded: group
                .discarded
                .iter()
                .map(|d| DiscardedOut {
                    text: d.member.question.to_string(),
                    reason: serde_json::to_value(&d.reason)
                        .ok()
                        .and_then(|v| v.get("kind").and_then(|k| k.as_str()).map(String::from))
                        .unwrap_or_default(),
                })
                .collect(),
            warnings: group.warnings,
            strategy: group.strategy,
            seed,
            model_version,
        }
    }
}

async fn generate(State(state): State<AppState>, body: Bytes) -> Result<Json<GenerateResponse>, ApiError> {
    let req: GenerateRequest = parse_body(&body)?;
    let strategy: Strategy = match &req.strategy {
        Some(s) => s.parse()?,
        None => state.config.default_strategy,
    };
    if req.context.trim().is_empty() {
        return Err(Error::EmptyContext.into());
    }
    if req.slots == Some(0) {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "slots must be at least 1"));
    }
    if let (Some(slots), Some(budget)) = (req.slots, req.candidate_budget) {
        if budget < slots {
            return Err(ApiError::new(StatusCode::BAD_REQUEST, "candidate_budget must be at least slots"));
        }
    }
    if strategy == Strategy::Truth && req.truth_keywords.as_ref().is_none_or(|k| k.is_empty()) {
        return Err(Error::MissingTruthKeywords.into());
    }
    let bundle = state.ready()?;
    let seed = req.seed.unwrap_or(0);
    let options = GroupOptions {
        excluded: req.exclude_keywords.iter().cloned().collect(),
        truth_keywords: req.truth_keywords.map(|k| k.into_iter().collect()),
        seed,
        slots: req.slots,
        candidates: req.candidate_budget,
        no_filter: req.no_filter,
    };
    let context = req.context;
    blocking(move || {
        let group = bundle.pipeline.generate_group(&context, strategy, &options)?;
        Ok(Json(GenerateResponse::from_group(group, seed, bundle.model_version.clone())))
    })
    .await
}

async fn reload(State(state): State<AppState>) -> Result<Json<HealthResponse>, ApiError> {
    let s = state.clone();
    let bundle = blocking(move || s.reload_blocking()).await?;
    Ok(Json(HealthResponse {
        status: "ok".into(),
        model_version: Some(bundle.model_version.clone()),
        vocab_hash: Some(bundle.vocab_hash.clone()),
        error: None,
    }))
}

async fn log_request(req: Request, next: Next) -> Response {
    let method = req.method().clone();
    let path = req.uri().path().to_string();
    let start = Instant::now();
    let response = next.run(req).await;
    tracing::info!(
        target: "kpcnet_service::request",
        method = %method,
        path = %path,
        status = response.status().as_u16(),
        latency_ms = start.elapsed().as_secs_f64() * 1e3,
    );
    response
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/keywords", post(keywords))
        .route("/generate", post(generate))
        .route("/reload", post(reload))
        .layer(middleware::from_fn(log_request))
        .with_state(state)
}

/// Binds the configured address, starts loading the model in the
/// background and serves until the process ends.
pub async fn serve(config: ServiceConfig) -> Result<(), Error> {
    let addr = config.addr();
    let listener = tokio::net::TcpListener::bind(&addr)
        .await
        .map_err(|e| Error::Config(format!("cannot bind {addr}: {e}")))?;
    let local: SocketAddr = listener
        .local_addr()
        .map_err(|e| Error::Config(format!("cannot bind {addr}: {e}")))?;
    let state = AppState::new(config);
    let loader = state.clone();
    tokio::task::spawn_blocking(move || {
        let _ = loader.reload_blocking();
    });
    tracing::info!(%local, "listening");
    axum::serve(listener, router(state))
        .await
        .map_err(|e| Error::Config(format!("server error: {e}")))
}
