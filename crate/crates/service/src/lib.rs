//! HTTP prediction service.
//!
//! All checkpoints of a model directory are loaded once into an immutable
//! [`ModelRegistry`] before the listener starts; handlers only read it.
//!
//! | Method | Path                 | Body                                       |
//! |--------|----------------------|--------------------------------------------|
//! | GET    | `/api/health`        | `{status, models}`                         |
//! | GET    | `/api/models`        | `{models: [{key, modalities, input_dims, label_names, gate_active}]}` |
//! | POST   | `/api/predict`       | [`api::PredictRequest`] → [`api::PredictResponse`] |
//! | GET    | `/api/reports`       | `{reports: [name]}`                        |
//! | GET    | `/api/report/{name}` | stored report, verbatim                    |
//!
//! Errors are `{"error": {code, message, ...}}` with a 4xx/5xx status.
//! Everything outside `/api` is served from the static UI directory.

pub mod api;
pub mod registry;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::response::Html;
use axum::routing::{get, post};
use axum::Router;
use tokio::net::TcpListener;
use tower_http::services::ServeDir;

pub use registry::{ModelRegistry, StartupError};

#[derive(Debug, Clone)]
pub struct AppState {
    pub registry: Arc<ModelRegistry>,
    pub reports_dir: Option<PathBuf>,
}

impl AppState {
    pub fn new(registry: ModelRegistry, reports_dir: Option<PathBuf>) -> Self {
        Self {
            registry: Arc::new(registry),
            reports_dir,
        }
    }
}

const FALLBACK_INDEX: &str = "<!doctype html>\n<html><head><meta charset=\"utf-8\"><title>FAF prediction service</title></head>\n<body><h1>FAF prediction service</h1><p>No UI assets configured. API: <code>/api/health</code>, <code>/api/models</code>, <code>POST /api/predict</code>, <code>/api/reports</code>, <code>/api/report/{name}</code>.</p></body></html>\n";

/// Routes of the service; `static_dir` holds the UI assets served under `/`.
pub fn router(state: AppState, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/health", get(api::health))
        .route("/models", get(api::models))
        .route("/predict", post(api::predict))
        .route("/reports", get(api::reports))
        .route("/report/{name}", get(api::report))
        .fallback(api::not_found)
        .with_state(state);
    let app = Router::new().nest("/api", api);
    match static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir).append_index_html_on_directories(true)),
        None => app.route("/", get(|| async { Html(FALLBACK_INDEX) })),
    }
}

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub model_dir: PathBuf,
    pub reports_dir: Option<PathBuf>,
    pub static_dir: Option<PathBuf>,
    pub addr: SocketAddr,
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Startup(#[from] StartupError),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
    #[error("server error: {0}")]
    Io(#[from] std::io::Error),
}

/// A loaded, bound server that has not started accepting yet.
pub struct Server {
    listener: TcpListener,
    app: Router,
    registry: Arc<ModelRegistry>,
}

impl Server {
    /// Loads every checkpoint, then binds.
    pub async fn bind(cfg: ServeConfig) -> Result<Self, ServeError> {
        let registry = ModelRegistry::load_dir(&cfg.model_dir)?;
        let state = AppState::new(registry, cfg.reports_dir);
        let listener = TcpListener::bind(cfg.addr)
            .await
            .map_err(|source| ServeError::Bind { addr: cfg.addr, source })?;
        Ok(Self {
            listener,
            registry: state.registry.clone(),
            app: router(state, cfg.static_dir),
        })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    pub fn registry(&self) -> &ModelRegistry {
        &self.registry
    }

    /// Serves until `shutdown` resolves.
    pub async fn run(self, shutdown: impl std::future::Future<Output = ()> + Send + 'static) -> Result<(), ServeError> {
        axum::serve(self.listener, self.app)
            .with_graceful_shutdown(shutdown)
            .await?;
        Ok(())
    }
}
