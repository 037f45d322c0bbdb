//! Request/response bodies and endpoint handlers.

use std::collections::BTreeMap;
use std::path::Path;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use faf_core::data::{FeatureSource, Features};
use faf_core::{Modality, Model};
use serde::{Deserialize, Serialize};

use crate::AppState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictRequest {
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub face: Option<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body: Option<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_raw: Option<String>,
}

impl PredictRequest {
    pub fn features(&self) -> Features {
        Features {
            face: self.face.clone(),
            body: self.body.clone(),
            text: self.text.clone(),
            text_raw: self.text_raw.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub model: String,
    /// `scores` (label → probability, class-index order), `predicted` and
    /// `predicted_index`.
    #[serde(flatten)]
    pub prediction: faf_core::model::Prediction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub models: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub key: String,
    pub modalities: Vec<Modality>,
    pub input_dims: BTreeMap<Modality, usize>,
    pub label_names: Vec<String>,
    pub gate_active: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelsResponse {
    pub models: Vec<ModelInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportsResponse {
    pub reports: Vec<String>,
}

/// Machine-readable error category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    UnknownModel,
    MissingModality,
    WrongLength,
    BadRequest,
    InvalidName,
    NotFound,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: ErrorCode,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modality: Option<Modality>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub got: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub detail: ErrorDetail,
}

impl ApiError {
    fn new(status: StatusCode, code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            status,
            detail: ErrorDetail {
                code,
                message: message.into(),
                modality: None,
                expected: None,
                got: None,
            },
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, ErrorCode::BadRequest, message)
    }
}

impl From<faf_core::Error> for ApiError {
    fn from(e: faf_core::Error) -> Self {
        use faf_core::Error as E;
        let message = e.to_string();
        match e {
            E::MissingModality(m) => {
                let mut err = Self::new(StatusCode::BAD_REQUEST, ErrorCode::MissingModality, message);
                err.detail.modality = Some(m);
                err
            }
            E::WrongLength {
                modality,
                expected,
                got,
                ..
            } => {
                let mut err = Self::new(StatusCode::BAD_REQUEST, ErrorCode::WrongLength, message);
                err.detail.modality = Some(modality);
                err.detail.expected = Some(expected);
                err.detail.got = Some(got);
                err
            }
            E::Input { .. } | E::Numeric(_) => Self::bad_request(message),
            _ => Self::new(StatusCode::INTERNAL_SERVER_ERROR, ErrorCode::Internal, message),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: self.detail })).into_response()
    }
}

pub async fn health(State(state): State<AppState>) -> Json<HealthResponse> {
    Json(HealthResponse {
        status: "ok".into(),
        models: state.registry.keys().map(String::from).collect(),
    })
}

fn model_info(key: &str, model: &Model) -> ModelInfo {
    let cfg = model.config();
    ModelInfo {
        key: key.into(),
        modalities: cfg.enabled_modalities.as_slice().to_vec(),
        input_dims: cfg.enabled_modalities.iter().map(|m| (m, cfg.input_dim(m))).collect(),
        label_names: cfg.label_names.clone(),
        gate_active: model.gate_active(),
    }
}

pub async fn models(State(state): State<AppState>) -> Json<ModelsResponse> {
    Json(ModelsResponse {
        models: state.registry.iter().map(|(k, m)| model_info(k, m)).collect(),
    })
}

/// Validates and scores one request against the registry.
pub fn predict_one(state: &AppState, req: &PredictRequest) -> Result<PredictResponse, ApiError> {
    let model = state.registry.get(&req.model).ok_or_else(|| {
        ApiError::new(
            StatusCode::BAD_REQUEST,
            ErrorCode::UnknownModel,
            format!("unknown model `{}`", req.model),
        )
    })?;
    let features = req.features();
    let cfg = model.config();
    for m in cfg.enabled_modalities.iter() {
        let v = features.vector(m).ok_or(faf_core::Error::MissingModality(m))?;
        if v.len() != cfg.input_dim(m) {
            return Err(faf_core::Error::WrongLength {
                modality: m,
                expected: cfg.input_dim(m),
                got: v.len(),
                line: None,
            }
            .into());
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(ApiError::bad_request(format!("{m}: vector has non-finite entries")));
        }
    }
    Ok(PredictResponse {
        model: req.model.clone(),
        prediction: model.predict(&features)?,
    })
}

pub async fn predict(State(state): State<AppState>, body: Bytes) -> Result<Json<PredictResponse>, ApiError> {
    let req: PredictRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))?;
    predict_one(&state, &req).map(Json)
}

fn reports_dir(state: &AppState) -> Result<&Path, ApiError> {
    state.reports_dir.as_deref().ok_or_else(|| {
        ApiError::new(
            StatusCode::NOT_FOUND,
            ErrorCode::NotFound,
            "no reports directory configured",
        )
    })
}

/// Plain file names only: no separators, no leading dot.
fn valid_report_name(name: &str) -> bool {
    !name.is_empty()
        && !name.starts_with('.')
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.' | '+'))
}

pub async fn reports(State(state): State<AppState>) -> Result<Json<ReportsResponse>, ApiError> {
    let dir = reports_dir(&state)?;
    let mut names = Vec::new();
    let mut entries = tokio::fs::read_dir(dir)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, ErrorCode::Internal, e.to_string()))?;
    while let Ok(Some(entry)) = entries.next_entry().await {
        let path = entry.path();
        if path.extension().is_some_and(|e| e == "json") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                if valid_report_name(stem) {
                    names.push(stem.to_string());
                }
            }
        }
    }
    names.sort();
    Ok(Json(ReportsResponse { reports: names }))
}

/// Returns `<reports-dir>/<name>.json` verbatim; `name` may include the
/// extension.
pub async fn report(State(state): State<AppState>, UrlPath(name): UrlPath<String>) -> Result<Response, ApiError> {
    if !valid_report_name(&name) {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            ErrorCode::InvalidName,
            format!("invalid report name `{name}`"),
        ));
    }
    let dir = reports_dir(&state)?;
    let file = if name.ends_with(".json") {
        name.clone()
    } else {
        format!("{name}.json")
    };
    match tokio::fs::read(dir.join(file)).await {
        Ok(bytes) => Ok(([(header::CONTENT_TYPE, "application/json")], bytes).into_response()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(ApiError::new(
            StatusCode::NOT_FOUND,
            ErrorCode::NotFound,
            format!("no report named `{name}`"),
        )),
        Err(e) => Err(ApiError::new(
            StatusCode::INTERNAL_SERVER_ERROR,
            ErrorCode::Internal,
            e.to_string(),
        )),
    }
}

pub async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, ErrorCode::NotFound, "no such endpoint")
}
