//! HTTP service over a loaded bundle.
//!
//! Endpoints (JSON in and out):
//!
//! * `POST /predict` with `{"smiles": "..."}` or `{"pdb_base64": "..."}`
//! * `GET /database/{metric}` for FI, TIG, pHRR, TSR or FIGRA
//! * `GET /models` for the bundle summary
//! * `GET /health`
//!
//! Every error body is `{"code": ..., "message": ...}`, plus `offset` for
//! structure parse errors.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use serde::{Deserialize, Serialize};

use polyflam_core::assets::Assets;
use polyflam_core::bundle::{self, PredictError, StructureInput, TrainedBundle};

/// Immutable per-process state shared by every request.
#[derive(Clone)]
pub struct AppState {
    pub bundle: Arc<TrainedBundle>,
    pub assets: Arc<Assets>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub offset: Option<usize>,
}

pub struct ErrorResponse {
    status: StatusCode,
    body: ApiError,
}

impl ErrorResponse {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ApiError {
                code: code.into(),
                message: message.into(),
                offset: None,
            },
        }
    }
}

impl IntoResponse for ErrorResponse {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<PredictError> for ErrorResponse {
    fn from(e: PredictError) -> Self {
        match e {
            PredictError::Parse(p) => Self {
                status: StatusCode::UNPROCESSABLE_ENTITY,
                body: ApiError {
                    code: "parse_error".into(),
                    message: p.to_string(),
                    offset: Some(p.position()),
                },
            },
            PredictError::Descriptor(d) => Self::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "descriptor_error",
                d.to_string(),
            ),
            PredictError::Configuration(m) => {
                Self::new(StatusCode::INTERNAL_SERVER_ERROR, "configuration_error", m)
            }
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictRequest {
    smiles: Option<String>,
    pdb_base64: Option<String>,
}

#[derive(Serialize)]
struct Health {
    status: &'static str,
    catalog_id: String,
    models: usize,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/predict", post(predict).fallback(method_not_allowed))
        .route("/database/:metric", get(database).fallback(method_not_allowed))
        .route("/models", get(models).fallback(method_not_allowed))
        .route("/health", get(health).fallback(method_not_allowed))
        .fallback(not_found)
        .with_state(state)
}

async fn not_found() -> ErrorResponse {
    ErrorResponse::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

async fn method_not_allowed() -> ErrorResponse {
    ErrorResponse::new(
        StatusCode::METHOD_NOT_ALLOWED,
        "method_not_allowed",
        "method not allowed on this endpoint",
    )
}

fn parse_request(body: &[u8]) -> Result<StructureInput, ErrorResponse> {
    let bad = |m: String| ErrorResponse::new(StatusCode::BAD_REQUEST, "invalid_request", m);
    let req: PredictRequest = serde_json::from_slice(body).map_err(|e| bad(format!("request body: {e}")))?;
    match (req.smiles, req.pdb_base64) {
        (Some(s), None) => Ok(StructureInput::Smiles(s)),
        (None, Some(b)) => base64::engine::general_purpose::STANDARD
            .decode(b.trim())
            .map(StructureInput::Pdb)
            .map_err(|e| bad(format!("pdb_base64: {e}"))),
        _ => Err(bad("give exactly one of `smiles` or `pdb_base64`".into())),
    }
}

async fn predict(State(state): State<AppState>, body: Bytes) -> Result<Response, ErrorResponse> {
    let input = parse_request(&body)?;
    let prediction = bundle::predict_all(&input, &state.bundle)?;
    Ok(Json(prediction).into_response())
}

async fn database(
    State(state): State<AppState>,
    Path(metric): Path<String>,
) -> Result<Response, ErrorResponse> {
    bundle::database_comparison(&state.bundle, &state.assets, &metric)
        .map(|v| Json(v).into_response())
        .map_err(|e| ErrorResponse::new(StatusCode::NOT_FOUND, "unknown_metric", e.to_string()))
}

async fn models(State(state): State<AppState>) -> Response {
    Json(state.bundle.summary()).into_response()
}

async fn health(State(state): State<AppState>) -> Response {
    Json(Health {
        status: "ok",
        catalog_id: state.bundle.catalog_id().into(),
        models: state.bundle.models.len(),
    })
    .into_response()
}

/// Serves until the process is stopped.
pub async fn serve(state: AppState, host: &str, port: u16) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind((host, port)).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
