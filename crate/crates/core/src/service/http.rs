use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};
use tower_http::cors::{AllowOrigin, CorsLayer};

use super::{check_store, latent_space, predict_dashboard};
use crate::error::{Error, Result};
use crate::nn::Model;
use crate::oracle::ColumnStore;
use crate::state::SelectionState;

/// Read-only data shared by every request handler.
pub struct AppState {
    model: Model,
    store: Option<ColumnStore>,
    portable: Vec<u8>,
}

impl AppState {
    pub fn new(model: Model, store: Option<ColumnStore>) -> Result<Self> {
        if let Some(s) = &store {
            check_store(&model, s)?;
        }
        let portable = model.portable_json();
        Ok(AppState { model, store, portable })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub addr: SocketAddr,
    /// Allowed CORS origin; `None` allows any origin.
    pub cors_origin: Option<String>,
}

struct ApiError(Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError(Error::InvalidArgument(e.body_text()))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            Error::Fingerprint { .. } => StatusCode::CONFLICT,
            Error::FeatureDisabled(_) => StatusCode::NOT_IMPLEMENTED,
            Error::Unsupported(_) => StatusCode::UNPROCESSABLE_ENTITY,
            Error::UnknownAttribute(_)
            | Error::InvalidState(_)
            | Error::MalformedQuery(_)
            | Error::InvalidArgument(_)
            | Error::Shape(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "error": self.0.to_string() }))).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

fn check_fingerprint(app: &AppState, fp: Option<&str>) -> Result<()> {
    let Some(fp) = fp else { return Ok(()) };
    let expected = app.model.fingerprint();
    let found = u64::from_str_radix(fp, 16).map_err(|_| Error::InvalidArgument(format!("bad fingerprint `{fp}`")))?;
    if found != expected {
        return Err(Error::Fingerprint { expected, found });
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryRequest {
    #[serde(default)]
    state: Value,
    #[serde(default)]
    with_oracle: bool,
    #[serde(default)]
    fingerprint: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LatentRequest {
    attribute: String,
    #[serde(default)]
    context: Value,
    #[serde(default)]
    fingerprint: Option<String>,
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

async fn schema(State(app): State<Arc<AppState>>) -> Response {
    let schema = app.model.schema();
    let body = json!({
        "schema": serde_json::to_value(schema).expect("schema serializes"),
        "fingerprint": format!("{:016x}", schema.fingerprint()),
        "input_width": schema.input_width(),
        "oracle": app.store.is_some(),
    });
    Json(body).into_response()
}

async fn model(State(app): State<Arc<AppState>>) -> Response {
    (
        [(header::CONTENT_TYPE, HeaderValue::from_static("application/json"))],
        app.portable.clone(),
    )
        .into_response()
}

async fn query(
    State(app): State<Arc<AppState>>,
    body: std::result::Result<Json<QueryRequest>, JsonRejection>,
) -> ApiResult<Response> {
    let Json(req) = body?;
    check_fingerprint(&app, req.fingerprint.as_deref())?;
    let state = SelectionState::from_wire(app.model.schema(), &req.state)?;
    let resp = predict_dashboard(&app.model, app.store.as_ref(), &state, req.with_oracle)?;
    Ok(Json(resp).into_response())
}

async fn latent(
    State(app): State<Arc<AppState>>,
    body: std::result::Result<Json<LatentRequest>, JsonRejection>,
) -> ApiResult<Response> {
    let Json(req) = body?;
    check_fingerprint(&app, req.fingerprint.as_deref())?;
    let context = SelectionState::from_wire(app.model.schema(), &req.context)?;
    let points = latent_space(&app.model, &req.attribute, &context)?;
    Ok(Json(json!({ "attribute": req.attribute, "points": points })).into_response())
}

/// The endpoint set: `GET /health`, `GET /schema`, `GET /model`,
/// `POST /query` and `POST /latent`.
pub fn router(app: Arc<AppState>, cors_origin: Option<&str>) -> Result<Router> {
    let origin = match cors_origin {
        None => AllowOrigin::any(),
        Some(o) => AllowOrigin::exact(
            HeaderValue::from_str(o).map_err(|_| Error::InvalidArgument(format!("bad CORS origin `{o}`")))?,
        ),
    };
    let cors = CorsLayer::new()
        .allow_origin(origin)
        .allow_methods([axum::http::Method::GET, axum::http::Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    Ok(Router::new()
        .route("/health", get(health))
        .route("/schema", get(schema))
        .route("/model", get(model))
        .route("/query", post(query))
        .route("/latent", post(latent))
        .layer(cors)
        .with_state(app))
}

/// Binds `opts.addr` and serves until Ctrl-C.
pub async fn serve(app: AppState, opts: ServeOptions) -> Result<()> {
    let router = router(Arc::new(app), opts.cors_origin.as_deref())?;
    let listener = tokio::net::TcpListener::bind(opts.addr)
        .await
        .map_err(|e| Error::io(opts.addr.to_string(), e))?;
    let local = listener.local_addr().map_err(|e| Error::io(opts.addr.to_string(), e))?;
    log::info!("listening on http://{local}");
    axum::serve(listener, router)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| Error::io(local.to_string(), e))
}
