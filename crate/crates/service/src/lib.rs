//! HTTP API over a released view. The process only ever holds the view, so
//! every answer is post-processing of already private output.
//!
//! * `GET /schema`: attributes, block count, parameters and build metadata.
//! * `POST /query`: noisy range count plus error bounds.
//! * `GET /blocks?x=..&y=..`: block rectangles projected onto two attributes.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use pview_core::partition::MechanismParams;
use pview_core::view::BuildMeta;
use pview_core::{codec, error_bounds, Error, IndexRange, PView, RangeQuery, Schema, ViewKind, Xi};
use serde::{Deserialize, Serialize};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

pub const DEFAULT_MU: f64 = 0.05;

#[derive(Clone, Debug, Default)]
pub struct ServiceConfig {
    /// Origins allowed by CORS; empty allows any origin.
    pub cors_origins: Vec<String>,
}

#[derive(Clone, Default)]
pub struct AppState {
    pub view: Option<Arc<PView>>,
}

/// Bounds of one attribute. Raw bounds are numbers or category names
/// mapped through the schema; otherwise they are bin indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangeBound {
    pub lo: serde_json::Value,
    pub hi: serde_json::Value,
    #[serde(default)]
    pub raw: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRequest {
    #[serde(default)]
    pub ranges: BTreeMap<String, RangeBound>,
    #[serde(default = "default_mu")]
    pub mu: f64,
}

fn default_mu() -> f64 {
    DEFAULT_MU
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub answer: f64,
    pub theta_min: f64,
    pub theta_max: f64,
    pub mu: f64,
    pub blocks_touched: usize,
    pub elapsed_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemaResponse {
    pub schema: Schema,
    pub kind: ViewKind,
    pub block_count: usize,
    pub params: MechanismParams,
    pub meta: BuildMeta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlocksParams {
    pub x: String,
    pub y: String,
}

/// Blocks sharing a projected rectangle are merged. Rectangles of blocks
/// that differ on both axes may overlap; the projected density of a plane
/// cell is the sum over the rectangles covering it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rectangle {
    pub x: IndexRange,
    pub y: IndexRange,
    /// Sum of the merged blocks' noisy counts.
    pub noisy_count: f64,
    /// `noisy_count` per plane cell of the rectangle.
    pub density: f64,
    pub blocks: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlocksResponse {
    pub x: String,
    pub y: String,
    pub x_bins: u32,
    pub y_bins: u32,
    pub rectangles: Vec<Rectangle>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, error: impl Into<String>, field: Option<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                error: error.into(),
                field,
            },
        }
    }

    fn bad_request(error: impl Into<String>, field: Option<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, error, field)
    }

    fn no_view() -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, "no view loaded", None)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

fn loaded(state: &AppState) -> Result<&Arc<PView>, ApiError> {
    state.view.as_ref().ok_or_else(ApiError::no_view)
}

async fn schema(State(state): State<Arc<AppState>>) -> Result<Json<SchemaResponse>, ApiError> {
    let view = loaded(&state)?;
    Ok(Json(SchemaResponse {
        schema: view.schema.clone(),
        kind: view.kind,
        block_count: view.block_count(),
        params: view.params,
        meta: view.meta.clone(),
    }))
}

fn bound_text(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Turns a request into a query, mapping engine errors onto status codes.
pub fn resolve(schema: &Schema, req: &QueryRequest) -> Result<RangeQuery, ApiError> {
    if !(req.mu > 0.0 && req.mu < 1.0) {
        return Err(ApiError::bad_request(
            format!("mu must lie in (0, 1), got {}", req.mu),
            Some("mu".into()),
        ));
    }
    let mut restricted = Vec::with_capacity(req.ranges.len());
    for (name, bound) in &req.ranges {
        let field = Some(format!("ranges.{name}"));
        let axis = schema
            .attribute_index(name)
            .ok_or_else(|| ApiError::bad_request(format!("unknown attribute {name:?}"), field.clone()))?;
        let (Some(lo), Some(hi)) = (bound_text(&bound.lo), bound_text(&bound.hi)) else {
            return Err(ApiError::bad_request("lo and hi must be numbers or strings", field));
        };
        let attr = &schema.attributes[axis];
        let range = if bound.raw {
            attr.raw_range(&lo, &hi)
        } else {
            attr.index_range(&lo, &hi)
        };
        let range = range.map_err(|e| match e {
            Error::ReversedRange { .. } => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string(), field.clone()),
            other => ApiError::bad_request(other.to_string(), field.clone()),
        })?;
        restricted.push((axis, range));
    }
    RangeQuery::with_ranges(schema, restricted).map_err(|e| ApiError::bad_request(e.to_string(), None))
}

/// Answer and bounds for a parsed request.
pub fn answer(view: &PView, req: &QueryRequest) -> Result<QueryResponse, ApiError> {
    let start = Instant::now();
    let q = resolve(&view.schema, req)?;
    let internal = |e: Error| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string(), None);
    let answer = view.answer(&q).map_err(internal)?;
    let bound = error_bounds(view, &q, req.mu, &Xi::default()).map_err(internal)?;
    Ok(QueryResponse {
        answer,
        theta_min: bound.theta_min,
        theta_max: bound.theta_max,
        mu: req.mu,
        blocks_touched: view.blocks_touched(&q),
        elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

async fn query(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<QueryResponse>, ApiError> {
    let view = loaded(&state)?;
    let req: QueryRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::bad_request(format!("invalid request body: {e}"), None))?;
    answer(view, &req).map(Json)
}

/// Projects every block onto attributes `x` and `y`.
pub fn project(view: &PView, x: &str, y: &str) -> Result<BlocksResponse, ApiError> {
    let axis = |name: &str, field: &str| {
        view.schema
            .attribute_index(name)
            .ok_or_else(|| ApiError::bad_request(format!("unknown attribute {name:?}"), Some(field.into())))
    };
    let (ax, ay) = (axis(x, "x")?, axis(y, "y")?);
    if ax == ay {
        return Err(ApiError::bad_request("x and y must be different attributes", Some("y".into())));
    }
    let mut merged: BTreeMap<(IndexRange, IndexRange), (f64, usize)> = BTreeMap::new();
    for b in &view.blocks {
        let e = merged.entry((b.ranges[ax], b.ranges[ay])).or_default();
        e.0 += b.noisy_sum;
        e.1 += 1;
    }
    let rectangles = merged
        .into_iter()
        .map(|((rx, ry), (noisy_count, blocks))| Rectangle {
            x: rx,
            y: ry,
            noisy_count,
            density: noisy_count / (rx.extent() * ry.extent()) as f64,
            blocks,
        })
        .collect();
    let domains = view.schema.domain_sizes();
    Ok(BlocksResponse {
        x: x.to_owned(),
        y: y.to_owned(),
        x_bins: domains[ax],
        y_bins: domains[ay],
        rectangles,
    })
}

async fn blocks(
    State(state): State<Arc<AppState>>,
    params: Result<Query<BlocksParams>, axum::extract::rejection::QueryRejection>,
) -> Result<Json<BlocksResponse>, ApiError> {
    let view = loaded(&state)?;
    let Query(p) = params.map_err(|e| ApiError::bad_request(e.body_text(), None))?;
    project(view, &p.x, &p.y).map(Json)
}

fn cors(config: &ServiceConfig) -> CorsLayer {
    let layer = CorsLayer::new().allow_methods(Any).allow_headers(Any);
    if config.cors_origins.is_empty() {
        layer.allow_origin(Any)
    } else {
        let origins: Vec<HeaderValue> = config
            .cors_origins
            .iter()
            .filter_map(|o| HeaderValue::from_str(o).ok())
            .collect();
        layer.allow_origin(AllowOrigin::list(origins))
    }
}

pub fn router(view: Option<Arc<PView>>, config: &ServiceConfig) -> Router {
    Router::new()
        .route("/schema", get(schema))
        .route("/query", post(query))
        .route("/blocks", get(blocks))
        .with_state(Arc::new(AppState { view }))
        .layer(cors(config))
}

/// Loads the view file and serves it until the process is stopped.
pub async fn serve(view_path: &Path, addr: SocketAddr, config: &ServiceConfig) -> Result<(), Error> {
    let view = codec::read_view(view_path)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    serve_on(listener, view, config).await
}

pub async fn serve_on(listener: tokio::net::TcpListener, view: PView, config: &ServiceConfig) -> Result<(), Error> {
    axum::serve(listener, router(Some(Arc::new(view)), config)).await?;
    Ok(())
}
