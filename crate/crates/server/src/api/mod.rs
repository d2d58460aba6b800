//! HTTP JSON API over a trained (and ideally analyzed) run.

mod selection;
mod state;

use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use flowscope_core::analytics::{CorrelationMode, Direction, HeatMetric, RankMetric, DEFAULT_RESOLUTION};
use flowscope_store::SampleOrder;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::cors::{AllowOrigin, CorsLayer};

pub use selection::{resolve, Selection, SelectionPayload, SelectionRequest};
pub use state::{AppState, BinSummary, ProjectionParams, RangeQuery, ScatterPoint, SessionSnapshot, SESSION_TTL};

use crate::error::{AppError, Result};
use crate::json;

type Shared = Arc<AppState>;

/// Serializes with the 17-significant-digit float formatter.
pub struct ApiJson<T>(pub T);

impl<T: Serialize> IntoResponse for ApiJson<T> {
    fn into_response(self) -> Response {
        match json::to_vec(&self.0) {
            Ok(body) => ([(header::CONTENT_TYPE, HeaderValue::from_static("application/json"))], body).into_response(),
            Err(e) => AppError::Json(e).into_response(),
        }
    }
}

impl IntoResponse for AppError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status == StatusCode::INTERNAL_SERVER_ERROR {
            log::error!("{self}");
        }
        let body = json::to_vec(&json!({ "error": self.to_string() })).unwrap_or_default();
        (status, [(header::CONTENT_TYPE, HeaderValue::from_static("application/json"))], body).into_response()
    }
}

/// Runs `f` on the blocking pool; store access and DAG builds are synchronous.
async fn blocking<T, F>(st: Shared, f: F) -> Response
where
    T: Serialize + Send + 'static,
    F: FnOnce(&AppState) -> Result<T> + Send + 'static,
{
    match tokio::task::spawn_blocking(move || f(&st)).await {
        Ok(Ok(v)) => ApiJson(v).into_response(),
        Ok(Err(e)) => e.into_response(),
        Err(e) => AppError::Io(std::io::Error::other(e.to_string())).into_response(),
    }
}

pub fn router(state: AppState, cors_origin: Option<HeaderValue>) -> Router {
    let cors = match cors_origin {
        Some(o) => CorsLayer::new().allow_origin(AllowOrigin::exact(o)),
        None => CorsLayer::new().allow_origin(AllowOrigin::any()),
    }
    .allow_methods([axum::http::Method::GET, axum::http::Method::POST])
    .allow_headers([header::CONTENT_TYPE]);

    Router::new()
        .route("/api/run", get(run))
        .route("/api/samples", get(samples))
        .route("/api/ranking", get(ranking))
        .route("/api/projection", get(projection))
        .route("/api/projection/bin/{q}/{r}", get(projection_bin))
        .route("/api/dag/children/{key}", get(dag_children))
        .route("/api/dag/session/{id}", get(dag_session))
        .route("/api/dag/session/{id}/expand", post(dag_expand))
        .route("/api/dag/session/{id}/collapse", post(dag_collapse))
        .route("/api/dag/through/{key}", get(dag_through))
        .route("/api/transitions", get(transitions))
        .route("/api/transitions/history", get(transition_history))
        .route("/api/selection/resolve", post(selection_resolve))
        .route("/api/render/state/{key}", get(render_state))
        .route("/api/render/states", post(render_states))
        .layer(cors)
        .with_state(Arc::new(state))
}

async fn run(State(st): State<Shared>) -> Response {
    blocking(st, |s| s.run_info()).await
}

#[derive(Deserialize)]
struct SamplesQuery {
    from: Option<u64>,
    to: Option<u64>,
    limit: Option<usize>,
    #[serde(default)]
    order: SampleOrder,
}

async fn samples(State(st): State<Shared>, Query(q): Query<SamplesQuery>) -> Response {
    blocking(st, move |s| {
        let range = s.range(RangeQuery { from: q.from, to: q.to })?;
        Ok(json!({ "from": range.lo, "to": range.hi, "samples": s.samples(range, q.limit, q.order)? }))
    })
    .await
}

#[derive(Deserialize)]
struct RankingQuery {
    from: Option<u64>,
    to: Option<u64>,
    #[serde(default)]
    metric: RankMetric,
    #[serde(default = "default_n")]
    n: usize,
    /// Keep every k-th frame (the last frame is always kept).
    every: Option<usize>,
}

fn default_n() -> usize {
    20
}

async fn ranking(State(st): State<Shared>, Query(q): Query<RankingQuery>) -> Response {
    blocking(st, move |s| {
        let range = s.range(RangeQuery { from: q.from, to: q.to })?;
        let mut frames = s.ranking(q.metric, q.n, range)?;
        if let Some(k) = q.every.filter(|k| *k > 1) {
            let last = frames.len().saturating_sub(1);
            frames = frames.into_iter().enumerate().filter(|(i, _)| i % k == 0 || *i == last).map(|(_, f)| f).collect();
        }
        Ok(json!({ "metric": q.metric, "n": q.n, "frames": frames }))
    })
    .await
}

#[derive(Deserialize)]
struct ProjectionQuery {
    from: Option<u64>,
    to: Option<u64>,
    #[serde(default)]
    mode: ProjectionMode,
    resolution: Option<usize>,
    #[serde(default)]
    correlation: CorrelationMode,
}

impl ProjectionQuery {
    fn params(&self) -> ProjectionParams {
        ProjectionParams { resolution: self.resolution.unwrap_or(DEFAULT_RESOLUTION), correlation: self.correlation }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum ProjectionMode {
    #[default]
    Binned,
    Scatter,
}

async fn projection(State(st): State<Shared>, Query(q): Query<ProjectionQuery>) -> Response {
    blocking(st, move |s| {
        let range = s.range(RangeQuery { from: q.from, to: q.to })?;
        match q.mode {
            ProjectionMode::Binned => {
                let params = q.params();
                let (grid, bins) = s.bins(&params, range)?;
                let summaries: Vec<BinSummary> = bins.iter().map(BinSummary::from).collect();
                let samples: u64 = summaries.iter().map(|b| b.count_samples).sum();
                let validation: u64 = summaries.iter().map(|b| b.count_validation).sum();
                Ok(json!({
                    "mode": "binned",
                    "from": range.lo,
                    "to": range.hi,
                    "resolution": params.resolution,
                    "grid": grid,
                    "totals": { "samples": samples, "validation": validation },
                    "bins": summaries,
                }))
            }
            ProjectionMode::Scatter => {
                Ok(json!({ "mode": "scatter", "from": range.lo, "to": range.hi, "points": s.scatter(range)? }))
            }
        }
    })
    .await
}

async fn projection_bin(
    State(st): State<Shared>,
    Path((q, r)): Path<(i64, i64)>,
    Query(pq): Query<ProjectionQuery>,
) -> Response {
    blocking(st, move |s| {
        let range = s.range(RangeQuery { from: pq.from, to: pq.to })?;
        let (bin, render) = s.bin_detail(&pq.params(), range, q, r)?;
        Ok(json!({ "bin": bin, "render": render }))
    })
    .await
}

#[derive(Deserialize)]
struct ChildrenQuery {
    from: Option<u64>,
    to: Option<u64>,
    session: Option<String>,
    #[serde(default = "yes")]
    render: bool,
}

fn yes() -> bool {
    true
}

async fn dag_children(State(st): State<Shared>, Path(key): Path<String>, Query(q): Query<ChildrenQuery>) -> Response {
    blocking(st, move |s| {
        let range = s.range(RangeQuery { from: q.from, to: q.to })?;
        let rows = s.children(&key, q.session.as_deref(), range, q.render)?;
        Ok(json!({ "node": key, "children": rows }))
    })
    .await
}

async fn dag_session(State(st): State<Shared>, Path(id): Path<String>, Query(q): Query<RangeQuery>) -> Response {
    blocking(st, move |s| {
        let range = s.range(q)?;
        s.session(&id, range)
    })
    .await
}

#[derive(Deserialize)]
struct ExpandBody {
    node: String,
    child: String,
}

async fn dag_expand(
    State(st): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<RangeQuery>,
    Json(body): Json<ExpandBody>,
) -> Response {
    blocking(st, move |s| {
        let range = s.range(q)?;
        s.expand(&id, range, &body.node, &body.child)
    })
    .await
}

#[derive(Deserialize)]
struct CollapseBody {
    node: String,
}

async fn dag_collapse(
    State(st): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<RangeQuery>,
    Json(body): Json<CollapseBody>,
) -> Response {
    blocking(st, move |s| {
        let range = s.range(q)?;
        s.collapse(&id, range, &body.node)
    })
    .await
}

#[derive(Deserialize)]
struct ThroughQuery {
    from: Option<u64>,
    to: Option<u64>,
    #[serde(default = "default_through_limit")]
    limit: usize,
}

fn default_through_limit() -> usize {
    200
}

async fn dag_through(State(st): State<Shared>, Path(key): Path<String>, Query(q): Query<ThroughQuery>) -> Response {
    blocking(st, move |s| {
        let range = s.range(RangeQuery { from: q.from, to: q.to })?;
        let (ids, trajectories) = s.through(&key, range, q.limit)?;
        Ok(json!({ "node": key, "total": ids.len(), "trajectory_ids": ids, "trajectories": trajectories }))
    })
    .await
}

#[derive(Deserialize)]
struct TransitionsQuery {
    from: Option<u64>,
    to: Option<u64>,
    #[serde(default)]
    metric: HeatMetric,
    #[serde(default)]
    direction: Direction,
    #[serde(default = "default_top")]
    top: usize,
}

fn default_top() -> usize {
    50
}

async fn transitions(State(st): State<Shared>, Query(q): Query<TransitionsQuery>) -> Response {
    blocking(st, move |s| {
        let range = s.range(RangeQuery { from: q.from, to: q.to })?;
        let rows = s.heatmap(q.metric, q.direction, q.top, range)?;
        Ok(json!({ "metric": q.metric, "direction": q.direction, "from": range.lo, "to": range.hi, "rows": rows }))
    })
    .await
}

#[derive(Deserialize)]
struct HistoryQuery {
    from: Option<u64>,
    to: Option<u64>,
    src: String,
    dst: String,
}

async fn transition_history(State(st): State<Shared>, Query(q): Query<HistoryQuery>) -> Response {
    blocking(st, move |s| {
        let range = s.range(RangeQuery { from: q.from, to: q.to })?;
        let points = s.history(&q.src, &q.dst, range)?;
        Ok(json!({ "src": q.src, "dst": q.dst, "points": points }))
    })
    .await
}

async fn selection_resolve(State(st): State<Shared>, Json(req): Json<SelectionRequest>) -> Response {
    blocking(st, move |s| resolve(s, &req)).await
}

async fn render_state(State(st): State<Shared>, Path(key): Path<String>) -> Response {
    blocking(st, move |s| s.render_state(&key)).await
}

#[derive(Deserialize)]
struct RenderStatesBody {
    keys: Vec<String>,
}

async fn render_states(State(st): State<Shared>, Json(body): Json<RenderStatesBody>) -> Response {
    blocking(st, move |s| s.render_states(&body.keys)).await
}
