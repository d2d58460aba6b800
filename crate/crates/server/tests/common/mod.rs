#![allow(dead_code)]

use std::path::{Path, PathBuf};

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use axum::Router;
use flowscope_core::env::GridConfig;
use flowscope_core::policy::TrainConfig;
use flowscope_server::analyze::{analyze, AnalyzeOptions};
use flowscope_server::api::{router, AppState};
use flowscope_server::run::{run_training, EnvSpec, RunConfig};
use tower::ServiceExt;

pub fn config(height: u32, iterations: u64, seed: u64) -> RunConfig {
    RunConfig {
        env: EnvSpec::Grid(GridConfig::with_height(height)),
        train: TrainConfig { iterations, seed, ..TrainConfig::default() },
    }
}

/// Trains (and optionally analyzes) a run into `dir/name`.
pub fn mini_run(dir: &Path, name: &str, cfg: &RunConfig, analyzed: bool) -> PathBuf {
    let db = dir.join(name);
    run_training(&db, cfg, None, false).unwrap();
    if analyzed {
        analyze(&db, &AnalyzeOptions::default()).unwrap();
    }
    db
}

pub fn app(db: &Path) -> Router {
    router(AppState::open(db).unwrap(), None)
}

pub async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, to_bytes(resp.into_body(), usize::MAX).await.unwrap().to_vec())
}

pub async fn get_raw(app: &Router, uri: &str) -> (StatusCode, Vec<u8>) {
    send(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

pub async fn get(app: &Router, uri: &str) -> (StatusCode, serde_json::Value) {
    let (s, b) = get_raw(app, uri).await;
    (s, serde_json::from_slice(&b).unwrap_or(serde_json::Value::Null))
}

pub async fn post(app: &Router, uri: &str, body: serde_json::Value) -> (StatusCode, serde_json::Value) {
    let req = Request::post(uri)
        .header("content-type", "application/json")
        .body(Body::from(serde_json::to_vec(&body).unwrap()))
        .unwrap();
    let (s, b) = send(app, req).await;
    (s, serde_json::from_slice(&b).unwrap_or(serde_json::Value::Null))
}
