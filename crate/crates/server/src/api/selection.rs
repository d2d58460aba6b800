//! Cross-view selection: whatever is selected in one view, expressed as the
//! trajectories it stands for and what every other view should highlight.

use std::collections::{BTreeMap, BTreeSet};

use flowscope_core::dag::TrajectoryDag;
use flowscope_core::analytics::CorrelationMode;
use flowscope_core::IterRange;
use serde::{Deserialize, Serialize};

use super::state::{AppState, ProjectionParams, RangeQuery};
use crate::error::{AppError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", content = "ids", rename_all = "lowercase")]
pub enum Selection {
    /// Trajectory ids.
    Samples(Vec<u64>),
    /// Hexbin coordinates `[q, r]`.
    Bin(Vec<[i64; 2]>),
    /// One state key.
    Node(Vec<String>),
    /// `[src, dst]` pairs; a pair with `src == dst` selects the stop at `src`.
    Edges(Vec<[String; 2]>),
}

/// Request body: `{"kind": ..., "ids": [...]}` plus optional `from`, `to` and,
/// for bins, the projection parameters they were computed with.
#[derive(Debug, Clone, Deserialize)]
#[serde(try_from = "RawRequest")]
pub struct SelectionRequest {
    pub selection: Selection,
    pub from: Option<u64>,
    pub to: Option<u64>,
    pub projection: ProjectionParams,
}

#[derive(Deserialize)]
struct RawRequest {
    kind: String,
    #[serde(default)]
    ids: serde_json::Value,
    from: Option<u64>,
    to: Option<u64>,
    resolution: Option<usize>,
    #[serde(default)]
    correlation: CorrelationMode,
}

impl TryFrom<RawRequest> for SelectionRequest {
    type Error = serde_json::Error;

    fn try_from(r: RawRequest) -> Result<Self, serde_json::Error> {
        let ids = if r.ids.is_null() { serde_json::Value::Array(Vec::new()) } else { r.ids };
        let selection = serde_json::from_value(serde_json::json!({ "kind": r.kind, "ids": ids }))?;
        let mut projection = ProjectionParams { correlation: r.correlation, ..Default::default() };
        if let Some(c) = r.resolution {
            projection.resolution = c;
        }
        Ok(Self { selection, from: r.from, to: r.to, projection })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SelectionPayload {
    pub trajectory_ids: Vec<u64>,
    /// Terminal objects to highlight in the ranking.
    pub ranking_keys: Vec<String>,
    /// Sample points to highlight in the projection.
    pub projection_ids: Vec<u64>,
    /// DAG nodes to pin, per trajectory.
    pub dag_pins: BTreeMap<u64, Vec<String>>,
}

fn not_found<T>(what: &str, ids: Vec<String>) -> Result<T> {
    Err(AppError::NotFound(format!("unknown {what}: {}", ids.join(", "))))
}

/// Finds the DAG edge carrying a raw transition, which may sit inside a
/// contracted chain.
fn carrying_edge(dag: &TrajectoryDag, src: &str, dst: &str) -> Option<(String, String)> {
    if src == dst {
        return dag.nodes.get(src).filter(|n| !n.stops.is_empty()).map(|_| (src.to_string(), dst.to_string()));
    }
    if dag.edge(src, dst).is_some() {
        return Some((src.to_string(), dst.to_string()));
    }
    dag.edges.iter().find_map(|((u, w), stats)| {
        if stats.contracted_path.is_empty() {
            return None;
        }
        let mut path = Vec::with_capacity(stats.contracted_path.len() + 2);
        path.push(u);
        path.extend(stats.contracted_path.iter());
        path.push(w);
        path.windows(2).any(|p| p[0] == src && p[1] == dst).then(|| (u.clone(), w.clone()))
    })
}

fn payload(dag: &TrajectoryDag, ids: BTreeSet<u64>) -> SelectionPayload {
    let mut keys = BTreeSet::new();
    let mut pins = BTreeMap::new();
    for (id, t) in dag.reconstruct(&ids) {
        keys.insert(t.terminal_key.clone());
        let mut nodes = vec![dag.root.clone()];
        nodes.extend(t.edges.into_iter().map(|(_, d)| d));
        pins.insert(id, nodes);
    }
    SelectionPayload {
        trajectory_ids: ids.iter().copied().collect(),
        ranking_keys: keys.into_iter().collect(),
        projection_ids: ids.into_iter().collect(),
        dag_pins: pins,
    }
}

pub fn resolve(state: &AppState, req: &SelectionRequest) -> Result<SelectionPayload> {
    let range: IterRange = state.range(RangeQuery { from: req.from, to: req.to })?;
    let dag = state.dag(range, true)?;
    let ids: BTreeSet<u64> = match &req.selection {
        Selection::Samples(ids) => {
            let missing: Vec<String> =
                ids.iter().filter(|id| !dag.trajectories.contains_key(id)).map(|id| id.to_string()).collect();
            if !missing.is_empty() {
                return not_found("trajectory ids", missing);
            }
            ids.iter().copied().collect()
        }
        Selection::Bin(cells) => {
            let (_, bins) = state.bins(&req.projection, range)?;
            let mut ids = BTreeSet::new();
            let mut missing = Vec::new();
            for [q, r] in cells {
                match bins.iter().find(|b| b.q == *q && b.r == *r) {
                    Some(b) => ids.extend(b.sample_ids.iter().copied()),
                    None => missing.push(format!("({q}, {r})")),
                }
            }
            if !missing.is_empty() {
                return not_found("bins", missing);
            }
            ids
        }
        Selection::Node(keys) => {
            let missing: Vec<String> = keys.iter().filter(|k| !dag.nodes.contains_key(*k)).cloned().collect();
            if !missing.is_empty() {
                return not_found("states", missing);
            }
            keys.iter().flat_map(|k| dag.trajectory_ids_through(k, range)).collect()
        }
        Selection::Edges(pairs) => {
            let mut carriers = Vec::new();
            let mut missing = Vec::new();
            for [s, d] in pairs {
                match carrying_edge(&dag, s, d) {
                    Some(e) => carriers.push(e),
                    None => missing.push(format!("{s} -> {d}")),
                }
            }
            if !missing.is_empty() {
                return not_found("transitions", missing);
            }
            dag.trajectory_ids_using(&carriers)
        }
    };
    Ok(payload(&dag, ids))
}
