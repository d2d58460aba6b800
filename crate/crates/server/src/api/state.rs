use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use flowscope_core::analytics::{
    bin_points, discovery_events, project, ranking, transition_heatmap, transition_history, CorrelationMode, Direction,
    HeatMetric, HeatmapRow, HexBin, HexGrid, HistoryPoint, ProjectedSample, ProjectedValidation, ProjectionMethod,
    RankMetric, RankingFrame,
};
use flowscope_core::dag::{children_table, ChildRow, DagBuilder, DagViewState, ReconstructedTrajectory, TrajectoryDag};
use flowscope_core::env::{Environment, GridEnv, RenderSpec};
use flowscope_core::{IterRange, Sample, ValidationObject};
use flowscope_store::{RunInfo, SampleOrder, Store};
use serde::{Deserialize, Serialize};

use crate::analyze::full_range;
use crate::error::{bad_request, AppError, Result};
use crate::run::RunConfig;

pub const SESSION_TTL: Duration = Duration::from_secs(30 * 60);
const DAG_CACHE_LIMIT: usize = 8;

const NOT_ANALYZED: &str = "DAG artifacts are missing; run `flowscope analyze --db <path>` first";

/// Optional `from`/`to` query bounds.
#[derive(Debug, Clone, Copy, Default, Deserialize)]
pub struct RangeQuery {
    pub from: Option<u64>,
    pub to: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProjectionParams {
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    #[serde(default)]
    pub correlation: CorrelationMode,
}

fn default_resolution() -> usize {
    flowscope_core::analytics::DEFAULT_RESOLUTION
}

impl Default for ProjectionParams {
    fn default() -> Self {
        Self { resolution: default_resolution(), correlation: CorrelationMode::Pearson }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinSummary {
    pub q: i64,
    pub r: i64,
    pub center: [f64; 2],
    pub count_samples: u64,
    pub count_validation: u64,
    pub mean_reward: Option<f64>,
    pub mean_loss: Option<f64>,
    pub correlation: Option<f64>,
    pub odds_score: Option<f64>,
}

impl From<&HexBin> for BinSummary {
    fn from(b: &HexBin) -> Self {
        let a = &b.aggregates;
        Self {
            q: b.q,
            r: b.r,
            center: b.center,
            count_samples: a.count_samples,
            count_validation: a.count_validation,
            mean_reward: a.mean_reward,
            mean_loss: a.mean_loss,
            correlation: a.correlation,
            odds_score: a.odds_score,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ScatterPoint {
    Sample {
        id: u64,
        state_key: String,
        x: f64,
        y: f64,
        iteration: u64,
        reward: f64,
        loss: f64,
        log_ptx: Option<f64>,
    },
    Validation {
        id: u64,
        state_key: String,
        x: f64,
        y: f64,
        reward: f64,
        log_ptx: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionSnapshot {
    pub session_id: String,
    pub from: u64,
    pub to: u64,
    pub pinned: BTreeSet<String>,
    pub placeholders: BTreeMap<String, usize>,
    pub visible_edges: Vec<(String, String)>,
}

struct Session {
    view: DagViewState,
    range: IterRange,
    last_used: Instant,
}

/// Projected coordinates fixed for the whole run, so bins do not move with the range.
struct ProjectionBase {
    method: ProjectionMethod,
    by_key: HashMap<String, [f64; 2]>,
    validation: Vec<[f64; 2]>,
}

/// Everything a request handler needs: the read-only store, the run's
/// environment, and caches of range-dependent results.
pub struct AppState {
    store: Mutex<Store>,
    pub env: GridEnv,
    pub run: RunInfo,
    pub config: RunConfig,
    bounds: Option<(u64, u64)>,
    validation: Vec<ValidationObject>,
    projection: ProjectionBase,
    dags: Mutex<HashMap<(IterRange, bool), Arc<TrajectoryDag>>>,
    sessions: Mutex<HashMap<String, Session>>,
    session_ttl: Duration,
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

impl AppState {
    pub fn open(db: &Path) -> Result<Self> {
        let store = Store::open_read_only(db)?;
        let run = store.require_run()?;
        let config = RunConfig::from_store(&store)?;
        let env = config.env.grid()?;
        let bounds = store.iteration_bounds()?;
        let validation = store.query_validation()?;

        let keys = store.distinct_terminal_keys()?;
        let sample_feats = keys
            .iter()
            .map(|k| Ok(env.features(&env.parse_key(k)?)))
            .collect::<Result<Vec<_>>>()?;
        let mut all: Vec<Vec<f64>> = sample_feats;
        all.extend(validation.iter().map(|v| v.features.clone()));
        let method = if env.feature_dim() == 2 { ProjectionMethod::Identity2D } else { ProjectionMethod::Pca2 };
        let points = project(&all, &method)?;
        let (sample_pts, val_pts) = points.split_at(keys.len());
        let projection = ProjectionBase {
            method,
            by_key: keys.into_iter().zip(sample_pts.iter().copied()).collect(),
            validation: val_pts.to_vec(),
        };
        Ok(Self {
            store: Mutex::new(store),
            env,
            run,
            config,
            bounds,
            validation,
            projection,
            dags: Mutex::new(HashMap::new()),
            sessions: Mutex::new(HashMap::new()),
            session_ttl: SESSION_TTL,
        })
    }

    pub fn with_session_ttl(mut self, ttl: Duration) -> Self {
        self.session_ttl = ttl;
        self
    }

    pub fn with_store<T>(&self, f: impl FnOnce(&Store) -> Result<T>) -> Result<T> {
        f(&lock(&self.store))
    }

    /// Resolves query bounds; absent bounds mean the whole run.
    pub fn range(&self, q: RangeQuery) -> Result<IterRange> {
        if let (Some(a), Some(b)) = (q.from, q.to) {
            if a > b {
                return bad_request(format!("from ({a}) is after to ({b})"));
            }
        }
        let Some((_, last)) = self.bounds else {
            return Ok(IterRange::new(q.from.unwrap_or(0), q.to.unwrap_or(IterRange::all().hi))?);
        };
        let lo = q.from.unwrap_or(0);
        let hi = q.to.unwrap_or(last).min(last).max(lo);
        Ok(IterRange::new(lo, hi)?)
    }

    pub fn run_info(&self) -> Result<serde_json::Value> {
        let (samples, edges, analyzed) = self.with_store(|s| {
            Ok((s.sample_count(IterRange::all())?, s.edge_count(IterRange::all())?, s.has_dag()?))
        })?;
        let mut out = serde_json::json!({
            "env": self.config.env.name(),
            "height": self.env.height(),
            "iterations": self.config.train.iterations,
            "batch_size": self.config.train.batch_size,
            "seed": self.config.train.seed,
            "status": self.run.status,
            "samples": samples,
            "edges": edges,
            "validation_objects": self.validation.len(),
            "iteration_bounds": self.bounds.map(|(a, b)| [a, b]),
            "analyzed": analyzed,
            "projection": match self.projection.method {
                ProjectionMethod::Identity2D => "identity",
                ProjectionMethod::Pca2 => "pca",
                ProjectionMethod::Precomputed(_) => "precomputed",
            },
            "config": self.config,
        });
        if let Some(s) = &self.run.summary {
            out["summary"] = s.clone();
        }
        Ok(out)
    }

    pub fn samples(&self, range: IterRange, limit: Option<usize>, order: SampleOrder) -> Result<Vec<Sample>> {
        self.with_store(|s| Ok(s.query_samples(range, limit, order)?))
    }

    pub fn ranking(&self, metric: RankMetric, n: usize, range: IterRange) -> Result<Vec<RankingFrame>> {
        let samples = self.samples(range, None, SampleOrder::Iteration)?;
        Ok(ranking(&samples, metric, n, range)?)
    }

    pub fn discovery(&self, n: usize, window: u64, range: IterRange) -> Result<Vec<(u64, usize)>> {
        Ok(discovery_events(&self.ranking(RankMetric::Reward, n, range)?, window))
    }

    fn projected(&self, range: IterRange) -> Result<(Vec<ProjectedSample>, Vec<ProjectedValidation>)> {
        let samples = self
            .samples(range, None, SampleOrder::Iteration)?
            .into_iter()
            .map(|s| ProjectedSample {
                point: self.projection.by_key[&s.terminal_key],
                trajectory_id: s.trajectory_id,
                state_key: s.terminal_key,
                iteration: s.iteration,
                reward: s.reward,
                loss: s.loss,
                log_ptx: s.log_ptx,
            })
            .collect();
        let validation = self
            .validation
            .iter()
            .zip(&self.projection.validation)
            .enumerate()
            .map(|(i, (v, p))| ProjectedValidation {
                id: i as u64,
                state_key: v.state_key.clone(),
                reward: v.reward,
                log_ptx: v.log_ptx,
                point: *p,
            })
            .collect();
        Ok((samples, validation))
    }

    pub fn hex_grid(&self, resolution: usize) -> Result<HexGrid> {
        let pts: Vec<[f64; 2]> =
            self.projection.by_key.values().chain(&self.projection.validation).copied().collect();
        Ok(HexGrid::from_resolution(&pts, resolution)?)
    }

    pub fn bins(&self, params: &ProjectionParams, range: IterRange) -> Result<(HexGrid, Vec<HexBin>)> {
        let grid = self.hex_grid(params.resolution)?;
        let (s, v) = self.projected(range)?;
        Ok((grid, bin_points(&s, &v, &grid, params.correlation)))
    }

    pub fn scatter(&self, range: IterRange) -> Result<Vec<ScatterPoint>> {
        let (s, v) = self.projected(range)?;
        let mut out: Vec<ScatterPoint> = s
            .into_iter()
            .map(|p| ScatterPoint::Sample {
                id: p.trajectory_id,
                state_key: p.state_key,
                x: p.point[0],
                y: p.point[1],
                iteration: p.iteration,
                reward: p.reward,
                loss: p.loss,
                log_ptx: p.log_ptx,
            })
            .collect();
        out.extend(v.into_iter().map(|p| ScatterPoint::Validation {
            id: p.id,
            state_key: p.state_key,
            x: p.point[0],
            y: p.point[1],
            reward: p.reward,
            log_ptx: p.log_ptx,
        }));
        Ok(out)
    }

    /// Full bin detail including a density render of its members.
    pub fn bin_detail(&self, params: &ProjectionParams, range: IterRange, q: i64, r: i64) -> Result<(HexBin, RenderSpec)> {
        let (_, bins) = self.bins(params, range)?;
        let bin = bins
            .into_iter()
            .find(|b| b.q == q && b.r == r)
            .ok_or_else(|| AppError::NotFound(format!("no members in bin ({q}, {r})")))?;
        let mut keys: Vec<String> = Vec::new();
        self.with_store(|s| {
            for id in &bin.sample_ids {
                if let Some(x) = s.sample(*id)? {
                    keys.push(x.terminal_key);
                }
            }
            Ok(())
        })?;
        keys.extend(bin.validation_ids.iter().map(|i| self.validation[*i as usize].state_key.clone()));
        let render = self.render_states(&keys)?;
        Ok((bin, render))
    }

    // --- DAG ---

    /// The DAG of `range`, chain-truncated or merged only. Truncated DAGs need
    /// the analyze artifacts; the whole-run one is read from them directly.
    pub fn dag(&self, range: IterRange, truncated: bool) -> Result<Arc<TrajectoryDag>> {
        let mut cache = lock(&self.dags);
        if let Some(d) = cache.get(&(range, truncated)) {
            return Ok(d.clone());
        }
        let root = self.env.state_key(&self.env.source());
        let dag = {
            let store = lock(&self.store);
            if truncated && !store.has_dag()? {
                return Err(AppError::Conflict(NOT_ANALYZED.into()));
            }
            if truncated && range == full_range(&store)? {
                store.load_dag()?.ok_or_else(|| AppError::Conflict(NOT_ANALYZED.into()))?
            } else {
                let mut b = DagBuilder::new(root, range);
                store.for_each_edge(range, |e| Ok(b.push(&e)?))?;
                let merged = b.finish();
                if truncated { merged.truncate_chains() } else { merged }
            }
        };
        if cache.len() >= DAG_CACHE_LIMIT {
            cache.clear();
        }
        let dag = Arc::new(dag);
        cache.insert((range, truncated), dag.clone());
        Ok(dag)
    }

    pub fn require_analyzed(&self) -> Result<()> {
        if self.with_store(|s| Ok(s.has_dag()?))? {
            Ok(())
        } else {
            Err(AppError::Conflict(NOT_ANALYZED.into()))
        }
    }

    fn render_key(&self, key: &str) -> Option<RenderSpec> {
        self.env.parse_key(key).ok().map(|s| self.env.render_state(&s))
    }

    pub fn children(&self, key: &str, session: Option<&str>, range: IterRange, render: bool) -> Result<Vec<ChildRow>> {
        let dag = self.dag(range, true)?;
        if !dag.nodes.get(key).is_some_and(|n| !n.contracted) {
            return Err(AppError::NotFound(format!("state {key} is not a node of the DAG")));
        }
        let view = match session {
            Some(id) => {
                let snap = self.session(id, range)?;
                let mut v = DagViewState::new(id, &dag);
                v.pinned = snap.pinned;
                v
            }
            None => {
                let mut v = DagViewState::new("", &dag);
                v.pinned.insert(key.to_string());
                v
            }
        };
        let render_fn = |k: &str| if render { self.render_key(k) } else { None };
        Ok(children_table(&dag, &view, key, render_fn)?)
    }

    fn with_session<T>(
        &self,
        id: &str,
        range: IterRange,
        f: impl FnOnce(&mut DagViewState, &TrajectoryDag) -> Result<T>,
    ) -> Result<(T, SessionSnapshot)> {
        let dag = self.dag(range, true)?;
        let mut sessions = lock(&self.sessions);
        let now = Instant::now();
        sessions.retain(|_, s| now.duration_since(s.last_used) < self.session_ttl);
        let s = sessions.entry(id.to_string()).or_insert_with(|| Session {
            view: DagViewState::new(id, &dag),
            range,
            last_used: now,
        });
        if s.range != range {
            // the slider moved: the old pins refer to another graph
            s.view = DagViewState::new(id, &dag);
            s.range = range;
        }
        s.last_used = now;
        let out = f(&mut s.view, &dag)?;
        let snap = SessionSnapshot {
            session_id: id.to_string(),
            from: range.lo,
            to: range.hi,
            pinned: s.view.pinned.clone(),
            placeholders: s.view.placeholders.clone(),
            visible_edges: s.view.visible_edges(&dag),
        };
        Ok((out, snap))
    }

    pub fn session(&self, id: &str, range: IterRange) -> Result<SessionSnapshot> {
        Ok(self.with_session(id, range, |_, _| Ok(()))?.1)
    }

    pub fn expand(&self, id: &str, range: IterRange, node: &str, child: &str) -> Result<SessionSnapshot> {
        Ok(self.with_session(id, range, |v, dag| Ok(v.expand(dag, node, child)?))?.1)
    }

    pub fn collapse(&self, id: &str, range: IterRange, node: &str) -> Result<SessionSnapshot> {
        Ok(self.with_session(id, range, |v, dag| Ok(v.collapse(dag, node)?))?.1)
    }

    pub fn session_count(&self) -> usize {
        lock(&self.sessions).len()
    }

    pub fn through(&self, key: &str, range: IterRange, limit: usize) -> Result<(BTreeSet<u64>, Vec<ReconstructedTrajectory>)> {
        let dag = self.dag(range, true)?;
        if !dag.nodes.contains_key(key) {
            return Err(AppError::NotFound(format!("state {key} is not in the DAG")));
        }
        let ids = dag.trajectory_ids_through(key, range);
        let shown: BTreeSet<u64> = ids.iter().take(limit).copied().collect();
        Ok((ids, dag.reconstruct(&shown).into_values().collect()))
    }

    // --- transitions ---

    pub fn heatmap(&self, metric: HeatMetric, direction: Direction, top: usize, range: IterRange) -> Result<Vec<HeatmapRow>> {
        Ok(transition_heatmap(&*self.dag(range, false)?, metric, direction, top, range))
    }

    pub fn history(&self, src: &str, dst: &str, range: IterRange) -> Result<Vec<HistoryPoint>> {
        Ok(transition_history(&*self.dag(range, false)?, src, dst, range))
    }

    // --- rendering ---

    pub fn render_state(&self, key: &str) -> Result<RenderSpec> {
        Ok(self.env.render_state(&self.env.parse_key(key)?))
    }

    pub fn render_states(&self, keys: &[String]) -> Result<RenderSpec> {
        let states = keys.iter().map(|k| self.env.parse_key(k)).collect::<flowscope_core::Result<Vec<_>>>()?;
        Ok(self.env.render_states(&states))
    }
}
