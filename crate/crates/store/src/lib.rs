//! Single-file SQLite persistence for one training run: samples, edge rows,
//! node features, the validation set, post-hoc estimates and the precomputed DAG.

mod error;
mod schema;
mod validation;

use std::collections::BTreeMap;
use std::path::Path;

use flowscope_core::dag::{NodeStats, TrajectoryDag, TrajectoryMeta, TransitionStats};
use flowscope_core::policy::{LoggedNode, TrainingSink};
use flowscope_core::{EdgeRecord, IterRange, Sample, TrajectoryRecord, ValidationObject};
use rusqlite::{params, Connection, OpenFlags, OptionalExtension, Row};
use serde::{Deserialize, Serialize};

pub use error::{Result, StoreError};
pub use schema::SCHEMA_VERSION;
pub use validation::{check_validation_set, enumerated_validation_set, parse_validation_jsonl};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Complete,
    Aborted,
}

impl RunStatus {
    fn as_str(self) -> &'static str {
        match self {
            Self::Running => "running",
            Self::Complete => "complete",
            Self::Aborted => "aborted",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "running" => Ok(Self::Running),
            "complete" => Ok(Self::Complete),
            "aborted" => Ok(Self::Aborted),
            other => Err(StoreError::NotADatabase(format!("unknown run status {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub id: i64,
    pub env: String,
    pub config: serde_json::Value,
    pub status: RunStatus,
    pub policy: Option<serde_json::Value>,
    pub summary: Option<serde_json::Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleOrder {
    /// `(iteration, trajectory_id)`
    #[default]
    Iteration,
    RewardDesc,
    LossAsc,
}

impl SampleOrder {
    fn sql(self) -> &'static str {
        match self {
            Self::Iteration => "iteration, trajectory_id",
            Self::RewardDesc => "reward DESC, iteration, trajectory_id",
            Self::LossAsc => "loss, iteration, trajectory_id",
        }
    }
}

pub struct Store {
    conn: Connection,
}

fn to_i64(v: u64) -> i64 {
    // iteration ranges are capped at i64::MAX by IterRange::all()
    v.min(i64::MAX as u64) as i64
}

fn sample_from_row(r: &Row) -> rusqlite::Result<Sample> {
    Ok(Sample {
        trajectory_id: r.get::<_, i64>(0)? as u64,
        terminal_key: r.get(1)?,
        reward: r.get(2)?,
        loss: r.get(3)?,
        iteration: r.get::<_, i64>(4)? as u64,
        log_ptx: r.get(5)?,
    })
}

fn edge_from_row(r: &Row) -> rusqlite::Result<EdgeRecord> {
    Ok(EdgeRecord {
        trajectory_id: r.get::<_, i64>(0)? as u64,
        step_index: r.get(1)?,
        iteration: r.get::<_, i64>(2)? as u64,
        src_key: r.get(3)?,
        dst_key: r.get(4)?,
        action: r.get(5)?,
        p_forward: r.get(6)?,
        p_backward: r.get(7)?,
        terminal: r.get(8)?,
    })
}

const SAMPLE_COLS: &str = "trajectory_id, terminal_key, reward, loss, iteration, log_ptx";
const EDGE_COLS: &str = "trajectory_id, step_index, iteration, src_key, dst_key, action, p_forward, p_backward, terminal";

impl Store {
    /// Creates a fresh database at `path`; fails if the file already exists.
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if path.exists() {
            return Err(StoreError::Domain(format!("{} already exists", path.display())));
        }
        let conn = Connection::open(path)?;
        Self::init(conn)
    }

    pub fn in_memory() -> Result<Self> {
        Self::init(Connection::open_in_memory()?)
    }

    fn init(conn: Connection) -> Result<Self> {
        conn.pragma_update(None, "foreign_keys", "ON")?;
        schema::create(&conn)?;
        Ok(Self { conn })
    }

    /// Opens an existing database for writing (analyze, resumed ingestion).
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let conn = Connection::open_with_flags(path, OpenFlags::SQLITE_OPEN_READ_WRITE)?;
        conn.pragma_update(None, "foreign_keys", "ON")?;
        schema::check(&conn)?;
        Ok(Self { conn })
    }

    pub fn open_read_only(path: impl AsRef<Path>) -> Result<Self> {
        let conn = Connection::open_with_flags(path, OpenFlags::SQLITE_OPEN_READ_ONLY)?;
        schema::check(&conn)?;
        Ok(Self { conn })
    }

    // --- run ---

    /// Registers the (single) run of this database.
    pub fn begin_run(&mut self, env: &str, config: &serde_json::Value) -> Result<i64> {
        if self.run()?.is_some() {
            return Err(StoreError::Domain("this database already holds a run".into()));
        }
        self.conn.execute(
            "INSERT INTO runs (id, env, config_json, status) VALUES (1, ?1, ?2, ?3)",
            params![env, serde_json::to_string(config)?, RunStatus::Running.as_str()],
        )?;
        Ok(1)
    }

    pub fn run(&self) -> Result<Option<RunInfo>> {
        let raw = self
            .conn
            .query_row("SELECT id, env, config_json, status, policy_json, summary_json FROM runs WHERE id = 1", [], |r| {
                Ok((
                    r.get::<_, i64>(0)?,
                    r.get::<_, String>(1)?,
                    r.get::<_, String>(2)?,
                    r.get::<_, String>(3)?,
                    r.get::<_, Option<String>>(4)?,
                    r.get::<_, Option<String>>(5)?,
                ))
            })
            .optional()?;
        let Some((id, env, config, status, policy, summary)) = raw else { return Ok(None) };
        Ok(Some(RunInfo {
            id,
            env,
            config: serde_json::from_str(&config)?,
            status: RunStatus::parse(&status)?,
            policy: policy.map(|p| serde_json::from_str(&p)).transpose()?,
            summary: summary.map(|s| serde_json::from_str(&s)).transpose()?,
        }))
    }

    pub fn require_run(&self) -> Result<RunInfo> {
        self.run()?.ok_or(StoreError::NoRun)
    }

    pub fn set_run_status(&mut self, status: RunStatus) -> Result<()> {
        let n = self.conn.execute("UPDATE runs SET status = ?1 WHERE id = 1", [status.as_str()])?;
        if n == 0 {
            return Err(StoreError::NoRun);
        }
        Ok(())
    }

    /// Stores the final policy and training summary and marks the run complete.
    pub fn finish_run(&mut self, policy: &serde_json::Value, summary: &serde_json::Value) -> Result<()> {
        let n = self.conn.execute(
            "UPDATE runs SET status = ?1, policy_json = ?2, summary_json = ?3 WHERE id = 1",
            params![RunStatus::Complete.as_str(), serde_json::to_string(policy)?, serde_json::to_string(summary)?],
        )?;
        if n == 0 {
            return Err(StoreError::NoRun);
        }
        Ok(())
    }

    // --- training log ---

    pub fn log_trajectory(&mut self, rec: &TrajectoryRecord) -> Result<()> {
        self.log_batch(&[], std::slice::from_ref(rec))
    }

    /// Inserts new node rows, samples and edge rows in one transaction.
    /// Nodes referenced by the batch but not listed in `nodes` get empty features.
    pub fn log_batch(&mut self, nodes: &[LoggedNode], batch: &[TrajectoryRecord]) -> Result<()> {
        let tx = self.conn.transaction()?;
        {
            let mut node = tx.prepare_cached("INSERT OR IGNORE INTO nodes (state_key, features_json) VALUES (?1, ?2)")?;
            for n in nodes {
                node.execute(params![n.key, serde_json::to_string(&n.features)?])?;
            }
            for rec in batch {
                // every src is the root or the previous step's dst
                for e in &rec.edges {
                    if e.step_index == 0 {
                        node.execute(params![e.src_key, "[]"])?;
                    }
                    node.execute(params![e.dst_key, "[]"])?;
                }
            }
            let mut sample = tx.prepare_cached(&format!("INSERT INTO samples ({SAMPLE_COLS}) VALUES (?1, ?2, ?3, ?4, ?5, ?6)"))?;
            let mut edge = tx.prepare_cached(&format!(
                "INSERT INTO edges ({EDGE_COLS}) VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9)"
            ))?;
            for rec in batch {
                let s = &rec.sample;
                sample.execute(params![
                    s.trajectory_id as i64,
                    s.terminal_key,
                    s.reward,
                    s.loss,
                    s.iteration as i64,
                    s.log_ptx
                ])?;
                for e in &rec.edges {
                    if e.trajectory_id != s.trajectory_id {
                        return Err(StoreError::Domain(format!(
                            "edge of trajectory {} logged with sample {}",
                            e.trajectory_id, s.trajectory_id
                        )));
                    }
                    edge.execute(params![
                        e.trajectory_id as i64,
                        e.step_index,
                        e.iteration as i64,
                        e.src_key,
                        e.dst_key,
                        e.action,
                        e.p_forward,
                        e.p_backward,
                        e.terminal
                    ])?;
                }
            }
        }
        tx.commit()?;
        Ok(())
    }

    pub fn node_features(&self, key: &str) -> Result<Option<Vec<f64>>> {
        let raw: Option<String> = self
            .conn
            .query_row("SELECT features_json FROM nodes WHERE state_key = ?1", [key], |r| r.get(0))
            .optional()?;
        Ok(raw.map(|s| serde_json::from_str(&s)).transpose()?)
    }

    pub fn node_count(&self) -> Result<u64> {
        Ok(self.conn.query_row("SELECT COUNT(*) FROM nodes", [], |r| r.get::<_, i64>(0))? as u64)
    }

    // --- queries ---

    /// Samples with iteration in `range`, ordered by `order`.
    pub fn query_samples(&self, range: IterRange, limit: Option<usize>, order: SampleOrder) -> Result<Vec<Sample>> {
        let sql = format!(
            "SELECT {SAMPLE_COLS} FROM samples WHERE iteration BETWEEN ?1 AND ?2 ORDER BY {} LIMIT ?3",
            order.sql()
        );
        let limit = limit.map_or(-1, |l| l.min(i64::MAX as usize) as i64);
        let mut stmt = self.conn.prepare_cached(&sql)?;
        let rows = stmt.query_map(params![to_i64(range.lo), to_i64(range.hi), limit], sample_from_row)?;
        Ok(rows.collect::<rusqlite::Result<_>>()?)
    }

    /// Same as [`Store::query_samples`] with `lo..=hi` checked first.
    pub fn query_samples_between(&self, lo: u64, hi: u64, limit: Option<usize>, order: SampleOrder) -> Result<Vec<Sample>> {
        self.query_samples(IterRange::new(lo, hi)?, limit, order)
    }

    pub fn sample(&self, trajectory_id: u64) -> Result<Option<Sample>> {
        Ok(self
            .conn
            .query_row(
                &format!("SELECT {SAMPLE_COLS} FROM samples WHERE trajectory_id = ?1"),
                [trajectory_id as i64],
                sample_from_row,
            )
            .optional()?)
    }

    pub fn sample_count(&self, range: IterRange) -> Result<u64> {
        Ok(self.conn.query_row(
            "SELECT COUNT(*) FROM samples WHERE iteration BETWEEN ?1 AND ?2",
            params![to_i64(range.lo), to_i64(range.hi)],
            |r| r.get::<_, i64>(0),
        )? as u64)
    }

    /// Smallest and largest logged iteration.
    pub fn iteration_bounds(&self) -> Result<Option<(u64, u64)>> {
        let (lo, hi): (Option<i64>, Option<i64>) =
            self.conn.query_row("SELECT MIN(iteration), MAX(iteration) FROM samples", [], |r| Ok((r.get(0)?, r.get(1)?)))?;
        Ok(lo.zip(hi).map(|(a, b)| (a as u64, b as u64)))
    }

    pub fn distinct_terminal_keys(&self) -> Result<Vec<String>> {
        let mut stmt = self.conn.prepare("SELECT DISTINCT terminal_key FROM samples ORDER BY terminal_key")?;
        let rows = stmt.query_map([], |r| r.get(0))?;
        Ok(rows.collect::<rusqlite::Result<_>>()?)
    }

    pub fn edge_count(&self, range: IterRange) -> Result<u64> {
        Ok(self.conn.query_row(
            "SELECT COUNT(*) FROM edges WHERE iteration BETWEEN ?1 AND ?2",
            params![to_i64(range.lo), to_i64(range.hi)],
            |r| r.get::<_, i64>(0),
        )? as u64)
    }

    /// Streams edge rows of `range` ordered by `(trajectory_id, step_index)`.
    pub fn for_each_edge(&self, range: IterRange, mut f: impl FnMut(EdgeRecord) -> Result<()>) -> Result<()> {
        let mut stmt = self.conn.prepare_cached(&format!(
            "SELECT {EDGE_COLS} FROM edges WHERE iteration BETWEEN ?1 AND ?2 ORDER BY trajectory_id, step_index"
        ))?;
        let mut rows = stmt.query(params![to_i64(range.lo), to_i64(range.hi)])?;
        while let Some(r) = rows.next()? {
            f(edge_from_row(r)?)?;
        }
        Ok(())
    }

    pub fn edges(&self, range: IterRange) -> Result<Vec<EdgeRecord>> {
        let mut out = Vec::new();
        self.for_each_edge(range, |e| {
            out.push(e);
            Ok(())
        })?;
        Ok(out)
    }

    pub fn trajectory_edges(&self, trajectory_id: u64) -> Result<Vec<EdgeRecord>> {
        let mut stmt = self
            .conn
            .prepare_cached(&format!("SELECT {EDGE_COLS} FROM edges WHERE trajectory_id = ?1 ORDER BY step_index"))?;
        let rows = stmt.query_map([trajectory_id as i64], edge_from_row)?;
        Ok(rows.collect::<rusqlite::Result<_>>()?)
    }

    pub fn trajectory(&self, trajectory_id: u64) -> Result<Option<TrajectoryRecord>> {
        let Some(sample) = self.sample(trajectory_id)? else { return Ok(None) };
        Ok(Some(TrajectoryRecord { sample, edges: self.trajectory_edges(trajectory_id)? }))
    }

    // --- validation set ---

    /// Replaces the validation set; row ids follow the slice order.
    pub fn load_validation_set(&mut self, objects: &[ValidationObject]) -> Result<()> {
        if let Some((i, o)) = objects.iter().enumerate().find(|(_, o)| !(o.reward > 0.0 && o.reward.is_finite())) {
            return Err(StoreError::Domain(format!("validation object {i} ({}) has non-positive reward", o.state_key)));
        }
        let tx = self.conn.transaction()?;
        tx.execute("DELETE FROM validation", [])?;
        {
            let mut ins = tx.prepare(
                "INSERT INTO validation (id, state_key, reward, features_json, log_ptx) VALUES (?1, ?2, ?3, ?4, ?5)",
            )?;
            for (i, o) in objects.iter().enumerate() {
                ins.execute(params![i as i64, o.state_key, o.reward, serde_json::to_string(&o.features)?, o.log_ptx])?;
            }
        }
        tx.commit()?;
        Ok(())
    }

    /// The validation set ordered by row id (its position at load time).
    pub fn query_validation(&self) -> Result<Vec<ValidationObject>> {
        let mut stmt = self.conn.prepare("SELECT state_key, reward, features_json, log_ptx FROM validation ORDER BY id")?;
        let rows = stmt.query_map([], |r| {
            Ok((r.get::<_, String>(0)?, r.get::<_, f64>(1)?, r.get::<_, String>(2)?, r.get::<_, Option<f64>>(3)?))
        })?;
        let mut out = Vec::new();
        for row in rows {
            let (state_key, reward, features, log_ptx) = row?;
            out.push(ValidationObject { state_key, reward, features: serde_json::from_str(&features)?, log_ptx });
        }
        Ok(out)
    }

    // --- post-hoc estimates ---

    /// Sets `log_ptx` on every sample whose terminal key is listed.
    pub fn set_sample_log_ptx(&mut self, estimates: &BTreeMap<String, f64>) -> Result<()> {
        let tx = self.conn.transaction()?;
        {
            let mut up = tx.prepare("UPDATE samples SET log_ptx = ?2 WHERE terminal_key = ?1")?;
            for (k, v) in estimates {
                up.execute(params![k, v])?;
            }
        }
        tx.commit()?;
        Ok(())
    }

    /// Sets `log_ptx` on validation rows by position.
    pub fn set_validation_log_ptx(&mut self, estimates: &[f64]) -> Result<()> {
        let tx = self.conn.transaction()?;
        {
            let mut up = tx.prepare("UPDATE validation SET log_ptx = ?2 WHERE id = ?1")?;
            for (i, v) in estimates.iter().enumerate() {
                if up.execute(params![i as i64, v])? == 0 {
                    return Err(StoreError::Domain(format!("no validation row {i}")));
                }
            }
        }
        tx.commit()?;
        Ok(())
    }

    // --- precomputed DAG ---

    /// Replaces the stored DAG.
    pub fn save_dag(&mut self, dag: &TrajectoryDag) -> Result<()> {
        let tx = self.conn.transaction()?;
        tx.execute_batch("DELETE FROM dag_info; DELETE FROM dag_nodes; DELETE FROM dag_edges;")?;
        tx.execute(
            "INSERT INTO dag_info (id, root, range_lo, range_hi) VALUES (1, ?1, ?2, ?3)",
            params![dag.root, to_i64(dag.range.lo), to_i64(dag.range.hi)],
        )?;
        {
            let mut n = tx.prepare("INSERT INTO dag_nodes (state_key, stats_json) VALUES (?1, ?2)")?;
            for (k, stats) in &dag.nodes {
                n.execute(params![k, serde_json::to_string(stats)?])?;
            }
            let mut e = tx.prepare(
                "INSERT INTO dag_edges (src_key, dst_key, contracted_path_json, traversals_json) VALUES (?1, ?2, ?3, ?4)",
            )?;
            for ((s, d), stats) in &dag.edges {
                e.execute(params![
                    s,
                    d,
                    serde_json::to_string(&stats.contracted_path)?,
                    serde_json::to_string(&stats.traversals)?
                ])?;
            }
        }
        tx.commit()?;
        Ok(())
    }

    pub fn has_dag(&self) -> Result<bool> {
        Ok(self.conn.query_row("SELECT COUNT(*) FROM dag_info", [], |r| r.get::<_, i64>(0))? > 0)
    }

    /// The stored DAG, with its trajectory index rebuilt from the samples table.
    pub fn load_dag(&self) -> Result<Option<TrajectoryDag>> {
        let info: Option<(String, i64, i64)> = self
            .conn
            .query_row("SELECT root, range_lo, range_hi FROM dag_info WHERE id = 1", [], |r| {
                Ok((r.get(0)?, r.get(1)?, r.get(2)?))
            })
            .optional()?;
        let Some((root, lo, hi)) = info else { return Ok(None) };
        let range = IterRange::new(lo as u64, hi as u64)?;

        let mut nodes = BTreeMap::new();
        let mut stmt = self.conn.prepare("SELECT state_key, stats_json FROM dag_nodes")?;
        let mut rows = stmt.query([])?;
        while let Some(r) = rows.next()? {
            let stats: NodeStats = serde_json::from_str(&r.get::<_, String>(1)?)?;
            nodes.insert(r.get::<_, String>(0)?, stats);
        }
        let mut edges = BTreeMap::new();
        let mut stmt = self.conn.prepare("SELECT src_key, dst_key, contracted_path_json, traversals_json FROM dag_edges")?;
        let mut rows = stmt.query([])?;
        while let Some(r) = rows.next()? {
            let stats = TransitionStats {
                contracted_path: serde_json::from_str(&r.get::<_, String>(2)?)?,
                traversals: serde_json::from_str(&r.get::<_, String>(3)?)?,
            };
            edges.insert((r.get::<_, String>(0)?, r.get::<_, String>(1)?), stats);
        }
        let trajectories = self
            .query_samples(range, None, SampleOrder::Iteration)?
            .into_iter()
            .map(|s| (s.trajectory_id, TrajectoryMeta { iteration: s.iteration, terminal_key: s.terminal_key }))
            .collect();
        Ok(Some(TrajectoryDag { range, root, nodes, edges, trajectories }))
    }

    /// Every row of every table in a canonical text form, for equality checks.
    pub fn dump(&self) -> Result<String> {
        let mut out = String::new();
        let mut tables = self.conn.prepare("SELECT name FROM sqlite_master WHERE type = 'table' ORDER BY name")?;
        let names: Vec<String> = tables.query_map([], |r| r.get(0))?.collect::<rusqlite::Result<_>>()?;
        for t in names {
            out.push_str(&format!("[{t}]\n"));
            let mut stmt = self.conn.prepare(&format!("SELECT * FROM \"{t}\" ORDER BY 1, 2"))?;
            let cols = stmt.column_count();
            let mut rows = stmt.query([])?;
            while let Some(r) = rows.next()? {
                let cells: Vec<String> = (0..cols)
                    .map(|i| match r.get_ref(i) {
                        Ok(v) => format!("{v:?}"),
                        Err(e) => format!("<{e}>"),
                    })
                    .collect();
                out.push_str(&cells.join("|"));
                out.push('\n');
            }
        }
        Ok(out)
    }
}

impl TrainingSink for Store {
    type Error = StoreError;

    fn log_iteration(&mut self, _: u64, new_nodes: &[LoggedNode], batch: &[TrajectoryRecord]) -> Result<()> {
        self.log_batch(new_nodes, batch)
    }
}
