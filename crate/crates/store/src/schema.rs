use rusqlite::{Connection, OptionalExtension};

use crate::error::{Result, StoreError};

pub const SCHEMA_VERSION: i64 = 1;

const DDL: &str = "
CREATE TABLE meta (
    key   TEXT PRIMARY KEY,
    value TEXT NOT NULL
);
CREATE TABLE runs (
    id           INTEGER PRIMARY KEY,
    env          TEXT NOT NULL,
    config_json  TEXT NOT NULL,
    status       TEXT NOT NULL,
    policy_json  TEXT,
    summary_json TEXT
);
CREATE TABLE nodes (
    state_key     TEXT PRIMARY KEY,
    features_json TEXT NOT NULL
) WITHOUT ROWID;
CREATE TABLE samples (
    trajectory_id INTEGER PRIMARY KEY,
    terminal_key  TEXT NOT NULL REFERENCES nodes(state_key),
    reward        REAL NOT NULL,
    loss          REAL NOT NULL,
    iteration     INTEGER NOT NULL,
    log_ptx       REAL
);
CREATE INDEX samples_by_iteration ON samples(iteration, trajectory_id);
CREATE INDEX samples_by_terminal ON samples(terminal_key);
CREATE TABLE edges (
    trajectory_id INTEGER NOT NULL REFERENCES samples(trajectory_id),
    step_index    INTEGER NOT NULL,
    iteration     INTEGER NOT NULL,
    src_key       TEXT NOT NULL REFERENCES nodes(state_key),
    dst_key       TEXT NOT NULL REFERENCES nodes(state_key),
    action        TEXT NOT NULL,
    p_forward     REAL NOT NULL,
    p_backward    REAL NOT NULL,
    terminal      INTEGER NOT NULL,
    PRIMARY KEY (trajectory_id, step_index)
) WITHOUT ROWID;
CREATE INDEX edges_by_iteration ON edges(iteration);
CREATE TABLE validation (
    id            INTEGER PRIMARY KEY,
    state_key     TEXT NOT NULL,
    reward        REAL NOT NULL,
    features_json TEXT NOT NULL,
    log_ptx       REAL
);
CREATE TABLE dag_info (
    id       INTEGER PRIMARY KEY CHECK (id = 1),
    root     TEXT NOT NULL,
    range_lo INTEGER NOT NULL,
    range_hi INTEGER NOT NULL
);
CREATE TABLE dag_nodes (
    state_key  TEXT PRIMARY KEY,
    stats_json TEXT NOT NULL
) WITHOUT ROWID;
CREATE TABLE dag_edges (
    src_key              TEXT NOT NULL,
    dst_key              TEXT NOT NULL,
    contracted_path_json TEXT NOT NULL,
    traversals_json      TEXT NOT NULL,
    PRIMARY KEY (src_key, dst_key)
) WITHOUT ROWID;
";

pub(crate) fn create(conn: &Connection) -> Result<()> {
    conn.execute_batch(DDL)?;
    conn.execute("INSERT INTO meta (key, value) VALUES ('schema_version', ?1)", [SCHEMA_VERSION.to_string()])?;
    Ok(())
}

pub(crate) fn check(conn: &Connection) -> Result<()> {
    let has_meta: bool = conn
        .query_row("SELECT 1 FROM sqlite_master WHERE type = 'table' AND name = 'meta'", [], |_| Ok(true))
        .optional()?
        .unwrap_or(false);
    if !has_meta {
        return Err(StoreError::NotADatabase("missing meta table".into()));
    }
    let v: Option<String> =
        conn.query_row("SELECT value FROM meta WHERE key = 'schema_version'", [], |r| r.get(0)).optional()?;
    let found = v
        .as_deref()
        .and_then(|s| s.parse::<i64>().ok())
        .ok_or_else(|| StoreError::NotADatabase("missing schema_version".into()))?;
    if found != SCHEMA_VERSION {
        return Err(StoreError::SchemaVersion { found, expected: SCHEMA_VERSION });
    }
    Ok(())
}
