use flowscope_core::CoreError;
use thiserror::Error;

pub type Result<T, E = StoreError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("database error: {0}")]
    Sqlite(#[from] rusqlite::Error),

    #[error("corrupt JSON column: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("unsupported schema version {found} (this build reads version {expected})")]
    SchemaVersion { found: i64, expected: i64 },

    #[error("not a flowscope database: {0}")]
    NotADatabase(String),

    #[error("validation set line {line}: {msg}")]
    Ingest { line: usize, msg: String },

    #[error("{0}")]
    Domain(String),

    #[error("the database has no run; train first")]
    NoRun,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
