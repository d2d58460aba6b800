//! Core of the GFlowNet diagnostics workbench: the environment hooks, the
//! trajectory-balance trainer, the trajectory DAG engine, and the analytics
//! behind the ranking, projection and transition views.

pub mod analytics;
pub mod dag;
pub mod env;
pub mod error;
pub mod policy;
pub mod record;

pub use error::{CoreError, Result};
pub use record::{EdgeRecord, IterRange, Sample, TrajectoryRecord, ValidationObject};
