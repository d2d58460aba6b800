//! The `flowscope` command-line tool and HTTP service: training into a SQLite
//! store, the post-hoc analyze pass, the JSON API, and static reports.

pub mod analyze;
pub mod api;
mod error;
pub mod json;
pub mod report;
pub mod run;

pub use error::{AppError, Result};
