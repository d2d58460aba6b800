//! Environment-agnostic rows: what training logs and what every view reads back.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Inclusive iteration range `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct IterRange {
    pub lo: u64,
    pub hi: u64,
}

impl IterRange {
    pub fn new(lo: u64, hi: u64) -> Result<Self> {
        if lo > hi {
            return domain(format!("inverted iteration range [{lo}, {hi}]"));
        }
        Ok(Self { lo, hi })
    }

    pub const fn all() -> Self {
        Self { lo: 0, hi: i64::MAX as u64 }
    }

    pub fn contains(&self, iteration: u64) -> bool {
        self.lo <= iteration && iteration <= self.hi
    }
}

/// One logged transition. Stop steps are self-edges with `terminal = true`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub trajectory_id: u64,
    pub step_index: u32,
    pub iteration: u64,
    pub src_key: String,
    pub dst_key: String,
    pub action: String,
    pub p_forward: f64,
    pub p_backward: f64,
    pub terminal: bool,
}

/// One terminal object produced during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub trajectory_id: u64,
    pub terminal_key: String,
    pub reward: f64,
    pub loss: f64,
    pub iteration: u64,
    pub log_ptx: Option<f64>,
}

/// A full logged trajectory: its sample row plus one edge per step (stop included).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub sample: Sample,
    pub edges: Vec<EdgeRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationObject {
    pub state_key: String,
    pub reward: f64,
    pub features: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_ptx: Option<f64>,
}
