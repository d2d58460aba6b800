//! Run configuration and the `train` command.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use flowscope_core::env::{GridConfig, GridEnv};
use flowscope_core::policy::{train, PolicySnapshot, TrainConfig, TrainSummary};
use flowscope_store::{check_validation_set, enumerated_validation_set, parse_validation_jsonl, RunStatus, Store};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

/// Which environment a run used, with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum EnvSpec {
    Grid(GridConfig),
}

impl EnvSpec {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Grid(_) => "grid",
        }
    }

    pub fn grid(&self) -> Result<GridEnv> {
        match self {
            Self::Grid(cfg) => Ok(GridEnv::new(*cfg)?),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub env: EnvSpec,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn from_store(store: &Store) -> Result<Self> {
        Ok(serde_json::from_value(store.require_run()?.config)?)
    }
}

/// Trains into a fresh database at `db`. The validation set is read from
/// `validation` (JSONL) or, if absent, enumerated from the environment.
/// A failed run is left in the database marked aborted.
pub fn run_training(db: &Path, cfg: &RunConfig, validation: Option<&Path>, overwrite: bool) -> Result<TrainSummary> {
    let env = cfg.env.grid()?;
    cfg.train.validate()?;
    let objects = match validation {
        Some(p) => {
            let objs = parse_validation_jsonl(BufReader::new(File::open(p)?))?;
            check_validation_set(&env, &objs)?;
            objs
        }
        None => enumerated_validation_set(&env)?,
    };
    if overwrite && db.exists() {
        std::fs::remove_file(db)?;
    }
    let mut store = Store::create(db)?;
    store.begin_run(cfg.env.name(), &serde_json::to_value(cfg)?)?;
    store.load_validation_set(&objects)?;

    match train(&env, &cfg.train, &mut store) {
        Ok((net, summary)) => {
            let mut stored = serde_json::to_value(&summary)?;
            // keep the database a pure function of the configuration
            if let Some(m) = stored.as_object_mut() {
                m.remove("wall_time_secs");
            }
            store.finish_run(&serde_json::to_value(PolicySnapshot::from(&net))?, &stored)?;
            Ok(summary)
        }
        Err(e) => {
            store.set_run_status(RunStatus::Aborted)?;
            Err(AppError::Core(e))
        }
    }
}
