use std::io::BufRead;

use flowscope_core::env::Environment;
use flowscope_core::{CoreError, ValidationObject};
use serde::Deserialize;

use crate::error::{Result, StoreError};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Line {
    state_key: String,
    reward: f64,
    features: Vec<f64>,
}

/// Reads the JSONL validation format: one `{state_key, reward, features}` object
/// per line. Blank lines are skipped; errors name the 1-based line.
pub fn parse_validation_jsonl(reader: impl BufRead) -> Result<Vec<ValidationObject>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Line = serde_json::from_str(&line).map_err(|e| StoreError::Ingest { line: n, msg: e.to_string() })?;
        if !(rec.reward > 0.0 && rec.reward.is_finite()) {
            return Err(StoreError::Ingest { line: n, msg: format!("reward must be positive, got {}", rec.reward) });
        }
        if rec.features.iter().any(|f| !f.is_finite()) {
            return Err(StoreError::Ingest { line: n, msg: "features must be finite".into() });
        }
        out.push(ValidationObject { state_key: rec.state_key, reward: rec.reward, features: rec.features, log_ptx: None });
    }
    Ok(out)
}

/// Every state of an enumerable environment with its reward and features.
pub fn enumerated_validation_set<E: Environment>(env: &E) -> Result<Vec<ValidationObject>> {
    let states = env
        .enumerate_states()?
        .ok_or_else(|| CoreError::Capability(format!("{} states cannot be enumerated", env.name())))?;
    states
        .iter()
        .map(|s| {
            Ok(ValidationObject { state_key: env.state_key(s), reward: env.reward(s)?, features: env.features(s), log_ptx: None })
        })
        .collect()
}

/// Checks that every object names a valid state and carries the environment's reward.
pub fn check_validation_set<E: Environment>(env: &E, objects: &[ValidationObject]) -> Result<()> {
    for (i, o) in objects.iter().enumerate() {
        let bad = |msg: String| StoreError::Ingest { line: i + 1, msg };
        let s = env.parse_key(&o.state_key).map_err(|e| bad(e.to_string()))?;
        let r = env.reward(&s)?;
        if (r - o.reward).abs() > 1e-12 * r.abs().max(1.0) {
            return Err(bad(format!("reward {} differs from the environment's {r} for {}", o.reward, o.state_key)));
        }
        if o.features.len() != env.feature_dim() {
            return Err(bad(format!("expected {} features, got {}", env.feature_dim(), o.features.len())));
        }
    }
    Ok(())
}
