//! Post-training pass: the truncated DAG and `log P_T(x)` for every sampled
//! terminal state and validation object.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use flowscope_core::dag::DagBuilder;
use flowscope_core::env::Environment;
use flowscope_core::policy::{estimate_log_ptx, exact_terminal_distribution, EstimatorConfig, PolicyNet, PolicySnapshot, PolicyTable};
use flowscope_core::IterRange;
use flowscope_store::{RunStatus, Store};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};
use crate::run::RunConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeOptions {
    /// Use importance sampling even when the state space can be enumerated.
    pub estimator: Option<EstimatorConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeReport {
    pub dag_nodes: usize,
    pub dag_edges: usize,
    pub estimated_states: usize,
    pub method: String,
}

/// The range a stored DAG covers: everything logged.
pub fn full_range(store: &Store) -> Result<IterRange> {
    Ok(match store.iteration_bounds()? {
        Some((_, hi)) => IterRange::new(0, hi)?,
        None => IterRange::all(),
    })
}

pub fn load_policy(store: &Store) -> Result<PolicyNet> {
    let run = store.require_run()?;
    let snap = run.policy.ok_or_else(|| AppError::Conflict("the run has no stored policy".into()))?;
    Ok(serde_json::from_value::<PolicySnapshot>(snap)?.try_into()?)
}

pub fn analyze(db: &Path, opts: &AnalyzeOptions) -> Result<AnalyzeReport> {
    let mut store = Store::open(db)?;
    let run = store.require_run()?;
    match run.status {
        RunStatus::Complete => {}
        RunStatus::Running => return Err(AppError::Conflict("training is still in progress; analyze after it completes".into())),
        RunStatus::Aborted => return Err(AppError::Conflict("the run was aborted; there is no final policy to analyze".into())),
    }
    let cfg = RunConfig::from_store(&store)?;
    let env = cfg.env.grid()?;
    let net = load_policy(&store)?;

    let range = full_range(&store)?;
    let mut builder = DagBuilder::new(env.state_key(&env.source()), range);
    store.for_each_edge(range, |e| Ok(builder.push(&e)?))?;
    let dag = builder.finish().truncate_chains();
    store.save_dag(&dag)?;

    let validation = store.query_validation()?;
    let keys: BTreeSet<String> = store
        .distinct_terminal_keys()?
        .into_iter()
        .chain(validation.iter().map(|v| v.state_key.clone()))
        .collect();

    let exact = match opts.estimator {
        Some(_) => None,
        None => env.enumerate_states().ok().flatten().map(|_| exact_terminal_distribution(&net, &env)).transpose()?,
    };
    let (estimates, method): (BTreeMap<String, f64>, _) = match exact {
        Some(dist) => (keys.iter().map(|k| (k.clone(), dist.get(k).copied().unwrap_or(0.0).ln())).collect(), "exact"),
        None => {
            let cfg = opts.estimator.unwrap_or_default();
            let table = PolicyTable::new(&net, &env);
            let est = keys
                .iter()
                .map(|k| Ok((k.clone(), estimate_log_ptx(&table, &env.parse_key(k)?, &cfg)?)))
                .collect::<Result<_>>()?;
            (est, "importance_sampling")
        }
    };
    store.set_sample_log_ptx(&estimates)?;
    let per_row: Vec<f64> = validation.iter().map(|v| estimates[&v.state_key]).collect();
    store.set_validation_log_ptx(&per_row)?;

    Ok(AnalyzeReport {
        dag_nodes: dag.nodes.len(),
        dag_edges: dag.edges.len(),
        estimated_states: estimates.len(),
        method: method.into(),
    })
}
