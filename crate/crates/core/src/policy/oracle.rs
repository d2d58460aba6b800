use std::collections::{BTreeMap, HashMap};
use std::sync::RwLock;

use super::{evaluate, PolicyNet, StateEval};
use crate::env::{Environment, Step};
use crate::error::{CoreError, Result};

/// Memoized policy evaluations of a frozen network.
pub struct PolicyTable<'a, E: Environment> {
    net: &'a PolicyNet,
    env: &'a E,
    cache: RwLock<HashMap<E::State, std::sync::Arc<StateEval<E>>>>,
}

impl<'a, E: Environment> PolicyTable<'a, E> {
    pub fn new(net: &'a PolicyNet, env: &'a E) -> Self {
        Self { net, env, cache: RwLock::new(HashMap::new()) }
    }

    pub fn env(&self) -> &E {
        self.env
    }

    pub fn get(&self, s: &E::State) -> Result<std::sync::Arc<StateEval<E>>> {
        if let Some(e) = self.cache.read().expect("policy cache poisoned").get(s) {
            return Ok(e.clone());
        }
        let e = std::sync::Arc::new(evaluate(self.net, self.env, s)?);
        self.cache.write().expect("policy cache poisoned").insert(s.clone(), e.clone());
        Ok(e)
    }
}

/// Exact terminal distribution `P_T` of the forward policy by dynamic programming
/// over a topological order of the state space. Keys are state keys.
pub fn exact_terminal_distribution<E: Environment>(net: &PolicyNet, env: &E) -> Result<BTreeMap<String, f64>> {
    let order = env
        .enumerate_states()?
        .ok_or_else(|| CoreError::Capability(format!("{} states cannot be enumerated", env.name())))?;
    let mut reach: HashMap<E::State, f64> = HashMap::with_capacity(order.len());
    reach.insert(env.source(), 1.0);
    let mut out = BTreeMap::new();
    for s in &order {
        let p = reach.get(s).copied().unwrap_or(0.0);
        let eval = evaluate(net, env, s)?;
        for (a, q) in &eval.forward {
            match env.apply_action(s, *a)? {
                Step::Next(child) => *reach.entry(child).or_insert(0.0) += p * q,
                Step::Terminal(_) => {
                    out.insert(env.state_key(s), p * q);
                }
            }
        }
        out.entry(env.state_key(s)).or_insert(0.0);
    }
    Ok(out)
}
