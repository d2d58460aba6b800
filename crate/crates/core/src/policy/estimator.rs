use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PolicyTable;
use crate::env::Environment;
use crate::error::{domain, CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// Backward trajectories drawn per object.
    pub k: usize,
    pub seed: u64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self { k: 1000, seed: 0 }
    }
}

// FNV-1a, so each object gets a stable RNG stream independent of query order.
fn key_stream(key: &str) -> u64 {
    key.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Importance-sampling estimate of `log P_T(x)`.
///
/// Draws `k` backward trajectories from `x` to the source under `P_B` and
/// averages the weights `P_F(tau) / P_B(tau)` (stop probability at `x` included)
/// with a max-shifted log-sum-exp.
pub fn estimate_log_ptx<E: Environment>(table: &PolicyTable<'_, E>, x: &E::State, cfg: &EstimatorConfig) -> Result<f64> {
    if cfg.k < 1 {
        return domain("estimator needs at least one backward trajectory");
    }
    let env = table.env();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(key_stream(&env.state_key(x)));

    let at_x = table.get(x)?;
    let stop = at_x
        .forward
        .iter()
        .find(|(a, _)| env.is_stop(*a))
        .map(|(_, p)| *p)
        .ok_or_else(|| CoreError::Domain(format!("{} is not terminal", env.state_key(x))))?;

    let source = env.source();
    let mut log_weights = Vec::with_capacity(cfg.k);
    for _ in 0..cfg.k {
        let mut lw = stop.ln();
        let mut s = x.clone();
        let mut eval = at_x.clone();
        while s != source {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut pick = eval.backward.len() - 1;
            for (i, (_, _, p)) in eval.backward.iter().enumerate() {
                acc += p;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            let (parent, action, pb) = eval.backward[pick].clone();
            let parent_eval = table.get(&parent)?;
            let pf = parent_eval
                .p_forward(action)
                .ok_or_else(|| CoreError::Policy("parent cannot reach its child".into()))?;
            lw += pf.ln() - pb.ln();
            s = parent;
            eval = parent_eval;
        }
        log_weights.push(lw);
    }
    Ok(log_mean_exp(&log_weights))
}

pub(crate) fn log_mean_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + (xs.iter().map(|x| (x - max).exp()).sum::<f64>() / xs.len() as f64).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{GridConfig, GridEnv, GridState};
    use crate::policy::{exact_terminal_distribution, shape_for, trajectory_rng, PolicyNet};

    fn random_net(env: &GridEnv, seed: u64) -> PolicyNet {
        let mut rng = trajectory_rng(seed, 0);
        let mut net = PolicyNet::new(shape_for(env, 8), &mut rng);
        for p in net.params_mut() {
            *p += rng.gen_range(-0.5..0.5);
        }
        net
    }

    #[test]
    fn source_is_exact() {
        let env = GridEnv::new(GridConfig::with_height(5)).unwrap();
        let net = random_net(&env, 1);
        let table = PolicyTable::new(&net, &env);
        let exact = exact_terminal_distribution(&net, &env).unwrap()["0,0"].ln();
        for k in [1, 7, 100] {
            let est = estimate_log_ptx(&table, &GridState::new(0, 0), &EstimatorConfig { k, seed: k as u64 }).unwrap();
            assert!((est - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn single_draw_is_finite() {
        let env = GridEnv::new(GridConfig::with_height(5)).unwrap();
        let net = random_net(&env, 2);
        let table = PolicyTable::new(&net, &env);
        let est = estimate_log_ptx(&table, &GridState::new(3, 4), &EstimatorConfig { k: 1, seed: 0 }).unwrap();
        assert!(est.is_finite());
        assert!(estimate_log_ptx(&table, &GridState::new(3, 4), &EstimatorConfig { k: 0, seed: 0 }).is_err());
    }

    #[test]
    fn error_shrinks_with_more_draws() {
        let env = GridEnv::new(GridConfig::with_height(5)).unwrap();
        let net = random_net(&env, 3);
        let table = PolicyTable::new(&net, &env);
        let exact = exact_terminal_distribution(&net, &env).unwrap();
        let mean_err = |k: usize| {
            env.all_states()
                .map(|s| {
                    let e = estimate_log_ptx(&table, &s, &EstimatorConfig { k, seed: 5 }).unwrap();
                    (e - exact[&env.state_key(&s)].ln()).abs()
                })
                .sum::<f64>()
                / 25.0
        };
        let (coarse, fine) = (mean_err(100), mean_err(10_000));
        assert!(fine < coarse, "{fine} !< {coarse}");
        assert!(fine < 0.05);
    }

    #[test]
    fn log_mean_exp_is_stable() {
        assert!((log_mean_exp(&[-1000.0, -1000.0]) + 1000.0).abs() < 1e-12);
        assert!((log_mean_exp(&[0.0, (3.0f64).ln()]) - 2.0f64.ln()).abs() < 1e-12);
    }
}
