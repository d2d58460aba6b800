use std::collections::HashSet;
use std::convert::Infallible;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{sample_trajectory, shape_for, tb_loss, trajectory_rng, PolicyNet};
use crate::env::Environment;
use crate::error::{domain, CoreError, Result};
use crate::record::TrajectoryRecord;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub log_z_learning_rate: f64,
    pub exploration_epsilon: f64,
    pub seed: u64,
    pub hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            batch_size: 16,
            learning_rate: 1e-3,
            log_z_learning_rate: 1e-1,
            exploration_epsilon: 0.05,
            seed: 0,
            hidden: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.hidden == 0 {
            return domain("batch size and hidden width must be positive");
        }
        if !(self.learning_rate > 0.0 && self.log_z_learning_rate > 0.0) {
            return domain("learning rates must be positive");
        }
        if !(0.0..1.0).contains(&self.exploration_epsilon) {
            return domain("exploration epsilon must lie in [0, 1)");
        }
        Ok(())
    }
}

/// A state seen for the first time during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedNode {
    pub key: String,
    pub features: Vec<f64>,
}

/// Receives every iteration's trajectories as they are produced.
pub trait TrainingSink {
    type Error: std::error::Error + Send + Sync + 'static;

    fn log_iteration(
        &mut self,
        iteration: u64,
        new_nodes: &[LoggedNode],
        batch: &[TrajectoryRecord],
    ) -> std::result::Result<(), Self::Error>;
}

impl TrainingSink for Vec<TrajectoryRecord> {
    type Error = Infallible;

    fn log_iteration(&mut self, _: u64, _: &[LoggedNode], batch: &[TrajectoryRecord]) -> std::result::Result<(), Infallible> {
        self.extend_from_slice(batch);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub iterations: u64,
    pub samples: u64,
    pub final_mean_loss: Option<f64>,
    pub log_z: f64,
    pub distinct_terminal_states: usize,
    pub wall_time_secs: f64,
}

/// Adam with a separate learning rate for one designated parameter (`log_z`).
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    special_lr: f64,
    special: usize,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64, special: usize, special_lr: f64) -> Self {
        Self { lr, special_lr, special, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (i, (p, g)) in params.iter_mut().zip(grad).enumerate() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let lr = if i == self.special { self.special_lr } else { self.lr };
            *p -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

/// Trains a fresh policy with trajectory balance, logging every trajectory to `sink`.
///
/// Each iteration samples `batch_size` trajectories (in parallel, one RNG stream
/// per trajectory id), computes each trajectory's own loss and gradient under the
/// current network, logs the batch, then takes one Adam step on the mean gradient.
/// Results depend only on the config, never on thread scheduling.
pub fn train<E, S>(env: &E, cfg: &TrainConfig, sink: &mut S) -> Result<(PolicyNet, TrainSummary)>
where
    E: Environment,
    S: TrainingSink,
{
    cfg.validate()?;
    let started = Instant::now();
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    init_rng.set_stream(u64::MAX);
    let mut net = PolicyNet::new(shape_for(env, cfg.hidden), &mut init_rng);
    let mut adam = Adam::new(net.params().len(), cfg.learning_rate, net.log_z_index(), cfg.log_z_learning_rate);

    let mut seen_nodes: HashSet<String> = HashSet::new();
    let mut terminals: HashSet<String> = HashSet::new();
    let mut final_mean_loss = None;
    let batch = cfg.batch_size as u64;

    for iteration in 0..cfg.iterations {
        let results = (0..batch)
            .into_par_iter()
            .map(|i| {
                let id = iteration * batch + i;
                let traj = sample_trajectory(&net, env, cfg.exploration_epsilon, &mut trajectory_rng(cfg.seed, id), id, iteration)?;
                let reward = env.reward(&traj.terminal)?;
                let tb = tb_loss(&net, env, &traj, reward)?;
                Ok((traj, reward, tb))
            })
            .collect::<Result<Vec<_>>>()?;

        let mut grad = vec![0.0; net.params().len()];
        let mut records = Vec::with_capacity(results.len());
        let mut new_nodes = Vec::new();
        let mut loss_sum = 0.0;
        for (traj, reward, tb) in &results {
            for (g, d) in grad.iter_mut().zip(&tb.grad) {
                *g += d / batch as f64;
            }
            loss_sum += tb.loss;
            for st in traj.steps.iter().map(|s| &s.state).chain(std::iter::once(&traj.terminal)) {
                let key = env.state_key(st);
                if seen_nodes.insert(key.clone()) {
                    new_nodes.push(LoggedNode { key, features: env.features(st) });
                }
            }
            let rec = traj.to_record(env, *reward, tb.loss);
            terminals.insert(rec.sample.terminal_key.clone());
            records.push(rec);
        }
        sink.log_iteration(iteration, &new_nodes, &records).map_err(|e| CoreError::Sink(Box::new(e)))?;
        adam.step(net.params_mut(), &grad);
        if net.params().iter().any(|p| !p.is_finite()) {
            return Err(CoreError::Policy(format!("non-finite parameters after iteration {iteration}")));
        }
        final_mean_loss = Some(loss_sum / batch as f64);
    }

    let summary = TrainSummary {
        iterations: cfg.iterations,
        samples: cfg.iterations * batch,
        final_mean_loss,
        log_z: net.log_z(),
        distinct_terminal_states: terminals.len(),
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    Ok((net, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{GridConfig, GridEnv};
    use crate::policy::exact_terminal_distribution;

    #[test]
    fn zero_iterations_logs_nothing() {
        let env = GridEnv::new(GridConfig::with_height(4)).unwrap();
        let mut log = Vec::new();
        let cfg = TrainConfig { iterations: 0, seed: 3, ..Default::default() };
        let (net, summary) = train(&env, &cfg, &mut log).unwrap();
        assert!(log.is_empty());
        assert_eq!(summary.samples, 0);
        assert_eq!(summary.final_mean_loss, None);
        let mut init_rng = ChaCha8Rng::seed_from_u64(3);
        init_rng.set_stream(u64::MAX);
        assert_eq!(net, PolicyNet::new(shape_for(&env, 64), &mut init_rng));
    }

    #[test]
    fn training_is_deterministic() {
        let env = GridEnv::new(GridConfig::with_height(4)).unwrap();
        let cfg = TrainConfig { iterations: 20, batch_size: 8, seed: 7, hidden: 16, ..Default::default() };
        let (mut a_log, mut b_log) = (Vec::new(), Vec::new());
        let (a, _) = train(&env, &cfg, &mut a_log).unwrap();
        let (b, _) = train(&env, &cfg, &mut b_log).unwrap();
        assert_eq!(a, b);
        assert_eq!(a_log, b_log);
        assert_eq!(a_log.len(), 160);
        let ids: HashSet<_> = a_log.iter().map(|r| r.sample.trajectory_id).collect();
        assert_eq!(ids.len(), 160);
    }

    #[test]
    fn sink_failure_aborts() {
        #[derive(Debug, thiserror::Error)]
        #[error("disk full")]
        struct Full;
        struct Failing;
        impl TrainingSink for Failing {
            type Error = Full;
            fn log_iteration(&mut self, it: u64, _: &[LoggedNode], _: &[TrajectoryRecord]) -> std::result::Result<(), Full> {
                if it == 2 { Err(Full) } else { Ok(()) }
            }
        }
        let env = GridEnv::new(GridConfig::with_height(3)).unwrap();
        let cfg = TrainConfig { iterations: 5, batch_size: 2, hidden: 4, ..Default::default() };
        assert!(matches!(train(&env, &cfg, &mut Failing), Err(CoreError::Sink(_))));
    }

    #[test]
    fn small_grid_learns_toward_reward() {
        let env = GridEnv::new(GridConfig::with_height(3)).unwrap();
        let cfg = TrainConfig { iterations: 400, batch_size: 16, seed: 1, hidden: 32, ..Default::default() };
        let untrained = {
            let mut r = ChaCha8Rng::seed_from_u64(1);
            r.set_stream(u64::MAX);
            PolicyNet::new(shape_for(&env, 32), &mut r)
        };
        let (net, _) = train(&env, &cfg, &mut Vec::new()).unwrap();
        let l1 = |n: &PolicyNet| {
            let p = exact_terminal_distribution(n, &env).unwrap();
            let z: f64 = env.all_states().map(|s| env.reward(&s).unwrap()).sum();
            env.all_states().map(|s| (p[&env.state_key(&s)] - env.reward(&s).unwrap() / z).abs()).sum::<f64>()
        };
        assert!(l1(&net) < l1(&untrained));
    }
}
