//! Forward/backward policy, trajectory sampling, trajectory-balance training,
//! the exact terminal-distribution oracle and the importance-sampling estimator.

mod estimator;
mod loss;
mod net;
mod oracle;
mod sampling;
mod train;

use serde::{Deserialize, Serialize};

use crate::env::{Environment, Step};
use crate::error::{CoreError, Result};
use crate::record::{EdgeRecord, Sample, TrajectoryRecord};

pub use estimator::{estimate_log_ptx, EstimatorConfig};
pub use loss::{tb_loss, tb_loss_value, TbLoss};
pub use net::{masked_softmax, Activations, NetShape, PolicyNet};
pub use oracle::{exact_terminal_distribution, PolicyTable};
pub use sampling::{sample_trajectory, trajectory_rng};
pub use train::{train, Adam, LoggedNode, TrainConfig, TrainSummary, TrainingSink};

/// Network shape for an environment with hidden width `hidden`.
pub fn shape_for<E: Environment>(env: &E, hidden: usize) -> NetShape {
    NetShape {
        input: env.policy_input_dim(),
        hidden,
        forward_out: env.forward_head_size(),
        backward_out: env.backward_head_size(),
    }
}

/// Both policies at one state, plus the activations that produced them.
#[derive(Debug, Clone)]
pub struct StateEval<E: Environment> {
    pub forward: Vec<(E::Action, f64)>,
    /// `(parent, action from parent, probability)`
    pub backward: Vec<(E::State, E::Action, f64)>,
    pub activations: Activations,
}

impl<E: Environment> StateEval<E> {
    pub fn p_forward(&self, a: E::Action) -> Option<f64> {
        self.forward.iter().find(|(b, _)| *b == a).map(|(_, p)| *p)
    }

    pub fn p_backward(&self, a: E::Action) -> Option<f64> {
        self.backward.iter().find(|(_, b, _)| *b == a).map(|(_, _, p)| *p)
    }
}

pub fn evaluate<E: Environment>(net: &PolicyNet, env: &E, s: &E::State) -> Result<StateEval<E>> {
    let actions = env.valid_forward_actions(s)?;
    let parents = env.parents(s)?;
    let activations = net.forward(&env.policy_input(s));
    let f_idx: Vec<usize> = actions.iter().map(|a| env.forward_index(*a)).collect();
    let b_idx: Vec<usize> = parents.iter().map(|(_, a)| env.backward_index(*a)).collect();
    let pf = masked_softmax(&activations.forward_logits, &f_idx);
    let pb = masked_softmax(&activations.backward_logits, &b_idx);
    Ok(StateEval {
        forward: actions.into_iter().zip(pf).collect(),
        backward: parents.into_iter().zip(pb).map(|((p, a), q)| (p, a, q)).collect(),
        activations,
    })
}

/// Distribution over valid forward actions at `s`.
pub fn forward_policy<E: Environment>(net: &PolicyNet, env: &E, s: &E::State) -> Result<Vec<(E::Action, f64)>> {
    Ok(evaluate(net, env, s)?.forward)
}

/// Distribution over the parents of `s`; empty at the source state.
pub fn backward_policy<E: Environment>(
    net: &PolicyNet,
    env: &E,
    s: &E::State,
) -> Result<Vec<(E::State, E::Action, f64)>> {
    Ok(evaluate(net, env, s)?.backward)
}

#[derive(Debug, Clone)]
pub struct TrajStep<E: Environment> {
    pub state: E::State,
    pub action: E::Action,
    pub p_forward: f64,
    /// Probability of the reverse step under the backward policy; 1 for stop.
    pub p_backward: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory<E: Environment> {
    pub steps: Vec<TrajStep<E>>,
    pub terminal: E::State,
    pub iteration: u64,
    pub trajectory_id: u64,
}

impl<E: Environment> PartialEq for TrajStep<E> {
    fn eq(&self, o: &Self) -> bool {
        self.state == o.state && self.action == o.action && self.p_forward == o.p_forward && self.p_backward == o.p_backward
    }
}

impl<E: Environment> PartialEq for Trajectory<E> {
    fn eq(&self, o: &Self) -> bool {
        self.steps == o.steps
            && self.terminal == o.terminal
            && self.iteration == o.iteration
            && self.trajectory_id == o.trajectory_id
    }
}

impl<E: Environment> Trajectory<E> {
    /// Checks the structural invariants against `env`.
    pub fn validate(&self, env: &E) -> Result<()> {
        let bad = |m: String| Err(CoreError::Policy(format!("trajectory {}: {m}", self.trajectory_id)));
        let Some(first) = self.steps.first() else { return bad("no steps".into()) };
        if first.state != env.source() {
            return bad("does not start at the source".into());
        }
        for (i, st) in self.steps.iter().enumerate() {
            if !(st.p_forward > 0.0 && st.p_forward <= 1.0 && st.p_backward > 0.0 && st.p_backward <= 1.0) {
                return bad(format!("step {i} probability out of (0,1]"));
            }
            let expected = match self.steps.get(i + 1) {
                Some(next) => Step::Next(next.state.clone()),
                None => Step::Terminal(self.terminal.clone()),
            };
            if env.apply_action(&st.state, st.action)? != expected {
                return bad(format!("step {i} is not a valid transition"));
            }
            if env.is_stop(st.action) && st.p_backward != 1.0 {
                return bad("stop step must have p_backward = 1".into());
            }
        }
        Ok(())
    }

    pub fn to_record(&self, env: &E, reward: f64, loss: f64) -> TrajectoryRecord {
        let key = |s: &E::State| env.state_key(s);
        let edges = self
            .steps
            .iter()
            .enumerate()
            .map(|(i, st)| {
                let dst = self.steps.get(i + 1).map(|n| &n.state).unwrap_or(&self.terminal);
                EdgeRecord {
                    trajectory_id: self.trajectory_id,
                    step_index: i as u32,
                    iteration: self.iteration,
                    src_key: key(&st.state),
                    dst_key: key(dst),
                    action: env.action_label(st.action).to_string(),
                    p_forward: st.p_forward,
                    p_backward: st.p_backward,
                    terminal: env.is_stop(st.action),
                }
            })
            .collect();
        TrajectoryRecord {
            sample: Sample {
                trajectory_id: self.trajectory_id,
                terminal_key: key(&self.terminal),
                reward,
                loss,
                iteration: self.iteration,
                log_ptx: None,
            },
            edges,
        }
    }

    /// Rebuilds a typed trajectory from its edge rows (ordered by step index).
    pub fn from_edges(env: &E, edges: &[EdgeRecord]) -> Result<Self> {
        let last = edges.last().ok_or_else(|| CoreError::Domain("no edges".into()))?;
        let steps = edges
            .iter()
            .map(|e| {
                Ok(TrajStep {
                    state: env.parse_key(&e.src_key)?,
                    action: env.parse_action(&e.action)?,
                    p_forward: e.p_forward,
                    p_backward: e.p_backward,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            steps,
            terminal: env.parse_key(&last.dst_key)?,
            iteration: last.iteration,
            trajectory_id: last.trajectory_id,
        })
    }
}

/// Serialized form of a trained policy, persisted with the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySnapshot {
    pub shape: NetShape,
    pub params: Vec<f64>,
}

impl From<&PolicyNet> for PolicySnapshot {
    fn from(net: &PolicyNet) -> Self {
        Self { shape: net.shape(), params: net.params().to_vec() }
    }
}

impl TryFrom<PolicySnapshot> for PolicyNet {
    type Error = CoreError;

    fn try_from(s: PolicySnapshot) -> Result<Self> {
        PolicyNet::from_params(s.shape, s.params)
            .ok_or_else(|| CoreError::Domain("policy snapshot does not match its shape".into()))
    }
}
