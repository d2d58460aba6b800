use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{evaluate, PolicyNet, TrajStep, Trajectory};
use crate::env::{Environment, Step};
use crate::error::{domain, CoreError, Result};

/// Independent deterministic sub-stream for one trajectory of a seeded run.
pub fn trajectory_rng(seed: u64, trajectory_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trajectory_id);
    rng
}

/// Samples one trajectory from the source state.
///
/// Actions are drawn from `(1 - epsilon) * P_F + epsilon * uniform`; the logged
/// probabilities are always those of the unmixed policy.
pub fn sample_trajectory<E: Environment, R: Rng + ?Sized>(
    net: &PolicyNet,
    env: &E,
    epsilon: f64,
    rng: &mut R,
    trajectory_id: u64,
    iteration: u64,
) -> Result<Trajectory<E>> {
    if !(0.0..1.0).contains(&epsilon) {
        return domain(format!("exploration epsilon {epsilon} outside [0, 1)"));
    }
    let mut steps = Vec::new();
    let mut state = env.source();
    let mut eval = evaluate(net, env, &state)?;
    loop {
        if steps.len() >= env.max_trajectory_len() {
            return Err(CoreError::Policy(format!(
                "trajectory {trajectory_id} exceeded {} steps",
                env.max_trajectory_len()
            )));
        }
        let n = eval.forward.len() as f64;
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut chosen = eval.forward.len() - 1;
        for (i, (_, p)) in eval.forward.iter().enumerate() {
            acc += (1.0 - epsilon) * p + epsilon / n;
            if u < acc {
                chosen = i;
                break;
            }
        }
        let (action, p_forward) = eval.forward[chosen];
        match env.apply_action(&state, action)? {
            Step::Terminal(x) => {
                steps.push(TrajStep { state, action, p_forward, p_backward: 1.0 });
                return Ok(Trajectory { steps, terminal: x, iteration, trajectory_id });
            }
            Step::Next(next) => {
                let next_eval = evaluate(net, env, &next)?;
                let p_backward = next_eval
                    .p_backward(action)
                    .ok_or_else(|| CoreError::Policy("child does not list its parent".into()))?;
                steps.push(TrajStep { state, action, p_forward, p_backward });
                state = next;
                eval = next_eval;
            }
        }
    }
}
