//! Trajectory balance: `(log Z + sum log P_F - log R - sum log P_B)^2`.

use super::{evaluate, PolicyNet, StateEval, Trajectory};
use crate::env::Environment;
use crate::error::{domain, CoreError, Result};

#[derive(Debug, Clone)]
pub struct TbLoss {
    pub loss: f64,
    /// The balance residual inside the square.
    pub residual: f64,
    /// Gradient of `loss` w.r.t. every network parameter, `log_z` included.
    pub grad: Vec<f64>,
}

struct Evaluated<E: Environment> {
    evals: Vec<StateEval<E>>,
    residual: f64,
}

fn residual<E: Environment>(net: &PolicyNet, env: &E, traj: &Trajectory<E>, reward: f64) -> Result<Evaluated<E>> {
    if !(reward > 0.0) {
        return domain(format!("reward must be positive, got {reward}"));
    }
    let evals = traj
        .steps
        .iter()
        .map(|st| evaluate(net, env, &st.state))
        .collect::<Result<Vec<_>>>()?;
    let missing = || CoreError::Policy(format!("trajectory {} takes an invalid action", traj.trajectory_id));
    let mut sum = net.log_z() - reward.ln();
    for (t, st) in traj.steps.iter().enumerate() {
        sum += evals[t].p_forward(st.action).ok_or_else(missing)?.ln();
        if !env.is_stop(st.action) {
            let child = evals.get(t + 1).ok_or_else(missing)?;
            sum -= child.p_backward(st.action).ok_or_else(missing)?.ln();
        }
    }
    Ok(Evaluated { evals, residual: sum })
}

/// Loss only; used by finite-difference checks.
pub fn tb_loss_value<E: Environment>(net: &PolicyNet, env: &E, traj: &Trajectory<E>, reward: f64) -> Result<f64> {
    let r = residual(net, env, traj, reward)?.residual;
    Ok(r * r)
}

/// Loss and its analytic gradient.
pub fn tb_loss<E: Environment>(net: &PolicyNet, env: &E, traj: &Trajectory<E>, reward: f64) -> Result<TbLoss> {
    let Evaluated { evals, residual } = residual(net, env, traj, reward)?;
    let scale = 2.0 * residual;
    let mut grad = vec![0.0; net.params().len()];
    let n_f = env.forward_head_size();
    let n_b = env.backward_head_size();
    for (t, eval) in evals.iter().enumerate() {
        // d log softmax_a / d logits = onehot(a) - p over the valid slots
        let mut d_f = vec![0.0; n_f];
        let taken = traj.steps[t].action;
        for (a, p) in &eval.forward {
            d_f[env.forward_index(*a)] -= scale * p;
        }
        d_f[env.forward_index(taken)] += scale;

        let mut d_b = vec![0.0; n_b];
        if t > 0 {
            let came_by = traj.steps[t - 1].action;
            for (_, a, p) in &eval.backward {
                d_b[env.backward_index(*a)] += scale * p;
            }
            d_b[env.backward_index(came_by)] -= scale;
        }
        net.backward(&eval.activations, &d_f, &d_b, &mut grad);
    }
    grad[net.log_z_index()] = scale;
    Ok(TbLoss { loss: residual * residual, residual, grad })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Environment, GridAction, GridConfig, GridEnv, GridState};
    use crate::policy::{sample_trajectory, shape_for, trajectory_rng, TrajStep};
    use rand::Rng;

    fn stop_at_source(env: &GridEnv) -> Trajectory<GridEnv> {
        Trajectory {
            steps: vec![TrajStep { state: env.source(), action: GridAction::Stop, p_forward: 1.0 / 3.0, p_backward: 1.0 }],
            terminal: GridState::new(0, 0),
            iteration: 0,
            trajectory_id: 0,
        }
    }

    #[test]
    fn single_step_identities() {
        let env = GridEnv::new(GridConfig::with_height(5)).unwrap();
        let mut net = PolicyNet::new(shape_for(&env, 8), &mut trajectory_rng(1, 1));
        let t = stop_at_source(&env);
        let r = env.reward(&GridState::new(0, 0)).unwrap();

        // balance holds when Z * P_F(stop) = R, i.e. log Z = log R - log(1/3)
        net.set_log_z(r.ln() - (1.0f64 / 3.0).ln());
        assert!(tb_loss(&net, &env, &t, r).unwrap().loss < 1e-24);
        net.set_log_z(r.ln() + (1.0f64 / 3.0).ln());
        let doubled = tb_loss(&net, &env, &t, r).unwrap().loss;
        assert!((doubled - (2.0 * 3.0f64.ln()).powi(2)).abs() < 1e-12);

        net.set_log_z(r.ln());
        let l = tb_loss(&net, &env, &t, r).unwrap();
        let expected = (1.0f64 / 3.0).ln().powi(2);
        assert!((l.loss - expected).abs() < 1e-12);
        assert!((expected - 1.2069).abs() < 1e-4);
        assert_eq!(l.grad[net.log_z_index()], 2.0 * l.residual);
    }

    #[test]
    fn rejects_nonpositive_reward() {
        let env = GridEnv::new(GridConfig::with_height(3)).unwrap();
        let net = PolicyNet::new(shape_for(&env, 4), &mut trajectory_rng(0, 0));
        assert!(tb_loss(&net, &env, &stop_at_source(&env), 0.0).is_err());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let env = GridEnv::new(GridConfig::with_height(5)).unwrap();
        let mut rng = trajectory_rng(11, 0);
        let mut net = PolicyNet::new(shape_for(&env, 6), &mut rng);
        for p in net.params_mut() {
            *p += rng.gen_range(-0.5..0.5);
        }
        let h = 1e-5;
        for id in 0..5 {
            let t = sample_trajectory(&net, &env, 0.2, &mut trajectory_rng(12, id), id, 0).unwrap();
            let r = env.reward(&t.terminal).unwrap();
            let analytic = tb_loss(&net, &env, &t, r).unwrap().grad;
            for i in 0..net.params().len() {
                let mut plus = net.clone();
                plus.params_mut()[i] += h;
                let mut minus = net.clone();
                minus.params_mut()[i] -= h;
                let fd = (tb_loss_value(&plus, &env, &t, r).unwrap() - tb_loss_value(&minus, &env, &t, r).unwrap())
                    / (2.0 * h);
                let err = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-6);
                assert!(err < 1e-4, "param {i}: fd {fd} analytic {}", analytic[i]);
            }
        }
    }
}
