//! Loss construction for one rollout batch.
//!
//! All losses are sums over the batch, not means.

use treeqn_autodiff::{ParamStore, Tape, Tensor, Var};
use treeqn_model::{path_index, Network, TreeOutput};

use crate::config::TrainConfig;
use crate::rollout::RolloutBatch;

/// n-step returns computed backwards from the bootstrap values:
/// `G_t = r_t + γ·(1 − done_t)·G_{t+1}`, `G_n = bootstrap`. An episode end
/// cuts the sum, so a segment never bootstraps across it.
pub fn nstep_returns(
    rewards: &[f64],
    dones: &[bool],
    bootstrap: &[f64],
    n_env: usize,
    gamma: f64,
) -> Vec<f64> {
    assert_eq!(bootstrap.len(), n_env);
    assert_eq!(rewards.len(), dones.len());
    assert_eq!(rewards.len() % n_env, 0);
    let n_steps = rewards.len() / n_env;
    let mut out = vec![0.0; rewards.len()];
    for e in 0..n_env {
        let mut g = bootstrap[e];
        for t in (0..n_steps).rev() {
            let i = t * n_env + e;
            if dones[i] {
                g = 0.0;
            }
            g = rewards[i] + gamma * g;
            out[i] = g;
        }
    }
    out
}

/// `Σ (G − Q(s, a))²` with the returns as constants.
pub fn nstep_q_loss(tape: &mut Tape, q: Var, actions: &[usize], returns: &[f64]) -> Var {
    let qa = tape.gather_last(q, actions);
    let g = tape.constant(Tensor::vector(returns.to_vec()));
    let diff = tape.sub(g, qa);
    let sq = tape.square(diff);
    tape.sum(sq)
}

pub struct A2cTerms {
    /// `pg + critic_coef·value − entropy_coef·entropy`.
    pub loss: Var,
    /// `−Σ log π(a|s)·A` with the advantages held constant.
    pub pg: Var,
    /// `Σ (G − V(s))²`.
    pub value: Var,
    /// Summed policy entropy.
    pub entropy: Var,
}

/// Actor-critic loss. `advantages` defaults to `G − V(s)` evaluated now.
#[allow(clippy::too_many_arguments)]
pub fn a2c_loss(
    tape: &mut Tape,
    logits: Var,
    critic: Var,
    actions: &[usize],
    returns: &[f64],
    advantages: Option<&[f64]>,
    critic_coef: f64,
    entropy_coef: f64,
) -> A2cTerms {
    let logp = tape.log_softmax(logits);
    let logp_a = tape.gather_last(logp, actions);
    let adv: Vec<f64> = match advantages {
        Some(a) => a.to_vec(),
        None => returns
            .iter()
            .zip(tape.value(critic).data())
            .map(|(g, v)| g - v)
            .collect(),
    };
    let adv = tape.constant(Tensor::vector(adv));
    let weighted = tape.mul(logp_a, adv);
    let s = tape.sum(weighted);
    let pg = tape.mul_scalar(s, -1.0);

    let g = tape.constant(Tensor::vector(returns.to_vec()));
    let diff = tape.sub(g, critic);
    let sq = tape.square(diff);
    let value = tape.sum(sq);

    let p = tape.softmax(logits);
    let plogp = tape.mul(p, logp);
    let s = tape.sum(plogp);
    let entropy = tape.mul_scalar(s, -1.0);

    let v = tape.mul_scalar(value, critic_coef);
    let h = tape.mul_scalar(entropy, -entropy_coef);
    let loss = tape.add(pg, v);
    let loss = tape.add(loss, h);
    A2cTerms {
        loss,
        pg,
        value,
        entropy,
    }
}

/// Whether environment `e` stays in one episode from step `t` through step
/// `t + len − 1` (the last of those steps may end it).
fn same_episode(batch: &RolloutBatch, t: usize, e: usize, len: usize) -> bool {
    (0..len.saturating_sub(1)).all(|m| !batch.dones[batch.index(t + m, e)])
}

/// `Σ_{t,e} Σ_{l=1..d̄} (r̂ along a_t…a_{t+l−1} − r_{t+l−1})²` with
/// `d̄ = min(d, n − t)`, further cut where an episode ends inside the path.
/// `None` when no term exists.
pub fn reward_grounding_loss(
    tape: &mut Tape,
    tree: &TreeOutput,
    batch: &RolloutBatch,
) -> Option<Var> {
    let n_a = tree.n_actions;
    let mut total: Option<Var> = None;
    for l in 1..=tree.depth() {
        let (mut rows, mut cols, mut targets) = (Vec::new(), Vec::new(), Vec::new());
        for t in 0..batch.n_steps {
            if l > batch.n_steps - t {
                continue;
            }
            for e in 0..batch.n_env {
                if !same_episode(batch, t, e, l) {
                    continue;
                }
                let path: Vec<usize> = (0..l - 1)
                    .map(|m| batch.actions[batch.index(t + m, e)])
                    .collect();
                rows.push(path_index(batch.index(t, e), &path, n_a));
                let last = batch.index(t + l - 1, e);
                cols.push(batch.actions[last]);
                targets.push(batch.rewards[last]);
            }
        }
        if rows.is_empty() {
            continue;
        }
        let picked = tape.gather_rows(tree.rewards[l - 1], &rows);
        let pred = tape.gather_last(picked, &cols);
        let target = tape.constant(Tensor::vector(targets));
        let diff = tape.sub(pred, target);
        let sq = tape.square(diff);
        let s = tape.sum(sq);
        total = Some(match total {
            Some(acc) => tape.add(acc, s),
            None => s,
        });
    }
    total
}

/// `Σ ‖z along a_t…a_{t+l−1} − z_0(s_{t+l})‖²` for `l = 1..d` with
/// `t + l ≤ n` and no episode end in steps `t … t+l−1`. `z0_all` holds the
/// encodings of `obs_with_bootstrap`. The targets are constants when `block`.
pub fn state_grounding_loss(
    tape: &mut Tape,
    tree: &TreeOutput,
    z0_all: Var,
    batch: &RolloutBatch,
    block: bool,
) -> Option<Var> {
    let n_a = tree.n_actions;
    let target_src = if block { tape.detach(z0_all) } else { z0_all };
    let mut total: Option<Var> = None;
    for l in 1..=tree.depth() {
        let (mut pred_rows, mut target_rows) = (Vec::new(), Vec::new());
        for t in 0..batch.n_steps {
            if t + l > batch.n_steps {
                continue;
            }
            for e in 0..batch.n_env {
                if !same_episode(batch, t, e, l + 1) {
                    continue;
                }
                let path: Vec<usize> = (0..l)
                    .map(|m| batch.actions[batch.index(t + m, e)])
                    .collect();
                pred_rows.push(path_index(batch.index(t, e), &path, n_a));
                target_rows.push((t + l) * batch.n_env + e);
            }
        }
        if pred_rows.is_empty() {
            continue;
        }
        let pred = tape.gather_rows(tree.z[l], &pred_rows);
        let target = tape.gather_rows(target_src, &target_rows);
        let diff = tape.sub(pred, target);
        let sq = tape.square(diff);
        let s = tape.sum(sq);
        total = Some(match total {
            Some(acc) => tape.add(acc, s),
            None => s,
        });
    }
    total
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub gamma: f64,
    pub critic_coef: f64,
    pub entropy_coef: f64,
    pub eta_r: f64,
    pub eta_s: f64,
    pub block_state_target: bool,
}

impl From<&TrainConfig> for LossConfig {
    fn from(c: &TrainConfig) -> Self {
        LossConfig {
            gamma: c.gamma,
            critic_coef: c.critic_coef,
            entropy_coef: c.entropy_coef,
            eta_r: c.eta_r,
            eta_s: c.eta_s,
            block_state_target: c.block_state_target,
        }
    }
}

/// Scalar loss plus the values of its parts.
pub struct LossTerms {
    pub total: Var,
    pub q_loss: Option<f64>,
    pub pg_loss: Option<f64>,
    pub value_loss: Option<f64>,
    /// Mean policy entropy per state.
    pub entropy: Option<f64>,
    pub reward_ground: Option<f64>,
    pub state_ground: Option<f64>,
}

/// Bootstrap values for `s_{t+n}`: `max_a Q(s, a; θ⁻)` for Q-learning
/// architectures, the critic under the current parameters for actor-critic.
pub fn bootstrap_values(
    net: &Network,
    store: &ParamStore,
    target: Option<&ParamStore>,
    obs: &Tensor,
) -> Vec<f64> {
    let mut tape = Tape::no_grad();
    if net.arch().is_actor_critic() {
        let f = net.forward_obs(&mut tape, store, obs);
        tape.value(f.critic.expect("actor-critic network without critic"))
            .data()
            .to_vec()
    } else {
        let f = net.forward_obs(&mut tape, target.unwrap_or(store), obs);
        let m = tape.max_last(f.scores);
        tape.value(m).data().to_vec()
    }
}

/// Full training loss for one batch, recorded on `tape`.
pub fn batch_loss(
    tape: &mut Tape,
    net: &Network,
    store: &ParamStore,
    target: Option<&ParamStore>,
    batch: &RolloutBatch,
    cfg: &LossConfig,
) -> LossTerms {
    let boot = bootstrap_values(net, store, target, &batch.bootstrap_obs);
    let returns = nstep_returns(&batch.rewards, &batch.dones, &boot, batch.n_env, cfg.gamma);
    batch_loss_with_returns(tape, net, store, batch, &returns, None, cfg)
}

/// [`batch_loss`] with the regression targets supplied. Fixing `advantages`
/// as well makes the loss a pure function of the parameters, which is what
/// a finite-difference check needs.
pub fn batch_loss_with_returns(
    tape: &mut Tape,
    net: &Network,
    store: &ParamStore,
    batch: &RolloutBatch,
    returns: &[f64],
    advantages: Option<&[f64]>,
    cfg: &LossConfig,
) -> LossTerms {
    let tree_arch = net.arch().tree_depth().is_some();
    let with_state = tree_arch && cfg.eta_s > 0.0;
    let n = batch.len();
    let f = if with_state {
        net.forward_obs(tape, store, &batch.obs_with_bootstrap())
    } else {
        net.forward_obs(tape, store, &batch.obs)
    };
    let rows: Vec<usize> = (0..n).collect();
    let scores = if with_state {
        tape.gather_rows(f.scores, &rows)
    } else {
        f.scores
    };

    let (mut q_loss, mut pg_loss, mut value_loss, mut entropy) = (None, None, None, None);
    let (mut reward_ground, mut state_ground) = (None, None);
    let mut total = if net.arch().is_actor_critic() {
        let critic = f.critic.expect("actor-critic network without critic");
        let critic = if with_state {
            tape.gather_rows(critic, &rows)
        } else {
            critic
        };
        let a = a2c_loss(
            tape,
            scores,
            critic,
            &batch.actions,
            returns,
            advantages,
            cfg.critic_coef,
            cfg.entropy_coef,
        );
        pg_loss = Some(tape.scalar(a.pg));
        value_loss = Some(tape.scalar(a.value));
        entropy = Some(tape.scalar(a.entropy) / n as f64);
        a.loss
    } else {
        let l = nstep_q_loss(tape, scores, &batch.actions, returns);
        q_loss = Some(tape.scalar(l));
        l
    };

    if let Some(tree) = &f.tree {
        if cfg.eta_r > 0.0 {
            if let Some(r) = reward_grounding_loss(tape, tree, batch) {
                reward_ground = Some(tape.scalar(r));
                let w = tape.mul_scalar(r, cfg.eta_r);
                total = tape.add(total, w);
            }
        }
        if with_state {
            if let Some(s) = state_grounding_loss(tape, tree, f.z0, batch, cfg.block_state_target) {
                state_ground = Some(tape.scalar(s));
                let w = tape.mul_scalar(s, cfg.eta_s);
                total = tape.add(total, w);
            }
        }
    }
    LossTerms {
        total,
        q_loss,
        pg_loss,
        value_loss,
        entropy,
        reward_ground,
        state_ground,
    }
}
