//! Synchronous experience collection.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};
use treeqn_autodiff::{argmax_first, ParamStore, Tensor};
use treeqn_boxworld::{Action, EnvError, VecEnv, OBS_SHAPE};
use treeqn_model::Network;

/// Linear ε decay from `start` to `end` over `horizon` transitions, then flat.
pub fn epsilon_at(transitions: u64, start: f64, end: f64, horizon: u64) -> f64 {
    if horizon == 0 || transitions >= horizon {
        return end;
    }
    start + (end - start) * (transitions as f64 / horizon as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Acting {
    /// Uniform random action with probability ε, otherwise greedy.
    EpsilonGreedy(f64),
    /// Sample from the softmax of the scores.
    Sample,
    /// Argmax of the scores, ties to the lowest index.
    Greedy,
}

/// Choose one action per score row, consuming `rng` in row order.
pub fn select_actions<R: Rng + ?Sized>(scores: &Tensor, acting: Acting, rng: &mut R) -> Vec<usize> {
    let n_actions = scores.last_dim();
    scores
        .data()
        .chunks(n_actions)
        .map(|row| match acting {
            Acting::Greedy => argmax_first(row),
            Acting::EpsilonGreedy(eps) => {
                let explore = rng.gen::<f64>() < eps;
                let random = rng.gen_range(0..n_actions);
                if explore {
                    random
                } else {
                    argmax_first(row)
                }
            }
            Acting::Sample => sample_softmax(row, rng.gen::<f64>()),
        })
        .collect()
}

fn sample_softmax(logits: &[f64], u: f64) -> usize {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|x| (x - m).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut acc = 0.0;
    for (i, wi) in w.iter().enumerate() {
        acc += wi / total;
        if u < acc {
            return i;
        }
    }
    logits.len() - 1
}

/// `n_steps × n_env` transitions. Flat arrays are step-major: entry
/// `t·n_env + e` is step `t` of environment `e`.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutBatch {
    pub n_env: usize,
    pub n_steps: usize,
    /// `[n_steps·n_env, C, H, W]`.
    pub obs: Tensor,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    /// Episode ended with this transition; the next observation of that
    /// environment starts a new episode.
    pub dones: Vec<bool>,
    /// `s_{t+n}` for every environment, `[n_env, C, H, W]`.
    pub bootstrap_obs: Tensor,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.n_env * self.n_steps
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, t: usize, e: usize) -> usize {
        t * self.n_env + e
    }

    /// Observations followed by the bootstrap observations, so row
    /// `t·n_env + e` is `s_t` of environment `e` for `t = 0..=n`.
    pub fn obs_with_bootstrap(&self) -> Tensor {
        let mut data = self.obs.data().to_vec();
        data.extend_from_slice(self.bootstrap_obs.data());
        let mut shape = self.obs.shape().to_vec();
        shape[0] += self.n_env;
        Tensor::new(shape, data)
    }
}

/// Returns of finished episodes, keeping the most recent 100.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTracker {
    running: Vec<f64>,
    recent: VecDeque<f64>,
    pub completed: u64,
}

pub const RETURN_WINDOW: usize = 100;

impl EpisodeTracker {
    pub fn new(n_env: usize) -> Self {
        EpisodeTracker {
            running: vec![0.0; n_env],
            recent: VecDeque::with_capacity(RETURN_WINDOW),
            completed: 0,
        }
    }

    pub fn record(&mut self, env: usize, reward: f64, done: bool) {
        self.running[env] += reward;
        if done {
            if self.recent.len() == RETURN_WINDOW {
                self.recent.pop_front();
            }
            self.recent.push_back(self.running[env]);
            self.running[env] = 0.0;
            self.completed += 1;
        }
    }

    /// Mean of the last 100 finished episodes, if any finished.
    pub fn mean_recent(&self) -> Option<f64> {
        (!self.recent.is_empty())
            .then(|| self.recent.iter().sum::<f64>() / self.recent.len() as f64)
    }
}

/// Roll every environment forward `n_steps` steps under the network's
/// scores. Episodes continue across calls; finished environments are reset
/// by the vector wrapper.
pub fn collect_rollout<R: Rng + ?Sized>(
    envs: &mut VecEnv,
    net: &Network,
    store: &ParamStore,
    n_steps: usize,
    acting: Acting,
    rng: &mut R,
    tracker: &mut EpisodeTracker,
) -> Result<RolloutBatch, EnvError> {
    let n_env = envs.len();
    let obs_numel: usize = OBS_SHAPE.iter().product();
    let mut obs = Vec::with_capacity(n_steps * n_env * obs_numel);
    let mut actions = Vec::with_capacity(n_steps * n_env);
    let mut rewards = Vec::with_capacity(n_steps * n_env);
    let mut dones = Vec::with_capacity(n_steps * n_env);
    let mut current = envs.observations();
    for _ in 0..n_steps {
        let scores = net.scores(store, &current);
        let chosen = select_actions(&scores, acting, rng);
        let acts: Vec<Action> = chosen.iter().map(|&a| Action::ALL[a]).collect();
        let results = envs.step(&acts)?;
        obs.extend_from_slice(current.data());
        for (e, r) in results.iter().enumerate() {
            tracker.record(e, r.reward, r.done);
            rewards.push(r.reward);
            dones.push(r.done);
        }
        actions.extend(chosen);
        current = envs.observations();
    }
    let mut shape = vec![n_steps * n_env];
    shape.extend_from_slice(&OBS_SHAPE);
    Ok(RolloutBatch {
        n_env,
        n_steps,
        obs: Tensor::new(shape, obs),
        actions,
        rewards,
        dones,
        bootstrap_obs: current,
    })
}
