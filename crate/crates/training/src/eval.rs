//! Policy evaluation, the random-policy baseline and held-out reward error.

use rand::Rng;
use serde::{Deserialize, Serialize};
use treeqn_autodiff::{ParamStore, Tape, Tensor};
use treeqn_boxworld::{Action, BoxWorld, EnvError, Rules, VecEnv, OBS_SHAPE};
use treeqn_model::Network;

use crate::rollout::{select_actions, Acting};
use crate::seeding::{
    derive_rng, EVAL_ENV_STREAM, HELDOUT_ACTION_STREAM, HELDOUT_ENV_STREAM_BASE,
    RANDOM_POLICY_ACTION_STREAM, RANDOM_POLICY_ENV_STREAM,
};
use crate::TrainError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub episodes: usize,
    pub mean: f64,
    /// Sample standard deviation (zero for a single episode).
    pub std: f64,
    pub returns: Vec<f64>,
}

impl EvalStats {
    pub fn from_returns(returns: Vec<f64>) -> Self {
        let n = returns.len();
        let mean = returns.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        EvalStats {
            episodes: n,
            mean,
            std: var.sqrt(),
            returns,
        }
    }
}

fn run_episodes<F>(env: &mut BoxWorld, episodes: usize, mut choose: F) -> Result<Vec<f64>, EnvError>
where
    F: FnMut(&Tensor) -> usize,
{
    let mut returns = Vec::with_capacity(episodes);
    let mut obs = env.observe();
    for _ in 0..episodes {
        let mut total = 0.0;
        loop {
            let a = choose(&obs);
            let r = env.step(Action::ALL[a])?;
            total += r.reward;
            if r.done {
                obs = env.reset();
                break;
            }
            obs = r.observation;
        }
        returns.push(total);
    }
    Ok(returns)
}

/// Greedy (argmax-score) play for `episodes` fresh levels. For actor-critic
/// networks the argmax of the logits is the most probable action.
pub fn evaluate(
    net: &Network,
    store: &ParamStore,
    episodes: usize,
    seed: u64,
    rules: Rules,
) -> Result<EvalStats, TrainError> {
    if episodes == 0 {
        return Err(TrainError::Config(
            "evaluation needs at least one episode".into(),
        ));
    }
    let mut env = BoxWorld::from_rng(derive_rng(seed, EVAL_ENV_STREAM), rules);
    // Greedy selection never draws from it.
    let mut rng = derive_rng(seed, EVAL_ENV_STREAM);
    let returns = run_episodes(&mut env, episodes, |obs| {
        let mut shape = vec![1];
        shape.extend_from_slice(obs.shape());
        let batch = Tensor::new(shape, obs.data().to_vec());
        let scores = net.scores(store, &batch);
        select_actions(&scores, Acting::Greedy, &mut rng)[0]
    })?;
    Ok(EvalStats::from_returns(returns))
}

/// Episode returns of the uniform random policy.
pub fn random_policy_returns(episodes: usize, seed: u64, rules: Rules) -> Vec<f64> {
    let mut env = BoxWorld::from_rng(derive_rng(seed, RANDOM_POLICY_ENV_STREAM), rules);
    let mut rng = derive_rng(seed, RANDOM_POLICY_ACTION_STREAM);
    run_episodes(&mut env, episodes, |_| rng.gen_range(0..Action::COUNT))
        .expect("stepping a live environment")
}

/// Central 99% interval `(0.5th, 99.5th percentile)` of per-episode returns.
pub fn return_band(returns: &[f64]) -> (f64, f64) {
    assert!(!returns.is_empty());
    let mut sorted = returns.to_vec();
    sorted.sort_by(f64::total_cmp);
    let at = |q: f64| sorted[((sorted.len() - 1) as f64 * q).round() as usize];
    (at(0.005), at(0.995))
}

/// Transitions from random play on environments no training run uses:
/// `(observations [N, 5, 8, 8], actions, rewards)`.
pub fn heldout_transitions(
    samples: usize,
    seed: u64,
    rules: Rules,
) -> (Tensor, Vec<usize>, Vec<f64>) {
    const N_ENV: usize = 16;
    let envs = (0..N_ENV)
        .map(|i| BoxWorld::from_rng(derive_rng(seed, HELDOUT_ENV_STREAM_BASE + i as u64), rules))
        .collect();
    let mut envs = VecEnv::from_envs(envs);
    let mut rng = derive_rng(seed, HELDOUT_ACTION_STREAM);
    let mut obs = Vec::new();
    let (mut actions, mut rewards) = (Vec::new(), Vec::new());
    while actions.len() < samples {
        let current = envs.observations();
        let acts: Vec<usize> = (0..N_ENV)
            .map(|_| rng.gen_range(0..Action::COUNT))
            .collect();
        let results = envs
            .step(&acts.iter().map(|&a| Action::ALL[a]).collect::<Vec<_>>())
            .expect("live envs");
        obs.extend_from_slice(current.data());
        actions.extend(acts);
        rewards.extend(results.iter().map(|r| r.reward));
    }
    let per: usize = OBS_SHAPE.iter().product();
    obs.truncate(samples * per);
    actions.truncate(samples);
    rewards.truncate(samples);
    let mut shape = vec![samples];
    shape.extend_from_slice(&OBS_SHAPE);
    (Tensor::new(shape, obs), actions, rewards)
}

/// Mean squared error of the one-step reward prediction on held-out
/// transitions; `None` for networks without a reward head.
pub fn heldout_reward_mse(
    net: &Network,
    store: &ParamStore,
    data: &(Tensor, Vec<usize>, Vec<f64>),
) -> Option<f64> {
    net.arch().tree_depth()?;
    let (obs, actions, rewards) = data;
    let n = actions.len();
    let per: usize = obs.numel() / n;
    const CHUNK: usize = 256;
    let mut sse = 0.0;
    for start in (0..n).step_by(CHUNK) {
        let end = (start + CHUNK).min(n);
        let mut shape = obs.shape().to_vec();
        shape[0] = end - start;
        let chunk = Tensor::new(shape, obs.data()[start * per..end * per].to_vec());
        let mut tape = Tape::no_grad();
        let f = net.forward_obs(&mut tape, store, &chunk);
        let r = tape.value(f.tree.as_ref()?.rewards[0]);
        let width = r.last_dim();
        for (j, i) in (start..end).enumerate() {
            let pred = r.data()[j * width + actions[i]];
            sse += (pred - rewards[i]).powi(2);
        }
    }
    Some(sse / n as f64)
}
