//! Stateful environment wrappers: a single box-pushing episode stream and a
//! synchronous vector of independent environments.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use treeqn_autodiff::Tensor;

use crate::board::{Action, BoardState, GRID_SIZE, MAX_STEPS};
use crate::rules::{self, Rules};
use crate::EnvError;

pub const OBS_CHANNELS: usize = 5;
pub const OBS_SHAPE: [usize; 3] = [OBS_CHANNELS, GRID_SIZE, GRID_SIZE];

/// First stream index used for per-environment generators.
pub const ENV_STREAM_BASE: u64 = 1 << 20;

/// Counter-based generator split: stream `stream` of the ChaCha generator
/// keyed by `master`. Distinct streams never overlap.
pub fn derive_rng(master: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng
}

/// Encode a state as `[agent, goals, boxes, obstacles, time]` planes.
/// The time plane holds the fraction of the step budget still remaining.
pub fn observe(state: &BoardState) -> Tensor {
    let plane = GRID_SIZE * GRID_SIZE;
    let mut data = vec![0.0; OBS_CHANNELS * plane];
    let at = |channel: usize, r: usize, c: usize| channel * plane + r * GRID_SIZE + c;
    if let Some(a) = state.agent {
        data[at(0, a.row, a.col)] = 1.0;
    }
    for g in &state.goals {
        data[at(1, g.row, g.col)] = 1.0;
    }
    for b in &state.boxes {
        data[at(2, b.row, b.col)] = 1.0;
    }
    for o in &state.obstacles {
        data[at(3, o.row, o.col)] = 1.0;
    }
    let remaining = MAX_STEPS.saturating_sub(state.steps_elapsed) as f64 / MAX_STEPS as f64;
    data[4 * plane..].fill(remaining);
    Tensor::new(OBS_SHAPE.to_vec(), data)
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub observation: Tensor,
    pub reward: f64,
    pub done: bool,
}

/// One environment that owns its level generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxWorld {
    state: BoardState,
    rng: ChaCha8Rng,
    rules: Rules,
}

impl BoxWorld {
    pub fn new(seed: u64) -> Self {
        BoxWorld::from_rng(ChaCha8Rng::seed_from_u64(seed), Rules::default())
    }

    /// The first level is generated immediately from `rng`.
    pub fn from_rng(mut rng: ChaCha8Rng, rules: Rules) -> Self {
        let state = BoardState::generate(&mut rng);
        BoxWorld { state, rng, rules }
    }

    /// Start from a given board; later levels come from `rng`.
    pub fn from_state(state: BoardState, rng: ChaCha8Rng, rules: Rules) -> Self {
        BoxWorld { state, rng, rules }
    }

    pub fn state(&self) -> &BoardState {
        &self.state
    }

    pub fn rules(&self) -> &Rules {
        &self.rules
    }

    pub fn observe(&self) -> Tensor {
        observe(&self.state)
    }

    /// Generate a fresh level and return its observation.
    pub fn reset(&mut self) -> Tensor {
        self.state = BoardState::generate(&mut self.rng);
        self.observe()
    }

    pub fn step(&mut self, action: Action) -> Result<StepResult, EnvError> {
        let (next, reward) = rules::step(&self.state, action, &self.rules)?;
        self.state = next;
        Ok(StepResult {
            observation: self.observe(),
            reward,
            done: self.state.done,
        })
    }
}

/// Synchronous batch of independent environments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VecEnv {
    envs: Vec<BoxWorld>,
}

impl VecEnv {
    /// `n_env` environments; environment `i` draws from stream
    /// `ENV_STREAM_BASE + i` of `seed`.
    pub fn new(n_env: usize, seed: u64, rules: Rules) -> Self {
        let envs = (0..n_env)
            .map(|i| BoxWorld::from_rng(derive_rng(seed, ENV_STREAM_BASE + i as u64), rules))
            .collect();
        VecEnv { envs }
    }

    pub fn from_envs(envs: Vec<BoxWorld>) -> Self {
        VecEnv { envs }
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn envs(&self) -> &[BoxWorld] {
        &self.envs
    }

    /// Current observations stacked as `[n_env, 5, 8, 8]`.
    pub fn observations(&self) -> Tensor {
        let mut data = Vec::with_capacity(self.envs.len() * OBS_SHAPE.iter().product::<usize>());
        for e in &self.envs {
            data.extend_from_slice(e.observe().data());
        }
        let mut shape = vec![self.envs.len()];
        shape.extend_from_slice(&OBS_SHAPE);
        Tensor::new(shape, data)
    }

    /// Step every environment with its action, in environment order.
    ///
    /// An environment whose episode ends reports `done = true` and is reset at
    /// once, so its `observation` already shows the fresh level the next
    /// action will be applied to.
    pub fn step(&mut self, actions: &[Action]) -> Result<Vec<StepResult>, EnvError> {
        if actions.len() != self.envs.len() {
            return Err(EnvError::ActionCount {
                expected: self.envs.len(),
                got: actions.len(),
            });
        }
        let mut out = Vec::with_capacity(actions.len());
        for (env, &a) in self.envs.iter_mut().zip(actions) {
            let mut r = env.step(a)?;
            if r.done {
                r.observation = env.reset();
            }
            out.push(r);
        }
        Ok(out)
    }
}

/// `vec_reset`: a fresh vector of environments for a master seed.
pub fn vec_reset(n_env: usize, seed: u64) -> VecEnv {
    VecEnv::new(n_env, seed, Rules::default())
}

/// `vec_step`: advance all environments by one action each.
pub fn vec_step(env: &mut VecEnv, actions: &[Action]) -> Result<Vec<StepResult>, EnvError> {
    env.step(actions)
}
