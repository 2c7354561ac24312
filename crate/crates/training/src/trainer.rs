//! The synchronous training loop, metrics output and checkpointing.

use std::fs::{self, File, OpenOptions};
use std::path::Path;
use std::time::Instant;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use treeqn_autodiff::{rmsprop_step, Checkpoint, GradMode, ParamStore, RmsPropState, Tape};
use treeqn_boxworld::{Rules, VecEnv, OBS_SHAPE};
use treeqn_model::{ModelDims, Network};

use crate::config::TrainConfig;
use crate::losses::{batch_loss, LossConfig};
use crate::rollout::{collect_rollout, epsilon_at, Acting, EpisodeTracker};
use crate::seeding::{derive_rng, ACTION_STREAM, INIT_STREAM};
use crate::target::TargetNetwork;
use crate::TrainError;

const STATE_FORMAT: &str = "treeqn-trainer-v1";
const TARGET_PREFIX: &str = "target.";

pub const METRICS_FILE: &str = "metrics.csv";
pub const NAN_DUMP_FILE: &str = "nan_dump.json";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

pub fn periodic_checkpoint_name(transitions: u64) -> String {
    format!("checkpoint-{transitions:010}.ckpt")
}

/// What one update did.
#[derive(Clone, Debug, PartialEq)]
pub struct UpdateStats {
    pub transitions: u64,
    pub updates: u64,
    pub loss: f64,
    pub q_loss: Option<f64>,
    pub pg_loss: Option<f64>,
    pub value_loss: Option<f64>,
    pub entropy: Option<f64>,
    pub reward_ground: Option<f64>,
    pub state_ground: Option<f64>,
    pub epsilon: Option<f64>,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
    pub target_synced: bool,
}

/// One line of `metrics.csv`. Loss columns are means over the updates since
/// the previous line; empty cells mean "not applicable".
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub transitions: u64,
    pub updates: u64,
    pub mean_return_100ep: Option<f64>,
    pub q_loss: Option<f64>,
    pub pg_loss: Option<f64>,
    pub value_loss: Option<f64>,
    pub entropy: Option<f64>,
    pub reward_ground_loss: Option<f64>,
    pub state_ground_loss: Option<f64>,
    pub epsilon: Option<f64>,
    pub wallclock_s: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
struct Mean {
    sum: f64,
    count: u64,
}

impl Mean {
    fn add(&mut self, x: Option<f64>) {
        if let Some(x) = x {
            self.sum += x;
            self.count += 1;
        }
    }

    fn get(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }
}

/// Accumulates update statistics between metrics rows.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
struct LogWindow {
    q_loss: Mean,
    pg_loss: Mean,
    value_loss: Mean,
    entropy: Mean,
    reward_ground: Mean,
    state_ground: Mean,
}

impl LogWindow {
    fn add(&mut self, s: &UpdateStats) {
        self.q_loss.add(s.q_loss);
        self.pg_loss.add(s.pg_loss);
        self.value_loss.add(s.value_loss);
        self.entropy.add(s.entropy);
        self.reward_ground.add(s.reward_ground);
        self.state_ground.add(s.state_ground);
    }
}

/// Everything besides tensors that a resumed run needs.
#[derive(Serialize, Deserialize)]
struct SavedState {
    format: String,
    config: TrainConfig,
    dims: ModelDims,
    transitions: u64,
    updates: u64,
    envs: VecEnv,
    rng: ChaCha8Rng,
    tracker: EpisodeTracker,
    target_last_sync: Option<u64>,
    window: LogWindow,
}

/// Just the part of the metadata needed to rebuild the network.
#[derive(Deserialize)]
struct SavedModel {
    format: String,
    config: TrainConfig,
    dims: ModelDims,
}

/// Network, weights and run config stored in a checkpoint.
pub fn load_network(ckpt: &Checkpoint) -> Result<(Network, ParamStore, TrainConfig), TrainError> {
    let meta: SavedModel = serde_json::from_str(&ckpt.metadata)?;
    if meta.format != STATE_FORMAT {
        return Err(TrainError::Config(format!(
            "unknown checkpoint format {:?}",
            meta.format
        )));
    }
    let mut rng = derive_rng(meta.config.seed, INIT_STREAM);
    let (net, mut params) = Network::new(
        meta.config.arch,
        &meta.dims,
        meta.config.tree_config(),
        &mut rng,
    );
    ckpt.restore_params(&mut params)?;
    Ok((net, params, meta.config))
}

pub struct RunSummary {
    pub rows: Vec<MetricsRow>,
    pub transitions: u64,
    pub updates: u64,
    /// Mean return of the last 100 training episodes at the end of the run.
    pub mean_return_100ep: Option<f64>,
}

pub struct Trainer {
    cfg: TrainConfig,
    loss_cfg: LossConfig,
    net: Network,
    params: ParamStore,
    target: Option<TargetNetwork>,
    opt: RmsPropState,
    envs: VecEnv,
    rng: ChaCha8Rng,
    tracker: EpisodeTracker,
    transitions: u64,
    updates: u64,
    window: LogWindow,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self, TrainError> {
        Self::with_dims(cfg, ModelDims::boxworld())
    }

    /// Like [`Trainer::new`] with non-default layer sizes. The input shape
    /// must still match the environment observation.
    pub fn with_dims(cfg: TrainConfig, dims: ModelDims) -> Result<Self, TrainError> {
        cfg.validate().map_err(TrainError::Config)?;
        if dims.obs_shape() != OBS_SHAPE {
            return Err(TrainError::Config(format!(
                "model input {:?} does not match observations {:?}",
                dims.obs_shape(),
                OBS_SHAPE
            )));
        }
        let mut init = derive_rng(cfg.seed, INIT_STREAM);
        let (net, params) = Network::new(cfg.arch, &dims, cfg.tree_config(), &mut init);
        let target = (!cfg.arch.is_actor_critic()).then(|| TargetNetwork::new(&params, 0));
        let rules = Rules {
            goals_consumable: cfg.goals_consumable,
        };
        Ok(Trainer {
            loss_cfg: LossConfig::from(&cfg),
            opt: RmsPropState::new(&params),
            envs: VecEnv::new(cfg.n_env, cfg.seed, rules),
            rng: derive_rng(cfg.seed, ACTION_STREAM),
            tracker: EpisodeTracker::new(cfg.n_env),
            transitions: 0,
            updates: 0,
            window: LogWindow::default(),
            net,
            params,
            target,
            cfg,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn target(&self) -> Option<&TargetNetwork> {
        self.target.as_ref()
    }

    pub fn tracker(&self) -> &EpisodeTracker {
        &self.tracker
    }

    pub fn transitions(&self) -> u64 {
        self.transitions
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// ε for the next rollout; `None` for actor-critic runs.
    pub fn epsilon(&self) -> Option<f64> {
        (!self.cfg.arch.is_actor_critic()).then(|| {
            epsilon_at(
                self.transitions,
                self.cfg.eps_start,
                self.cfg.eps_end,
                self.cfg.eps_horizon,
            )
        })
    }

    /// Collect one rollout and take one optimizer step on it.
    pub fn update(&mut self) -> Result<UpdateStats, TrainError> {
        let epsilon = self.epsilon();
        let acting = epsilon.map_or(Acting::Sample, Acting::EpsilonGreedy);
        let batch = collect_rollout(
            &mut self.envs,
            &self.net,
            &self.params,
            self.cfg.n_steps,
            acting,
            &mut self.rng,
            &mut self.tracker,
        )?;

        let mut tape = Tape::new();
        let target = self.target.as_ref().map(|t| &t.params);
        let terms = batch_loss(
            &mut tape,
            &self.net,
            &self.params,
            target,
            &batch,
            &self.loss_cfg,
        );
        let mut stats = UpdateStats {
            transitions: self.transitions,
            updates: self.updates,
            loss: tape.scalar(terms.total),
            q_loss: terms.q_loss,
            pg_loss: terms.pg_loss,
            value_loss: terms.value_loss,
            entropy: terms.entropy,
            reward_ground: terms.reward_ground,
            state_ground: terms.state_ground,
            epsilon,
            grad_norm: f64::NAN,
            target_synced: false,
        };
        if !stats.loss.is_finite() {
            return Err(self.non_finite("loss", &stats));
        }
        tape.backward_into(terms.total, &mut self.params, GradMode::Overwrite);
        stats.grad_norm = if self.cfg.grad_clip > 0.0 {
            self.params.clip_grad_norm(self.cfg.grad_clip)
        } else {
            self.params.grad_norm()
        };
        if !stats.grad_norm.is_finite() {
            return Err(self.non_finite("gradient", &stats));
        }
        rmsprop_step(&mut self.params, &mut self.opt, &self.cfg.rmsprop());
        if !self.params.all_finite() {
            return Err(self.non_finite("parameters", &stats));
        }

        self.transitions += batch.len() as u64;
        self.updates += 1;
        if let Some(t) = &mut self.target {
            stats.target_synced =
                t.maybe_sync(&self.params, self.transitions, self.cfg.target_sync);
        }
        stats.transitions = self.transitions;
        stats.updates = self.updates;
        Ok(stats)
    }

    fn non_finite(&self, what: &str, stats: &UpdateStats) -> TrainError {
        let norms = |store: &ParamStore, grad: bool| -> Vec<(String, String)> {
            store
                .iter()
                .map(|p| {
                    let t = if grad { &p.grad } else { &p.value };
                    (p.name.clone(), format!("{:?}", t.norm()))
                })
                .collect()
        };
        let report = serde_json::json!({
            "non_finite": what,
            "update": self.updates,
            "transitions": self.transitions,
            // Debug formatting keeps NaN and infinities readable.
            "stats": format!("{stats:?}"),
            "param_norms": norms(&self.params, false),
            "grad_norms": norms(&self.params, true),
            "config": self.cfg,
        });
        TrainError::NonFinite {
            what: what.to_string(),
            update: self.updates,
            report: serde_json::to_string_pretty(&report).unwrap_or_default(),
        }
    }

    /// Train until the configured transition budget is spent. With `dir`,
    /// metrics, periodic checkpoints and `final.ckpt` are written there;
    /// metrics are appended when the trainer was resumed mid-run.
    pub fn run(&mut self, dir: Option<&Path>) -> Result<RunSummary, TrainError> {
        self.run_with(dir, |_| {})
    }

    /// [`Trainer::run`], calling `on_row` with each metrics row as it is written.
    pub fn run_with(
        &mut self,
        dir: Option<&Path>,
        mut on_row: impl FnMut(&MetricsRow),
    ) -> Result<RunSummary, TrainError> {
        let mut writer = match dir {
            Some(d) => {
                fs::create_dir_all(d)?;
                Some(open_metrics(&d.join(METRICS_FILE), self.updates > 0)?)
            }
            None => None,
        };
        let start = Instant::now();
        let mut rows = Vec::new();
        while self.transitions < self.cfg.transitions {
            let before = self.transitions;
            let stats = match self.update() {
                Ok(s) => s,
                Err(e) => {
                    if let (Some(d), TrainError::NonFinite { report, .. }) = (dir, &e) {
                        fs::write(d.join(NAN_DUMP_FILE), report)?;
                    }
                    return Err(e);
                }
            };
            self.window.add(&stats);
            let finished = self.transitions >= self.cfg.transitions;
            if self.updates.is_multiple_of(self.cfg.log_every) || finished {
                let wallclock_s = if self.cfg.record_wallclock {
                    start.elapsed().as_secs_f64()
                } else {
                    0.0
                };
                let row = self.metrics_row(stats.epsilon, wallclock_s);
                if let Some(w) = &mut writer {
                    w.serialize(&row)?;
                    w.flush()?;
                }
                on_row(&row);
                rows.push(row);
                self.window = LogWindow::default();
            }
            if let Some(d) = dir {
                let every = self.cfg.checkpoint_every;
                if every > 0 && self.transitions / every > before / every && !finished {
                    self.checkpoint()?
                        .save(d.join(periodic_checkpoint_name(self.transitions)))?;
                }
            }
        }
        if let Some(d) = dir {
            self.checkpoint()?.save(d.join(FINAL_CHECKPOINT))?;
        }
        Ok(RunSummary {
            rows,
            transitions: self.transitions,
            updates: self.updates,
            mean_return_100ep: self.tracker.mean_recent(),
        })
    }

    fn metrics_row(&self, epsilon: Option<f64>, wallclock_s: f64) -> MetricsRow {
        let w = &self.window;
        MetricsRow {
            transitions: self.transitions,
            updates: self.updates,
            mean_return_100ep: self.tracker.mean_recent(),
            q_loss: w.q_loss.get(),
            pg_loss: w.pg_loss.get(),
            value_loss: w.value_loss.get(),
            entropy: w.entropy.get(),
            reward_ground_loss: w.reward_ground.get(),
            state_ground_loss: w.state_ground.get(),
            epsilon,
            wallclock_s,
        }
    }

    /// Full training state: weights, optimizer, target copy, environments,
    /// RNG and counters.
    pub fn checkpoint(&self) -> Result<Checkpoint, TrainError> {
        let mut ckpt = Checkpoint::from_store(&self.params, Some(&self.opt));
        if let Some(t) = &self.target {
            ckpt.push_aux_store(TARGET_PREFIX, &t.params);
        }
        let state = SavedState {
            format: STATE_FORMAT.to_string(),
            config: self.cfg.clone(),
            dims: self.net.dims().clone(),
            transitions: self.transitions,
            updates: self.updates,
            envs: self.envs.clone(),
            rng: self.rng.clone(),
            tracker: self.tracker.clone(),
            target_last_sync: self.target.as_ref().map(|t| t.last_sync),
            window: self.window.clone(),
        };
        ckpt.metadata = serde_json::to_string(&state)?;
        Ok(ckpt)
    }

    /// Resume from [`Trainer::checkpoint`]. `budget` replaces the stored
    /// transition target when given.
    pub fn from_checkpoint(ckpt: &Checkpoint, budget: Option<u64>) -> Result<Self, TrainError> {
        let state: SavedState = serde_json::from_str(&ckpt.metadata)?;
        if state.format != STATE_FORMAT {
            return Err(TrainError::Config(format!(
                "unknown checkpoint format {:?}",
                state.format
            )));
        }
        let mut cfg = state.config;
        if let Some(b) = budget {
            cfg.transitions = b;
        }
        let mut t = Trainer::with_dims(cfg, state.dims)?;
        ckpt.restore_params(&mut t.params)?;
        t.opt = ckpt
            .optimizer
            .clone()
            .ok_or_else(|| TrainError::Config("checkpoint has no optimizer state".into()))?;
        if let Some(target) = &mut t.target {
            ckpt.restore_aux_store(TARGET_PREFIX, &mut target.params)?;
            target.last_sync = state
                .target_last_sync
                .ok_or_else(|| TrainError::Config("checkpoint has no target network".into()))?;
        }
        t.envs = state.envs;
        t.rng = state.rng;
        t.tracker = state.tracker;
        t.transitions = state.transitions;
        t.updates = state.updates;
        t.window = state.window;
        Ok(t)
    }
}

fn open_metrics(path: &Path, append: bool) -> Result<csv::Writer<File>, TrainError> {
    let exists = path.exists();
    let file = if append {
        OpenOptions::new().create(true).append(true).open(path)?
    } else {
        File::create(path)?
    };
    Ok(csv::WriterBuilder::new()
        .has_headers(!(append && exists))
        .from_writer(file))
}
