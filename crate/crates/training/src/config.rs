use serde::{Deserialize, Serialize};
use treeqn_autodiff::RmsPropConfig;
use treeqn_model::{Arch, Backup, NormPlacement, TreeConfig};

/// Every knob of a training run. Field names double as config-file keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub arch: Arch,
    pub seed: u64,
    /// Environment transitions to train for.
    pub transitions: u64,

    /// Rollout length `n`.
    #[serde(default = "d::n_steps")]
    pub n_steps: usize,
    #[serde(default = "d::n_env")]
    pub n_env: usize,
    #[serde(default = "d::gamma")]
    pub gamma: f64,
    #[serde(default = "d::lr")]
    pub lr: f64,
    #[serde(default = "d::rms_alpha")]
    pub rms_alpha: f64,
    #[serde(default = "d::rms_eps")]
    pub rms_eps: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    #[serde(default = "d::grad_clip")]
    pub grad_clip: f64,

    /// Transitions between target-network copies.
    #[serde(default = "d::target_sync")]
    pub target_sync: u64,
    #[serde(default = "d::eps_start")]
    pub eps_start: f64,
    #[serde(default = "d::eps_end")]
    pub eps_end: f64,
    /// Transitions over which ε decays linearly.
    #[serde(default = "d::eps_horizon")]
    pub eps_horizon: u64,

    #[serde(default = "d::critic_coef")]
    pub critic_coef: f64,
    #[serde(default = "d::entropy_coef")]
    pub entropy_coef: f64,

    /// Reward-grounding weight `η_r`.
    #[serde(default = "d::eta_r")]
    pub eta_r: f64,
    /// Latent-state grounding weight `η_s`.
    #[serde(default)]
    pub eta_s: f64,
    /// Treat the encoded true next state as a constant in the state loss.
    #[serde(default = "d::yes")]
    pub block_state_target: bool,

    #[serde(default = "d::lambda")]
    pub lambda: f64,
    #[serde(default = "d::backup")]
    pub backup: Backup,
    #[serde(default = "d::temperature")]
    pub temperature: f64,
    #[serde(default = "d::norm")]
    pub norm: NormPlacement,

    #[serde(default)]
    pub goals_consumable: bool,

    /// Updates between metrics rows.
    #[serde(default = "d::log_every")]
    pub log_every: u64,
    /// Transitions between periodic checkpoints; 0 keeps only the final one.
    #[serde(default = "d::checkpoint_every")]
    pub checkpoint_every: u64,
    /// Fill the wallclock column; off by default so reruns are byte-identical.
    #[serde(default)]
    pub record_wallclock: bool,
}

mod d {
    use super::*;

    pub fn n_steps() -> usize {
        5
    }
    pub fn n_env() -> usize {
        16
    }
    pub fn gamma() -> f64 {
        0.99
    }
    pub fn lr() -> f64 {
        1e-4
    }
    pub fn rms_alpha() -> f64 {
        0.99
    }
    pub fn rms_eps() -> f64 {
        1e-5
    }
    pub fn grad_clip() -> f64 {
        5.0
    }
    pub fn target_sync() -> u64 {
        40_000
    }
    pub fn eps_start() -> f64 {
        1.0
    }
    pub fn eps_end() -> f64 {
        0.05
    }
    pub fn eps_horizon() -> u64 {
        400_000
    }
    pub fn critic_coef() -> f64 {
        0.5
    }
    pub fn entropy_coef() -> f64 {
        0.01
    }
    pub fn eta_r() -> f64 {
        1.0
    }
    pub fn yes() -> bool {
        true
    }
    pub fn lambda() -> f64 {
        0.8
    }
    pub fn backup() -> Backup {
        Backup::Softmax
    }
    pub fn temperature() -> f64 {
        1.0
    }
    pub fn norm() -> NormPlacement {
        NormPlacement::AtCreation
    }
    pub fn log_every() -> u64 {
        10
    }
    pub fn checkpoint_every() -> u64 {
        100_000
    }
}

impl TrainConfig {
    /// Defaults for everything except the three required keys.
    pub fn new(arch: Arch, seed: u64, transitions: u64) -> Self {
        TrainConfig {
            arch,
            seed,
            transitions,
            n_steps: d::n_steps(),
            n_env: d::n_env(),
            gamma: d::gamma(),
            lr: d::lr(),
            rms_alpha: d::rms_alpha(),
            rms_eps: d::rms_eps(),
            grad_clip: d::grad_clip(),
            target_sync: d::target_sync(),
            eps_start: d::eps_start(),
            eps_end: d::eps_end(),
            eps_horizon: d::eps_horizon(),
            critic_coef: d::critic_coef(),
            entropy_coef: d::entropy_coef(),
            eta_r: d::eta_r(),
            eta_s: 0.0,
            block_state_target: true,
            lambda: d::lambda(),
            backup: d::backup(),
            temperature: d::temperature(),
            norm: d::norm(),
            goals_consumable: false,
            log_every: d::log_every(),
            checkpoint_every: d::checkpoint_every(),
            record_wallclock: false,
        }
    }

    pub fn batch_size(&self) -> usize {
        self.n_steps * self.n_env
    }

    pub fn tree_config(&self) -> TreeConfig {
        TreeConfig {
            depth: self.arch.tree_depth().unwrap_or(1),
            lambda: self.lambda,
            gamma: self.gamma,
            backup: self.backup,
            temperature: self.temperature,
            norm: self.norm,
        }
    }

    pub fn rmsprop(&self) -> RmsPropConfig {
        RmsPropConfig {
            lr: self.lr,
            alpha: self.rms_alpha,
            eps: self.rms_eps,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.n_steps == 0 || self.n_env == 0 {
            return Err("n_steps and n_env must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.rms_alpha) || !(self.rms_eps > 0.0) {
            return Err(
                "optimizer settings must satisfy lr > 0, 0 <= rms_alpha < 1, rms_eps > 0".into(),
            );
        }
        if self.grad_clip < 0.0 {
            return Err("grad_clip must be non-negative".into());
        }
        if self.target_sync == 0 {
            return Err("target_sync must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.eps_start) || !(0.0..=1.0).contains(&self.eps_end) {
            return Err("eps_start and eps_end must lie in [0, 1]".into());
        }
        if self.eta_r < 0.0 || self.eta_s < 0.0 {
            return Err("grounding weights must be non-negative".into());
        }
        if self.log_every == 0 {
            return Err("log_every must be positive".into());
        }
        self.tree_config().validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_batch_is_80() {
        let c = TrainConfig::new(Arch::Dqn, 0, 1000);
        assert_eq!(c.batch_size(), 80);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn json_round_trip_and_unknown_keys() {
        let c = TrainConfig::new(Arch::TreeQn { depth: 2 }, 3, 400_000);
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<TrainConfig>(&s).unwrap(), c);
        assert!(serde_json::from_str::<TrainConfig>(
            r#"{"arch":"dqn","seed":1,"transitions":5,"bogus":1}"#
        )
        .is_err());
    }
}
