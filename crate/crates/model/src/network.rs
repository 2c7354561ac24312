use rand::Rng;
use treeqn_autodiff::{ParamStore, Tape, Tensor, Var};

use crate::arch::Arch;
use crate::config::{ModelDims, NormPlacement, TreeConfig};
use crate::layers::{Bound, Encoder, Linear, RewardHead, ScalarHead, Transition};
use crate::tree::{self, TreeOutput};

#[derive(Clone, Debug)]
enum Head {
    Q(Linear),
    /// One residual layer applied twice, then the Q layer.
    Deep {
        residual: Linear,
        out: Linear,
    },
    ActorCritic {
        policy: Linear,
        critic: ScalarHead,
    },
    Tree {
        transition: Transition,
        reward: RewardHead,
        value: ScalarHead,
        critic: Option<ScalarHead>,
    },
}

/// Network structure; parameter values live in a separate [`ParamStore`] so
/// the same structure serves online and target parameters.
#[derive(Clone, Debug)]
pub struct Network {
    arch: Arch,
    dims: ModelDims,
    tree: TreeConfig,
    encoder: Encoder,
    head: Head,
}

/// Outputs of one batched forward pass.
pub struct Forward {
    /// Encoder embedding `[B, k]` (normalized unless normalization happens
    /// only before transitions).
    pub z0: Var,
    /// Q-values, or policy logits for actor-critic architectures, `[B, A]`.
    pub scores: Var,
    /// Critic value `[B]` for actor-critic architectures.
    pub critic: Option<Var>,
    pub tree: Option<TreeOutput>,
}

impl Network {
    /// Build the network and a freshly initialized parameter store.
    ///
    /// `dims` are the base sizes; the wide baseline doubles the embedding and
    /// tree architectures take their depth from `arch`.
    pub fn new<R: Rng + ?Sized>(
        arch: Arch,
        dims: &ModelDims,
        tree: TreeConfig,
        rng: &mut R,
    ) -> (Network, ParamStore) {
        let mut dims = dims.clone();
        if arch == Arch::DqnWide {
            dims.embed *= 2;
        }
        let mut tree = tree;
        if let Some(depth) = arch.tree_depth() {
            tree.depth = depth;
        }
        let k = dims.embed;
        let a = dims.actions;
        let mut store = ParamStore::new();
        let encoder = Encoder::new(&mut store, &dims, rng);
        let head = match arch {
            Arch::Dqn | Arch::DqnWide => Head::Q(Linear::new(&mut store, "q", a, k, rng)),
            Arch::DqnDeep => Head::Deep {
                residual: Linear::new(&mut store, "deep", k, k, rng),
                out: Linear::new(&mut store, "q", a, k, rng),
            },
            Arch::A2c => Head::ActorCritic {
                policy: Linear::new(&mut store, "policy", a, k, rng),
                critic: ScalarHead::new(&mut store, "critic", k, rng),
            },
            Arch::TreeQn { .. } | Arch::ATreeC { .. } => Head::Tree {
                transition: Transition::new(&mut store, k, a, rng),
                reward: RewardHead::new(&mut store, k, dims.reward_hidden, a, rng),
                value: ScalarHead::new(&mut store, "value", k, rng),
                critic: arch
                    .is_actor_critic()
                    .then(|| ScalarHead::new(&mut store, "critic", k, rng)),
            },
        };
        let net = Network {
            arch,
            dims,
            tree,
            encoder,
            head,
        };
        (net, store)
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    /// Effective sizes (after any widening).
    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn tree_config(&self) -> &TreeConfig {
        &self.tree
    }

    pub fn n_actions(&self) -> usize {
        self.dims.actions
    }

    fn normalizes_embedding(&self) -> bool {
        !(matches!(self.head, Head::Tree { .. })
            && self.tree.norm == NormPlacement::BeforeTransition)
    }

    /// Forward pass on observations `[B, C, H, W]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, obs: Var) -> Forward {
        let p = Bound::new(tape, store);
        let z = self.encoder.apply(tape, &p, obs);
        let z0 = if self.normalizes_embedding() {
            tape.l2_normalize(z)
        } else {
            z
        };
        match &self.head {
            Head::Q(lin) => Forward {
                z0,
                scores: lin.apply(tape, &p, z0),
                critic: None,
                tree: None,
            },
            Head::Deep { residual, out } => {
                let mut h = z0;
                for _ in 0..2 {
                    let r = residual.apply(tape, &p, h);
                    let r = tape.tanh(r);
                    h = tape.add(h, r);
                }
                Forward {
                    z0,
                    scores: out.apply(tape, &p, h),
                    critic: None,
                    tree: None,
                }
            }
            Head::ActorCritic { policy, critic } => Forward {
                z0,
                scores: policy.apply(tape, &p, z0),
                critic: Some(critic.apply(tape, &p, z0)),
                tree: None,
            },
            Head::Tree {
                transition,
                reward,
                value,
                critic,
            } => {
                let out = tree::build(tape, &p, &self.tree, transition, reward, value, z0);
                Forward {
                    z0,
                    scores: out.q[0],
                    critic: critic.as_ref().map(|c| c.apply(tape, &p, z0)),
                    tree: Some(out),
                }
            }
        }
    }

    /// Forward pass on a constant observation batch.
    pub fn forward_obs(&self, tape: &mut Tape, store: &ParamStore, obs: &Tensor) -> Forward {
        let o = tape.constant(obs.clone());
        self.forward(tape, store, o)
    }

    /// Scores for a batch without recording gradients.
    pub fn scores(&self, store: &ParamStore, obs: &Tensor) -> Tensor {
        let mut tape = Tape::no_grad();
        let f = self.forward_obs(&mut tape, store, obs);
        tape.value(f.scores).clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn count(arch: Arch) -> usize {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Network::new(
            arch,
            &ModelDims::boxworld(),
            TreeConfig::default(),
            &mut rng,
        )
        .1
        .numel()
    }

    #[test]
    fn baseline_parameter_counts() {
        let dqn = count(Arch::Dqn);
        // conv 1104 + 5208 + 18480, fc 6272, head 516.
        assert_eq!(dqn, 31_580);
        // The shared residual layer adds k² + k.
        assert_eq!(count(Arch::DqnDeep), dqn + 128 * 128 + 128);
        // Doubling k widens the encoder fc and the head.
        assert_eq!(count(Arch::DqnWide), dqn + 48 * 128 + 128 + 4 * 128);
    }

    #[test]
    fn tree_parameters_do_not_depend_on_depth() {
        assert_eq!(
            count(Arch::TreeQn { depth: 1 }),
            count(Arch::TreeQn { depth: 3 })
        );
        assert_eq!(
            count(Arch::ATreeC { depth: 1 }),
            count(Arch::TreeQn { depth: 1 }) + 129
        );
    }

    #[test]
    fn depth_comes_from_arch() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (net, _) = Network::new(
            Arch::TreeQn { depth: 3 },
            &ModelDims::small(),
            TreeConfig::new(1),
            &mut rng,
        );
        assert_eq!(net.tree_config().depth, 3);
    }
}
