//! Batched look-ahead tree and its per-sample JSON dump.
//!
//! Level `l` holds `B·A^l` nodes as rows of one tensor. The node reached from
//! batch entry `b` by actions `a_0 … a_{l-1}` sits at row
//! `((b·A + a_0)·A + a_1)·A + …`, see [`path_index`].

use serde::{Deserialize, Serialize};
use treeqn_autodiff::{Tape, Var};

use crate::config::{NormPlacement, TreeConfig};
use crate::layers::{backup, Bound, RewardHead, ScalarHead, Transition};

/// All intermediate tensors of one tree forward pass.
pub struct TreeOutput {
    pub n_actions: usize,
    pub batch: usize,
    /// Latent states per level `0..=d`, `[B·A^l, k]`.
    pub z: Vec<Var>,
    /// Action-agnostic intermediates `ẑ` computed from level `l`, `l < d`.
    pub zhat: Vec<Var>,
    /// Predicted rewards at level `l < d`, `[B·A^l, A]`.
    pub rewards: Vec<Var>,
    /// `V(z)` per level `0..=d`, `[B·A^l]`.
    pub values: Vec<Var>,
    /// Backed-up Q per level `l < d`; `q[0]` is the root Q.
    pub q: Vec<Var>,
    /// `V^λ` per level `0..=d`.
    pub v_lambda: Vec<Var>,
}

/// Row of the node reached from batch entry `b` by `path`.
pub fn path_index(b: usize, path: &[usize], n_actions: usize) -> usize {
    path.iter().fold(b, |acc, &a| acc * n_actions + a)
}

/// Build the tree below `z0: [B, k]` and back values up to the root.
pub fn build(
    tape: &mut Tape,
    p: &Bound,
    cfg: &TreeConfig,
    transition: &Transition,
    reward: &RewardHead,
    value: &ScalarHead,
    z0: Var,
) -> TreeOutput {
    let n_actions = transition.actions.len();
    let batch = tape.shape(z0)[0];
    let d = cfg.depth;
    let mut z = vec![z0];
    let mut zhat = Vec::with_capacity(d);
    let mut rewards = Vec::with_capacity(d);
    for l in 0..d {
        let src = match cfg.norm {
            NormPlacement::AtCreation => z[l],
            NormPlacement::BeforeTransition => tape.l2_normalize(z[l]),
        };
        rewards.push(reward.apply(tape, p, z[l]));
        let (children, h) = transition.apply(tape, p, src);
        let children = match cfg.norm {
            NormPlacement::AtCreation => tape.l2_normalize(children),
            NormPlacement::BeforeTransition => children,
        };
        zhat.push(h);
        z.push(children);
    }
    let values: Vec<Var> = z.iter().map(|&zl| value.apply(tape, p, zl)).collect();

    let mut v_lambda = vec![values[d]; d + 1];
    let mut q = vec![values[0]; d];
    for l in (0..d).rev() {
        let n = tape.shape(values[l])[0];
        let next = tape.reshape(v_lambda[l + 1], &[n, n_actions]);
        let disc = tape.mul_scalar(next, cfg.gamma);
        q[l] = tape.add(rewards[l], disc);
        let b = backup(tape, q[l], cfg.backup, cfg.temperature);
        let mixed_b = tape.mul_scalar(b, cfg.lambda);
        let mixed_v = tape.mul_scalar(values[l], 1.0 - cfg.lambda);
        v_lambda[l] = tape.add(mixed_v, mixed_b);
    }
    TreeOutput {
        n_actions,
        batch,
        z,
        zhat,
        rewards,
        values,
        q,
        v_lambda,
    }
}

/// One node of the look-ahead tree. Leaves carry no reward predictions or Q.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeNode {
    pub depth: usize,
    /// Action taken from the parent; `None` at the root.
    pub action: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intermediate: Option<Vec<f64>>,
    pub reward_preds: Vec<f64>,
    pub value: f64,
    pub q: Vec<f64>,
    pub v_lambda: f64,
    pub children: Vec<TreeNode>,
}

impl TreeNode {
    pub fn descendant_count(&self) -> usize {
        self.children.iter().map(|c| 1 + c.descendant_count()).sum()
    }

    /// Pre-order traversal.
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a TreeNode)) {
        f(self);
        for c in &self.children {
            c.visit(f);
        }
    }
}

fn row(tape: &Tape, v: Var, r: usize) -> Vec<f64> {
    let t = tape.value(v);
    let w = t.last_dim();
    t.data()[r * w..(r + 1) * w].to_vec()
}

impl TreeOutput {
    pub fn depth(&self) -> usize {
        self.rewards.len()
    }

    /// Extract the tree of batch entry `b`. Latent vectors are included on
    /// request.
    pub fn node(&self, tape: &Tape, b: usize, with_latents: bool) -> TreeNode {
        self.node_at(tape, 0, b, None, None, with_latents)
    }

    fn node_at(
        &self,
        tape: &Tape,
        level: usize,
        index: usize,
        action: Option<usize>,
        parent: Option<usize>,
        with_latents: bool,
    ) -> TreeNode {
        let d = self.depth();
        let internal = level < d;
        let children = if internal {
            (0..self.n_actions)
                .map(|a| {
                    self.node_at(
                        tape,
                        level + 1,
                        index * self.n_actions + a,
                        Some(a),
                        Some(index),
                        with_latents,
                    )
                })
                .collect()
        } else {
            Vec::new()
        };
        TreeNode {
            depth: level,
            action,
            z: with_latents.then(|| row(tape, self.z[level], index)),
            intermediate: match (with_latents, parent) {
                (true, Some(pi)) => Some(row(tape, self.zhat[level - 1], pi)),
                _ => None,
            },
            reward_preds: if internal {
                row(tape, self.rewards[level], index)
            } else {
                Vec::new()
            },
            value: tape.value(self.values[level]).data()[index],
            q: if internal {
                row(tape, self.q[level], index)
            } else {
                Vec::new()
            },
            v_lambda: tape.value(self.v_lambda[level]).data()[index],
            children,
        }
    }
}
