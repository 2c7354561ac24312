//! Building blocks shared by every architecture. Each block owns only
//! parameter ids; values are bound onto a tape per forward pass.

use std::ops::Index;

use rand::Rng;
use treeqn_autodiff::{ParamId, ParamStore, Tape, Var};

use crate::config::{Backup, ModelDims};

/// Every parameter of a store bound onto one tape.
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn new(tape: &mut Tape, store: &ParamStore) -> Self {
        Bound(store.ids().map(|id| tape.param(store, id)).collect())
    }
}

impl Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.index()]
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    /// `w` is `[out, inp]` drawn from U(±1/√inp); `b` starts at zero.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        out: usize,
        inp: usize,
        rng: &mut R,
    ) -> Self {
        let w = store.add_uniform(format!("{name}.w"), &[out, inp], inp, rng);
        let b = store.add_zeros(format!("{name}.b"), &[out]);
        Linear { w, b }
    }

    pub fn apply(&self, tape: &mut Tape, p: &Bound, x: Var) -> Var {
        tape.fc(x, p[self.w], Some(p[self.b]))
    }
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
}

/// Conv stack, flatten, fc. ReLU follows every conv; the fc output is the
/// embedding and is left linear.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub convs: Vec<Conv>,
    pub fc: Linear,
    flat: usize,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, dims: &ModelDims, rng: &mut R) -> Self {
        let mut c_in = dims.in_channels;
        let mut convs = Vec::new();
        for (i, s) in dims.convs.iter().enumerate() {
            let fan_in = c_in * s.kernel * s.kernel;
            let w = store.add_uniform(
                format!("encoder.conv{i}.w"),
                &[s.out_channels, c_in, s.kernel, s.kernel],
                fan_in,
                rng,
            );
            let b = store.add_zeros(format!("encoder.conv{i}.b"), &[s.out_channels]);
            convs.push(Conv {
                w,
                b,
                stride: s.stride,
            });
            c_in = s.out_channels;
        }
        let flat = dims.flat_features();
        let fc = Linear::new(store, "encoder.fc", dims.embed, flat, rng);
        Encoder { convs, fc, flat }
    }

    /// `[B, C, H, W] -> [B, k]`, unnormalized.
    pub fn apply(&self, tape: &mut Tape, p: &Bound, obs: Var) -> Var {
        let batch = tape.shape(obs)[0];
        let mut h = obs;
        for c in &self.convs {
            h = tape.conv2d(h, p[c.w], p[c.b], c.stride);
            h = tape.relu(h);
        }
        let h = tape.reshape(h, &[batch, self.flat]);
        self.fc.apply(tape, p, h)
    }
}

/// `ẑ = z + tanh(W_env z + b_env)`, then `z' = ẑ + tanh(W_a ẑ)` for every action.
#[derive(Clone, Debug)]
pub struct Transition {
    pub env: Linear,
    pub actions: Vec<ParamId>,
}

impl Transition {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        k: usize,
        n_actions: usize,
        rng: &mut R,
    ) -> Self {
        let env = Linear::new(store, "transition.env", k, k, rng);
        let actions = (0..n_actions)
            .map(|a| store.add_uniform(format!("transition.action{a}.w"), &[k, k], k, rng))
            .collect();
        Transition { env, actions }
    }

    /// `z: [N, k]` to `(children [N·A, k], ẑ [N, k])`; child row `n·A + a`
    /// is node `n` after action `a`. Children are not normalized here.
    pub fn apply(&self, tape: &mut Tape, p: &Bound, z: Var) -> (Var, Var) {
        let (n, k) = (tape.shape(z)[0], tape.shape(z)[1]);
        let n_actions = self.actions.len();
        let pre = self.env.apply(tape, p, z);
        let pre = tape.tanh(pre);
        let zhat = tape.add(z, pre);
        let ws: Vec<Var> = self.actions.iter().map(|&w| p[w]).collect();
        let w_all = tape.concat_rows(&ws);
        let t = tape.fc(zhat, w_all, None);
        let t = tape.reshape(t, &[n * n_actions, k]);
        let t = tape.tanh(t);
        let base = tape.repeat_rows(zhat, n_actions);
        (tape.add(base, t), zhat)
    }
}

/// `W2·ReLU(W1 z + b1) + b2`, one predicted reward per action.
#[derive(Clone, Debug)]
pub struct RewardHead {
    pub hidden: Linear,
    pub out: Linear,
}

impl RewardHead {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        k: usize,
        m: usize,
        n_actions: usize,
        rng: &mut R,
    ) -> Self {
        let hidden = Linear::new(store, "reward.fc1", m, k, rng);
        let out = Linear::new(store, "reward.fc2", n_actions, m, rng);
        RewardHead { hidden, out }
    }

    pub fn apply(&self, tape: &mut Tape, p: &Bound, z: Var) -> Var {
        let h = self.hidden.apply(tape, p, z);
        let h = tape.relu(h);
        self.out.apply(tape, p, h)
    }
}

/// Scalar linear head `wᵀz + b`, `[N, k] -> [N]`.
#[derive(Clone, Debug)]
pub struct ScalarHead(pub Linear);

impl ScalarHead {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, k: usize, rng: &mut R) -> Self {
        ScalarHead(Linear::new(store, name, 1, k, rng))
    }

    pub fn apply(&self, tape: &mut Tape, p: &Bound, z: Var) -> Var {
        let n = tape.shape(z)[0];
        let v = self.0.apply(tape, p, z);
        tape.reshape(v, &[n])
    }
}

/// Backup over the last axis.
pub fn backup(tape: &mut Tape, x: Var, mode: Backup, temperature: f64) -> Var {
    match mode {
        Backup::Hardmax => tape.max_last(x),
        Backup::Softmax => {
            let scaled = if temperature == 1.0 {
                x
            } else {
                tape.mul_scalar(x, 1.0 / temperature)
            };
            let w = tape.softmax(scaled);
            let xw = tape.mul(x, w);
            tape.sum_last(xw)
        }
    }
}
