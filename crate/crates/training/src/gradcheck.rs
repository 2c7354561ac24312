//! The finite-difference gradient suite behind `treeqn gradcheck`.
//!
//! Three scopes: tape primitives, every network architecture end to end, and
//! the training losses on synthetic rollouts. Networks use the tiny
//! [`ModelDims::small`] layout so every parameter coordinate can be perturbed.

use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use treeqn_autodiff::{
    finite_diff_check, finite_diff_check_params, finite_diff_check_selected, Coverage,
    GradCheckReport, GradMode, ParamStore, Tape, Tensor, Var,
};
use treeqn_model::layers::backup;
use treeqn_model::{Arch, Backup, ModelDims, Network, TreeConfig};

use crate::losses::{batch_loss_with_returns, bootstrap_values, nstep_returns, LossConfig};
use crate::rollout::RolloutBatch;
use crate::seeding::{derive_rng, GRADCHECK_STREAM};

pub const PRIMITIVE_TOL: f64 = 1e-6;
pub const END_TO_END_TOL: f64 = 1e-4;
/// Instances per end-to-end TreeQN-d3 and actor-critic loss check.
pub const LOSS_INSTANCES: usize = 50;
const H: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Primitives,
    Models,
    Losses,
}

impl Scope {
    pub const ALL: [Scope; 3] = [Scope::Primitives, Scope::Models, Scope::Losses];

    pub fn parse(s: &str) -> Option<Vec<Scope>> {
        match s {
            "all" => Some(Scope::ALL.to_vec()),
            "primitives" => Some(vec![Scope::Primitives]),
            "models" => Some(vec![Scope::Models]),
            "losses" => Some(vec![Scope::Losses]),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub scope: Scope,
    pub name: String,
    pub instances: usize,
    pub coords_checked: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
    /// `(tensor, index, analytic, numeric)` at the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
    pub seconds: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.coords_checked > 0 && self.max_rel_error <= self.tolerance
    }
}

struct Runner {
    scope: Scope,
    rng: ChaCha8Rng,
    results: Vec<CheckResult>,
}

impl Runner {
    fn check(
        &mut self,
        name: &str,
        tol: f64,
        instances: usize,
        mut one: impl FnMut(&mut ChaCha8Rng) -> GradCheckReport,
    ) {
        let start = Instant::now();
        let mut total: Option<GradCheckReport> = None;
        for _ in 0..instances {
            let r = one(&mut self.rng);
            match &mut total {
                Some(t) => t.merge(&r),
                None => total = Some(r),
            }
        }
        let t = total.expect("at least one instance");
        self.results.push(CheckResult {
            scope: self.scope,
            name: name.to_string(),
            instances,
            coords_checked: t.coords_checked,
            max_rel_error: t.max_rel_error,
            tolerance: tol,
            worst: t.worst,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
}

/// Keeps inputs of kinked ops (ReLU, max) further than `H` from the kink.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let mut t = random(rng, shape);
    for v in t.data_mut() {
        *v = v.signum() * (0.05 + v.abs());
    }
    t
}

/// Sum with fixed positive weights, so each output coordinate gets its own
/// upstream gradient and nothing cancels.
fn weighted_sum(tape: &mut Tape, y: Var) -> Var {
    let shape = tape.shape(y).to_vec();
    let n: usize = shape.iter().product();
    let w = Tensor::new(
        shape,
        (0..n).map(|i| 0.5 + (i * 37 % 17) as f64 / 17.0).collect(),
    );
    let w = tape.constant(w);
    let p = tape.mul(y, w);
    tape.sum(p)
}

fn primitives(r: &mut Runner) {
    const N: usize = 5;
    let tol = PRIMITIVE_TOL;
    r.check("fc sum(Wx+b), k=5", tol, N, |rng| {
        let ins = [random(rng, &[5]), random(rng, &[5, 5]), random(rng, &[5])];
        let f = |t: &mut Tape, v: &[Var]| {
            let y = t.fc(v[0], v[1], Some(v[2]));
            t.sum(y)
        };
        finite_diff_check(f, &ins, H, Coverage::All, rng)
    });
    r.check("fc batched", tol, N, |rng| {
        let ins = [
            random(rng, &[3, 4]),
            random(rng, &[6, 4]),
            random(rng, &[6]),
        ];
        let f = |t: &mut Tape, v: &[Var]| {
            let y = t.fc(v[0], v[1], Some(v[2]));
            weighted_sum(t, y)
        };
        finite_diff_check(f, &ins, H, Coverage::All, rng)
    });
    for stride in [1, 2] {
        r.check(&format!("conv2d stride {stride}"), tol, N, |rng| {
            let ins = [
                random(rng, &[2, 2, 7, 7]),
                random(rng, &[3, 2, 3, 3]),
                random(rng, &[3]),
            ];
            let f = |t: &mut Tape, v: &[Var]| {
                let y = t.conv2d(v[0], v[1], v[2], stride);
                weighted_sum(t, y)
            };
            finite_diff_check(f, &ins, H, Coverage::All, rng)
        });
    }
    type Unary = fn(&mut Tape, Var) -> Var;
    let unary: [(&str, Unary, bool); 9] = [
        ("tanh", |t, x| t.tanh(x), false),
        ("relu", |t, x| t.relu(x), true),
        ("square", |t, x| t.square(x), false),
        ("softmax", |t, x| t.softmax(x), false),
        ("log_softmax", |t, x| t.log_softmax(x), false),
        ("l2_normalize", |t, x| t.l2_normalize(x), false),
        ("max_last", |t, x| t.max_last(x), false),
        ("sum_last", |t, x| t.sum_last(x), false),
        ("mean", |t, x| t.mean(x), false),
    ];
    for (name, op, kinked) in unary {
        r.check(name, tol, N, |rng| {
            let x = if kinked {
                away_from_zero(rng, &[3, 4])
            } else {
                random(rng, &[3, 4])
            };
            let f = |t: &mut Tape, v: &[Var]| {
                let y = op(t, v[0]);
                weighted_sum(t, y)
            };
            finite_diff_check(f, &[x], H, Coverage::All, rng)
        });
    }
    r.check("gather/repeat/concat rows", tol, N, |rng| {
        let ins = [random(rng, &[3, 4]), random(rng, &[2, 4])];
        let f = |t: &mut Tape, v: &[Var]| {
            let c = t.concat_rows(&[v[0], v[1]]);
            let rep = t.repeat_rows(c, 2);
            let g = t.gather_rows(rep, &[0, 9, 4, 4, 7]);
            let e = t.gather_last(g, &[3, 0, 1, 1, 2]);
            weighted_sum(t, e)
        };
        finite_diff_check(f, &ins, H, Coverage::All, rng)
    });
    r.check("softmax backup at [0, ln 3]", tol, 1, |rng| {
        let x = Tensor::vector(vec![0.0, 3f64.ln()]);
        let f = |t: &mut Tape, v: &[Var]| backup(t, v[0], Backup::Softmax, 1.0);
        finite_diff_check(f, &[x], H, Coverage::All, rng)
    });
}

/// Small network with every parameter (biases included) drawn from U(−1, 1).
/// Nonzero biases keep the tiny encoder away from an all-dead ReLU layer.
fn small_network(arch: Arch, tree: TreeConfig, rng: &mut ChaCha8Rng) -> (Network, ParamStore) {
    let (net, mut store) = Network::new(arch, &ModelDims::small(), tree, rng);
    randomize(&mut store, rng);
    (net, store)
}

fn randomize(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    for id in store.ids().collect::<Vec<_>>() {
        for v in store.value_mut(id).data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
    }
}

fn small_obs(rng: &mut ChaCha8Rng, rows: usize) -> Tensor {
    let mut shape = vec![rows];
    shape.extend(ModelDims::small().obs_shape());
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(0.0..1.0)).collect())
}

fn tree_config(depth: usize) -> TreeConfig {
    TreeConfig {
        depth,
        gamma: 0.9,
        ..TreeConfig::default()
    }
}

fn models(r: &mut Runner) {
    r.check("treeqn-d3 root Q", END_TO_END_TOL, LOSS_INSTANCES, |rng| {
        let (net, store) = small_network(Arch::TreeQn { depth: 3 }, tree_config(3), rng);
        let obs = small_obs(rng, 2);
        let f = |t: &mut Tape, s: &ParamStore| {
            let out = net.forward_obs(t, s, &obs);
            weighted_sum(t, out.scores)
        };
        finite_diff_check_params(f, &store, H, Coverage::All, rng)
    });
    for arch in Arch::ALL {
        r.check(&format!("{arch} outputs"), END_TO_END_TOL, 5, |rng| {
            let (net, store) =
                small_network(arch, tree_config(arch.tree_depth().unwrap_or(1)), rng);
            let obs = small_obs(rng, 2);
            let f = |t: &mut Tape, s: &ParamStore| {
                let out = net.forward_obs(t, s, &obs);
                let q = weighted_sum(t, out.scores);
                match out.critic {
                    Some(c) => {
                        let c = weighted_sum(t, c);
                        t.add(q, c)
                    }
                    None => q,
                }
            };
            finite_diff_check_params(f, &store, H, Coverage::All, rng)
        });
    }
}

/// Random rollout on small-layout observations, with some episode ends.
pub fn synthetic_batch(
    rng: &mut ChaCha8Rng,
    n_env: usize,
    n_steps: usize,
    n_actions: usize,
) -> RolloutBatch {
    let n = n_env * n_steps;
    RolloutBatch {
        n_env,
        n_steps,
        obs: small_obs(rng, n),
        actions: (0..n).map(|_| rng.gen_range(0..n_actions)).collect(),
        rewards: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        dones: (0..n).map(|_| rng.gen_bool(0.2)).collect(),
        bootstrap_obs: small_obs(rng, n_env),
    }
}

/// Finite-difference check of the full training loss of `arch`. Returns and
/// advantages are fixed at the unperturbed parameters so the loss is a pure
/// function of them; the state-grounding target is left unblocked for the
/// same reason.
fn loss_check(arch: Arch, n_env: usize, n_steps: usize, rng: &mut ChaCha8Rng) -> GradCheckReport {
    let depth = arch.tree_depth().unwrap_or(1);
    let (net, store) = small_network(arch, tree_config(depth), rng);
    let mut target = store.clone();
    randomize(&mut target, rng);
    let batch = synthetic_batch(rng, n_env, n_steps, net.n_actions());
    let cfg = LossConfig {
        gamma: 0.9,
        critic_coef: 0.5,
        entropy_coef: 0.01,
        eta_r: 1.0,
        eta_s: if arch.tree_depth().is_some() {
            0.5
        } else {
            0.0
        },
        block_state_target: false,
    };
    let boot = bootstrap_values(&net, &store, Some(&target), &batch.bootstrap_obs);
    let returns = nstep_returns(&batch.rewards, &batch.dones, &boot, n_env, cfg.gamma);
    let advantages = arch.is_actor_critic().then(|| {
        let mut tape = Tape::no_grad();
        let f = net.forward_obs(&mut tape, &store, &batch.obs);
        let v = tape.value(f.critic.expect("critic"));
        returns
            .iter()
            .zip(v.data())
            .map(|(g, v)| g - v)
            .collect::<Vec<f64>>()
    });
    let f = |t: &mut Tape, s: &ParamStore| {
        batch_loss_with_returns(t, &net, s, &batch, &returns, advantages.as_deref(), &cfg).total
    };
    // ATreeC logits are tree Q-values, and a shared offset on every leaf and
    // node value shifts all of them equally, so the value-head bias has an
    // identically zero gradient there. Relative error on it would only
    // measure finite-difference roundoff; `value_bias_is_inert` covers it.
    let skip = arch.is_actor_critic() && arch.tree_depth().is_some();
    finite_diff_check_selected(
        f,
        &store,
        |n| !(skip && n == VALUE_BIAS),
        H,
        Coverage::All,
        rng,
    )
}

const VALUE_BIAS: &str = "value.b";

/// Absolute size of the analytic ATreeC loss gradient on the value-head bias,
/// reported in the error column.
fn value_bias_is_inert(arch: Arch, rng: &mut ChaCha8Rng) -> GradCheckReport {
    let depth = arch.tree_depth().expect("tree architecture");
    let (net, mut store) = small_network(arch, tree_config(depth), rng);
    let batch = synthetic_batch(rng, 2, 3, net.n_actions());
    let cfg = LossConfig {
        gamma: 0.9,
        critic_coef: 0.5,
        entropy_coef: 0.01,
        eta_r: 1.0,
        eta_s: 0.5,
        block_state_target: false,
    };
    let returns: Vec<f64> = (0..batch.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut tape = Tape::new();
    let terms = batch_loss_with_returns(&mut tape, &net, &store, &batch, &returns, None, &cfg);
    tape.backward_into(terms.total, &mut store, GradMode::Overwrite);
    let id = store.find(VALUE_BIAS).expect("value head");
    let g = store.grad(id).item().abs();
    GradCheckReport {
        max_rel_error: g,
        coords_checked: 1,
        worst: Some((VALUE_BIAS.to_string(), 0, g, 0.0)),
    }
}

fn losses(r: &mut Runner) {
    r.check(
        "treeqn-d3 q + grounding loss",
        END_TO_END_TOL,
        LOSS_INSTANCES,
        |rng| loss_check(Arch::TreeQn { depth: 3 }, 2, 3, rng),
    );
    r.check(
        "atreec-d3 actor-critic + grounding loss",
        END_TO_END_TOL,
        LOSS_INSTANCES,
        |rng| loss_check(Arch::ATreeC { depth: 3 }, 2, 3, rng),
    );
    r.check(
        "a2c loss, 1 env x 2 steps",
        END_TO_END_TOL,
        LOSS_INSTANCES,
        |rng| loss_check(Arch::A2c, 1, 2, rng),
    );
    for arch in Arch::ALL {
        r.check(&format!("{arch} training loss"), END_TO_END_TOL, 5, |rng| {
            loss_check(arch, 2, 3, rng)
        });
    }
    for depth in 1..=3 {
        let arch = Arch::ATreeC { depth };
        r.check(
            &format!("{arch} value bias gradient (absolute)"),
            1e-12,
            5,
            |rng| value_bias_is_inert(arch, rng),
        );
    }
}

/// Run the selected scopes. The instance draws depend only on `seed`.
pub fn run_suite(scopes: &[Scope], seed: u64) -> Vec<CheckResult> {
    let mut results = Vec::new();
    for &scope in scopes {
        let mut r = Runner {
            scope,
            rng: derive_rng(seed, GRADCHECK_STREAM + 16 * scope as u64),
            results: Vec::new(),
        };
        match scope {
            Scope::Primitives => primitives(&mut r),
            Scope::Models => models(&mut r),
            Scope::Losses => losses(&mut r),
        }
        results.extend(r.results);
    }
    results
}
