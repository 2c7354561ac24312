use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use treeqn_autodiff::{
    finite_diff_check_params, finite_diff_check_selected, Coverage, GradMode, ParamStore, Tape,
    Tensor, Var,
};
use treeqn_model::{Arch, ModelDims, Network, TreeConfig};

const H: f64 = 1e-5;

fn obs(rng: &mut ChaCha8Rng, dims: &ModelDims, b: usize) -> Tensor {
    let mut shape = vec![b];
    shape.extend(dims.obs_shape());
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(0.0..1.0)).collect())
}

fn weighted_sum(tape: &mut Tape, y: Var) -> Var {
    let n = tape.value(y).numel();
    let w = Tensor::new(
        tape.shape(y).to_vec(),
        (0..n).map(|i| 0.5 + (i * 37 % 17) as f64 / 17.0).collect(),
    );
    let w = tape.constant(w);
    let p = tape.mul(y, w);
    tape.sum(p)
}

fn check_small(
    seed: u64,
    prefix: &str,
    tol: f64,
    pick: impl Fn(&mut Tape, &treeqn_model::Forward) -> Var,
) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (net, mut store) = Network::new(
        Arch::TreeQn { depth: 1 },
        &ModelDims::small(),
        TreeConfig::default(),
        &mut rng,
    );
    // Nonzero biases keep the tiny encoder away from an all-dead ReLU layer,
    // whose zero embedding cannot be normalized.
    for id in store.ids().collect::<Vec<_>>() {
        for v in store.value_mut(id).data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
    }
    let o = obs(&mut rng, net.dims(), 2);
    let f = |tape: &mut Tape, s: &ParamStore| {
        let out = net.forward_obs(tape, s, &o);
        let y = pick(tape, &out);
        weighted_sum(tape, y)
    };
    let r = finite_diff_check_selected(
        f,
        &store,
        |n| n.starts_with(prefix),
        H,
        Coverage::All,
        &mut rng,
    );
    assert!(r.coords_checked > 0);
    assert!(
        r.max_rel_error <= tol,
        "{prefix}: {:e} at {:?}",
        r.max_rel_error,
        r.worst
    );
}

#[test]
fn transition_gradients() {
    for seed in 0..5 {
        check_small(seed, "transition.action", 1e-5, |_, f| {
            f.tree.as_ref().unwrap().z[1]
        });
    }
}

#[test]
fn reward_head_gradients() {
    for seed in 0..5 {
        check_small(10 + seed, "reward", 1e-5, |_, f| {
            f.tree.as_ref().unwrap().rewards[0]
        });
    }
}

#[test]
fn value_head_gradients() {
    for seed in 0..5 {
        check_small(20 + seed, "value", 1e-6, |_, f| {
            f.tree.as_ref().unwrap().values[0]
        });
    }
}

#[test]
fn full_size_depth2_tree_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let (net, store) = Network::new(
        Arch::TreeQn { depth: 2 },
        &ModelDims::boxworld(),
        TreeConfig::default(),
        &mut rng,
    );
    let o = obs(&mut rng, net.dims(), 2);
    let f = |tape: &mut Tape, s: &ParamStore| {
        let out = net.forward_obs(tape, s, &o);
        weighted_sum(tape, out.scores)
    };
    let r = finite_diff_check_params(f, &store, H, Coverage::Sample(6), &mut rng);
    assert!(
        r.max_rel_error <= 1e-4,
        "{:e} at {:?}",
        r.max_rel_error,
        r.worst
    );
}

#[test]
fn every_parameter_group_receives_gradient() {
    for depth in 2..=3 {
        let mut rng = ChaCha8Rng::seed_from_u64(40 + depth as u64);
        let (net, mut store) = Network::new(
            Arch::TreeQn { depth },
            &ModelDims::boxworld(),
            TreeConfig::default(),
            &mut rng,
        );
        let o = obs(&mut rng, net.dims(), 2);
        let mut tape = Tape::new();
        let out = net.forward_obs(&mut tape, &store, &o);
        let sq = tape.square(out.scores);
        let loss = tape.sum(sq);
        tape.backward_into(loss, &mut store, GradMode::Overwrite);
        for p in store.iter() {
            let g = p.grad.norm();
            assert!(g > 0.0, "{} got no gradient at depth {depth}", p.name);
        }
    }
}
