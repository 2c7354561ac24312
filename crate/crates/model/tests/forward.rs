use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use treeqn_autodiff::{ParamStore, Tape, Tensor};
use treeqn_model::{path_index, Arch, Backup, ModelDims, Network, TreeConfig};

fn obs_batch(rng: &mut ChaCha8Rng, dims: &ModelDims, b: usize) -> Tensor {
    let mut shape = vec![b];
    shape.extend(dims.obs_shape());
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(0.0..1.0)).collect())
}

fn build(arch: Arch, cfg: TreeConfig, seed: u64) -> (Network, ParamStore, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (net, store) = Network::new(arch, &ModelDims::boxworld(), cfg, &mut rng);
    (net, store, rng)
}

fn zero(store: &mut ParamStore, prefix: &str) {
    for id in store.ids().collect::<Vec<_>>() {
        if store.name(id).starts_with(prefix) {
            store.value_mut(id).data_mut().fill(0.0);
        }
    }
}

fn set(store: &mut ParamStore, name: &str, values: &[f64]) {
    let id = store.find(name).unwrap();
    let t = store.value_mut(id);
    if values.len() == 1 {
        t.data_mut().fill(values[0]);
    } else {
        t.data_mut().copy_from_slice(values);
    }
}

#[test]
fn encoder_output_is_unit_128() {
    let (net, store, mut rng) = build(Arch::Dqn, TreeConfig::default(), 1);
    let obs = obs_batch(&mut rng, net.dims(), 3);
    let mut tape = Tape::no_grad();
    let f = net.forward_obs(&mut tape, &store, &obs);
    assert_eq!(tape.shape(f.z0), &[3, 128]);
    for row in tape.value(f.z0).data().chunks(128) {
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() <= 1e-8);
    }
}

#[test]
fn zero_weights_give_normalized_fc_bias() {
    for beta in [0.7, -2.0] {
        let (net, mut store, mut rng) = build(Arch::Dqn, TreeConfig::default(), 2);
        zero(&mut store, "encoder");
        set(&mut store, "encoder.fc.b", &[beta]);
        let obs = obs_batch(&mut rng, net.dims(), 1);
        let mut tape = Tape::no_grad();
        let f = net.forward_obs(&mut tape, &store, &obs);
        let want = beta.signum() / 128f64.sqrt();
        assert!(tape
            .value(f.z0)
            .data()
            .iter()
            .all(|v| (v - want).abs() < 1e-15));
    }
}

#[test]
fn zero_transition_is_identity() {
    let (net, mut store, mut rng) = build(Arch::TreeQn { depth: 1 }, TreeConfig::default(), 3);
    zero(&mut store, "transition");
    let obs = obs_batch(&mut rng, net.dims(), 2);
    let mut tape = Tape::no_grad();
    let f = net.forward_obs(&mut tape, &store, &obs);
    let t = f.tree.unwrap();
    let z0 = tape.value(t.z[0]).data().to_vec();
    let z1 = tape.value(t.z[1]).data();
    for b in 0..2 {
        for a in 0..4 {
            let r = path_index(b, &[a], 4);
            for i in 0..128 {
                assert!((z1[r * 128 + i] - z0[b * 128 + i]).abs() < 1e-15);
            }
        }
    }
}

#[test]
fn reward_and_value_heads_hand_cases() {
    let (net, mut store, mut rng) = build(Arch::TreeQn { depth: 1 }, TreeConfig::default(), 4);
    zero(&mut store, "reward");
    set(&mut store, "reward.fc2.b", &[0.25]);
    zero(&mut store, "value");
    set(&mut store, "value.b", &[-0.4]);
    let obs = obs_batch(&mut rng, net.dims(), 1);
    let mut tape = Tape::no_grad();
    let f = net.forward_obs(&mut tape, &store, &obs);
    let t = f.tree.unwrap();
    assert_eq!(tape.value(t.rewards[0]).data(), &[0.25; 4]);
    assert!(tape.value(t.values[1]).data().iter().all(|v| *v == -0.4));

    // w = z gives 1 + b on a unit vector.
    let z0 = tape.value(t.z[0]).data().to_vec();
    set(&mut store, "value.w", &z0);
    let mut tape = Tape::no_grad();
    let f = net.forward_obs(&mut tape, &store, &obs);
    let v0 = tape.value(f.tree.unwrap().values[0]).data()[0];
    assert!((v0 - 0.6).abs() < 1e-12);
}

#[test]
fn depth_one_q_is_reward_plus_discounted_child_value() {
    for lambda in [0.0, 0.5, 1.0] {
        let cfg = TreeConfig {
            lambda,
            ..TreeConfig::default()
        };
        let (net, store, mut rng) = build(Arch::TreeQn { depth: 1 }, cfg, 5);
        let obs = obs_batch(&mut rng, net.dims(), 2);
        let mut tape = Tape::no_grad();
        let f = net.forward_obs(&mut tape, &store, &obs);
        let t = f.tree.unwrap();
        let (r, v, q) = (
            tape.value(t.rewards[0]).data(),
            tape.value(t.values[1]).data(),
            tape.value(f.scores).data(),
        );
        for i in 0..8 {
            assert_eq!(q[i], r[i] + cfg.gamma * v[i]);
        }
    }
}

#[test]
fn lambda_zero_ignores_deeper_levels() {
    for depth in 2..=3 {
        let cfg = TreeConfig {
            lambda: 0.0,
            ..TreeConfig::default()
        };
        let (net, store, mut rng) = build(Arch::TreeQn { depth }, cfg, 6);
        let obs = obs_batch(&mut rng, net.dims(), 1);
        let mut tape = Tape::no_grad();
        let f = net.forward_obs(&mut tape, &store, &obs);
        let t = f.tree.unwrap();
        let (r, v, q) = (
            tape.value(t.rewards[0]).data(),
            tape.value(t.values[1]).data(),
            tape.value(f.scores).data(),
        );
        for a in 0..4 {
            assert!((q[a] - (r[a] + cfg.gamma * v[a])).abs() < 1e-15);
        }
    }
}

#[test]
fn constant_q_gives_uniform_policy_and_critic_is_separate() {
    let (net, mut store, mut rng) = build(Arch::ATreeC { depth: 2 }, TreeConfig::default(), 7);
    zero(&mut store, "reward");
    zero(&mut store, "value");
    let obs = obs_batch(&mut rng, net.dims(), 1);
    let mut tape = Tape::no_grad();
    let f = net.forward_obs(&mut tape, &store, &obs);
    let pi = tape.softmax(f.scores);
    assert!(tape
        .value(pi)
        .data()
        .iter()
        .all(|p| (p - 0.25).abs() < 1e-15));

    let names: Vec<&str> = store.iter().map(|p| p.name.as_str()).collect();
    assert!(names.contains(&"critic.w") && names.contains(&"value.w"));
    // The critic ignores the tree value head entirely.
    let critic = tape.value(f.critic.unwrap()).data()[0];
    set(&mut store, "value.b", &[5.0]);
    let mut tape = Tape::no_grad();
    let f = net.forward_obs(&mut tape, &store, &obs);
    assert_eq!(tape.value(f.critic.unwrap()).data()[0], critic);
}

#[test]
fn zeroed_deep_layers_reduce_to_dqn() {
    let (deep, mut deep_store, mut rng) = build(Arch::DqnDeep, TreeConfig::default(), 8);
    zero(&mut deep_store, "deep");
    let (dqn, mut dqn_store, _) = build(Arch::Dqn, TreeConfig::default(), 9);
    for id in dqn_store.ids().collect::<Vec<_>>() {
        let src = deep_store.find(dqn_store.name(id)).unwrap();
        *dqn_store.value_mut(id) = deep_store.value(src).clone();
    }
    let obs = obs_batch(&mut rng, deep.dims(), 3);
    assert_eq!(deep.scores(&deep_store, &obs), dqn.scores(&dqn_store, &obs));
}

#[test]
fn every_arch_outputs_four_scores() {
    for arch in Arch::ALL {
        let (net, store, mut rng) = build(arch, TreeConfig::default(), 10);
        let obs = obs_batch(&mut rng, net.dims(), 2);
        assert_eq!(net.scores(&store, &obs).shape(), &[2, 4], "{arch}");
    }
}

#[test]
fn tree_dump_counts_and_shapes() {
    for (depth, nodes) in [(1, 4), (2, 20), (3, 84)] {
        let (net, store, mut rng) = build(Arch::TreeQn { depth }, TreeConfig::default(), 11);
        let obs = obs_batch(&mut rng, net.dims(), 2);
        let mut tape = Tape::no_grad();
        let f = net.forward_obs(&mut tape, &store, &obs);
        let t = f.tree.unwrap();
        let root = t.node(&tape, 1, true);
        assert_eq!(root.descendant_count(), nodes);
        assert_eq!(root.q, tape.value(f.scores).data()[4..8].to_vec());
        let json = serde_json::to_string(&root).unwrap();
        let back: treeqn_model::TreeNode = serde_json::from_str(&json).unwrap();
        assert_eq!(back, root);
    }
}

#[test]
fn hardmax_equals_softmax_on_ties() {
    let cfg = TreeConfig {
        backup: Backup::Hardmax,
        ..TreeConfig::default()
    };
    let (net, mut store, mut rng) = build(Arch::TreeQn { depth: 2 }, cfg, 12);
    zero(&mut store, "reward");
    zero(&mut store, "value.w");
    let obs = obs_batch(&mut rng, net.dims(), 1);
    let hard = net.scores(&store, &obs);
    let (soft_net, _, _) = build(Arch::TreeQn { depth: 2 }, TreeConfig::default(), 12);
    let soft = soft_net.scores(&store, &obs);
    for (h, s) in hard.data().iter().zip(soft.data()) {
        assert!((h - s).abs() < 1e-15);
    }
}

fn small(arch: Arch, cfg: TreeConfig, seed: u64) -> (Network, ParamStore, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (net, mut store) = Network::new(arch, &ModelDims::small(), cfg, &mut rng);
    // Larger weights stress the projection.
    for id in store.ids().collect::<Vec<_>>() {
        for v in store.value_mut(id).data_mut() {
            *v = rng.gen_range(-2.0..2.0);
        }
    }
    let obs = obs_batch(&mut rng, net.dims(), 2);
    (net, store, obs)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_node_is_unit_norm(seed in any::<u64>(), depth in 1usize..=3) {
        let (net, store, obs) = small(Arch::TreeQn { depth }, TreeConfig::default(), seed);
        let mut tape = Tape::no_grad();
        let f = net.forward_obs(&mut tape, &store, &obs);
        let t = f.tree.unwrap();
        let k = net.dims().embed;
        for (l, &z) in t.z.iter().enumerate() {
            prop_assert_eq!(tape.shape(z)[0], 2 * 4usize.pow(l as u32));
            for row in tape.value(z).data().chunks(k) {
                let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                prop_assert!((n - 1.0).abs() <= 1e-8);
            }
        }
        let expect = [4usize, 20, 84][depth - 1];
        prop_assert_eq!(t.node(&tape, 0, false).descendant_count(), expect);
    }

    #[test]
    fn atreec_policy_is_a_distribution(seed in any::<u64>(), depth in 1usize..=3) {
        let (net, store, obs) = small(Arch::ATreeC { depth }, TreeConfig::default(), seed);
        let mut tape = Tape::no_grad();
        let f = net.forward_obs(&mut tape, &store, &obs);
        let pi = tape.softmax(f.scores);
        for row in tape.value(pi).data().chunks(4) {
            prop_assert!(row.iter().all(|p| *p > 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn softmax_backup_is_shift_covariant_and_bounded(
        xs in prop::collection::vec(-20.0f64..20.0, 1..10),
        c in -50.0f64..50.0,
    ) {
        let eval = |v: Vec<f64>| {
            let mut tape = Tape::no_grad();
            let x = tape.constant(Tensor::vector(v));
            let b = treeqn_model::layers::backup(&mut tape, x, Backup::Softmax, 1.0);
            tape.value(b).item()
        };
        let b = eval(xs.clone());
        let shifted = eval(xs.iter().map(|x| x + c).collect());
        prop_assert!((shifted - (b + c)).abs() <= 1e-12);
        let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo - 1e-12 <= b && b <= hi + 1e-12);
    }
}
