use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use treeqn_autodiff::argmax_first;
use treeqn_boxworld::{Rules, VecEnv};
use treeqn_model::{Arch, ModelDims, Network, TreeConfig};
use treeqn_training::{collect_rollout, Acting, EpisodeTracker};

fn network(arch: Arch) -> (Network, treeqn_autodiff::ParamStore) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    Network::new(
        arch,
        &ModelDims::boxworld(),
        TreeConfig::new(arch.tree_depth().unwrap_or(1)),
        &mut rng,
    )
}

#[test]
fn default_batch_is_16_by_5() {
    let (net, store) = network(Arch::TreeQn { depth: 1 });
    let mut envs = VecEnv::new(16, 1, Rules::default());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut tracker = EpisodeTracker::new(16);
    let b = collect_rollout(
        &mut envs,
        &net,
        &store,
        5,
        Acting::EpsilonGreedy(0.5),
        &mut rng,
        &mut tracker,
    )
    .unwrap();
    assert_eq!((b.n_env, b.n_steps, b.len()), (16, 5, 80));
    assert_eq!(b.obs.shape(), &[80, 5, 8, 8]);
    assert_eq!(b.bootstrap_obs.shape(), &[16, 5, 8, 8]);
    assert_eq!(b.obs_with_bootstrap().shape(), &[96, 5, 8, 8]);
}

#[test]
fn uniform_actions_at_full_exploration() {
    let (net, store) = network(Arch::Dqn);
    let mut envs = VecEnv::new(16, 2, Rules::default());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut tracker = EpisodeTracker::new(16);
    let mut counts = [0usize; 4];
    let mut total = 0;
    while total < 10_000 {
        let b = collect_rollout(
            &mut envs,
            &net,
            &store,
            5,
            Acting::EpsilonGreedy(1.0),
            &mut rng,
            &mut tracker,
        )
        .unwrap();
        for &a in &b.actions {
            counts[a] += 1;
        }
        total += b.len();
    }
    let expected = total as f64 / 4.0;
    let chi2: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    // 99.9th percentile of χ² with 3 degrees of freedom.
    assert!(chi2 < 16.27, "χ² = {chi2:.2}, counts {counts:?}");
}

#[test]
fn no_exploration_is_greedy() {
    let (net, store) = network(Arch::TreeQn { depth: 1 });
    let mut envs = VecEnv::new(4, 3, Rules::default());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut tracker = EpisodeTracker::new(4);
    let b = collect_rollout(
        &mut envs,
        &net,
        &store,
        3,
        Acting::EpsilonGreedy(0.0),
        &mut rng,
        &mut tracker,
    )
    .unwrap();
    let scores = net.scores(&store, &b.obs);
    let greedy: Vec<usize> = scores.data().chunks(4).map(argmax_first).collect();
    assert_eq!(b.actions, greedy);
}

#[test]
fn episodes_continue_across_rollouts() {
    // Two rollouts of 5 steps see the same transitions as one of 10.
    let (net, store) = network(Arch::Dqn);
    let run = |splits: &[usize]| {
        let mut envs = VecEnv::new(3, 4, Rules::default());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut tracker = EpisodeTracker::new(3);
        let mut rewards = vec![Vec::new(); 3];
        for &n in splits {
            let b = collect_rollout(
                &mut envs,
                &net,
                &store,
                n,
                Acting::EpsilonGreedy(1.0),
                &mut rng,
                &mut tracker,
            )
            .unwrap();
            for t in 0..n {
                for (e, r) in rewards.iter_mut().enumerate() {
                    r.push(b.rewards[b.index(t, e)]);
                }
            }
        }
        rewards
    };
    assert_eq!(run(&[5, 5]), run(&[10]));
}
