use treeqn_boxworld::Rules;
use treeqn_model::Arch;
use treeqn_training::{
    evaluate, heldout_reward_mse, heldout_transitions, random_policy_returns, return_band,
    EvalStats, TrainConfig, TrainError, Trainer,
};

#[test]
fn untrained_networks_play_inside_the_random_policy_band() {
    let random = random_policy_returns(10_000, 0, Rules::default());
    let (low, high) = return_band(&random);
    let oracle = EvalStats::from_returns(random);
    assert!(low < oracle.mean && oracle.mean < high);
    for arch in [
        Arch::Dqn,
        Arch::TreeQn { depth: 2 },
        Arch::ATreeC { depth: 1 },
    ] {
        let t = Trainer::new(TrainConfig::new(arch, 1, 0)).unwrap();
        let e = evaluate(t.network(), t.params(), 100, 1, Rules::default()).unwrap();
        assert_eq!(e.episodes, 100);
        assert!(
            low <= e.mean && e.mean <= high,
            "{arch}: {} outside [{low}, {high}]",
            e.mean
        );
    }
}

#[test]
fn evaluation_is_deterministic_and_needs_episodes() {
    let t = Trainer::new(TrainConfig::new(Arch::TreeQn { depth: 1 }, 2, 0)).unwrap();
    let run = || evaluate(t.network(), t.params(), 20, 9, Rules::default()).unwrap();
    assert_eq!(run(), run());
    assert!(matches!(
        evaluate(t.network(), t.params(), 0, 9, Rules::default()),
        Err(TrainError::Config(_))
    ));
}

#[test]
fn heldout_mse_only_for_tree_models() {
    let data = heldout_transitions(300, 0, Rules::default());
    assert_eq!(data.0.shape(), &[300, 5, 8, 8]);
    let tree = Trainer::new(TrainConfig::new(Arch::TreeQn { depth: 2 }, 0, 0)).unwrap();
    let mse = heldout_reward_mse(tree.network(), tree.params(), &data).unwrap();
    assert!(mse.is_finite() && mse > 0.0);
    let dqn = Trainer::new(TrainConfig::new(Arch::Dqn, 0, 0)).unwrap();
    assert!(heldout_reward_mse(dqn.network(), dqn.params(), &data).is_none());
}
