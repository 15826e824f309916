mod support;

use amot::reward::{team_reward, visibility_reward, RewardWeights};
use amot::simenv::VisibilityMatrix;
use proptest::prelude::*;

#[test]
fn worked_examples() {
    for (name, ok) in support::reward_examples() {
        assert!(ok, "{name}");
    }
}

#[test]
fn bounds_hold_along_random_episodes() {
    let states = support::check_random_rewards(17, 30).unwrap();
    assert_eq!(states, 30 * 12);
}

fn matrix(n: usize, m: usize, flags: &[bool]) -> VisibilityMatrix {
    let rows: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..m).map(|j| flags[(i * m + j) % flags.len()]).collect())
        .collect();
    VisibilityMatrix::from_rows(&rows)
}

proptest! {
    #[test]
    fn bounds_hold_for_any_seed(seed in any::<u64>()) {
        prop_assert!(support::check_random_rewards(seed, 2).is_ok());
    }

    #[test]
    fn visibility_shares_sum_to_coverage(
        n in 1usize..6,
        m in 1usize..10,
        flags in proptest::collection::vec(any::<bool>(), 1..60),
    ) {
        let v = matrix(n, m, &flags);
        let shares: f64 = (0..n).map(|i| visibility_reward(&v, i)).sum();
        prop_assert!((shares - v.covered_count() as f64).abs() < 1e-9);
        for i in 0..n {
            let r = visibility_reward(&v, i);
            prop_assert!(r >= 0.0 && r <= m as f64);
        }
    }

    #[test]
    fn covering_a_target_never_lowers_team_reward(
        n in 1usize..6,
        m in 1usize..10,
        flags in proptest::collection::vec(any::<bool>(), 1..60),
        cam in 0usize..6,
        target in 0usize..10,
    ) {
        let mut v = matrix(n, m, &flags);
        let before = team_reward(&v, m).unwrap();
        v.set(cam % n, target % m, true);
        prop_assert!(team_reward(&v, m).unwrap() >= before);
    }
}

#[test]
fn default_weights_are_valid() {
    RewardWeights::default().validate().unwrap();
}
