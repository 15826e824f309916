use amot::eval::*;
use amot::geometry::GroundPoint;
use amot::neuralnet::NetworkParams;
use amot::perception::DetectorNoiseModel;
use amot::reward::team_reward;
use amot::rollout::{run_episode, EnvSetup, Policy};
use amot::simenv::{home_pose, reset, target_bbox, Action, VisibilityMatrix, WorldConfig};
use amot::trainer::NetworkSizes;
use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn filled(n: usize, m: usize, value: bool) -> VisibilityMatrix {
    VisibilityMatrix::from_rows(&vec![vec![value; m]; n])
}

/// Sums target by target first, the transpose of the library's order.
fn coverage_by_target(history: &[VisibilityMatrix]) -> f64 {
    let m = history[0].n_targets();
    let n = history[0].n_cameras();
    let t_len = history.len() as f64;
    let mut total = 0.0;
    for j in 0..m {
        let mut seen = 0.0;
        for v in history {
            let any = (0..n).map(|i| u8::from(v.get(i, j))).max().unwrap_or(0);
            seen += f64::from(any);
        }
        total += seen / t_len;
    }
    total / m as f64
}

#[test]
fn coverage_extremes() {
    assert_eq!(coverage_rate(&vec![filled(3, 5, true); 10]).unwrap(), 1.0);
    assert_eq!(coverage_rate(&vec![filled(3, 5, false); 10]).unwrap(), 0.0);
    assert!(matches!(coverage_rate(&[]), Err(EvalError::EmptyHistory)));
}

proptest! {
    #[test]
    fn coverage_matches_transposed_sum(
        n in 1usize..5,
        m in 1usize..8,
        flags in proptest::collection::vec(any::<bool>(), 1..400),
        t_len in 1usize..12,
    ) {
        let history: Vec<VisibilityMatrix> = (0..t_len)
            .map(|t| {
                let rows: Vec<Vec<bool>> = (0..n)
                    .map(|i| (0..m).map(|j| flags[(t * n * m + i * m + j) % flags.len()]).collect())
                    .collect();
                VisibilityMatrix::from_rows(&rows)
            })
            .collect();
        let a = coverage_rate(&history).unwrap();
        prop_assert!((a - coverage_by_target(&history)).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
        let team_mean = history.iter().map(|v| team_reward(v, m).unwrap()).sum::<f64>() / t_len as f64;
        prop_assert_eq!(a, team_mean);
    }
}

fn desk() -> EnvSetup {
    EnvSetup::with_defaults(WorldConfig {
        n_cameras: 4,
        n_targets: 8,
        court_half_x: 2000.0,
        court_half_y: 1000.0,
        episode_length: 30,
        ..Default::default()
    })
    .unwrap()
}

#[test]
fn baseline_emits_no_ops_and_cameras_stay_home() {
    let setup = desk();
    let mut policy = fixed_baseline_policy(4);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let blocks = Array2::from_elem((4, setup.observation_dim()), 0.3);
    assert_eq!(policy.act(0, &blocks, &mut rng).unwrap(), vec![Action::NOOP; 4]);
    let out = run_episode(&setup, &mut policy, 5, &mut rng).unwrap();
    for (i, cam) in out.final_state.cameras.iter().enumerate() {
        assert_eq!(*cam, home_pose(&setup.world, i, 4));
    }
    // Episode coverage equals the mean team reward, exactly.
    let team = out.rewards.iter().map(|r| r.team).sum::<f64>() / out.steps() as f64;
    assert_eq!(coverage_rate(&out.visibility).unwrap(), team);
}

#[test]
fn default_baseline_has_blind_spots() {
    let world = WorldConfig::default();
    let state = reset(&world, 0).unwrap();
    let cams: Vec<_> = (0..world.n_cameras)
        .map(|i| home_pose(&world, i, world.n_cameras).camera_model(&world).unwrap())
        .collect();
    let threshold = world.mu_min * world.frame_area();
    // Scan the court on a grid for a spot that no home camera covers.
    let mut blind = None;
    'scan: for gx in -49..=49 {
        for gy in -24..=24 {
            let p = GroundPoint::new(100.0 * f64::from(gx), 100.0 * f64::from(gy));
            let seen = cams
                .iter()
                .any(|c| target_bbox(&world, c, 0, &p).is_some_and(|b| b.area() > threshold));
            if !seen {
                blind = Some(p);
                break 'scan;
            }
        }
    }
    assert!(blind.is_some());
    assert_eq!(state.cameras.len(), 6);

    let setup = EnvSetup::with_defaults(WorldConfig {
        episode_length: 20,
        ..Default::default()
    })
    .unwrap();
    let report = evaluate(&mut fixed_baseline_policy(6), &setup, &[1, 2, 3]).unwrap();
    assert!(report.mean < 1.0);
}

#[test]
fn single_run_has_zero_std_and_reports_repeat() {
    let setup = desk();
    let one = evaluate(&mut fixed_baseline_policy(4), &setup, &[11]).unwrap();
    assert_eq!(one.runs, 1);
    assert_eq!(one.std, 0.0);
    let a = evaluate(&mut fixed_baseline_policy(4), &setup, &[1, 2, 3, 4]).unwrap();
    let b = evaluate(&mut fixed_baseline_policy(4), &setup, &[1, 2, 3, 4]).unwrap();
    assert_eq!(a, b);
    let (mean, std) = mean_std(&a.coverages);
    assert_eq!((a.mean, a.std), (mean, std));
    assert!(a.coverages.iter().all(|c| (0.0..=1.0).contains(c)));
    assert!(evaluate(&mut fixed_baseline_policy(4), &setup, &[]).is_err());
    let text = a.to_string();
    assert!(text.contains("coverage"));
}

#[test]
fn population_std() {
    let (m, s) = mean_std(&[0.5, 0.7]);
    assert!((m - 0.6).abs() < 1e-15);
    assert!((s - 0.1).abs() < 1e-15);
}

#[test]
fn greedy_evaluation_leaves_parameters_untouched() {
    let setup = desk();
    let topology = NetworkSizes {
        encoder1: 8,
        encoder2: 8,
        trunk: 8,
        hidden: 8,
        max_slots: None,
    }
    .topology(&setup);
    let params = NetworkParams::init(topology, 4).unwrap();
    let before = params.clone();
    let a = evaluate(&mut GreedyPolicy::new(&params), &setup, &[1, 2]).unwrap();
    let b = evaluate(&mut GreedyPolicy::new(&params), &setup, &[1, 2]).unwrap();
    assert_eq!(params, before);
    assert_eq!(a, b);
}

#[test]
fn fingerprint_tracks_config() {
    let a = config_fingerprint(&desk());
    assert_eq!(a.len(), 64);
    assert_eq!(a, config_fingerprint(&desk()));
    let other = EnvSetup::with_defaults(WorldConfig::default()).unwrap();
    assert_ne!(a, config_fingerprint(&other));
}

#[test]
fn ipt_error_is_small_without_noise() {
    let world = WorldConfig::default();
    let report = ipt_benchmark(&world, 1000, &DetectorNoiseModel::default(), 1).unwrap();
    assert!(report.unclipped.count > 1000);
    assert!(report.unclipped.mean < 50.0, "{report}");
    assert!(report.clipped.count > 0);
    assert!(report.clipped.mean > report.unclipped.mean);
    assert_eq!(report.match_rate, 1.0);
}

#[test]
fn ipt_noise_increases_error() {
    let world = WorldConfig::default();
    let clean = ipt_benchmark(&world, 100, &DetectorNoiseModel::default(), 2).unwrap();
    let noise = DetectorNoiseModel {
        enabled: true,
        ..Default::default()
    };
    let noisy = ipt_benchmark(&world, 100, &noise, 2).unwrap();
    assert!(noisy.all.mean > clean.all.mean);
    assert!(noisy.match_rate < 1.0);
    assert!(ipt_benchmark(&world, 1, &noise, 2).is_ok());
    assert!(matches!(ipt_benchmark(&world, 0, &noise, 2), Err(EvalError::NoSteps)));
}
