//! Checks shared by several test targets.
#![allow(dead_code)]

use std::f64::consts::PI;

use amot::eval::coverage_rate;
use amot::geometry::{GroundPoint, ViewPose};
use amot::perception::DetectorNoiseModel;
use amot::reward::*;
use amot::rollout::{observe, rewards_for, EnvSetup};
use amot::simenv::{reset, step, Action, BoundingBox, VisibilityMatrix, WorldConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-12
}

fn frame_box(w: f64, h: f64) -> BoundingBox {
    BoundingBox {
        target_id: 0,
        u_min: 0.0,
        v_min: 0.0,
        u_max: w,
        v_max: h,
        truncated: false,
    }
}

/// The worked examples of every reward function, as (name, holds).
pub fn reward_examples() -> Vec<(&'static str, bool)> {
    let mut out = Vec::new();

    let mut v = VisibilityMatrix::new(3, 22);
    out.push(("team: nothing covered", team_reward(&v, 22).unwrap() == 0.0));
    for j in 0..14 {
        v.set(j % 3, j, true);
    }
    out.push(("team: 14 of 22", close(team_reward(&v, 22).unwrap(), 14.0 / 22.0)));
    for j in 0..22 {
        v.set(1, j, true);
    }
    out.push(("team: all covered", team_reward(&v, 22).unwrap() == 1.0));

    let s0 = 640.0 * 480.0;
    out.push(("box: 0.001 of frame", close(box_reward(&[frame_box(307.2, 1.0)], s0, 0.2), 0.1)));
    out.push(("box: capped", close(box_reward(&[frame_box(307.2, 10.0)], s0, 0.2), 0.2)));
    out.push(("box: no boxes", box_reward(&[], s0, 0.2) == 0.0));

    let mut v = VisibilityMatrix::new(2, 1);
    out.push(("vis: sees nothing", visibility_reward(&v, 0) == 0.0));
    v.set(0, 0, true);
    out.push(("vis: alone", visibility_reward(&v, 0) == 1.0));
    v.set(1, 0, true);
    out.push(("vis: shared", visibility_reward(&v, 0) == 0.5 && visibility_reward(&v, 1) == 0.5));

    let pose = ViewPose {
        x: 0.0,
        y: 0.0,
        height: 500.0,
        yaw: 0.0,
        pitch: 0.0,
    };
    let at = |a: f64| GroundPoint::new(1000.0 * a.cos(), 1000.0 * a.sin());
    out.push(("dir: centered", close(direction_reward(&pose, &[at(0.0)], PI / 4.0), 1.0)));
    out.push(("dir: quarter turn", close(direction_reward(&pose, &[at(PI / 4.0)], PI / 4.0), 0.0)));
    out.push(("dir: eighth turn", close(direction_reward(&pose, &[at(-PI / 8.0)], PI / 4.0), 0.5)));

    let p = |x: f64| GroundPoint::new(x, 0.0);
    out.push(("pos: far apart", position_reward(&[p(0.0), p(5000.0)], 0, 5000.0) == 0.0));
    out.push(("pos: coincident", position_reward(&[p(7.0), p(7.0)], 0, 5000.0) == -1.0));
    out.push(("pos: half distance", close(position_reward(&[p(0.0), p(2500.0)], 0, 5000.0), -0.5)));

    let c = RewardComposition::new(&RewardWeights::default(), &RewardTerms::default());
    out.push(("total: 0.4 + 0.6 * 0.5", close(total_reward(&c, 1.0, 0.5), 0.7)));
    out.push(("total: all zero", total_reward(&c, 0.0, 0.0) == 0.0));
    let r = AgentReward {
        bbox: 0.2,
        visibility: 1.0,
        direction: 1.0,
        position: 0.0,
        ..Default::default()
    };
    out.push(("total: mixed terms", close(total_reward(&c, 0.5, individual_reward(&c, &r)), 0.92)));
    out
}

/// Draws a random world, walks it with random actions and checks every
/// reward bound on every visited state. Returns the number of states.
pub fn check_random_rewards(seed: u64, episodes: usize) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = 0;
    for _ in 0..episodes {
        let world = WorldConfig {
            n_cameras: rng.random_range(1..=5),
            n_targets: rng.random_range(1..=12),
            court_half_x: rng.random_range(800.0..6000.0),
            court_half_y: rng.random_range(400.0..3000.0),
            episode_length: 12,
            ..Default::default()
        };
        let weights = RewardWeights {
            w_team: rng.random_range(0.0..=1.0),
            alpha_max: rng.random_range(0.1..=PI),
            mu_max: rng.random_range(0.01..1.0),
            d_max: rng.random_range(100.0..8000.0),
            ..Default::default()
        };
        let noise = DetectorNoiseModel {
            enabled: rng.random_bool(0.5),
            ..Default::default()
        };
        let setup = EnvSetup::new(world.clone(), None, weights.clone(), &RewardTerms::default(), noise)
            .map_err(|e| e.to_string())?;
        let mut state = reset(&world, rng.random()).map_err(|e| e.to_string())?;
        while !state.is_done(&world) {
            let actions: Vec<Action> = (0..world.n_cameras)
                .map(|_| Action::from_joint_index(rng.random_range(0..Action::JOINT_COUNT)))
                .collect();
            state = step(&world, &state, &actions).map_err(|e| e.to_string())?;
            let obs = observe(&setup, &state, &mut rng).map_err(|e| e.to_string())?;
            let r = rewards_for(&setup, &state, &obs).map_err(|e| e.to_string())?;
            check_breakdown(&r, &obs.visibility, &weights)?;
            states += 1;
        }
    }
    Ok(states)
}

pub fn check_breakdown(r: &RewardBreakdown, v: &VisibilityMatrix, w: &RewardWeights) -> Result<(), String> {
    let fail = |what: String| Err(what);
    if !(0.0..=1.0).contains(&r.team) {
        return fail(format!("team {} outside [0, 1]", r.team));
    }
    if r.team != coverage_rate(std::slice::from_ref(v)).unwrap() {
        return fail("team reward differs from single-step coverage".into());
    }
    let shares: f64 = r.agents.iter().map(|a| a.visibility).sum();
    if (shares - v.covered_count() as f64).abs() > 1e-9 {
        return fail(format!("visibility shares {shares} != covered {}", v.covered_count()));
    }
    for a in &r.agents {
        if !(0.0..=w.mu_max).contains(&a.bbox) {
            return fail(format!("box {} outside [0, {}]", a.bbox, w.mu_max));
        }
        if !(-1.0..=0.0).contains(&a.position) {
            return fail(format!("position {} outside [-1, 0]", a.position));
        }
        let low = 1.0 - PI / w.alpha_max;
        if a.direction < low - 1e-12 || a.direction > 1.0 + 1e-12 {
            return fail(format!("direction {} outside [{low}, 1]", a.direction));
        }
        if a.visibility < 0.0 {
            return fail(format!("negative visibility {}", a.visibility));
        }
        let individual = a.bbox + w.lambda_vis * a.visibility + w.lambda_dir * a.direction + w.lambda_pos * a.position;
        if (a.individual - individual).abs() > 1e-12 {
            return fail(format!("individual {} != {individual}", a.individual));
        }
        let total = w.w_team * r.team + (1.0 - w.w_team) * individual;
        if (a.total - total).abs() > 1e-12 {
            return fail(format!("total {} != {total}", a.total));
        }
    }
    Ok(())
}
