//! Coverage evaluation, the fixed-camera baseline and the inverse
//! projection benchmark.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::neuralnet::NetworkParams;
use crate::perception::{detect, estimate_coordinates, DetectorNoiseModel};
use crate::reward::team_reward;
use crate::rollout::{run_episode, EnvSetup, Policy, QController, RolloutError};
use crate::simenv::{reset, step, synthesize_all, Action, EnvError, VisibilityMatrix, WorldConfig};
use crate::trainer::select_actions;

pub use crate::rollout::FixedPolicy;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("coverage needs a non-empty history")]
    EmptyHistory,
    #[error("coverage needs at least one target")]
    NoTargets,
    #[error("at least one run is required")]
    NoRuns,
    #[error("at least one benchmark step is required")]
    NoSteps,
    #[error(transparent)]
    Rollout(#[from] RolloutError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// Time-mean of the fraction of targets seen by at least one camera.
pub fn coverage_rate(history: &[VisibilityMatrix]) -> Result<f64, EvalError> {
    if history.is_empty() {
        return Err(EvalError::EmptyHistory);
    }
    let mut sum = 0.0;
    for v in history {
        sum += team_reward(v, v.n_targets()).map_err(|_| EvalError::NoTargets)?;
    }
    Ok(sum / history.len() as f64)
}

/// The baseline: cameras stay at their evenly spaced home poses.
pub fn fixed_baseline_policy(n_cameras: usize) -> FixedPolicy {
    FixedPolicy { n_cameras }
}

/// Greedy control by the shared Q-network.
#[derive(Debug, Clone)]
pub struct GreedyPolicy<'a> {
    controller: QController<'a>,
}

impl<'a> GreedyPolicy<'a> {
    pub fn new(params: &'a NetworkParams) -> Self {
        Self {
            controller: QController::new(params),
        }
    }
}

impl Policy for GreedyPolicy<'_> {
    fn begin_episode(&mut self) {
        self.controller.reset();
    }

    fn act(&mut self, _t: usize, blocks: &Array2<f64>, rng: &mut ChaCha8Rng) -> Result<Vec<Action>, RolloutError> {
        let q = self.controller.q_values(blocks)?;
        let actions = select_actions(q.view(), 0.0, rng);
        self.controller.record_actions(&actions);
        Ok(actions)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub mean: f64,
    /// Population standard deviation over runs.
    pub std: f64,
    pub coverages: Vec<f64>,
    pub runs: usize,
    pub seeds: Vec<u64>,
    pub fingerprint: String,
}

impl EvalReport {
    pub fn from_coverages(label: &str, coverages: Vec<f64>, seeds: Vec<u64>, fingerprint: String) -> Self {
        let (mean, std) = mean_std(&coverages);
        Self {
            label: label.to_string(),
            mean,
            std,
            runs: coverages.len(),
            coverages,
            seeds,
            fingerprint,
        }
    }
}

impl std::fmt::Display for EvalReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{:<12} {:>6} {:>10} {:>8}", "policy", "runs", "coverage", "std")?;
        writeln!(
            f,
            "{:<12} {:>6} {:>9.1}% {:>7.1}%",
            self.label,
            self.runs,
            100.0 * self.mean,
            100.0 * self.std
        )?;
        write!(f, "config {}", &self.fingerprint[..16.min(self.fingerprint.len())])
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Hex SHA-256 over the world, reward and noise settings.
pub fn config_fingerprint(setup: &EnvSetup) -> String {
    let text = serde_json::json!({
        "world": setup.world,
        "weights": setup.weights,
        "composition": setup.composition,
        "noise": setup.noise,
        "max_slots": setup.layout.max_slots,
    })
    .to_string();
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Runs one full episode per seed with `policy` and aggregates coverage.
pub fn evaluate(policy: &mut dyn Policy, setup: &EnvSetup, seeds: &[u64]) -> Result<EvalReport, EvalError> {
    evaluate_labeled("policy", policy, setup, seeds)
}

pub fn evaluate_labeled(
    label: &str,
    policy: &mut dyn Policy,
    setup: &EnvSetup,
    seeds: &[u64],
) -> Result<EvalReport, EvalError> {
    if seeds.is_empty() {
        return Err(EvalError::NoRuns);
    }
    let mut coverages = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let outcome = run_episode(setup, policy, seed, &mut rng)?;
        coverages.push(coverage_rate(&outcome.visibility)?);
    }
    Ok(EvalReport::from_coverages(label, coverages, seeds.to_vec(), config_fingerprint(setup)))
}

/// Error statistics over a set of detections.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorStats {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
}

impl ErrorStats {
    fn from_errors(errors: &[f64]) -> Self {
        let (mean, std) = mean_std(errors);
        Self {
            count: errors.len(),
            mean,
            std,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IptReport {
    pub steps: usize,
    /// Boxes fully inside the frame.
    pub unclipped: ErrorStats,
    /// Boxes cut by the frame border.
    pub clipped: ErrorStats,
    pub all: ErrorStats,
    /// Detections with a ground estimate per ground-truth box.
    pub match_rate: f64,
}

impl std::fmt::Display for IptReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{:<10} {:>8} {:>10} {:>10}", "subset", "count", "mean", "std")?;
        for (name, s) in [("unclipped", self.unclipped), ("clipped", self.clipped), ("all", self.all)] {
            writeln!(f, "{:<10} {:>8} {:>10.2} {:>10.2}", name, s.count, s.mean, s.std)?;
        }
        write!(f, "steps {}  match rate {:.3}", self.steps, self.match_rate)
    }
}

/// Compares inverse-projected box positions with the true target positions
/// over `n_steps` world states visited by randomly acting cameras. Each
/// detection is matched to the target that produced it.
pub fn ipt_benchmark(
    world: &WorldConfig,
    n_steps: usize,
    noise: &DetectorNoiseModel,
    seed: u64,
) -> Result<IptReport, EvalError> {
    if n_steps == 0 {
        return Err(EvalError::NoSteps);
    }
    world.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut detector_rng = ChaCha8Rng::seed_from_u64(seed);
    detector_rng.set_stream(1);
    let mut state = reset(world, rng.random())?;
    let (mut unclipped, mut clipped) = (Vec::new(), Vec::new());
    let (mut boxes_total, mut matched) = (0usize, 0usize);
    for _ in 0..n_steps {
        if state.is_done(world) {
            state = reset(world, rng.random())?;
        }
        let actions: Vec<Action> = (0..world.n_cameras)
            .map(|_| Action::from_joint_index(rng.random_range(0..Action::JOINT_COUNT)))
            .collect();
        state = step(world, &state, &actions)?;
        let boxes = synthesize_all(world, &state)?;
        for (i, cam_boxes) in boxes.iter().enumerate() {
            boxes_total += cam_boxes.len();
            let seen = detect(cam_boxes, noise, world.frame_width, world.frame_height, &mut detector_rng);
            for d in estimate_coordinates(&seen, &state.camera_model(world, i)?) {
                matched += 1;
                let truth = state.targets[d.bbox.target_id].position;
                let err = d.estimated.distance(&truth);
                if d.bbox.truncated {
                    clipped.push(err);
                } else {
                    unclipped.push(err);
                }
            }
        }
    }
    let all: Vec<f64> = unclipped.iter().chain(&clipped).copied().collect();
    Ok(IptReport {
        steps: n_steps,
        unclipped: ErrorStats::from_errors(&unclipped),
        clipped: ErrorStats::from_errors(&clipped),
        all: ErrorStats::from_errors(&all),
        match_rate: if boxes_total == 0 {
            0.0
        } else {
            matched as f64 / boxes_total as f64
        },
    })
}
