//! Double Q-learning over whole episodes.

use std::collections::VecDeque;

use ndarray::{Array2, ArrayView2, ArrayViewMut2};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{coverage_rate, evaluate, EvalError, GreedyPolicy};
use crate::neuralnet::{
    backward, clip_global_norm, copy_params, forward_step, Adam, Checkpoint, NetError, NetworkParams, StepInput,
    StepTrace, Topology, TrainingState, CHOICES, Q_WIDTH,
};
use crate::perception::{last_action_one_hot, LAST_ACTION_WIDTH};
use crate::rollout::{run_episode, EnvSetup, EpisodeOutcome, Policy, QController, RolloutError};
use crate::simenv::Action;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid trainer config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Rollout(#[from] RolloutError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("output: {0}")]
    Output(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    /// Episodes per optimizer step.
    pub batch_size: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_anneal_steps: u64,
    /// Q^B is refreshed from Q^A every this many episodes.
    pub target_sync_episodes: u64,
    pub total_steps: u64,
    /// Replay capacity, in episodes.
    pub buffer_capacity: usize,
    /// One optimizer step after every this many episodes.
    pub train_every_episodes: u64,
    pub grad_clip: f64,
    /// Greedy evaluation period in episodes; 0 disables it.
    pub eval_every_episodes: u64,
    pub eval_episodes: usize,
    /// Checkpoint period in episodes; 0 keeps only the final checkpoint.
    pub checkpoint_every_episodes: u64,
    /// When set, every training episode starts from `reset` with this seed.
    pub fixed_start_seed: Option<u64>,
    /// Bootstrap the last transition of an episode. Episodes only end by
    /// the time limit, so this is on by default.
    pub bootstrap_final: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            learning_rate: 5e-4,
            batch_size: 32,
            epsilon_start: 1.0,
            epsilon_end: 0.1,
            epsilon_anneal_steps: 50_000,
            target_sync_episodes: 100,
            total_steps: 500_000,
            buffer_capacity: 2000,
            train_every_episodes: 1,
            grad_clip: 10.0,
            eval_every_episodes: 0,
            eval_episodes: 5,
            checkpoint_every_episodes: 1000,
            fixed_start_seed: None,
            bootstrap_final: true,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad(format!("learning_rate must be >= 0, got {}", self.learning_rate));
        }
        for (name, e) in [("epsilon_start", self.epsilon_start), ("epsilon_end", self.epsilon_end)] {
            if !(0.0..=1.0).contains(&e) {
                return bad(format!("{name} must lie in [0, 1], got {e}"));
            }
        }
        if self.epsilon_end > self.epsilon_start {
            return bad("epsilon_end must not exceed epsilon_start".into());
        }
        for (name, v) in [
            ("batch_size", self.batch_size as u64),
            ("buffer_capacity", self.buffer_capacity as u64),
            ("target_sync_episodes", self.target_sync_episodes),
            ("train_every_episodes", self.train_every_episodes),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if !(self.grad_clip > 0.0) {
            return bad(format!("grad_clip must be positive, got {}", self.grad_clip));
        }
        if self.eval_every_episodes > 0 && self.eval_episodes == 0 {
            return bad("eval_episodes must be positive when evaluation is enabled".into());
        }
        Ok(())
    }
}

/// Layer sizes of the Q-network plus the number of detection slots per
/// observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSizes {
    pub encoder1: usize,
    pub encoder2: usize,
    pub trunk: usize,
    pub hidden: usize,
    /// Defaults to the number of targets.
    pub max_slots: Option<usize>,
}

impl Default for NetworkSizes {
    fn default() -> Self {
        Self {
            encoder1: 64,
            encoder2: 64,
            trunk: 128,
            hidden: 128,
            max_slots: None,
        }
    }
}

impl NetworkSizes {
    pub fn topology(&self, setup: &EnvSetup) -> Topology {
        Topology {
            observation_dim: setup.observation_dim(),
            n_agents: setup.world.n_cameras,
            encoder1: self.encoder1,
            encoder2: self.encoder2,
            trunk: self.trunk,
            hidden: self.hidden,
        }
    }
}

/// Linear decay from `epsilon_start` to `epsilon_end`, flat afterwards.
pub fn epsilon_at(step: u64, config: &TrainerConfig) -> f64 {
    if config.epsilon_anneal_steps == 0 || step >= config.epsilon_anneal_steps {
        return config.epsilon_end;
    }
    let frac = step as f64 / config.epsilon_anneal_steps as f64;
    config.epsilon_start + (config.epsilon_end - config.epsilon_start) * frac
}

fn argmax3(q: &[f64]) -> usize {
    let mut best = 0;
    for k in 1..q.len() {
        if q[k] > q[best] {
            best = k;
        }
    }
    best
}

/// Per camera and per branch: a uniform choice with probability `epsilon`,
/// else the branch argmax (lowest index on ties). `q` has one 9-wide row
/// per camera.
pub fn select_actions<R: Rng>(q: ArrayView2<'_, f64>, epsilon: f64, rng: &mut R) -> Vec<Action> {
    q.rows()
        .into_iter()
        .map(|row| {
            let mut idx = [0usize; 3];
            for (b, slot) in idx.iter_mut().enumerate() {
                *slot = if epsilon > 0.0 && rng.random::<f64>() < epsilon {
                    rng.random_range(0..CHOICES)
                } else {
                    let branch: Vec<f64> = (0..CHOICES).map(|c| row[b * CHOICES + c]).collect();
                    argmax3(&branch)
                };
            }
            Action::from_indices(idx)
        })
        .collect()
}

/// One step of an episode, unpacked.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    /// `n_cameras x obs_dim`, row-major.
    pub observations: Vec<f64>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    pub next_observations: Vec<f64>,
    pub truncated: bool,
}

/// A stored episode. Observations are kept in single precision.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub n_agents: usize,
    pub observation_dim: usize,
    /// `(steps + 1) x n_agents x observation_dim`.
    observations: Vec<f32>,
    /// `steps x n_agents`.
    actions: Vec<Action>,
    /// `steps x n_agents`.
    rewards: Vec<f64>,
    pub truncated: bool,
}

impl EpisodeRecord {
    pub fn from_outcome(outcome: &EpisodeOutcome) -> Self {
        let n = outcome.observations[0].nrows();
        let dim = outcome.observations[0].ncols();
        Self {
            n_agents: n,
            observation_dim: dim,
            observations: outcome.observations.iter().flat_map(|o| o.iter().map(|&v| v as f32)).collect(),
            actions: outcome.actions.iter().flatten().copied().collect(),
            rewards: outcome.rewards.iter().flat_map(|r| r.totals()).collect(),
            truncated: true,
        }
    }

    /// Builds a record from raw parts; `observations` must hold
    /// `actions.len() + 1` rows of blocks.
    pub fn new(
        observations: &[Array2<f64>],
        actions: &[Vec<Action>],
        rewards: &[Vec<f64>],
        truncated: bool,
    ) -> Self {
        assert_eq!(observations.len(), actions.len() + 1, "one more observation than actions");
        assert_eq!(actions.len(), rewards.len(), "one reward row per step");
        let n = observations[0].nrows();
        assert!(actions.iter().all(|a| a.len() == n));
        assert!(rewards.iter().all(|r| r.len() == n));
        Self {
            n_agents: n,
            observation_dim: observations[0].ncols(),
            observations: observations.iter().flat_map(|o| o.iter().map(|&v| v as f32)).collect(),
            actions: actions.iter().flatten().copied().collect(),
            rewards: rewards.iter().flatten().copied().collect(),
            truncated,
        }
    }

    pub fn steps(&self) -> usize {
        self.actions.len() / self.n_agents
    }

    fn block_len(&self) -> usize {
        self.n_agents * self.observation_dim
    }

    fn observation_slice(&self, t: usize) -> &[f32] {
        &self.observations[t * self.block_len()..(t + 1) * self.block_len()]
    }

    pub fn actions_at(&self, t: usize) -> &[Action] {
        &self.actions[t * self.n_agents..(t + 1) * self.n_agents]
    }

    pub fn rewards_at(&self, t: usize) -> &[f64] {
        &self.rewards[t * self.n_agents..(t + 1) * self.n_agents]
    }

    /// Copies the observation blocks at step `t` into `dst`
    /// (`n_agents x observation_dim`).
    pub fn fill_observations(&self, t: usize, mut dst: ArrayViewMut2<'_, f64>) {
        let src = self.observation_slice(t);
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = f64::from(s);
        }
    }

    pub fn transition(&self, t: usize) -> Transition {
        let widen = |s: &[f32]| s.iter().map(|&v| f64::from(v)).collect::<Vec<f64>>();
        Transition {
            observations: widen(self.observation_slice(t)),
            actions: self.actions_at(t).to_vec(),
            rewards: self.rewards_at(t).to_vec(),
            next_observations: widen(self.observation_slice(t + 1)),
            truncated: self.truncated && t + 1 == self.steps(),
        }
    }
}

/// FIFO store of whole episodes.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    episodes: VecDeque<EpisodeRecord>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            episodes: VecDeque::with_capacity(capacity.min(4096)),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    /// Inserts an episode, returning the evicted oldest one when full.
    pub fn push(&mut self, episode: EpisodeRecord) -> Option<EpisodeRecord> {
        let evicted = if self.episodes.len() == self.capacity {
            self.episodes.pop_front()
        } else {
            None
        };
        self.episodes.push_back(episode);
        evicted
    }

    pub fn get(&self, index: usize) -> Option<&EpisodeRecord> {
        self.episodes.get(index)
    }

    /// `batch` distinct episode indices, or `None` if too few are stored.
    pub fn sample_indices<R: Rng>(&self, batch: usize, rng: &mut R) -> Option<Vec<usize>> {
        (batch <= self.len() && batch > 0).then(|| sample(rng, self.len(), batch).into_vec())
    }
}

/// Per-branch double-Q targets for every step of a batch.
///
/// `q_online[t]` and `q_target[t]` hold the Q-values at state `t` for
/// `t = 0..=T` (rows = queries). `rewards[[t, row]]` is the reward of the
/// action taken at `t`. Returns `T` matrices of shape `rows x 3`.
pub fn td_targets(
    rewards: ArrayView2<'_, f64>,
    q_online: &[Array2<f64>],
    q_target: &[Array2<f64>],
    gamma: f64,
    bootstrap_final: bool,
) -> Vec<Array2<f64>> {
    let (steps, rows) = rewards.dim();
    assert_eq!(q_online.len(), steps + 1);
    assert_eq!(q_target.len(), steps + 1);
    (0..steps)
        .map(|t| {
            let bootstrap = bootstrap_final || t + 1 < steps;
            Array2::from_shape_fn((rows, CHOICES), |(row, b)| {
                let r = rewards[[t, row]];
                if !bootstrap {
                    return r;
                }
                let lo = b * CHOICES;
                let online: Vec<f64> = (0..CHOICES).map(|c| q_online[t + 1][[row, lo + c]]).collect();
                let a_star = argmax3(&online);
                r + gamma * q_target[t + 1][[row, lo + a_star]]
            })
        })
        .collect()
}

/// Copies `online` into `target` when `episode_count` is a multiple of `k`.
pub fn sync_target(online: &NetworkParams, target: &mut NetworkParams, episode_count: u64, k: u64) -> bool {
    if k > 0 && episode_count.is_multiple_of(k) {
        *target = copy_params(online);
        true
    } else {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainStats {
    pub loss: f64,
    pub grad_norm: f64,
}

/// Q^A, Q^B and the optimizer.
#[derive(Debug, Clone)]
pub struct Learner {
    pub online: NetworkParams,
    pub target: NetworkParams,
    pub optimizer: Adam,
}

fn unroll(params: &NetworkParams, inputs: &[StepInput], keep: usize) -> Result<(Vec<Array2<f64>>, Vec<StepTrace>), NetError> {
    let rows = inputs[0].queries.len();
    let mut h = Array2::zeros((rows, params.topology.hidden));
    let mut qs = Vec::with_capacity(inputs.len());
    let mut traces = Vec::with_capacity(keep);
    for (t, input) in inputs.iter().enumerate() {
        let (out, trace) = forward_step(params, input, &h)?;
        qs.push(out.q);
        h = out.hidden;
        if t < keep {
            traces.push(trace);
        }
    }
    Ok((qs, traces))
}

impl Learner {
    pub fn new(online: NetworkParams) -> Self {
        Self {
            target: copy_params(&online),
            optimizer: Adam::new(&online),
            online,
        }
    }

    /// Squared TD loss on the given episodes, with its gradient.
    pub fn loss_and_gradient(
        &self,
        episodes: &[&EpisodeRecord],
        config: &TrainerConfig,
    ) -> Result<(f64, NetworkParams), TrainError> {
        let first = episodes
            .first()
            .ok_or_else(|| TrainError::InvalidConfig("empty batch".into()))?;
        let (steps, n, dim) = (first.steps(), first.n_agents, first.observation_dim);
        if episodes
            .iter()
            .any(|e| e.steps() != steps || e.n_agents != n || e.observation_dim != dim)
        {
            return Err(TrainError::InvalidConfig("episodes in a batch differ in shape".into()));
        }
        let rows = episodes.len() * n;
        let inputs: Vec<StepInput> = (0..=steps)
            .map(|t| {
                let mut obs = Array2::zeros((rows, dim));
                let mut last = Array2::zeros((rows, LAST_ACTION_WIDTH));
                for (g, e) in episodes.iter().enumerate() {
                    e.fill_observations(t, obs.slice_mut(ndarray::s![g * n..(g + 1) * n, ..]));
                    if t > 0 {
                        for (a, act) in e.actions_at(t - 1).iter().enumerate() {
                            let oh = last_action_one_hot(Some(*act));
                            last.row_mut(g * n + a).assign(&ndarray::ArrayView1::from(&oh[..]));
                        }
                    }
                }
                StepInput::all_agents(obs, last, n)
            })
            .collect();
        let (q_online, traces) = unroll(&self.online, &inputs, steps)?;
        let (q_target, _) = unroll(&self.target, &inputs, 0)?;
        let rewards = Array2::from_shape_fn((steps, rows), |(t, row)| episodes[row / n].rewards_at(t)[row % n]);
        let truncated = episodes.iter().all(|e| e.truncated);
        let targets = td_targets(rewards.view(), &q_online, &q_target, config.gamma, truncated && config.bootstrap_final);

        let count = (steps * rows * CHOICES) as f64;
        let mut loss = 0.0;
        let mut dq = Vec::with_capacity(steps);
        for t in 0..steps {
            let mut d = Array2::zeros((rows, Q_WIDTH));
            for row in 0..rows {
                let action = episodes[row / n].actions_at(t)[row % n];
                for (b, &c) in action.indices().iter().enumerate() {
                    let col = b * CHOICES + c;
                    let diff = q_online[t][[row, col]] - targets[t][[row, b]];
                    loss += diff * diff;
                    d[[row, col]] = 2.0 * diff / count;
                }
            }
            dq.push(d);
        }
        let grad = backward(&self.online, &traces, &dq)?;
        Ok((loss / count, grad))
    }

    /// Samples a batch and takes one optimizer step. `None` if the buffer
    /// holds fewer episodes than a batch.
    pub fn train_step<R: Rng>(
        &mut self,
        buffer: &ReplayBuffer,
        config: &TrainerConfig,
        rng: &mut R,
    ) -> Result<Option<TrainStats>, TrainError> {
        let Some(indices) = buffer.sample_indices(config.batch_size, rng) else {
            return Ok(None);
        };
        let batch: Vec<&EpisodeRecord> = indices.iter().map(|&i| buffer.get(i).expect("sampled index")).collect();
        let (loss, mut grad) = self.loss_and_gradient(&batch, config)?;
        let grad_norm = clip_global_norm(&mut grad, config.grad_clip);
        self.optimizer.step(&mut self.online, &grad, config.learning_rate);
        Ok(Some(TrainStats { loss, grad_norm }))
    }
}

/// Epsilon-greedy control with the schedule evaluated at a global step.
struct ExplorationPolicy<'a> {
    controller: QController<'a>,
    config: &'a TrainerConfig,
    step_base: u64,
}

impl Policy for ExplorationPolicy<'_> {
    fn begin_episode(&mut self) {
        self.controller.reset();
    }

    fn act(&mut self, t: usize, blocks: &Array2<f64>, rng: &mut ChaCha8Rng) -> Result<Vec<Action>, RolloutError> {
        let q = self.controller.q_values(blocks)?;
        let eps = epsilon_at(self.step_base + t as u64, self.config);
        let actions = select_actions(q.view(), eps, rng);
        self.controller.record_actions(&actions);
        Ok(actions)
    }
}

/// Everything needed to start a training run.
#[derive(Debug, Clone)]
pub struct TrainingSetup {
    pub env: EnvSetup,
    pub trainer: TrainerConfig,
    pub network: NetworkSizes,
    pub seed: u64,
}

/// Seeds of the worlds used for periodic greedy evaluation.
pub fn evaluation_seeds(count: usize) -> Vec<u64> {
    (0..count as u64).map(|k| 1_000_000 + k).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricsRecord {
    Header {
        seed: u64,
        topology: Topology,
        parameters: usize,
        composition: String,
        team_weight: f64,
        individual_weight: f64,
    },
    Episode {
        episode: u64,
        step: u64,
        epsilon: f64,
        loss: Option<f64>,
        grad_norm: Option<f64>,
        coverage: f64,
        reward: f64,
        team: f64,
        bbox: f64,
        visibility: f64,
        direction: f64,
        position: f64,
        synced: bool,
    },
    Eval {
        episode: u64,
        step: u64,
        coverage_mean: f64,
        coverage_std: f64,
    },
}

/// Where a training run sends its metrics and checkpoints.
pub trait TrainingSink {
    fn record(&mut self, record: &MetricsRecord) -> Result<(), TrainError>;
    fn checkpoint(&mut self, step: u64, checkpoint: &Checkpoint) -> Result<(), TrainError>;
}

/// Keeps everything in memory.
#[derive(Debug, Default)]
pub struct MemorySink {
    pub records: Vec<MetricsRecord>,
    pub checkpoints: Vec<(u64, Vec<u8>)>,
}

impl MemorySink {
    /// The metrics as line-delimited JSON.
    pub fn metrics_log(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("metrics serialize") + "\n")
            .collect()
    }
}

impl TrainingSink for MemorySink {
    fn record(&mut self, record: &MetricsRecord) -> Result<(), TrainError> {
        self.records.push(record.clone());
        Ok(())
    }

    fn checkpoint(&mut self, step: u64, checkpoint: &Checkpoint) -> Result<(), TrainError> {
        self.checkpoints.push((step, checkpoint.to_bytes()));
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub params: NetworkParams,
    pub checkpoint: Checkpoint,
    pub steps: u64,
    pub episodes: u64,
    pub optimizer_steps: u64,
    pub buffer_len: usize,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn episode_metrics(outcome: &EpisodeOutcome) -> (f64, [f64; 6]) {
    let coverage = coverage_rate(&outcome.visibility).unwrap_or(0.0);
    let agents = || outcome.rewards.iter().flat_map(|r| r.agents.iter());
    let terms = [
        mean(agents().map(|a| a.total)),
        mean(outcome.rewards.iter().map(|r| r.team)),
        mean(agents().map(|a| a.bbox)),
        mean(agents().map(|a| a.visibility)),
        mean(agents().map(|a| a.direction)),
        mean(agents().map(|a| a.position)),
    ];
    (coverage, terms)
}

/// Rollout, replay and optimisation loop. Runs whole episodes until the
/// next one would exceed `total_steps`.
pub fn run_training(setup: &TrainingSetup, sink: &mut dyn TrainingSink) -> Result<TrainingOutcome, TrainError> {
    let cfg = &setup.trainer;
    cfg.validate()?;
    let env = &setup.env;
    let topology = setup.network.topology(env);
    let mut rng = ChaCha8Rng::seed_from_u64(setup.seed);
    let mut learner = Learner::new(NetworkParams::init(topology, rng.random())?);
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
    let eval_seeds = evaluation_seeds(cfg.eval_episodes);

    sink.record(&MetricsRecord::Header {
        seed: setup.seed,
        topology,
        parameters: learner.online.parameter_count(),
        composition: env.composition.to_string(),
        team_weight: env.composition.team,
        individual_weight: env.composition.individual,
    })?;

    let horizon = env.world.episode_length as u64;
    let mut step = 0u64;
    let mut episode = 0u64;
    let mut optimizer_steps = 0u64;
    sync_target(&learner.online, &mut learner.target, 0, cfg.target_sync_episodes);
    let make_checkpoint = |learner: &Learner, step: u64, episode: u64| Checkpoint {
        params: learner.online.clone(),
        training: Some(TrainingState {
            step,
            episode,
            epsilon: epsilon_at(step, cfg),
            optimizer: learner.optimizer.clone(),
        }),
    };
    while horizon > 0 && step + horizon <= cfg.total_steps {
        let env_seed = cfg.fixed_start_seed.unwrap_or_else(|| rng.random());
        let outcome = {
            let mut policy = ExplorationPolicy {
                controller: QController::new(&learner.online),
                config: cfg,
                step_base: step,
            };
            run_episode(env, &mut policy, env_seed, &mut rng)?
        };
        step += horizon;
        episode += 1;
        buffer.push(EpisodeRecord::from_outcome(&outcome));

        let stats = if episode.is_multiple_of(cfg.train_every_episodes) {
            learner.train_step(&buffer, cfg, &mut rng)?
        } else {
            None
        };
        optimizer_steps += u64::from(stats.is_some());
        let synced = sync_target(&learner.online, &mut learner.target, episode, cfg.target_sync_episodes);
        let (coverage, [reward, team, bbox, visibility, direction, position]) = episode_metrics(&outcome);
        sink.record(&MetricsRecord::Episode {
            episode,
            step,
            epsilon: epsilon_at(step, cfg),
            loss: stats.map(|s| s.loss),
            grad_norm: stats.map(|s| s.grad_norm),
            coverage,
            reward,
            team,
            bbox,
            visibility,
            direction,
            position,
            synced,
        })?;
        if cfg.eval_every_episodes > 0 && episode % cfg.eval_every_episodes == 0 {
            let report = evaluate(&mut GreedyPolicy::new(&learner.online), env, &eval_seeds)?;
            sink.record(&MetricsRecord::Eval {
                episode,
                step,
                coverage_mean: report.mean,
                coverage_std: report.std,
            })?;
        }
        if cfg.checkpoint_every_episodes > 0 && episode % cfg.checkpoint_every_episodes == 0 {
            sink.checkpoint(step, &make_checkpoint(&learner, step, episode))?;
        }
    }
    let checkpoint = make_checkpoint(&learner, step, episode);
    let already_saved = cfg.checkpoint_every_episodes > 0 && episode > 0 && episode % cfg.checkpoint_every_episodes == 0;
    if !already_saved {
        sink.checkpoint(step, &checkpoint)?;
    }
    Ok(TrainingOutcome {
        params: learner.online,
        checkpoint,
        steps: step,
        episodes: episode,
        optimizer_steps,
        buffer_len: buffer.len(),
    })
}
