//! Running a policy through one episode of the world.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::neuralnet::{forward_step, NetError, NetworkParams, StepInput};
use crate::perception::{
    build_joint_observation, detect, encode_observation, estimate_coordinates, last_action_one_hot, Detection,
    DetectorNoiseModel, EncodingLayout, LAST_ACTION_WIDTH,
};
use crate::reward::{compute_rewards, RewardBreakdown, RewardComposition, RewardError, RewardInputs, RewardTerms, RewardWeights};
use crate::simenv::{reset, step, synthesize_all, visibility_from_boxes, Action, BoundingBox, EnvError, VisibilityMatrix, WorldConfig, WorldState};

#[derive(Debug, Error)]
pub enum RolloutError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("invalid setup: {0}")]
    Setup(String),
}

/// Everything fixed about the environment a policy acts in.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSetup {
    pub world: WorldConfig,
    pub layout: EncodingLayout,
    pub weights: RewardWeights,
    pub composition: RewardComposition,
    pub noise: DetectorNoiseModel,
}

impl EnvSetup {
    pub fn new(
        world: WorldConfig,
        max_slots: Option<usize>,
        weights: RewardWeights,
        terms: &RewardTerms,
        noise: DetectorNoiseModel,
    ) -> Result<Self, RolloutError> {
        world.validate()?;
        weights.validate()?;
        noise.validate().map_err(RolloutError::Setup)?;
        if !terms.any() {
            return Err(RolloutError::Setup("every reward term is ablated".into()));
        }
        Ok(Self {
            layout: EncodingLayout::new(&world, max_slots),
            composition: RewardComposition::new(&weights, terms),
            world,
            weights,
            noise,
        })
    }

    pub fn with_defaults(world: WorldConfig) -> Result<Self, RolloutError> {
        Self::new(
            world,
            None,
            RewardWeights::default(),
            &RewardTerms::default(),
            DetectorNoiseModel::default(),
        )
    }

    pub fn observation_dim(&self) -> usize {
        self.layout.observation_len()
    }
}

/// What the cameras see in one world state.
#[derive(Debug, Clone)]
pub struct Observation {
    pub boxes: Vec<Vec<BoundingBox>>,
    pub detections: Vec<Vec<Detection>>,
    pub visibility: VisibilityMatrix,
    /// One encoded observation block per camera.
    pub blocks: Array2<f64>,
}

pub fn observe<R: rand::Rng>(setup: &EnvSetup, state: &WorldState, rng: &mut R) -> Result<Observation, RolloutError> {
    let world = &setup.world;
    let boxes = synthesize_all(world, state)?;
    let visibility = visibility_from_boxes(world, &boxes);
    let mut detections = Vec::with_capacity(boxes.len());
    for (i, b) in boxes.iter().enumerate() {
        let seen = detect(b, &setup.noise, world.frame_width, world.frame_height, rng);
        detections.push(estimate_coordinates(&seen, &state.camera_model(world, i)?));
    }
    let joint = build_joint_observation(world, state, detections.clone());
    let dim = setup.observation_dim();
    let mut flat = Vec::with_capacity(world.n_cameras * dim);
    for agent in &joint.agents {
        encode_observation(world, &setup.layout, agent, &mut flat);
    }
    let blocks = Array2::from_shape_vec((world.n_cameras, dim), flat).expect("one block per camera");
    Ok(Observation {
        boxes,
        detections,
        visibility,
        blocks,
    })
}

pub fn rewards_for(setup: &EnvSetup, state: &WorldState, obs: &Observation) -> Result<RewardBreakdown, RolloutError> {
    let poses: Vec<_> = state.cameras.iter().map(|c| c.view_pose(&setup.world)).collect();
    let inputs = RewardInputs {
        visibility: &obs.visibility,
        boxes: &obs.boxes,
        detections: &obs.detections,
        poses: &poses,
        frame_area: setup.world.frame_area(),
    };
    Ok(compute_rewards(&inputs, &setup.weights, &setup.composition)?)
}

/// A joint controller for all cameras.
pub trait Policy {
    fn begin_episode(&mut self);
    /// `t` is the step within the episode, `blocks` the encoded
    /// observation of every camera.
    fn act(&mut self, t: usize, blocks: &Array2<f64>, rng: &mut ChaCha8Rng) -> Result<Vec<Action>, RolloutError>;
}

/// Keeps every camera where it is.
#[derive(Debug, Clone, Copy, Default)]
pub struct FixedPolicy {
    pub n_cameras: usize,
}

impl Policy for FixedPolicy {
    fn begin_episode(&mut self) {}

    fn act(&mut self, _t: usize, blocks: &Array2<f64>, _rng: &mut ChaCha8Rng) -> Result<Vec<Action>, RolloutError> {
        Ok(vec![Action::NOOP; blocks.nrows()])
    }
}

/// Recurrent state of the shared Q-network while it controls the cameras.
#[derive(Debug, Clone)]
pub struct QController<'a> {
    pub params: &'a NetworkParams,
    hidden: Array2<f64>,
    last_actions: Array2<f64>,
}

impl<'a> QController<'a> {
    pub fn new(params: &'a NetworkParams) -> Self {
        let n = params.topology.n_agents;
        Self {
            params,
            hidden: Array2::zeros((n, params.topology.hidden)),
            last_actions: Array2::zeros((n, LAST_ACTION_WIDTH)),
        }
    }

    pub fn reset(&mut self) {
        self.hidden.fill(0.0);
        self.last_actions.fill(0.0);
    }

    /// Q-values for every camera (`n x 9`), advancing the hidden state.
    pub fn q_values(&mut self, blocks: &Array2<f64>) -> Result<Array2<f64>, RolloutError> {
        let n = self.params.topology.n_agents;
        let input = StepInput::all_agents(blocks.clone(), self.last_actions.clone(), n);
        let (out, _) = forward_step(self.params, &input, &self.hidden)?;
        self.hidden = out.hidden;
        Ok(out.q)
    }

    pub fn record_actions(&mut self, actions: &[Action]) {
        for (i, a) in actions.iter().enumerate() {
            let one_hot = last_action_one_hot(Some(*a));
            for (k, v) in one_hot.iter().enumerate() {
                self.last_actions[[i, k]] = *v;
            }
        }
    }
}

/// Everything that happened in one episode. `observations` has one more
/// entry than `actions`: the state after the last action.
#[derive(Debug, Clone)]
pub struct EpisodeOutcome {
    pub env_seed: u64,
    pub observations: Vec<Array2<f64>>,
    pub actions: Vec<Vec<Action>>,
    /// Reward earned by each action, evaluated on the resulting state.
    pub rewards: Vec<RewardBreakdown>,
    /// Visibility after each action.
    pub visibility: Vec<VisibilityMatrix>,
    pub final_state: WorldState,
}

impl EpisodeOutcome {
    pub fn steps(&self) -> usize {
        self.actions.len()
    }
}

/// Runs a full episode from `reset(world, env_seed)`. Detector noise draws
/// from its own stream derived from `env_seed`; `rng` is handed to the
/// policy.
pub fn run_episode(
    setup: &EnvSetup,
    policy: &mut dyn Policy,
    env_seed: u64,
    rng: &mut ChaCha8Rng,
) -> Result<EpisodeOutcome, RolloutError> {
    let world = &setup.world;
    let mut detector_rng = ChaCha8Rng::seed_from_u64(env_seed);
    detector_rng.set_stream(1);
    let mut state = reset(world, env_seed)?;
    let mut obs = observe(setup, &state, &mut detector_rng)?;
    let t_max = world.episode_length;
    let mut outcome = EpisodeOutcome {
        env_seed,
        observations: Vec::with_capacity(t_max + 1),
        actions: Vec::with_capacity(t_max),
        rewards: Vec::with_capacity(t_max),
        visibility: Vec::with_capacity(t_max),
        final_state: state.clone(),
    };
    policy.begin_episode();
    for t in 0..t_max {
        let actions = policy.act(t, &obs.blocks, rng)?;
        state = step(world, &state, &actions)?;
        let next = observe(setup, &state, &mut detector_rng)?;
        let reward = rewards_for(setup, &state, &next)?;
        outcome.observations.push(std::mem::replace(&mut obs.blocks, Array2::zeros((0, 0))));
        outcome.actions.push(actions);
        outcome.rewards.push(reward);
        outcome.visibility.push(next.visibility.clone());
        obs = next;
    }
    outcome.observations.push(obs.blocks);
    outcome.final_state = state;
    Ok(outcome)
}
