//! From boxes to network inputs.
//!
//! Each box is reduced to the ground point under the middle of its bottom
//! edge, recovered by inverse projection. An agent's observation holds those
//! points plus its own pose and the L1 distances to the other cameras, and
//! [`encode`] packs it into a fixed-length vector.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::{CameraModel, GroundPoint};
use crate::simenv::{Action, BoundingBox, WorldConfig, WorldState};

/// Stand-in for an imperfect detector: boxes are dropped at random and the
/// survivors' edges are jittered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorNoiseModel {
    pub enabled: bool,
    pub miss_probability: f64,
    pub pixel_jitter_sigma: f64,
}

impl Default for DetectorNoiseModel {
    fn default() -> Self {
        Self {
            enabled: false,
            miss_probability: 0.05,
            pixel_jitter_sigma: 2.0,
        }
    }
}

impl DetectorNoiseModel {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.miss_probability) {
            return Err(format!("miss_probability must lie in [0, 1], got {}", self.miss_probability));
        }
        if !(self.pixel_jitter_sigma.is_finite() && self.pixel_jitter_sigma >= 0.0) {
            return Err(format!("pixel_jitter_sigma must be >= 0, got {}", self.pixel_jitter_sigma));
        }
        Ok(())
    }
}

pub fn detect<R: Rng>(
    boxes: &[BoundingBox],
    noise: &DetectorNoiseModel,
    frame_width: u32,
    frame_height: u32,
    rng: &mut R,
) -> Vec<BoundingBox> {
    if !noise.enabled {
        return boxes.to_vec();
    }
    let w = f64::from(frame_width);
    let h = f64::from(frame_height);
    let jitter = Normal::new(0.0, noise.pixel_jitter_sigma).expect("sigma validated");
    let mut out = Vec::with_capacity(boxes.len());
    for b in boxes {
        if rng.random::<f64>() < noise.miss_probability {
            continue;
        }
        let mut sample = |x: f64| {
            if noise.pixel_jitter_sigma > 0.0 {
                x + jitter.sample(rng)
            } else {
                x
            }
        };
        let (u1, v1, u2, v2) = (sample(b.u_min), sample(b.v_min), sample(b.u_max), sample(b.v_max));
        out.push(BoundingBox {
            target_id: b.target_id,
            u_min: u1.min(u2).clamp(0.0, w),
            u_max: u1.max(u2).clamp(0.0, w),
            v_min: v1.min(v2).clamp(0.0, h),
            v_max: v1.max(v2).clamp(0.0, h),
            truncated: b.truncated,
        });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub estimated: GroundPoint,
}

/// Inverse-projects the bottom-middle pixel of every box. Boxes whose ray
/// misses the ground in front of the camera are dropped.
pub fn estimate_coordinates(boxes: &[BoundingBox], cam: &CameraModel) -> Vec<Detection> {
    boxes
        .iter()
        .filter_map(|b| {
            let (u, v) = b.bottom_mid();
            cam.inverse_project_ground(u, v).ok().map(|estimated| Detection {
                bbox: *b,
                estimated,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentObservation {
    pub detections: Vec<Detection>,
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub zoom: f64,
    /// L1 ground distance to every other camera, in camera order.
    pub distances: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointObservation {
    pub agents: Vec<AgentObservation>,
}

pub fn build_joint_observation(
    config: &WorldConfig,
    state: &WorldState,
    detections: Vec<Vec<Detection>>,
) -> JointObservation {
    assert_eq!(detections.len(), state.cameras.len(), "one detection list per camera");
    let positions = state.camera_positions(config);
    let agents = detections
        .into_iter()
        .enumerate()
        .map(|(i, dets)| {
            let me = positions[i];
            let distances = positions
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, p)| me.l1_distance(p))
                .collect();
            let cam = &state.cameras[i];
            AgentObservation {
                detections: dets,
                x: me.x,
                y: me.y,
                yaw: cam.yaw,
                zoom: cam.zoom,
                distances,
            }
        })
        .collect();
    JointObservation { agents }
}

/// Per-agent input: the observation block followed by the agent's one-hot
/// identity and its previous action as three 3-way one-hots.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedInput {
    pub values: Vec<f64>,
    pub observation_len: usize,
    pub n_agents: usize,
}

impl EncodedInput {
    pub fn observation(&self) -> &[f64] {
        &self.values[..self.observation_len]
    }

    pub fn identity(&self) -> &[f64] {
        &self.values[self.observation_len..self.observation_len + self.n_agents]
    }

    pub fn last_action(&self) -> &[f64] {
        &self.values[self.observation_len + self.n_agents..]
    }
}

/// Layout of the encoded observation block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncodingLayout {
    pub max_slots: usize,
    pub n_agents: usize,
}

pub const SLOT_WIDTH: usize = 3;
/// x, y, sin(yaw), cos(yaw), zoom.
pub const POSE_WIDTH: usize = 5;
pub const LAST_ACTION_WIDTH: usize = Action::BRANCHES * Action::CHOICES;

impl EncodingLayout {
    pub fn new(config: &WorldConfig, max_slots: Option<usize>) -> Self {
        Self {
            max_slots: max_slots.unwrap_or(config.n_targets),
            n_agents: config.n_cameras,
        }
    }

    pub fn observation_len(&self) -> usize {
        self.max_slots * SLOT_WIDTH + POSE_WIDTH + self.n_agents.saturating_sub(1)
    }

    pub fn input_len(&self) -> usize {
        self.observation_len() + self.n_agents + LAST_ACTION_WIDTH
    }
}

/// Three concatenated one-hots; all zeros when there is no previous action.
pub fn last_action_one_hot(action: Option<Action>) -> [f64; LAST_ACTION_WIDTH] {
    let mut out = [0.0; LAST_ACTION_WIDTH];
    if let Some(a) = action {
        for (branch, idx) in a.indices().into_iter().enumerate() {
            out[branch * Action::CHOICES + idx] = 1.0;
        }
    }
    out
}

/// Writes the observation block of one agent into `out`.
pub fn encode_observation(
    config: &WorldConfig,
    layout: &EncodingLayout,
    obs: &AgentObservation,
    out: &mut Vec<f64>,
) {
    let (hx, hy) = (config.court_half_x, config.court_half_y);
    let mut order: Vec<&Detection> = obs.detections.iter().collect();
    // Largest box first; target id only breaks exact ties.
    order.sort_by(|a, b| {
        b.bbox
            .area()
            .total_cmp(&a.bbox.area())
            .then(a.bbox.target_id.cmp(&b.bbox.target_id))
    });
    for slot in 0..layout.max_slots {
        match order.get(slot) {
            Some(d) => {
                out.push((d.estimated.x / hx).clamp(-1.0, 1.0));
                out.push((d.estimated.y / hy).clamp(-1.0, 1.0));
                out.push(1.0);
            }
            None => out.extend_from_slice(&[0.0; SLOT_WIDTH]),
        }
    }
    out.push((obs.x / hx).clamp(-1.0, 1.0));
    out.push((obs.y / hy).clamp(-1.0, 1.0));
    out.push(obs.yaw.sin());
    out.push(obs.yaw.cos());
    let (lo, hi) = (config.zoom_min.ln(), config.zoom_max.ln());
    let zoom = if hi > lo {
        (2.0 * (obs.zoom.ln() - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0)
    } else {
        0.0
    };
    out.push(zoom);
    let scale = config.perimeter() / 2.0;
    for d in &obs.distances {
        out.push((d / scale).clamp(0.0, 1.0));
    }
}

pub fn encode(
    config: &WorldConfig,
    layout: &EncodingLayout,
    joint: &JointObservation,
    agent_index: usize,
    last_action: Option<Action>,
) -> EncodedInput {
    assert!(agent_index < joint.agents.len(), "agent index out of range");
    let mut values = Vec::with_capacity(layout.input_len());
    encode_observation(config, layout, &joint.agents[agent_index], &mut values);
    let observation_len = values.len();
    debug_assert_eq!(observation_len, layout.observation_len());
    for k in 0..layout.n_agents {
        values.push(if k == agent_index { 1.0 } else { 0.0 });
    }
    values.extend_from_slice(&last_action_one_hot(last_action));
    EncodedInput {
        values,
        observation_len,
        n_agents: layout.n_agents,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simenv::{reset, synthesize_bboxes, target_bbox, TargetState};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_boxes() -> Vec<BoundingBox> {
        (0..5)
            .map(|k| BoundingBox {
                target_id: k,
                u_min: 10.0 * k as f64,
                v_min: 20.0,
                u_max: 10.0 * k as f64 + 30.0,
                v_max: 90.0,
                truncated: false,
            })
            .collect()
    }

    #[test]
    fn detect_identity_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let boxes = sample_boxes();
        let off = DetectorNoiseModel::default();
        assert_eq!(detect(&boxes, &off, 640, 480, &mut rng), boxes);
        let silent = DetectorNoiseModel {
            enabled: true,
            miss_probability: 0.0,
            pixel_jitter_sigma: 0.0,
        };
        assert_eq!(detect(&boxes, &silent, 640, 480, &mut rng), boxes);
        let blind = DetectorNoiseModel {
            enabled: true,
            miss_probability: 1.0,
            pixel_jitter_sigma: 0.0,
        };
        assert!(detect(&boxes, &blind, 640, 480, &mut rng).is_empty());
    }

    #[test]
    fn detect_jitter_stays_in_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let noisy = DetectorNoiseModel {
            enabled: true,
            miss_probability: 0.0,
            pixel_jitter_sigma: 50.0,
        };
        for b in detect(&sample_boxes(), &noisy, 640, 480, &mut rng) {
            assert!(b.u_min <= b.u_max && b.v_min <= b.v_max);
            assert!(b.u_min >= 0.0 && b.u_max <= 640.0 && b.v_min >= 0.0 && b.v_max <= 480.0);
        }
    }

    #[test]
    fn bottom_mid_of_projected_base_round_trips() {
        let config = WorldConfig::default();
        let state = reset(&config, 5).unwrap();
        let cam = state.camera_model(&config, 0).unwrap();
        let truth = GroundPoint::new(300.0, -800.0);
        let px = cam.project(&truth.to_world()).unwrap();
        let b = BoundingBox {
            target_id: 0,
            u_min: px.u - 4.0,
            v_min: px.v - 40.0,
            u_max: px.u + 4.0,
            v_max: px.v,
            truncated: false,
        };
        let d = estimate_coordinates(&[b], &cam);
        assert_eq!(d.len(), 1);
        assert_abs_diff_eq!(d[0].estimated.x, truth.x, epsilon = 1e-6);
        assert_abs_diff_eq!(d[0].estimated.y, truth.y, epsilon = 1e-6);
        assert!(estimate_coordinates(&[], &cam).is_empty());
    }

    #[test]
    fn estimate_error_is_footprint_sized() {
        let config = WorldConfig::default();
        let state = reset(&config, 9).unwrap();
        let cam = state.camera_model(&config, 0).unwrap();
        let truth = GroundPoint::new(-200.0, -500.0);
        let b = target_bbox(&config, &cam, 0, &truth).unwrap();
        assert!(!b.truncated);
        let d = estimate_coordinates(&[b], &cam)[0];
        let err = d.estimated.distance(&truth);
        let half_diag = (30f64).hypot(20.0);
        assert!(err <= half_diag + 1e-6, "error {err}");
    }

    #[test]
    fn clipped_box_biases_estimate() {
        // Feet below the bottom edge: the clipped bottom pulls the estimate
        // away from the camera.
        let config = WorldConfig::default();
        let mut state = reset(&config, 0).unwrap();
        state.targets[0] = TargetState {
            position: GroundPoint::new(0.0, -2500.0 + 450.0),
            destination: GroundPoint::new(0.0, 0.0),
            steps_since_destination: 0,
        };
        let cam = state.camera_model(&config, 0).unwrap();
        let b = synthesize_bboxes(&config, &state, 0)
            .unwrap()
            .into_iter()
            .find(|b| b.target_id == 0)
            .unwrap();
        assert!(b.truncated);
        let d = estimate_coordinates(&[b], &cam)[0];
        assert!(d.estimated.y > state.targets[0].position.y + 20.0);
    }

    #[test]
    fn joint_observation_distances() {
        let config = WorldConfig {
            n_cameras: 2,
            ..WorldConfig::default()
        };
        let state = reset(&config, 0).unwrap();
        let joint = build_joint_observation(&config, &state, vec![vec![], vec![]]);
        // Cameras at (0, -2500) and (0, 2500).
        assert_abs_diff_eq!(joint.agents[0].distances[0], 5000.0, epsilon = 1e-9);
        assert_abs_diff_eq!(joint.agents[1].distances[0], 5000.0, epsilon = 1e-9);
        assert!(joint.agents[0].detections.is_empty());

        let config = WorldConfig::default();
        let state = reset(&config, 0).unwrap();
        let joint = build_joint_observation(&config, &state, vec![vec![]; 6]);
        assert!(joint.agents.iter().all(|a| a.distances.len() == 5));
    }

    fn detection_at(id: usize, x: f64, y: f64, area_side: f64) -> Detection {
        Detection {
            bbox: BoundingBox {
                target_id: id,
                u_min: 0.0,
                v_min: 0.0,
                u_max: area_side,
                v_max: area_side,
                truncated: false,
            },
            estimated: GroundPoint::new(x, y),
        }
    }

    #[test]
    fn encode_layout_and_normalization() {
        let config = WorldConfig::default();
        let layout = EncodingLayout::new(&config, None);
        let state = reset(&config, 0).unwrap();
        let mut dets = vec![vec![]; 6];
        dets[0] = vec![
            detection_at(3, 5000.0, 2500.0, 10.0),
            detection_at(1, -2500.0, 0.0, 30.0),
        ];
        let joint = build_joint_observation(&config, &state, dets);
        let e = encode(&config, &layout, &joint, 0, None);
        assert_eq!(e.values.len(), layout.input_len());
        // Bigger box first.
        assert_eq!(&e.values[0..3], &[-0.5, 0.0, 1.0]);
        assert_eq!(&e.values[3..6], &[1.0, 1.0, 1.0]);
        assert!(e.values[6..layout.max_slots * 3].iter().all(|&v| v == 0.0));
        assert_eq!(e.identity(), &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(e.last_action().iter().all(|&v| v == 0.0));

        let empty = encode(&config, &layout, &joint, 2, Some(Action::new(1, 0, -1)));
        assert!(empty.values[..layout.max_slots * 3].iter().all(|&v| v == 0.0));
        let pose = &empty.observation()[layout.max_slots * 3..layout.max_slots * 3 + POSE_WIDTH];
        assert!(pose.iter().any(|&v| v != 0.0));
        assert_eq!(empty.last_action(), &[0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(encode(&config, &layout, &joint, 2, Some(Action::new(1, 0, -1))), empty);
    }

    #[test]
    fn encode_truncates_slots() {
        let config = WorldConfig::default();
        let layout = EncodingLayout::new(&config, Some(1));
        let state = reset(&config, 0).unwrap();
        let mut dets = vec![vec![]; 6];
        dets[1] = vec![detection_at(0, 100.0, 100.0, 5.0), detection_at(1, 200.0, 200.0, 50.0)];
        let joint = build_joint_observation(&config, &state, dets);
        let e = encode(&config, &layout, &joint, 1, None);
        assert_eq!(e.observation_len, 3 + POSE_WIDTH + 5);
        assert_abs_diff_eq!(e.values[0], 200.0 / 5000.0);
    }

    fn yaw_from_features(sin: f64, cos: f64) -> f64 {
        crate::geometry::wrap_angle(sin.atan2(cos))
    }

    #[test]
    fn pose_features_recover_yaw() {
        let config = WorldConfig::default();
        let layout = EncodingLayout::new(&config, Some(0));
        let state = reset(&config, 0).unwrap();
        let joint = build_joint_observation(&config, &state, vec![vec![]; 6]);
        for i in 0..6 {
            let e = encode(&config, &layout, &joint, i, None);
            let yaw = yaw_from_features(e.values[2], e.values[3]);
            assert_abs_diff_eq!(yaw, state.cameras[i].yaw, epsilon = 1e-12);
            assert_abs_diff_eq!(e.values[4], 0.0, epsilon = 1e-12);
        }
    }

    mod props {
        use super::*;
        use crate::simenv::{step, synthesize_all};
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn encoded_features_bounded(seed in 0u64..10_000, moves in proptest::collection::vec(0usize..27, 0..20)) {
                let config = WorldConfig::default();
                let layout = EncodingLayout::new(&config, None);
                let mut state = reset(&config, seed).unwrap();
                for m in &moves {
                    state = step(&config, &state, &[Action::from_joint_index(*m); 6]).unwrap();
                }
                let boxes = synthesize_all(&config, &state).unwrap();
                let dets = boxes.iter().enumerate()
                    .map(|(i, b)| estimate_coordinates(b, &state.camera_model(&config, i).unwrap()))
                    .collect();
                let joint = build_joint_observation(&config, &state, dets);
                for i in 0..6 {
                    let e = encode(&config, &layout, &joint, i, moves.last().map(|m| Action::from_joint_index(*m)));
                    prop_assert!(e.values.iter().all(|v| (-1.0..=1.0).contains(v)));
                    for s in 0..layout.max_slots {
                        let p = e.values[s * 3 + 2];
                        prop_assert!(p == 0.0 || p == 1.0);
                    }
                }
            }

            #[test]
            fn distinct_slots_distinct_vectors(x1 in -5000.0..5000.0f64, x2 in -5000.0..5000.0f64, y in -2500.0..2500.0f64) {
                prop_assume!(x1 != x2);
                let config = WorldConfig::default();
                let layout = EncodingLayout::new(&config, None);
                let state = reset(&config, 0).unwrap();
                let mk = |x: f64| {
                    let mut dets = vec![vec![]; 6];
                    dets[0] = vec![detection_at(0, x, y, 10.0)];
                    encode(&config, &layout, &build_joint_observation(&config, &state, dets), 0, None)
                };
                prop_assert_ne!(mk(x1), mk(x2));
            }
        }
    }
}
