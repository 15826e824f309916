//! The court world: random-walk targets, perimeter cameras and analytic
//! bounding boxes.
//!
//! Cameras sit on the court border and are addressed by an arc-length
//! coordinate `perimeter_s` that starts at the middle of the `-y` side and
//! runs counterclockwise. Each step a camera may slide along the border,
//! turn, and zoom.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{wrap_angle, CameraModel, GeometryError, GroundPoint, ViewPose};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid world config: {0}")]
    InvalidConfig(String),
    #[error("expected {expected} actions, got {got}")]
    ActionCount { expected: usize, got: usize },
    #[error("episode already finished after {0} steps")]
    EpisodeOver(usize),
    #[error("camera index {index} out of range ({count} cameras)")]
    CameraIndex { index: usize, count: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub court_half_x: f64,
    pub court_half_y: f64,
    pub n_targets: usize,
    pub n_cameras: usize,
    pub camera_height: f64,
    pub camera_pitch_deg: f64,
    pub frame_width: u32,
    pub frame_height: u32,
    pub base_hfov_deg: f64,
    pub episode_length: usize,
    /// World units per step.
    pub target_speed: f64,
    /// Steps before a target gives up on its destination.
    pub destination_timeout: usize,
    pub target_width: f64,
    pub target_depth: f64,
    pub target_height: f64,
    /// Minimum box area, as a fraction of the frame, for a target to count
    /// as covered.
    pub mu_min: f64,
    pub zoom_min: f64,
    pub zoom_max: f64,
    pub translation_step: f64,
    pub rotation_step_deg: f64,
    /// Relative zoom change per step (0.1 = 10 %).
    pub zoom_step: f64,
    /// Distance from the border inside which no target spawns or walks.
    pub spawn_inset: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            court_half_x: 5000.0,
            court_half_y: 2500.0,
            n_targets: 22,
            n_cameras: 6,
            camera_height: 500.0,
            camera_pitch_deg: -6.0,
            frame_width: 640,
            frame_height: 480,
            base_hfov_deg: 90.0,
            episode_length: 100,
            target_speed: 100.0,
            destination_timeout: 15,
            target_width: 60.0,
            target_depth: 40.0,
            target_height: 180.0,
            mu_min: 0.0005,
            zoom_min: 0.5,
            zoom_max: 2.0,
            translation_step: 100.0,
            rotation_step_deg: 10.0,
            zoom_step: 0.1,
            spawn_inset: 0.0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |msg: &str| Err(EnvError::InvalidConfig(msg.to_string()));
        let positive = [
            ("court_half_x", self.court_half_x),
            ("court_half_y", self.court_half_y),
            ("camera_height", self.camera_height),
            ("base_hfov_deg", self.base_hfov_deg),
            ("target_width", self.target_width),
            ("target_depth", self.target_depth),
            ("target_height", self.target_height),
            ("mu_min", self.mu_min),
            ("zoom_min", self.zoom_min),
            ("zoom_max", self.zoom_max),
            ("translation_step", self.translation_step),
            ("rotation_step_deg", self.rotation_step_deg),
            ("zoom_step", self.zoom_step),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(EnvError::InvalidConfig(format!("{name} must be positive, got {value}")));
            }
        }
        if self.n_targets == 0 || self.n_cameras == 0 {
            return bad("n_targets and n_cameras must be at least 1");
        }
        if self.frame_width == 0 || self.frame_height == 0 {
            return bad("frame size must be positive");
        }
        if self.episode_length == 0 {
            return bad("episode_length must be at least 1");
        }
        if self.base_hfov_deg >= 180.0 {
            return bad("base_hfov_deg must be below 180");
        }
        if !(self.target_speed.is_finite() && self.target_speed >= 0.0) {
            return bad("target_speed must be non-negative");
        }
        if self.zoom_min > 1.0 || self.zoom_max < 1.0 {
            return bad("zoom bounds must bracket 1");
        }
        if !(self.mu_min < 1.0) {
            return bad("mu_min must be below 1");
        }
        if !(self.camera_pitch_deg.abs() < 90.0) {
            return bad("camera_pitch_deg must lie in (-90, 90)");
        }
        if !(self.spawn_inset >= 0.0
            && self.spawn_inset < self.court_half_x
            && self.spawn_inset < self.court_half_y)
        {
            return bad("spawn_inset must be non-negative and smaller than both half-extents");
        }
        Ok(())
    }

    pub fn perimeter(&self) -> f64 {
        4.0 * (self.court_half_x + self.court_half_y)
    }

    pub fn frame_area(&self) -> f64 {
        f64::from(self.frame_width) * f64::from(self.frame_height)
    }

    pub fn base_hfov(&self) -> f64 {
        self.base_hfov_deg.to_radians()
    }

    pub fn pitch(&self) -> f64 {
        self.camera_pitch_deg.to_radians()
    }

    pub fn rotation_step(&self) -> f64 {
        self.rotation_step_deg.to_radians()
    }

    /// Ground position of the border point at arc length `s`.
    pub fn perimeter_point(&self, s: f64) -> GroundPoint {
        let (hx, hy) = (self.court_half_x, self.court_half_y);
        let mut s = s.rem_euclid(self.perimeter());
        // Bottom edge, right half.
        if s <= hx {
            return GroundPoint::new(s, -hy);
        }
        s -= hx;
        if s <= 2.0 * hy {
            return GroundPoint::new(hx, -hy + s);
        }
        s -= 2.0 * hy;
        if s <= 2.0 * hx {
            return GroundPoint::new(hx - s, hy);
        }
        s -= 2.0 * hx;
        if s <= 2.0 * hy {
            return GroundPoint::new(-hx, hy - s);
        }
        s -= 2.0 * hy;
        GroundPoint::new(-hx + s, -hy)
    }

    pub fn contains(&self, p: &GroundPoint) -> bool {
        p.x.abs() <= self.court_half_x && p.y.abs() <= self.court_half_y
    }

    fn sample_point<R: Rng>(&self, rng: &mut R) -> GroundPoint {
        let hx = self.court_half_x - self.spawn_inset;
        let hy = self.court_half_y - self.spawn_inset;
        GroundPoint::new(rng.random_range(-hx..=hx), rng.random_range(-hy..=hy))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetState {
    pub position: GroundPoint,
    pub destination: GroundPoint,
    pub steps_since_destination: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub perimeter_s: f64,
    pub yaw: f64,
    pub zoom: f64,
}

impl CameraPose {
    pub fn position(&self, config: &WorldConfig) -> GroundPoint {
        config.perimeter_point(self.perimeter_s)
    }

    pub fn view_pose(&self, config: &WorldConfig) -> ViewPose {
        let p = self.position(config);
        ViewPose {
            x: p.x,
            y: p.y,
            height: config.camera_height,
            yaw: self.yaw,
            pitch: config.pitch(),
        }
    }

    pub fn camera_model(&self, config: &WorldConfig) -> Result<CameraModel, GeometryError> {
        CameraModel::new(
            &self.view_pose(config),
            self.zoom,
            config.frame_width,
            config.frame_height,
            config.base_hfov(),
        )
    }

    /// Applies one factored action. Translation wraps around the border,
    /// yaw wraps around the circle, zoom is clamped.
    pub fn apply(&self, action: Action, config: &WorldConfig) -> CameraPose {
        let perimeter_s = (self.perimeter_s
            + f64::from(action.translate) * config.translation_step)
            .rem_euclid(config.perimeter());
        let yaw = match action.rotate {
            0 => self.yaw,
            r => wrap_angle(self.yaw + f64::from(r) * config.rotation_step()),
        };
        let factor = 1.0 + config.zoom_step;
        let zoom = match action.zoom {
            1 => self.zoom * factor,
            -1 => self.zoom / factor,
            _ => self.zoom,
        }
        .clamp(config.zoom_min, config.zoom_max);
        CameraPose {
            perimeter_s,
            yaw,
            zoom,
        }
    }
}

/// A camera action: each component is -1, 0 or +1 for translation,
/// rotation and zoom respectively.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Action {
    pub translate: i8,
    pub rotate: i8,
    pub zoom: i8,
}

impl Action {
    pub const NOOP: Action = Action {
        translate: 0,
        rotate: 0,
        zoom: 0,
    };
    pub const BRANCHES: usize = 3;
    pub const CHOICES: usize = 3;
    pub const JOINT_COUNT: usize = 27;

    pub fn new(translate: i8, rotate: i8, zoom: i8) -> Self {
        debug_assert!([translate, rotate, zoom].iter().all(|c| (-1..=1).contains(c)));
        Self {
            translate,
            rotate,
            zoom,
        }
    }

    /// Builds an action from per-branch choice indices in `0..3`, where
    /// index `k` maps to component `k - 1`.
    pub fn from_indices(indices: [usize; 3]) -> Self {
        let c = |i: usize| {
            debug_assert!(i < 3);
            i as i8 - 1
        };
        Self::new(c(indices[0]), c(indices[1]), c(indices[2]))
    }

    pub fn indices(&self) -> [usize; 3] {
        [
            (self.translate + 1) as usize,
            (self.rotate + 1) as usize,
            (self.zoom + 1) as usize,
        ]
    }

    pub fn from_joint_index(index: usize) -> Self {
        assert!(index < Self::JOINT_COUNT);
        Self::from_indices([index / 9, (index / 3) % 3, index % 3])
    }

    pub fn joint_index(&self) -> usize {
        let [a, b, c] = self.indices();
        a * 9 + b * 3 + c
    }

    pub fn all() -> impl Iterator<Item = Action> {
        (0..Self::JOINT_COUNT).map(Self::from_joint_index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub target_id: usize,
    pub u_min: f64,
    pub v_min: f64,
    pub u_max: f64,
    pub v_max: f64,
    /// The unclipped box extended past the frame.
    pub truncated: bool,
}

impl BoundingBox {
    pub fn width(&self) -> f64 {
        self.u_max - self.u_min
    }

    pub fn height(&self) -> f64 {
        self.v_max - self.v_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn bottom_mid(&self) -> (f64, f64) {
        (0.5 * (self.u_min + self.u_max), self.v_max)
    }
}

/// Coverage flags `v[i][j]` for camera `i` and target `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisibilityMatrix {
    n_cameras: usize,
    n_targets: usize,
    flags: Vec<bool>,
}

impl VisibilityMatrix {
    pub fn new(n_cameras: usize, n_targets: usize) -> Self {
        Self {
            n_cameras,
            n_targets,
            flags: vec![false; n_cameras * n_targets],
        }
    }

    pub fn from_rows(rows: &[Vec<bool>]) -> Self {
        let n_targets = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == n_targets), "ragged visibility rows");
        Self {
            n_cameras: rows.len(),
            n_targets,
            flags: rows.concat(),
        }
    }

    pub fn n_cameras(&self) -> usize {
        self.n_cameras
    }

    pub fn n_targets(&self) -> usize {
        self.n_targets
    }

    pub fn get(&self, camera: usize, target: usize) -> bool {
        self.flags[camera * self.n_targets + target]
    }

    pub fn set(&mut self, camera: usize, target: usize, value: bool) {
        self.flags[camera * self.n_targets + target] = value;
    }

    /// Whether any camera covers `target`.
    pub fn covered(&self, target: usize) -> bool {
        (0..self.n_cameras).any(|i| self.get(i, target))
    }

    /// Number of cameras covering `target`.
    pub fn watchers(&self, target: usize) -> usize {
        (0..self.n_cameras).filter(|&i| self.get(i, target)).count()
    }

    pub fn covered_count(&self) -> usize {
        (0..self.n_targets).filter(|&j| self.covered(j)).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub targets: Vec<TargetState>,
    pub cameras: Vec<CameraPose>,
    pub step_index: usize,
    rng: ChaCha8Rng,
}

impl WorldState {
    pub fn camera_model(&self, config: &WorldConfig, index: usize) -> Result<CameraModel, EnvError> {
        let cam = self.cameras.get(index).ok_or(EnvError::CameraIndex {
            index,
            count: self.cameras.len(),
        })?;
        Ok(cam.camera_model(config)?)
    }

    pub fn camera_positions(&self, config: &WorldConfig) -> Vec<GroundPoint> {
        self.cameras.iter().map(|c| c.position(config)).collect()
    }

    pub fn is_done(&self, config: &WorldConfig) -> bool {
        self.step_index >= config.episode_length
    }
}

/// Initial pose of camera `index` out of `count`: evenly spaced along the
/// border, facing the court center, zoom 1.
pub fn home_pose(config: &WorldConfig, index: usize, count: usize) -> CameraPose {
    let s = config.perimeter() * index as f64 / count as f64;
    let p = config.perimeter_point(s);
    CameraPose {
        perimeter_s: s,
        yaw: (-p.y).atan2(-p.x),
        zoom: 1.0,
    }
}

pub fn reset(config: &WorldConfig, seed: u64) -> Result<WorldState, EnvError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let targets = (0..config.n_targets)
        .map(|_| {
            let position = config.sample_point(&mut rng);
            let destination = config.sample_point(&mut rng);
            TargetState {
                position,
                destination,
                steps_since_destination: 0,
            }
        })
        .collect();
    let cameras = (0..config.n_cameras)
        .map(|i| home_pose(config, i, config.n_cameras))
        .collect();
    Ok(WorldState {
        targets,
        cameras,
        step_index: 0,
        rng,
    })
}

pub fn step(config: &WorldConfig, state: &WorldState, actions: &[Action]) -> Result<WorldState, EnvError> {
    if actions.len() != state.cameras.len() {
        return Err(EnvError::ActionCount {
            expected: state.cameras.len(),
            got: actions.len(),
        });
    }
    if state.is_done(config) {
        return Err(EnvError::EpisodeOver(state.step_index));
    }
    let mut next = state.clone();
    for (cam, &action) in next.cameras.iter_mut().zip(actions) {
        *cam = cam.apply(action, config);
    }
    for t in next.targets.iter_mut() {
        *t = advance_target(config, t, &mut next.rng);
    }
    next.step_index += 1;
    Ok(next)
}

/// Walks a target toward its destination and re-draws the destination when
/// it is reached or the timeout has passed.
pub fn advance_target<R: Rng>(config: &WorldConfig, target: &TargetState, rng: &mut R) -> TargetState {
    let speed = config.target_speed;
    let dx = target.destination.x - target.position.x;
    let dy = target.destination.y - target.position.y;
    let dist = dx.hypot(dy);
    let position = if dist <= speed {
        target.destination
    } else {
        GroundPoint::new(
            target.position.x + dx / dist * speed,
            target.position.y + dy / dist * speed,
        )
    };
    let steps = target.steps_since_destination + 1;
    if position == target.destination || steps > config.destination_timeout {
        TargetState {
            position,
            destination: config.sample_point(rng),
            steps_since_destination: 0,
        }
    } else {
        TargetState {
            position,
            destination: target.destination,
            steps_since_destination: steps,
        }
    }
}

/// World-space corners of the upright solid standing on `p`.
pub fn target_corners(config: &WorldConfig, p: &GroundPoint) -> [Vector3<f64>; 8] {
    let hw = config.target_width / 2.0;
    let hd = config.target_depth / 2.0;
    let h = config.target_height;
    let mut out = [Vector3::zeros(); 8];
    let mut k = 0;
    for sx in [-1.0, 1.0] {
        for sy in [-1.0, 1.0] {
            for z in [0.0, h] {
                out[k] = Vector3::new(p.x + sx * hw, p.y + sy * hd, z);
                k += 1;
            }
        }
    }
    out
}

/// Axis-aligned pixel box of one target, clipped to the frame. `None` when
/// any corner is behind the camera or the box misses the frame entirely.
pub fn target_bbox(
    config: &WorldConfig,
    cam: &CameraModel,
    target_id: usize,
    position: &GroundPoint,
) -> Option<BoundingBox> {
    let (mut u_lo, mut v_lo) = (f64::INFINITY, f64::INFINITY);
    let (mut u_hi, mut v_hi) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for corner in target_corners(config, position) {
        let px = cam.project(&corner)?;
        u_lo = u_lo.min(px.u);
        u_hi = u_hi.max(px.u);
        v_lo = v_lo.min(px.v);
        v_hi = v_hi.max(px.v);
    }
    let w = f64::from(cam.frame_width);
    let h = f64::from(cam.frame_height);
    if u_hi <= 0.0 || v_hi <= 0.0 || u_lo >= w || v_lo >= h {
        return None;
    }
    let truncated = u_lo < 0.0 || v_lo < 0.0 || u_hi > w || v_hi > h;
    Some(BoundingBox {
        target_id,
        u_min: u_lo.max(0.0),
        v_min: v_lo.max(0.0),
        u_max: u_hi.min(w),
        v_max: v_hi.min(h),
        truncated,
    })
}

/// Ground-truth boxes of every target seen by camera `cam_index`, in
/// target order.
pub fn synthesize_bboxes(
    config: &WorldConfig,
    state: &WorldState,
    cam_index: usize,
) -> Result<Vec<BoundingBox>, EnvError> {
    let cam = state.camera_model(config, cam_index)?;
    Ok(state
        .targets
        .iter()
        .enumerate()
        .filter_map(|(j, t)| target_bbox(config, &cam, j, &t.position))
        .collect())
}

/// Boxes for all cameras.
pub fn synthesize_all(config: &WorldConfig, state: &WorldState) -> Result<Vec<Vec<BoundingBox>>, EnvError> {
    (0..state.cameras.len())
        .map(|i| synthesize_bboxes(config, state, i))
        .collect()
}

pub fn visibility_from_boxes(config: &WorldConfig, boxes: &[Vec<BoundingBox>]) -> VisibilityMatrix {
    let mut v = VisibilityMatrix::new(boxes.len(), config.n_targets);
    let frame = config.frame_area();
    for (i, cam_boxes) in boxes.iter().enumerate() {
        for b in cam_boxes {
            if b.area() / frame > config.mu_min {
                v.set(i, b.target_id, true);
            }
        }
    }
    v
}

pub fn visibility_flags(config: &WorldConfig, state: &WorldState) -> Result<VisibilityMatrix, EnvError> {
    Ok(visibility_from_boxes(config, &synthesize_all(config, state)?))
}

/// Headings are kept in `(-pi, pi]`.
pub fn is_wrapped(yaw: f64) -> bool {
    yaw > -PI && yaw <= PI
}
