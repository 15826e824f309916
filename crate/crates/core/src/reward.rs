//! Team and individual rewards.
//!
//! ```text
//! R_i = w_T * R_team + (1 - w_T) * (R_box + l_v * R_vis + l_d * R_dir + l_p * R_pos)
//! ```

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{yaw_error, GroundPoint, ViewPose};
use crate::perception::Detection;
use crate::simenv::{BoundingBox, VisibilityMatrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RewardError {
    #[error("team reward needs at least one target")]
    NoTargets,
    #[error("visibility matrix has {got} targets, expected {expected}")]
    TargetCount { expected: usize, got: usize },
    #[error("invalid reward weights: {0}")]
    InvalidWeights(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub w_team: f64,
    pub lambda_vis: f64,
    pub lambda_dir: f64,
    pub lambda_pos: f64,
    /// Radians.
    pub alpha_max: f64,
    pub mu_max: f64,
    pub d_max: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            w_team: 0.4,
            lambda_vis: 0.8,
            lambda_dir: 0.2,
            lambda_pos: 0.2,
            alpha_max: PI / 4.0,
            mu_max: 0.2,
            d_max: 5000.0,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<(), RewardError> {
        let bad = |m: String| Err(RewardError::InvalidWeights(m));
        if !(0.0..=1.0).contains(&self.w_team) {
            return bad(format!("w_team must lie in [0, 1], got {}", self.w_team));
        }
        for (name, v) in [
            ("lambda_vis", self.lambda_vis),
            ("lambda_dir", self.lambda_dir),
            ("lambda_pos", self.lambda_pos),
            ("mu_max", self.mu_max),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        if !(self.alpha_max > 0.0 && self.alpha_max <= PI) {
            return bad(format!("alpha_max must lie in (0, pi], got {}", self.alpha_max));
        }
        if !(self.d_max.is_finite() && self.d_max > 0.0) {
            return bad(format!("d_max must be positive, got {}", self.d_max));
        }
        Ok(())
    }
}

/// Which reward terms take part. Disabling the team term leaves the
/// individual reward alone; disabling every individual term leaves the team
/// reward alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardTerms {
    pub team: bool,
    pub bbox: bool,
    pub visibility: bool,
    pub direction: bool,
    pub position: bool,
}

impl Default for RewardTerms {
    fn default() -> Self {
        Self {
            team: true,
            bbox: true,
            visibility: true,
            direction: true,
            position: true,
        }
    }
}

/// Names accepted by [`RewardTerms::ablate`].
pub const ABLATION_NAMES: [&str; 6] = ["team", "all-individual", "vis", "dir", "box", "pos"];

impl RewardTerms {
    pub fn ablate(&mut self, name: &str) -> Result<(), RewardError> {
        match name {
            "team" => self.team = false,
            "all-individual" => {
                self.bbox = false;
                self.visibility = false;
                self.direction = false;
                self.position = false;
            }
            "vis" | "visibility" => self.visibility = false,
            "dir" | "direction" => self.direction = false,
            "box" | "bbox" => self.bbox = false,
            "pos" | "position" => self.position = false,
            other => {
                return Err(RewardError::InvalidWeights(format!(
                    "unknown ablation '{other}', expected one of {ABLATION_NAMES:?}"
                )))
            }
        }
        if !self.any() {
            return Err(RewardError::InvalidWeights("every reward term is disabled".into()));
        }
        Ok(())
    }

    pub fn any_individual(&self) -> bool {
        self.bbox || self.visibility || self.direction || self.position
    }

    pub fn any(&self) -> bool {
        self.team || self.any_individual()
    }
}

/// Weights after ablation, as actually used for the total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardComposition {
    pub team: f64,
    pub individual: f64,
    pub bbox: f64,
    pub visibility: f64,
    pub direction: f64,
    pub position: f64,
}

impl RewardComposition {
    pub fn new(weights: &RewardWeights, terms: &RewardTerms) -> Self {
        let (team, individual) = match (terms.team, terms.any_individual()) {
            (true, true) => (weights.w_team, 1.0 - weights.w_team),
            (true, false) => (1.0, 0.0),
            (false, _) => (0.0, 1.0),
        };
        let on = |flag: bool, w: f64| if flag { w } else { 0.0 };
        Self {
            team,
            individual,
            bbox: on(terms.bbox, 1.0),
            visibility: on(terms.visibility, weights.lambda_vis),
            direction: on(terms.direction, weights.lambda_dir),
            position: on(terms.position, weights.lambda_pos),
        }
    }
}

impl std::fmt::Display for RewardComposition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "R = {:.3}*team + {:.3}*({:.3}*box + {:.3}*vis + {:.3}*dir + {:.3}*pos)",
            self.team, self.individual, self.bbox, self.visibility, self.direction, self.position
        )
    }
}

/// Fraction of targets covered by at least one camera.
pub fn team_reward(v: &VisibilityMatrix, m: usize) -> Result<f64, RewardError> {
    if m == 0 {
        return Err(RewardError::NoTargets);
    }
    if v.n_targets() != m {
        return Err(RewardError::TargetCount {
            expected: m,
            got: v.n_targets(),
        });
    }
    Ok(v.covered_count() as f64 / m as f64)
}

pub fn box_reward(boxes: &[BoundingBox], frame_area: f64, mu_max: f64) -> f64 {
    let total: f64 = boxes.iter().map(|b| b.area() / frame_area).sum();
    (100.0 * total).min(mu_max)
}

/// Each target seen by camera `i` contributes `1 / (cameras seeing it)`.
pub fn visibility_reward(v: &VisibilityMatrix, i: usize) -> f64 {
    (0..v.n_targets())
        .filter(|&j| v.get(i, j))
        .map(|j| 1.0 / v.watchers(j) as f64)
        .sum()
}

/// `1 - |yaw error| / alpha_max` toward the mean of the given points, or 0
/// when there are none.
pub fn direction_reward(pose: &ViewPose, points: &[GroundPoint], alpha_max: f64) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let n = points.len() as f64;
    let mean = GroundPoint::new(
        points.iter().map(|p| p.x).sum::<f64>() / n,
        points.iter().map(|p| p.y).sum::<f64>() / n,
    );
    let err = yaw_error(pose, &mean).unwrap_or(0.0);
    1.0 - err.abs() / alpha_max
}

/// `-max((d_max - nearest) / d_max, 0)` with Euclidean ground distances.
pub fn position_reward(positions: &[GroundPoint], i: usize, d_max: f64) -> f64 {
    let nearest = positions
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, p)| positions[i].distance(p))
        .fold(f64::INFINITY, f64::min);
    if !nearest.is_finite() {
        return 0.0;
    }
    -((d_max - nearest) / d_max).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AgentReward {
    pub bbox: f64,
    pub visibility: f64,
    pub direction: f64,
    pub position: f64,
    pub individual: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RewardBreakdown {
    pub team: f64,
    pub agents: Vec<AgentReward>,
}

impl RewardBreakdown {
    pub fn totals(&self) -> Vec<f64> {
        self.agents.iter().map(|a| a.total).collect()
    }
}

pub fn individual_reward(c: &RewardComposition, r: &AgentReward) -> f64 {
    c.bbox * r.bbox + c.visibility * r.visibility + c.direction * r.direction + c.position * r.position
}

pub fn total_reward(c: &RewardComposition, team: f64, individual: f64) -> f64 {
    c.team * team + c.individual * individual
}

/// Everything the reward needs about one step, per camera.
pub struct RewardInputs<'a> {
    pub visibility: &'a VisibilityMatrix,
    /// Ground-truth boxes per camera.
    pub boxes: &'a [Vec<BoundingBox>],
    /// Detections per camera (after any detector noise).
    pub detections: &'a [Vec<Detection>],
    pub poses: &'a [ViewPose],
    pub frame_area: f64,
}

pub fn compute_rewards(
    inputs: &RewardInputs<'_>,
    weights: &RewardWeights,
    composition: &RewardComposition,
) -> Result<RewardBreakdown, RewardError> {
    let v = inputs.visibility;
    let team = team_reward(v, v.n_targets())?;
    let positions: Vec<GroundPoint> = inputs.poses.iter().map(ViewPose::ground).collect();
    let agents = (0..inputs.poses.len())
        .map(|i| {
            let seen: Vec<GroundPoint> = inputs.detections[i]
                .iter()
                .filter(|d| v.get(i, d.bbox.target_id))
                .map(|d| d.estimated)
                .collect();
            let mut r = AgentReward {
                bbox: box_reward(&inputs.boxes[i], inputs.frame_area, weights.mu_max),
                visibility: visibility_reward(v, i),
                direction: direction_reward(&inputs.poses[i], &seen, weights.alpha_max),
                position: position_reward(&positions, i, weights.d_max),
                ..Default::default()
            };
            r.individual = individual_reward(composition, &r);
            r.total = total_reward(composition, team, r.individual);
            r
        })
        .collect();
    Ok(RewardBreakdown { team, agents })
}
