//! Pinhole camera geometry.
//!
//! World frame: origin at the court center, `x` along the long side, `y`
//! along the short side, `z` up. Ground targets live on `z = 0`.
//!
//! Camera frame: `x` right, `y` down, `z` along the optical axis. Pixel
//! coordinates have their origin at the top-left corner with `v` growing
//! downward.
//!
//! ```text
//! Z_c [u v 1]^T = K [R | T] [x y z 1]^T
//! ```
//!
//! On the ground plane the third column of `R` drops out and the map
//! `(x, y, 1) -> (u, v, 1)` is the homography `K [r1 r2 T]`, which is
//! inverted to recover ground coordinates from a pixel.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

/// Camera-frame depth below which a point counts as behind the camera.
pub const MIN_DEPTH: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("zoom must be positive and finite, got {0}")]
    InvalidZoom(f64),
    #[error("field of view must lie in (0, pi), got {0} rad")]
    InvalidFov(f64),
    #[error("frame size must be positive, got {0}x{1}")]
    InvalidFrame(u32, u32),
    #[error("pixel ({u}, {v}) does not reach the ground in front of the camera")]
    AboveHorizon { u: f64, v: f64 },
    #[error("ground homography is singular (camera on the ground plane?)")]
    SingularHomography,
    #[error("point coincides with the camera ground position")]
    CoincidentPoint,
}

/// Focal lengths and principal point, in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub u0: f64,
    pub v0: f64,
}

impl Intrinsics {
    /// Square-pixel intrinsics for a camera whose horizontal view angle is
    /// `base_hfov` at zoom 1. Zoom scales the focal length linearly.
    pub fn from_zoom(
        zoom: f64,
        frame_width: u32,
        frame_height: u32,
        base_hfov: f64,
    ) -> Result<Self, GeometryError> {
        if !(zoom.is_finite() && zoom > 0.0) {
            return Err(GeometryError::InvalidZoom(zoom));
        }
        if !(base_hfov.is_finite() && base_hfov > 0.0 && base_hfov < PI) {
            return Err(GeometryError::InvalidFov(base_hfov));
        }
        if frame_width == 0 || frame_height == 0 {
            return Err(GeometryError::InvalidFrame(frame_width, frame_height));
        }
        let half_w = f64::from(frame_width) / 2.0;
        let f = zoom * half_w / (base_hfov / 2.0).tan();
        Ok(Self {
            fx: f,
            fy: f,
            u0: half_w,
            v0: f64::from(frame_height) / 2.0,
        })
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.u0, 0.0, self.fy, self.v0, 0.0, 0.0, 1.0)
    }
}

/// Position and orientation of a camera in world coordinates.
///
/// `yaw` is the heading of the optical axis measured counterclockwise from
/// world `+x`; `pitch` tilts the axis, negative values look down.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewPose {
    pub x: f64,
    pub y: f64,
    pub height: f64,
    pub yaw: f64,
    pub pitch: f64,
}

impl ViewPose {
    pub fn center(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.height)
    }

    pub fn ground(&self) -> GroundPoint {
        GroundPoint::new(self.x, self.y)
    }
}

/// World-to-camera rigid transform: `p_cam = R p_world + T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extrinsics {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Extrinsics {
    pub fn from_pose(pose: &ViewPose) -> Self {
        let (sy, cy) = pose.yaw.sin_cos();
        let (sp, cp) = pose.pitch.sin_cos();
        let forward = Vector3::new(cp * cy, cp * sy, sp);
        let right = Vector3::new(sy, -cy, 0.0);
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * pose.center());
        Self {
            rotation,
            translation,
        }
    }

    pub fn to_camera(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * world + self.translation
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GroundPoint {
    pub x: f64,
    pub y: f64,
}

impl GroundPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &GroundPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn l1_distance(&self, other: &GroundPoint) -> f64 {
        (self.x - other.x).abs() + (self.y - other.y).abs()
    }

    pub fn to_world(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, 0.0)
    }
}

/// A projected pixel together with its camera-frame depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
    pub z_c: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel {
    pub intrinsics: Intrinsics,
    pub extrinsics: Extrinsics,
    pub frame_width: u32,
    pub frame_height: u32,
}

impl CameraModel {
    pub fn new(
        pose: &ViewPose,
        zoom: f64,
        frame_width: u32,
        frame_height: u32,
        base_hfov: f64,
    ) -> Result<Self, GeometryError> {
        Ok(Self {
            intrinsics: Intrinsics::from_zoom(zoom, frame_width, frame_height, base_hfov)?,
            extrinsics: Extrinsics::from_pose(pose),
            frame_width,
            frame_height,
        })
    }

    pub fn frame_area(&self) -> f64 {
        f64::from(self.frame_width) * f64::from(self.frame_height)
    }

    /// Projects a world point. Returns `None` when the point is not in
    /// front of the camera. No clipping against the frame is done.
    pub fn project(&self, world: &Vector3<f64>) -> Option<PixelPoint> {
        let p = self.extrinsics.to_camera(world);
        if p.z <= MIN_DEPTH {
            return None;
        }
        let k = &self.intrinsics;
        Some(PixelPoint {
            u: k.fx * p.x / p.z + k.u0,
            v: k.fy * p.y / p.z + k.v0,
            z_c: p.z,
        })
    }

    /// `K [r1 r2 T]`, the ground-plane homography.
    pub fn ground_homography(&self) -> Matrix3<f64> {
        let r = &self.extrinsics.rotation;
        let t = &self.extrinsics.translation;
        let mut m = Matrix3::zeros();
        m.set_column(0, &r.column(0));
        m.set_column(1, &r.column(1));
        m.set_column(2, t);
        self.intrinsics.matrix() * m
    }

    /// Recovers the ground point imaged at pixel `(u, v)`.
    pub fn inverse_project_ground(&self, u: f64, v: f64) -> Result<GroundPoint, GeometryError> {
        // det [r1 r2 T] equals minus the camera height.
        let r = &self.extrinsics.rotation;
        let t = &self.extrinsics.translation;
        let det = r.column(0).cross(&r.column(1)).dot(t);
        if det.abs() <= 1e-9 * t.norm().max(1.0) {
            return Err(GeometryError::SingularHomography);
        }
        let h_inv = self
            .ground_homography()
            .try_inverse()
            .ok_or(GeometryError::SingularHomography)?;
        let w = h_inv * Vector3::new(u, v, 1.0);
        // w = (x, y, 1) / Z_c, so the third component must be a positive
        // inverse depth. Zero is the horizon itself.
        if !(w.z > 1e-12 * w.norm()) {
            return Err(GeometryError::AboveHorizon { u, v });
        }
        Ok(GroundPoint::new(w.x / w.z, w.y / w.z))
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let a = angle.rem_euclid(2.0 * PI);
    if a > PI {
        a - 2.0 * PI
    } else {
        a
    }
}

/// Signed difference between the camera heading and the bearing from the
/// camera to `target`, wrapped into `(-pi, pi]`.
pub fn yaw_error(pose: &ViewPose, target: &GroundPoint) -> Result<f64, GeometryError> {
    let dx = target.x - pose.x;
    let dy = target.y - pose.y;
    if dx == 0.0 && dy == 0.0 {
        return Err(GeometryError::CoincidentPoint);
    }
    Ok(wrap_angle(pose.yaw - dy.atan2(dx)))
}
