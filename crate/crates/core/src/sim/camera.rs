use serde::{Deserialize, Serialize};

use crate::geometry::Pose2;

/// Pinhole camera rigidly mounted on the robot, looking forward.
///
/// Robot frame: +x forward, +y left, +z up. Image: origin at the top-left
/// pixel, `u` to the right, `v` downwards. `mount_pitch` tilts the optical
/// axis downwards; `mount_lateral_offset` shifts the camera to the left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub mount_height: f64,
    pub mount_pitch: f64,
    pub mount_lateral_offset: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        CameraModel {
            fx: 256.0,
            fy: 256.0,
            cx: 256.0,
            cy: 128.0,
            width: 512,
            height: 256,
            mount_height: 0.5,
            mount_pitch: 15f64.to_radians(),
            mount_lateral_offset: 0.0,
        }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err("focal lengths must be positive".into());
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return Err(format!("cx {} outside [0, {})", self.cx, self.width));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(format!("cy {} outside [0, {})", self.cy, self.height));
        }
        if !(self.mount_height > 0.0) {
            return Err("mount_height must be positive".into());
        }
        Ok(())
    }

    /// Unit-free ray direction through pixel `(u, v)` in the robot frame.
    pub fn ray_robot(&self, u: f64, v: f64) -> [f64; 3] {
        let a = (u - self.cx) / self.fx;
        let b = (v - self.cy) / self.fy;
        let (s, c) = self.mount_pitch.sin_cos();
        // forward + a * right + b * down, with
        // forward = (c, 0, -s), right = (0, -1, 0), down = (-s, 0, -c)
        [c - b * s, -a, -s - b * c]
    }

    /// Camera centre in the robot frame.
    pub fn origin_robot(&self) -> [f64; 3] {
        [0.0, self.mount_lateral_offset, self.mount_height]
    }

    /// Camera centre and ray direction through `(u, v)` in the world frame.
    pub fn ray_world(&self, pose: &Pose2, u: f64, v: f64) -> ([f64; 3], [f64; 3]) {
        let o = self.origin_robot();
        let d = self.ray_robot(u, v);
        let (ox, oy) = pose.transform_point(o[0], o[1]);
        let (s, c) = pose.yaw.sin_cos();
        ([ox, oy, o[2]], [c * d[0] - s * d[1], s * d[0] + c * d[1], d[2]])
    }

    /// Row where the ground plane meets the sky (fractional).
    pub fn horizon_row(&self) -> f64 {
        self.cy - self.fy * self.mount_pitch.tan()
    }
}
