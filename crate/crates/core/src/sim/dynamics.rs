use serde::{Deserialize, Serialize};

use crate::geometry::Pose2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityLimits {
    pub v_max: f64,
    pub w_max: f64,
}

impl Default for VelocityLimits {
    fn default() -> Self {
        VelocityLimits { v_max: 1.0, w_max: 1.0 }
    }
}

impl VelocityLimits {
    /// Clamps `(v, w)` into the limits; the flag reports whether anything changed.
    pub fn clamp(&self, v: f64, w: f64) -> (f64, f64, bool) {
        let cv = v.clamp(-self.v_max, self.v_max);
        let cw = w.clamp(-self.w_max, self.w_max);
        (cv, cw, cv != v || cw != w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub pose: Pose2,
    pub clamped: bool,
}

/// Exact unicycle integration over `dt` with constant `(v, w)`.
pub fn step_dynamics(pose: &Pose2, v: f64, w: f64, dt: f64, limits: &VelocityLimits) -> StepOutcome {
    debug_assert!(dt > 0.0);
    let (v, w, clamped) = limits.clamp(v, w);
    let th = pose.yaw;
    let (x, y) = if w.abs() < 1e-9 {
        (pose.x + v * dt * th.cos(), pose.y + v * dt * th.sin())
    } else {
        let th1 = th + w * dt;
        let r = v / w;
        (
            pose.x + r * (th1.sin() - th.sin()),
            pose.y - r * (th1.cos() - th.cos()),
        )
    };
    StepOutcome {
        pose: Pose2::new(x, y, th + w * dt),
        clamped,
    }
}
