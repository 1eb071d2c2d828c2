//! Planar poses, 3-D similarity transforms and angle helpers.

use std::f64::consts::PI;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("invalid input: {0}")]
    InvalidInput(&'static str),
}

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(a: f64) -> Result<f64, GeometryError> {
    if !a.is_finite() {
        return Err(GeometryError::InvalidInput("angle must be finite"));
    }
    Ok(wrap(a))
}

// Infallible variant for values already known to be finite.
pub(crate) fn wrap(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    // rem_euclid can land exactly on -pi after the shift for inputs like 3pi - eps
    if r <= -PI {
        r += 2.0 * PI;
    }
    r
}

/// Planar robot pose. `yaw` is kept in `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Pose2 {
    pub const IDENTITY: Pose2 = Pose2 {
        x: 0.0,
        y: 0.0,
        yaw: 0.0,
    };

    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Pose2 {
            x,
            y,
            yaw: wrap(yaw),
        }
    }

    /// `self ∘ other`: `other` expressed in the frame of `self`.
    pub fn compose(&self, other: &Pose2) -> Pose2 {
        compose_pose2(self, other)
    }

    pub fn inverse(&self) -> Pose2 {
        let (s, c) = self.yaw.sin_cos();
        Pose2::new(
            -(c * self.x + s * self.y),
            s * self.x - c * self.y,
            -self.yaw,
        )
    }

    /// Maps a point given in this pose's frame into the parent frame.
    pub fn transform_point(&self, px: f64, py: f64) -> (f64, f64) {
        let (s, c) = self.yaw.sin_cos();
        (self.x + c * px - s * py, self.y + s * px + c * py)
    }

    /// Relative motion from `self` to `other`, expressed in `self`'s frame.
    pub fn delta_to(&self, other: &Pose2) -> Pose2 {
        self.inverse().compose(other)
    }

    pub fn distance_to(&self, other: &Pose2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.yaw.is_finite()
    }
}

pub fn compose_pose2(a: &Pose2, b: &Pose2) -> Pose2 {
    let (x, y) = a.transform_point(b.x, b.y);
    Pose2::new(x, y, a.yaw + b.yaw)
}

/// `p -> scale * R p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform3 {
    pub scale: f64,
    /// Unit quaternion as `[w, x, y, z]`, canonicalised so that `w >= 0`.
    pub rotation: [f64; 4],
    pub translation: [f64; 3],
}

impl Default for SimilarityTransform3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl SimilarityTransform3 {
    pub fn identity() -> Self {
        SimilarityTransform3 {
            scale: 1.0,
            rotation: [1.0, 0.0, 0.0, 0.0],
            translation: [0.0; 3],
        }
    }

    pub fn new(
        scale: f64,
        rotation: UnitQuaternion<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self, GeometryError> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(GeometryError::InvalidInput("scale must be positive"));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::InvalidInput("translation must be finite"));
        }
        Ok(SimilarityTransform3 {
            scale,
            rotation: canonical_quaternion(&rotation),
            translation: [translation.x, translation.y, translation.z],
        })
    }

    /// Scale plus a rotation of `yaw` radians about +z.
    pub fn from_yaw(scale: f64, yaw: f64, translation: [f64; 3]) -> Result<Self, GeometryError> {
        let q = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw);
        Self::new(scale, q, Vector3::from(translation))
    }

    pub fn unit_quaternion(&self) -> UnitQuaternion<f64> {
        let [w, x, y, z] = self.rotation;
        UnitQuaternion::new_unchecked(Quaternion::new(w, x, y, z))
    }

    pub fn translation_vector(&self) -> Vector3<f64> {
        Vector3::from(self.translation)
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.unit_quaternion() * p) + self.translation_vector()
    }

    /// Rotates a direction (no scale, no translation).
    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.unit_quaternion() * v
    }

    pub fn inverse(&self) -> SimilarityTransform3 {
        let r_inv = self.unit_quaternion().inverse();
        let s_inv = 1.0 / self.scale;
        let t = -(s_inv * (r_inv * self.translation_vector()));
        SimilarityTransform3 {
            scale: s_inv,
            rotation: canonical_quaternion(&r_inv),
            translation: [t.x, t.y, t.z],
        }
    }

    /// Angle of the rotation, in radians.
    pub fn rotation_angle(&self) -> f64 {
        self.unit_quaternion().angle()
    }

    /// Heading change induced on a planar direction with heading `yaw`.
    pub fn rotate_yaw(&self, yaw: f64) -> f64 {
        let (s, c) = yaw.sin_cos();
        let d = self.rotate(&Vector3::new(c, s, 0.0));
        wrap(d.y.atan2(d.x))
    }
}

pub fn apply_similarity(t: &SimilarityTransform3, p: [f64; 3]) -> [f64; 3] {
    let r = t.apply(&Vector3::from(p));
    [r.x, r.y, r.z]
}

pub(crate) fn canonical_quaternion(q: &UnitQuaternion<f64>) -> [f64; 4] {
    let q = q.quaternion();
    let n = q.norm();
    let (w, x, y, z) = (q.w / n, q.i / n, q.j / n, q.k / n);
    if w < 0.0 {
        [-w, -x, -y, -z]
    } else {
        [w, x, y, z]
    }
}
