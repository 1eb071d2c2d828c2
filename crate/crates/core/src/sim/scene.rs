use serde::{Deserialize, Serialize};

use crate::geometry::Pose2;
use crate::mask::SegClass;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObstacleClass {
    Object,
    Person,
}

impl ObstacleClass {
    pub fn seg_class(self) -> SegClass {
        match self {
            ObstacleClass::Object => SegClass::Object,
            ObstacleClass::Person => SegClass::Person,
        }
    }
}

/// Ground-plane outline of an obstacle prism.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum Footprint {
    /// Axis-aligned rectangle.
    Box { min: [f64; 2], max: [f64; 2] },
    /// Convex polygon, vertices in either winding order.
    Polygon { points: Vec<[f64; 2]> },
    Cylinder { center: [f64; 2], radius: f64 },
}

// `deny_unknown_fields` cannot be combined with `flatten`; the footprint
// variants reject unknown keys instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    #[serde(flatten)]
    pub footprint: Footprint,
    pub height: f64,
    pub class: ObstacleClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundExtent {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl GroundExtent {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min[0] && x <= self.max[0] && y >= self.min[1] && y <= self.max[1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub ground: GroundExtent,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
    #[serde(default)]
    pub robot_start: Pose2,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SceneError {
    EmptyGround,
    NonPositiveHeight(usize),
    OutsideGround(usize),
    BadFootprint(usize, &'static str),
    StartOutsideGround,
}

impl std::fmt::Display for SceneError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SceneError::EmptyGround => write!(f, "ground extent is empty"),
            SceneError::NonPositiveHeight(i) => write!(f, "obstacle {i}: height must be > 0"),
            SceneError::OutsideGround(i) => write!(f, "obstacle {i}: footprint leaves the ground extent"),
            SceneError::BadFootprint(i, why) => write!(f, "obstacle {i}: {why}"),
            SceneError::StartOutsideGround => write!(f, "robot_start lies outside the ground extent"),
        }
    }
}

impl std::error::Error for SceneError {}

impl Footprint {
    /// Outline vertices; cylinders return their bounding square.
    pub fn hull(&self) -> Vec<[f64; 2]> {
        match self {
            Footprint::Box { min, max } => vec![
                [min[0], min[1]],
                [max[0], min[1]],
                [max[0], max[1]],
                [min[0], max[1]],
            ],
            Footprint::Polygon { points } => points.clone(),
            Footprint::Cylinder { center, radius } => vec![
                [center[0] - radius, center[1] - radius],
                [center[0] + radius, center[1] - radius],
                [center[0] + radius, center[1] + radius],
                [center[0] - radius, center[1] + radius],
            ],
        }
    }

    /// Polygon outline edges in counter-clockwise order. Cylinders are
    /// approximated by a 32-gon.
    pub fn edges(&self) -> Vec<([f64; 2], [f64; 2])> {
        let pts = match self {
            Footprint::Cylinder { center, radius } => (0..32)
                .map(|k| {
                    let a = k as f64 * std::f64::consts::TAU / 32.0;
                    [center[0] + radius * a.cos(), center[1] + radius * a.sin()]
                })
                .collect(),
            _ => ccw(self.hull()),
        };
        (0..pts.len()).map(|i| (pts[i], pts[(i + 1) % pts.len()])).collect()
    }

    fn validate(&self) -> Result<(), &'static str> {
        match self {
            Footprint::Box { min, max } => {
                if !(max[0] > min[0] && max[1] > min[1]) {
                    return Err("box max must exceed min");
                }
            }
            Footprint::Polygon { points } => {
                if points.len() < 3 {
                    return Err("polygon needs at least 3 points");
                }
                let p = ccw(points.clone());
                let n = p.len();
                for i in 0..n {
                    let (a, b, c) = (p[i], p[(i + 1) % n], p[(i + 2) % n]);
                    let cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]);
                    if cross < -1e-12 {
                        return Err("polygon must be convex");
                    }
                }
                if signed_area(points).abs() < 1e-12 {
                    return Err("polygon has zero area");
                }
            }
            Footprint::Cylinder { radius, .. } => {
                if !(*radius > 0.0) {
                    return Err("cylinder radius must be > 0");
                }
            }
        }
        Ok(())
    }

    /// Parameter interval `[t0, t1]` over which the planar ray `o + t d`
    /// lies inside the footprint, if any.
    fn ray_interval(&self, o: [f64; 2], d: [f64; 2]) -> Option<(f64, f64)> {
        match self {
            Footprint::Box { min, max } => {
                let mut lo = f64::NEG_INFINITY;
                let mut hi = f64::INFINITY;
                for k in 0..2 {
                    if d[k] == 0.0 {
                        if o[k] < min[k] || o[k] > max[k] {
                            return None;
                        }
                    } else {
                        let a = (min[k] - o[k]) / d[k];
                        let b = (max[k] - o[k]) / d[k];
                        lo = lo.max(a.min(b));
                        hi = hi.min(a.max(b));
                    }
                }
                (lo <= hi).then_some((lo, hi))
            }
            Footprint::Polygon { points } => {
                let p = points;
                let winding = if signed_area(p) < 0.0 { -1.0 } else { 1.0 };
                let mut lo = f64::NEG_INFINITY;
                let mut hi = f64::INFINITY;
                for i in 0..p.len() {
                    let a = p[i];
                    let b = p[(i + 1) % p.len()];
                    // outward normal of the edge
                    let n = [winding * (b[1] - a[1]), winding * (a[0] - b[0])];
                    let denom = n[0] * d[0] + n[1] * d[1];
                    let num = n[0] * (a[0] - o[0]) + n[1] * (a[1] - o[1]);
                    if denom == 0.0 {
                        if num < 0.0 {
                            return None;
                        }
                    } else if denom > 0.0 {
                        hi = hi.min(num / denom);
                    } else {
                        lo = lo.max(num / denom);
                    }
                    if lo > hi {
                        return None;
                    }
                }
                Some((lo, hi))
            }
            Footprint::Cylinder { center, radius } => {
                let f = [o[0] - center[0], o[1] - center[1]];
                let a = d[0] * d[0] + d[1] * d[1];
                let c = f[0] * f[0] + f[1] * f[1] - radius * radius;
                if a == 0.0 {
                    return (c <= 0.0).then_some((f64::NEG_INFINITY, f64::INFINITY));
                }
                let b = 2.0 * (f[0] * d[0] + f[1] * d[1]);
                let disc = b * b - 4.0 * a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                Some(((-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)))
            }
        }
    }
}

fn signed_area(p: &[[f64; 2]]) -> f64 {
    let n = p.len();
    0.5 * (0..n)
        .map(|i| p[i][0] * p[(i + 1) % n][1] - p[(i + 1) % n][0] * p[i][1])
        .sum::<f64>()
}

fn ccw(mut p: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    if signed_area(&p) < 0.0 {
        p.reverse();
    }
    p
}

impl Obstacle {
    /// Smallest `t >= 0` at which the ray `origin + t dir` enters the prism.
    pub fn ray_entry(&self, origin: [f64; 3], dir: [f64; 3]) -> Option<f64> {
        let (t0, t1) = self
            .footprint
            .ray_interval([origin[0], origin[1]], [dir[0], dir[1]])?;
        let (z0, z1) = if dir[2] == 0.0 {
            if origin[2] < 0.0 || origin[2] > self.height {
                return None;
            }
            (f64::NEG_INFINITY, f64::INFINITY)
        } else {
            let a = -origin[2] / dir[2];
            let b = (self.height - origin[2]) / dir[2];
            (a.min(b), a.max(b))
        };
        let lo = t0.max(z0).max(0.0);
        let hi = t1.min(z1);
        (lo <= hi).then_some(lo)
    }

    /// Prism corner points (footprint hull at ground and at full height).
    pub fn corners(&self) -> Vec<[f64; 3]> {
        self.footprint
            .hull()
            .into_iter()
            .flat_map(|p| [[p[0], p[1], 0.0], [p[0], p[1], self.height]])
            .collect()
    }
}

impl Scene {
    pub fn validate(&self) -> Result<(), SceneError> {
        let g = &self.ground;
        if !(g.max[0] > g.min[0] && g.max[1] > g.min[1]) {
            return Err(SceneError::EmptyGround);
        }
        if !g.contains(self.robot_start.x, self.robot_start.y) {
            return Err(SceneError::StartOutsideGround);
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            if !(o.height > 0.0) {
                return Err(SceneError::NonPositiveHeight(i));
            }
            o.footprint.validate().map_err(|w| SceneError::BadFootprint(i, w))?;
            if !o.footprint.hull().iter().all(|p| g.contains(p[0], p[1])) {
                return Err(SceneError::OutsideGround(i));
            }
        }
        Ok(())
    }
}
