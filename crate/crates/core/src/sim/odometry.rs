use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::Pose2;
use crate::slam::TrackingEvent;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WheelNoise {
    pub sigma_trans: f64,
    pub sigma_rot: f64,
}

/// Encoder-derived motion increment: the true increment plus zero-mean
/// Gaussian noise on each component.
pub fn wheel_odometry<R: Rng + ?Sized>(true_delta: &Pose2, noise: &WheelNoise, rng: &mut R) -> Pose2 {
    let mut sample = |sigma: f64| {
        if sigma > 0.0 {
            Normal::new(0.0, sigma).map(|n| n.sample(rng)).unwrap_or(0.0)
        } else {
            0.0
        }
    };
    let dx = sample(noise.sigma_trans);
    let dy = sample(noise.sigma_trans);
    let dyaw = sample(noise.sigma_rot);
    if dx == 0.0 && dy == 0.0 && dyaw == 0.0 {
        return *true_delta;
    }
    Pose2::new(true_delta.x + dx, true_delta.y + dy, true_delta.yaw + dyaw)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWindow {
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualOdomConfig {
    /// Unknown monocular scale: visual units per metre.
    pub scale_factor: f64,
    /// Lateral drift accumulated per metre travelled.
    #[serde(default)]
    pub drift_rate: f64,
    #[serde(default)]
    pub loss_windows: Vec<LossWindow>,
    /// Frames required before the front end may initialise.
    #[serde(default = "default_init_frames")]
    pub init_min_frames: u32,
    /// Displacement (m) required before the front end may initialise.
    #[serde(default = "default_init_travel")]
    pub init_min_travel: f64,
}

fn default_init_frames() -> u32 {
    10
}

fn default_init_travel() -> f64 {
    0.2
}

impl Default for VisualOdomConfig {
    fn default() -> Self {
        VisualOdomConfig {
            scale_factor: 1.0,
            drift_rate: 0.0,
            loss_windows: Vec::new(),
            init_min_frames: default_init_frames(),
            init_min_travel: default_init_travel(),
        }
    }
}

impl VisualOdomConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.scale_factor > 0.0) {
            return Err("scale_factor must be positive".into());
        }
        if !(self.drift_rate >= 0.0) {
            return Err("drift_rate must be non-negative".into());
        }
        for w in &self.loss_windows {
            if !(w.end > w.start) {
                return Err(format!("loss window ({}, {}) is empty", w.start, w.end));
            }
        }
        for p in self.loss_windows.windows(2) {
            if p[1].start < p[0].end {
                return Err("loss windows must be ordered and non-overlapping".into());
            }
        }
        Ok(())
    }
}

/// Pose reported by the visual front end, in its own unscaled frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisualPose {
    pub position: [f64; 3],
    pub yaw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisualFrame {
    pub stamp: f64,
    pub pose: Option<VisualPose>,
    pub event: Option<TrackingEvent>,
}

/// Stand-in for a monocular SLAM front end: correct up to an unknown scale,
/// drifting with distance travelled, and blind inside loss windows.
#[derive(Debug, Clone)]
pub struct VisualOdometry {
    cfg: VisualOdomConfig,
    frames: u32,
    first_position: Option<(f64, f64)>,
    last_truth: Option<Pose2>,
    drift: (f64, f64),
    initialized: bool,
    lost: bool,
    window: usize,
}

impl VisualOdometry {
    pub fn new(cfg: VisualOdomConfig) -> Self {
        VisualOdometry {
            cfg,
            frames: 0,
            first_position: None,
            last_truth: None,
            drift: (0.0, 0.0),
            initialized: false,
            lost: false,
            window: 0,
        }
    }

    pub fn config(&self) -> &VisualOdomConfig {
        &self.cfg
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    /// Processes one camera frame taken at `stamp` with the robot at `truth`.
    pub fn frame(&mut self, stamp: f64, truth: &Pose2) -> VisualFrame {
        if let Some(prev) = self.last_truth {
            let ds = prev.distance_to(truth);
            if ds > 0.0 && self.cfg.drift_rate > 0.0 {
                let (s, c) = truth.yaw.sin_cos();
                self.drift.0 += -s * self.cfg.drift_rate * ds;
                self.drift.1 += c * self.cfg.drift_rate * ds;
            }
        }
        self.last_truth = Some(*truth);
        self.frames += 1;
        let first = *self.first_position.get_or_insert((truth.x, truth.y));

        let mut event = None;
        if let Some(w) = self.cfg.loss_windows.get(self.window) {
            if !self.lost && stamp >= w.start - 1e-9 {
                self.lost = true;
                return VisualFrame {
                    stamp,
                    pose: None,
                    event: Some(TrackingEvent::LossEvent),
                };
            }
            if self.lost {
                if stamp < w.end - 1e-9 {
                    return VisualFrame {
                        stamp,
                        pose: None,
                        event: None,
                    };
                }
                self.lost = false;
                self.window += 1;
                event = Some(TrackingEvent::RelocalizedEvent);
            }
        }

        if !self.initialized {
            let travel = (truth.x - first.0).hypot(truth.y - first.1);
            if self.frames >= self.cfg.init_min_frames && travel >= self.cfg.init_min_travel {
                self.initialized = true;
                event = Some(TrackingEvent::InitSucceeded);
            } else {
                return VisualFrame {
                    stamp,
                    pose: None,
                    event,
                };
            }
        }

        let l = self.cfg.scale_factor;
        VisualFrame {
            stamp,
            pose: Some(VisualPose {
                position: [l * (truth.x + self.drift.0), l * (truth.y + self.drift.1), 0.0],
                yaw: truth.yaw,
            }),
            event,
        }
    }
}
