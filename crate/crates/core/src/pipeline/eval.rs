//! Trajectory error and the run-observing evaluator node.

use std::any::Any;
use std::sync::Arc;

use nalgebra::Vector3;

use super::nodes::{Node, NODE_QUEUE};
use super::PipelineError;
use crate::alignment::{alignment_rmse, estimate_rigid};
use crate::bus::{Bus, Subscription};
use crate::geometry::Pose2;
use crate::msg::{topics, Payload};
use crate::slam::{ScaledOdomMsg, TrackingState};
use crate::trajectory::{Trajectory, TrajectorySample};

/// Stamps closer than this are the same instant.
const SAME_STAMP: f64 = 1e-6;

/// Pairs two stamp-sorted series by equal stamps.
pub fn pair_by_stamp(a: &[(f64, [f64; 2])], b: &[(f64, [f64; 2])]) -> Vec<([f64; 2], [f64; 2])> {
    let mut out = Vec::new();
    let mut j = 0;
    for &(t, p) in a {
        while j < b.len() && b[j].0 < t - SAME_STAMP {
            j += 1;
        }
        if j < b.len() && (b[j].0 - t).abs() <= SAME_STAMP {
            out.push((p, b[j].1));
        }
    }
    out
}

/// Absolute trajectory error after the best rigid alignment of `estimate`
/// onto `truth`. `None` with fewer than three paired samples.
pub fn ate(estimate: &[(f64, [f64; 2])], truth: &[(f64, [f64; 2])]) -> Option<f64> {
    let pairs = pair_by_stamp(estimate, truth);
    if pairs.len() < 3 {
        return None;
    }
    let src: Vec<Vector3<f64>> = pairs.iter().map(|(e, _)| Vector3::new(e[0], e[1], 0.0)).collect();
    let dst: Vec<Vector3<f64>> = pairs.iter().map(|(_, t)| Vector3::new(t[0], t[1], 0.0)).collect();
    match estimate_rigid(&src, &dst) {
        Ok(t) => alignment_rmse(&t, &src, &dst).ok(),
        // all estimates at one point: only a translation is recoverable
        Err(_) => {
            let n = pairs.len() as f64;
            let mean = |f: &dyn Fn(&([f64; 2], [f64; 2])) -> f64| pairs.iter().map(f).sum::<f64>() / n;
            let dx = mean(&|(e, t)| t[0] - e[0]);
            let dy = mean(&|(e, t)| t[1] - e[1]);
            let ss: f64 = pairs
                .iter()
                .map(|(e, t)| (e[0] + dx - t[0]).powi(2) + (e[1] + dy - t[1]).powi(2))
                .sum();
            Some((ss / n).sqrt())
        }
    }
}

fn final_error(estimate: &[(f64, [f64; 2])], truth: &[(f64, [f64; 2])]) -> Option<f64> {
    let last = estimate.last()?;
    let (e, t) = pair_by_stamp(std::slice::from_ref(last), truth).pop()?;
    Some(((e[0] - t[0]).powi(2) + (e[1] - t[1]).powi(2)).sqrt())
}

/// Passive observer of the run: collects trajectories and counters.
pub struct Evaluator {
    truth: Vec<(f64, Pose2)>,
    visual: Vec<(f64, [f64; 3])>,
    scaled: Vec<ScaledOdomMsg>,
    states: Vec<(f64, TrackingState)>,
    masks: u64,
    keyframes: u64,
    subs: [Subscription; 5],
}

impl Evaluator {
    pub fn new(bus: &Arc<Bus>) -> Result<Self, PipelineError> {
        Ok(Evaluator {
            truth: Vec::new(),
            visual: Vec::new(),
            scaled: Vec::new(),
            states: Vec::new(),
            masks: 0,
            keyframes: 0,
            subs: [
                bus.subscribe(topics::ODOM_TRUTH, NODE_QUEUE)?,
                bus.subscribe(topics::ODOM_VISUAL, NODE_QUEUE)?,
                bus.subscribe(topics::ODOM_SCALED, NODE_QUEUE)?,
                bus.subscribe(topics::SLAM_STATE, NODE_QUEUE)?,
                bus.subscribe(topics::CAMERA_MASK, NODE_QUEUE)?,
            ],
        })
    }

    pub fn truth(&self) -> &[(f64, Pose2)] {
        &self.truth
    }

    pub fn scaled(&self) -> &[ScaledOdomMsg] {
        &self.scaled
    }

    pub fn visual(&self) -> &[(f64, [f64; 3])] {
        &self.visual
    }

    pub fn states(&self) -> &[(f64, TrackingState)] {
        &self.states
    }

    pub fn masks(&self) -> u64 {
        self.masks
    }

    pub fn keyframes(&self) -> u64 {
        self.keyframes
    }

    fn truth_xy(&self) -> Vec<(f64, [f64; 2])> {
        self.truth.iter().map(|(t, p)| (*t, [p.x, p.y])).collect()
    }

    fn scaled_xy(&self) -> Vec<(f64, [f64; 2])> {
        self.scaled
            .iter()
            .filter(|s| s.scale_valid)
            .map(|s| (s.stamp, [s.pose.x, s.pose.y]))
            .collect()
    }

    fn visual_xy(&self) -> Vec<(f64, [f64; 2])> {
        self.visual.iter().map(|(t, p)| (*t, [p[0], p[1]])).collect()
    }

    pub fn scaled_ate(&self) -> Option<f64> {
        ate(&self.scaled_xy(), &self.truth_xy())
    }

    pub fn raw_ate(&self) -> Option<f64> {
        ate(&self.visual_xy(), &self.truth_xy())
    }

    /// Distance between the last valid scaled pose and the truth at its stamp.
    pub fn final_scaled_error(&self) -> Option<f64> {
        final_error(&self.scaled_xy(), &self.truth_xy())
    }

    /// Same for the raw visual positions, read as if metric.
    pub fn final_raw_error(&self) -> Option<f64> {
        final_error(&self.visual_xy(), &self.truth_xy())
    }

    pub fn truth_trajectory(&self) -> Trajectory {
        let samples = self
            .truth
            .iter()
            .map(|(t, p)| TrajectorySample::planar(*t, p.x, p.y, p.yaw))
            .collect();
        Trajectory::new(samples).unwrap_or_default()
    }

    pub fn scaled_trajectory(&self) -> Trajectory {
        let samples = self
            .scaled
            .iter()
            .map(|s| TrajectorySample::planar(s.stamp, s.pose.x, s.pose.y, s.pose.yaw))
            .collect();
        Trajectory::new(samples).unwrap_or_default()
    }

    pub fn visual_trajectory(&self) -> Trajectory {
        let samples = self
            .visual
            .iter()
            .map(|(t, p)| TrajectorySample {
                stamp: *t,
                position: *p,
                orientation: None,
            })
            .collect();
        Trajectory::new(samples).unwrap_or_default()
    }
}

impl Node for Evaluator {
    fn name(&self) -> &'static str {
        "evaluator"
    }

    fn step(&mut self, _tick: u64) -> Result<bool, PipelineError> {
        let mut worked = false;
        for env in self.subs.iter().flat_map(|s| s.drain()) {
            worked = true;
            match &*env.payload {
                Payload::Pose(p) => self.truth.push((env.stamp, *p)),
                Payload::Visual(f) => {
                    if let Some(p) = f.pose {
                        self.visual.push((env.stamp, p.position));
                    }
                }
                Payload::Scaled(s) => self.scaled.push(*s),
                Payload::Tracking(s) => self.states.push((env.stamp, *s)),
                Payload::Mask(_) if &*env.topic == topics::CAMERA_MASK => self.masks += 1,
                Payload::Mask(_) => self.keyframes += 1,
                _ => return Err(PipelineError::Unexpected(env.topic.to_string())),
            }
        }
        Ok(worked)
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(points: &[[f64; 2]]) -> Vec<(f64, [f64; 2])> {
        points.iter().enumerate().map(|(i, p)| (i as f64 * 0.1, *p)).collect()
    }

    #[test]
    fn ate_ignores_rigid_offset() {
        let truth = series(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 2.0]]);
        let (s, c) = 0.7f64.sin_cos();
        let moved: Vec<_> = truth
            .iter()
            .map(|(t, p)| (*t, [c * p[0] - s * p[1] + 3.0, s * p[0] + c * p[1] - 1.0]))
            .collect();
        assert!(ate(&moved, &truth).unwrap() < 1e-9);
    }

    #[test]
    fn ate_does_not_forgive_scale() {
        let truth = series(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0]]);
        let half: Vec<_> = truth.iter().map(|(t, p)| (*t, [p[0] * 0.5, p[1]])).collect();
        // best rigid fit of 0,0.5,1,1.5 onto 0,1,2,3: residuals ±0.75, ±0.25
        let expected = ((2.0 * 0.75f64.powi(2) + 2.0 * 0.25f64.powi(2)) / 4.0).sqrt();
        assert!((ate(&half, &truth).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn pairing_needs_matching_stamps() {
        let a = vec![(0.0, [0.0, 0.0]), (0.5, [1.0, 0.0]), (1.0, [2.0, 0.0])];
        let b = vec![(0.0, [0.0, 0.0]), (0.25, [9.0, 9.0]), (1.0, [2.0, 0.0])];
        assert_eq!(pair_by_stamp(&a, &b).len(), 2);
        assert_eq!(ate(&a, &b), None);
    }
}
