//! Tracking-state machine, keyframe gating and scaled odometry output of the
//! SLAM module.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::geometry::{Pose2, SimilarityTransform3};
use crate::mask::SegMask;
use crate::sim::VisualPose;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackingState {
    #[default]
    WaitingForImages,
    NotInitialized,
    Tracking,
    TrackingLost,
}

impl TrackingState {
    pub const ALL: [TrackingState; 4] = [
        TrackingState::WaitingForImages,
        TrackingState::NotInitialized,
        TrackingState::Tracking,
        TrackingState::TrackingLost,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TrackingState::WaitingForImages => "waiting_for_images",
            TrackingState::NotInitialized => "not_initialized",
            TrackingState::Tracking => "tracking",
            TrackingState::TrackingLost => "tracking_lost",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackingEvent {
    ImageArrived,
    InitSucceeded,
    LossEvent,
    RelocalizedEvent,
    Reset,
}

impl TrackingEvent {
    pub const ALL: [TrackingEvent; 5] = [
        TrackingEvent::ImageArrived,
        TrackingEvent::InitSucceeded,
        TrackingEvent::LossEvent,
        TrackingEvent::RelocalizedEvent,
        TrackingEvent::Reset,
    ];
}

/// Total transition function; unlisted pairs leave the state unchanged.
pub fn step_tracking(state: TrackingState, event: TrackingEvent) -> TrackingState {
    use TrackingEvent as E;
    use TrackingState as S;
    match (state, event) {
        (_, E::Reset) => S::WaitingForImages,
        (S::WaitingForImages, E::ImageArrived) => S::NotInitialized,
        (S::NotInitialized, E::InitSucceeded) => S::Tracking,
        (S::Tracking, E::LossEvent) => S::TrackingLost,
        (S::TrackingLost, E::RelocalizedEvent) => S::Tracking,
        (s, _) => s,
    }
}

/// Passes masks downstream only while tracking.
#[derive(Debug, Clone, Default)]
pub struct KeyframeGate {
    forwarded: u64,
    gated: u64,
}

impl KeyframeGate {
    pub fn forward_keyframe(&mut self, mask: SegMask, state: TrackingState) -> Option<SegMask> {
        if state == TrackingState::Tracking {
            self.forwarded += 1;
            Some(mask)
        } else {
            self.gated += 1;
            None
        }
    }

    pub fn forwarded(&self) -> u64 {
        self.forwarded
    }

    pub fn gated(&self) -> u64 {
        self.gated
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaledOdomMsg {
    pub stamp: f64,
    pub pose: Pose2,
    pub scale_valid: bool,
}

/// Maps the latest visual pose into the metric frame; silent unless tracking.
pub fn publish_scaled(
    stamp: f64,
    visual: &VisualPose,
    transform: &SimilarityTransform3,
    scale_valid: bool,
    state: TrackingState,
) -> Option<ScaledOdomMsg> {
    if state != TrackingState::Tracking {
        return None;
    }
    let p = transform.apply(&Vector3::from(visual.position));
    Some(ScaledOdomMsg {
        stamp,
        pose: Pose2::new(p.x, p.y, transform.rotate_yaw(visual.yaw)),
        scale_valid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::SegClass;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn transition_examples() {
        use TrackingEvent as E;
        use TrackingState as S;
        assert_eq!(step_tracking(S::WaitingForImages, E::ImageArrived), S::NotInitialized);
        assert_eq!(step_tracking(S::NotInitialized, E::InitSucceeded), S::Tracking);
        assert_eq!(step_tracking(S::Tracking, E::LossEvent), S::TrackingLost);
        assert_eq!(step_tracking(S::TrackingLost, E::RelocalizedEvent), S::Tracking);
        assert_eq!(step_tracking(S::NotInitialized, E::LossEvent), S::NotInitialized);
        for s in S::ALL {
            assert_eq!(step_tracking(s, E::Reset), S::WaitingForImages);
        }
    }

    #[test]
    fn never_tracks_without_initialising() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..2000 {
            let mut s = TrackingState::default();
            let mut seen_not_init = false;
            for _ in 0..30 {
                let e = TrackingEvent::ALL[rng.random_range(0..5)];
                let next = step_tracking(s, e);
                if next == TrackingState::WaitingForImages {
                    seen_not_init = false;
                }
                if next == TrackingState::NotInitialized {
                    seen_not_init = true;
                }
                if next == TrackingState::Tracking {
                    assert!(seen_not_init);
                }
                s = next;
            }
        }
    }

    #[test]
    fn gate_only_forwards_while_tracking() {
        let mut gate = KeyframeGate::default();
        let m = SegMask::filled(4, 2, SegClass::Road);
        assert!(gate.forward_keyframe(m.clone(), TrackingState::Tracking).is_some());
        assert!(gate.forward_keyframe(m.clone(), TrackingState::TrackingLost).is_none());
        assert!(gate.forward_keyframe(m, TrackingState::WaitingForImages).is_none());
        assert_eq!((gate.forwarded(), gate.gated()), (1, 2));
    }

    #[test]
    fn scaled_output_examples() {
        let vp = VisualPose { position: [1.0, 2.0, 0.0], yaw: 0.3 };
        let msg = publish_scaled(1.0, &vp, &SimilarityTransform3::identity(), false, TrackingState::Tracking).unwrap();
        assert_eq!((msg.pose.x, msg.pose.y), (1.0, 2.0));
        assert!(!msg.scale_valid);
        assert!((msg.pose.yaw - 0.3).abs() < 1e-12);

        let t = SimilarityTransform3::from_yaw(1.0 / 0.37, 0.0, [0.0; 3]).unwrap();
        let truth = Pose2::new(1.3, -0.4, 0.1);
        let vp = VisualPose { position: [0.37 * truth.x, 0.37 * truth.y, 0.0], yaw: truth.yaw };
        let msg = publish_scaled(2.0, &vp, &t, true, TrackingState::Tracking).unwrap();
        assert!(msg.pose.distance_to(&truth) < 1e-6);

        assert!(publish_scaled(3.0, &vp, &t, true, TrackingState::TrackingLost).is_none());
    }
}
