//! Payloads carried on the bus and the standard topic table.

use serde::{Deserialize, Serialize};

use crate::alignment::ScalerUpdate;
use crate::context::GroundBoundary;
use crate::control::{CmdVel, EffectiveCmd};
use crate::geometry::Pose2;
use crate::mapping::{GridUpdate, LocalMap};
use crate::mask::SegMask;
use crate::sim::VisualFrame;
use crate::slam::{ScaledOdomMsg, TrackingState};

pub mod topics {
    pub const ODOM_WHEEL: &str = "odom/wheel";
    pub const ODOM_TRUTH: &str = "odom/truth";
    pub const ODOM_VISUAL: &str = "odom/visual";
    pub const ODOM_SCALED: &str = "odom/scaled";
    pub const ODOM_TRANSFORM: &str = "odom/transform";
    pub const SLAM_STATE: &str = "slam/state";
    pub const CAMERA_MASK: &str = "camera/mask";
    pub const SLAM_KEYFRAME: &str = "slam/keyframe";
    pub const CONTEXT_BOUNDARY: &str = "context/boundary";
    pub const MAP_LOCAL: &str = "map/local";
    pub const MAP_GLOBAL: &str = "map/global";
    pub const CTRL_CMD_VEL: &str = "ctrl/cmd_vel";
    pub const CTRL_KILL: &str = "ctrl/kill";
    pub const CTRL_EFFECTIVE: &str = "ctrl/effective";
    pub const RUN_CONFIG: &str = "run/config";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadKind {
    Pose,
    Visual,
    Scaled,
    Transform,
    Tracking,
    Mask,
    Boundary,
    LocalMap,
    GlobalMap,
    CmdVel,
    Kill,
    Effective,
    Config,
}

/// `(topic, payload kind, latched)` for every topic the pipeline uses.
pub const STANDARD_TOPICS: &[(&str, PayloadKind, bool)] = &[
    (topics::ODOM_WHEEL, PayloadKind::Pose, false),
    (topics::ODOM_TRUTH, PayloadKind::Pose, false),
    (topics::ODOM_VISUAL, PayloadKind::Visual, false),
    (topics::ODOM_SCALED, PayloadKind::Scaled, false),
    (topics::ODOM_TRANSFORM, PayloadKind::Transform, false),
    (topics::SLAM_STATE, PayloadKind::Tracking, true),
    (topics::CAMERA_MASK, PayloadKind::Mask, false),
    (topics::SLAM_KEYFRAME, PayloadKind::Mask, false),
    (topics::CONTEXT_BOUNDARY, PayloadKind::Boundary, false),
    (topics::MAP_LOCAL, PayloadKind::LocalMap, false),
    (topics::MAP_GLOBAL, PayloadKind::GlobalMap, true),
    (topics::CTRL_CMD_VEL, PayloadKind::CmdVel, false),
    (topics::CTRL_KILL, PayloadKind::Kill, true),
    (topics::CTRL_EFFECTIVE, PayloadKind::Effective, false),
    (topics::RUN_CONFIG, PayloadKind::Config, true),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryMsg {
    /// Scaled pose the frame was taken at, if one was available.
    pub pose: Option<ScaledOdomMsg>,
    pub boundary: GroundBoundary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalMapMsg {
    pub pose: Option<Pose2>,
    /// Whether this local map was fused into the global map.
    pub fused: bool,
    pub map: LocalMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Payload {
    Pose(Pose2),
    Visual(VisualFrame),
    Scaled(ScaledOdomMsg),
    Transform(ScalerUpdate),
    Tracking(TrackingState),
    Mask(SegMask),
    Boundary(BoundaryMsg),
    LocalMap(LocalMapMsg),
    GlobalMap(GridUpdate),
    CmdVel(CmdVel),
    Kill(bool),
    Effective(EffectiveCmd),
    Config(serde_json::Value),
}

impl Payload {
    pub fn kind(&self) -> PayloadKind {
        match self {
            Payload::Pose(_) => PayloadKind::Pose,
            Payload::Visual(_) => PayloadKind::Visual,
            Payload::Scaled(_) => PayloadKind::Scaled,
            Payload::Transform(_) => PayloadKind::Transform,
            Payload::Tracking(_) => PayloadKind::Tracking,
            Payload::Mask(_) => PayloadKind::Mask,
            Payload::Boundary(_) => PayloadKind::Boundary,
            Payload::LocalMap(_) => PayloadKind::LocalMap,
            Payload::GlobalMap(_) => PayloadKind::GlobalMap,
            Payload::CmdVel(_) => PayloadKind::CmdVel,
            Payload::Kill(_) => PayloadKind::Kill,
            Payload::Effective(_) => PayloadKind::Effective,
            Payload::Config(_) => PayloadKind::Config,
        }
    }

    /// Decodes a payload whose kind is known from its topic.
    pub fn from_value(kind: PayloadKind, v: serde_json::Value) -> Result<Payload, serde_json::Error> {
        use serde_json::from_value as de;
        Ok(match kind {
            PayloadKind::Pose => Payload::Pose(de(v)?),
            PayloadKind::Visual => Payload::Visual(de(v)?),
            PayloadKind::Scaled => Payload::Scaled(de(v)?),
            PayloadKind::Transform => Payload::Transform(de(v)?),
            PayloadKind::Tracking => Payload::Tracking(de(v)?),
            PayloadKind::Mask => Payload::Mask(de(v)?),
            PayloadKind::Boundary => Payload::Boundary(de(v)?),
            PayloadKind::LocalMap => Payload::LocalMap(de(v)?),
            PayloadKind::GlobalMap => Payload::GlobalMap(de(v)?),
            PayloadKind::CmdVel => Payload::CmdVel(de(v)?),
            PayloadKind::Kill => Payload::Kill(de(v)?),
            PayloadKind::Effective => Payload::Effective(de(v)?),
            PayloadKind::Config => Payload::Config(v),
        })
    }
}
