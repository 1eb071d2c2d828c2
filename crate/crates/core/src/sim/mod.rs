//! Synthetic world standing in for the robot, its camera, the segmenter and
//! the visual SLAM front end.

pub mod camera;
pub mod dynamics;
pub mod odometry;
pub mod render;
pub mod scene;

pub use camera::CameraModel;
pub use dynamics::{step_dynamics, StepOutcome, VelocityLimits};
pub use odometry::{wheel_odometry, LossWindow, VisualFrame, VisualOdomConfig, VisualOdometry, VisualPose, WheelNoise};
pub use render::render_segmentation;
pub use scene::{Footprint, GroundExtent, Obstacle, ObstacleClass, Scene, SceneError};
