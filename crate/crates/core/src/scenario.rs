//! Scenario files: world, sensors, pipeline parameters and the drive script.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::{build_homography, BoundaryFilter};
use crate::mapping::LocalMapConfig;
use crate::sim::{CameraModel, Scene, VelocityLimits, VisualOdomConfig, WheelNoise};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid scenario: {field}: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: &str, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraSpec {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub mount_height: f64,
    pub mount_pitch_deg: f64,
    pub mount_lateral_offset: f64,
}

impl Default for CameraSpec {
    fn default() -> Self {
        let c = CameraModel::default();
        CameraSpec {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
            mount_height: c.mount_height,
            mount_pitch_deg: c.mount_pitch.to_degrees(),
            mount_lateral_offset: c.mount_lateral_offset,
        }
    }
}

impl CameraSpec {
    pub fn model(&self) -> CameraModel {
        CameraModel {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            width: self.width,
            height: self.height,
            mount_height: self.mount_height,
            mount_pitch: self.mount_pitch_deg.to_radians(),
            mount_lateral_offset: self.mount_lateral_offset,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlamParams {
    pub scale_period_s: f64,
    pub max_gap_s: f64,
}

impl Default for SlamParams {
    fn default() -> Self {
        SlamParams {
            scale_period_s: 1.0,
            max_gap_s: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlParams {
    pub history_s: f64,
}

impl Default for ControlParams {
    fn default() -> Self {
        ControlParams { history_s: 30.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MappingParams {
    pub resolution: f64,
    pub width_m: f64,
    pub length_m: f64,
    pub max_range: f64,
    pub grad_threshold: f64,
    pub iou_band: f64,
}

impl Default for MappingParams {
    fn default() -> Self {
        let l = LocalMapConfig::default();
        let f = BoundaryFilter::default();
        MappingParams {
            resolution: l.resolution,
            width_m: l.width_m,
            length_m: l.length_m,
            max_range: f.max_range,
            grad_threshold: f.grad_threshold,
            iou_band: 0.1,
        }
    }
}

impl MappingParams {
    pub fn local(&self) -> LocalMapConfig {
        LocalMapConfig {
            resolution: self.resolution,
            width_m: self.width_m,
            length_m: self.length_m,
        }
    }

    pub fn filter(&self) -> BoundaryFilter {
        BoundaryFilter {
            max_range: self.max_range,
            grad_threshold: self.grad_threshold,
            half_width: self.width_m / 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptStep {
    Repeat(RepeatStep),
    Kill(KillStep),
    Segment(Segment),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepeatStep {
    pub repeat: u32,
    pub steps: Vec<ScriptStep>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KillStep {
    pub kill: bool,
}

/// Hold `(v, w)` for `duration` seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub duration: f64,
    #[serde(default)]
    pub v: f64,
    #[serde(default)]
    pub w: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriveSpec {
    pub teleop: bool,
    pub script: Vec<ScriptStep>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScriptAction {
    Cmd { v: f64, w: f64 },
    Kill(bool),
}

/// Script action issued at the start of tick `tick`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScriptEvent {
    pub tick: u64,
    pub action: ScriptAction,
}

fn default_tick_hz() -> u32 {
    10
}

fn default_frame_hz() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub seed: u64,
    pub duration_s: f64,
    #[serde(default = "default_tick_hz")]
    pub tick_hz: u32,
    #[serde(default = "default_frame_hz")]
    pub frame_hz: u32,
    pub scene: Scene,
    #[serde(default)]
    pub camera: CameraSpec,
    #[serde(default)]
    pub wheel_noise: WheelNoise,
    #[serde(default)]
    pub visual: VisualOdomConfig,
    #[serde(default)]
    pub limits: VelocityLimits,
    #[serde(default)]
    pub slam: SlamParams,
    #[serde(default)]
    pub control: ControlParams,
    #[serde(default)]
    pub mapping: MappingParams,
    pub drive: DriveSpec,
}

fn whole_ticks(seconds: f64, hz: u32, field: &str) -> Result<u64, ScenarioError> {
    let t = seconds * hz as f64;
    let r = t.round();
    if !(seconds >= 0.0) || (t - r).abs() > 1e-6 {
        return Err(invalid(field, format!("{seconds} s is not a whole number of {hz} Hz ticks")));
    }
    Ok(r as u64)
}

impl Scenario {
    pub fn from_yaml(text: &str, origin: &str) -> Result<Scenario, ScenarioError> {
        let s: Scenario = serde_yaml::from_str(text).map_err(|e| ScenarioError::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Scenario, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Scenario::from_yaml(&text, &path.display().to_string())
    }

    pub fn total_ticks(&self) -> u64 {
        (self.duration_s * self.tick_hz as f64).round() as u64
    }

    /// Ticks between camera frames.
    pub fn frame_every(&self) -> u64 {
        (self.tick_hz / self.frame_hz) as u64
    }

    pub fn camera_model(&self) -> CameraModel {
        self.camera.model()
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.name.trim().is_empty() {
            return Err(invalid("name", "must not be empty"));
        }
        if !(self.duration_s > 0.0) {
            return Err(invalid("duration_s", "must be positive"));
        }
        if self.tick_hz == 0 {
            return Err(invalid("tick_hz", "must be positive"));
        }
        whole_ticks(self.duration_s, self.tick_hz, "duration_s")?;
        if self.frame_hz == 0 || self.tick_hz % self.frame_hz != 0 {
            return Err(invalid("frame_hz", "must divide tick_hz"));
        }
        self.scene.validate().map_err(|e| invalid("scene", e.to_string()))?;
        let cam = self.camera_model();
        cam.validate().map_err(|e| invalid("camera", e))?;
        build_homography(&cam).map_err(|e| invalid("camera", e.to_string()))?;
        if !(self.wheel_noise.sigma_trans >= 0.0 && self.wheel_noise.sigma_rot >= 0.0) {
            return Err(invalid("wheel_noise", "sigmas must be non-negative"));
        }
        self.visual.validate().map_err(|e| invalid("visual", e))?;
        if !(self.limits.v_max > 0.0 && self.limits.w_max > 0.0) {
            return Err(invalid("limits", "v_max and w_max must be positive"));
        }
        if !(self.slam.scale_period_s > 0.0 && self.slam.max_gap_s >= 0.0) {
            return Err(invalid("slam", "scale_period_s must be positive, max_gap_s non-negative"));
        }
        whole_ticks(self.slam.scale_period_s, self.tick_hz, "slam.scale_period_s")?;
        if !(self.control.history_s >= 0.0) {
            return Err(invalid("control.history_s", "must be non-negative"));
        }
        let m = &self.mapping;
        if !(m.resolution > 0.0 && m.width_m > 0.0 && m.length_m > 0.0 && m.max_range > 0.0 && m.grad_threshold >= 0.0 && m.iou_band >= 0.0) {
            return Err(invalid("mapping", "sizes must be positive"));
        }
        if self.drive.teleop && !self.drive.script.is_empty() {
            return Err(invalid("drive", "use either teleop or script, not both"));
        }
        self.script_events()?;
        Ok(())
    }

    /// Flattens the drive script into tick-stamped actions. A final stop
    /// command follows the last segment.
    pub fn script_events(&self) -> Result<Vec<ScriptEvent>, ScenarioError> {
        fn walk(steps: &[ScriptStep], hz: u32, tick: &mut u64, out: &mut Vec<ScriptEvent>) -> Result<(), ScenarioError> {
            for s in steps {
                match s {
                    ScriptStep::Segment(seg) => {
                        if !(seg.v.is_finite() && seg.w.is_finite()) {
                            return Err(invalid("drive.script", "velocities must be finite"));
                        }
                        let n = whole_ticks(seg.duration, hz, "drive.script.duration")?;
                        out.push(ScriptEvent {
                            tick: *tick,
                            action: ScriptAction::Cmd { v: seg.v, w: seg.w },
                        });
                        *tick += n;
                    }
                    ScriptStep::Kill(k) => out.push(ScriptEvent {
                        tick: *tick,
                        action: ScriptAction::Kill(k.kill),
                    }),
                    ScriptStep::Repeat(r) => {
                        for _ in 0..r.repeat {
                            walk(&r.steps, hz, tick, out)?;
                        }
                    }
                }
            }
            Ok(())
        }
        let mut out = Vec::new();
        let mut tick = 0;
        walk(&self.drive.script, self.tick_hz, &mut tick, &mut out)?;
        if out.iter().any(|e| matches!(e.action, ScriptAction::Cmd { .. })) {
            out.push(ScriptEvent {
                tick,
                action: ScriptAction::Cmd { v: 0.0, w: 0.0 },
            });
        }
        Ok(out)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("scenario is plain data")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "
name: t
seed: 1
duration_s: 5
scene:
  ground: {min: [-5, -5], max: [5, 5]}
  obstacles:
    - {shape: box, min: [2, -0.5], max: [3, 0.5], height: 1, class: object, label: bin}
    - {shape: cylinder, center: [1, 2], radius: 0.3, height: 1.7, class: person}
drive:
  script:
    - {duration: 1, v: 0.5}
    - repeat: 2
      steps:
        - {duration: 0.5, w: 0.3}
        - {kill: true}
";

    #[test]
    fn parses_with_defaults() {
        let s = Scenario::from_yaml(MINIMAL, "t.yaml").unwrap();
        assert_eq!(s.tick_hz, 10);
        assert_eq!(s.frame_every(), 10);
        assert_eq!(s.total_ticks(), 50);
        assert_eq!(s.camera_model(), CameraModel::default());
        assert_eq!(s.scene.obstacles.len(), 2);
        let ev = s.script_events().unwrap();
        let ticks: Vec<_> = ev.iter().map(|e| e.tick).collect();
        assert_eq!(ticks, vec![0, 10, 15, 15, 20, 20]);
        assert_eq!(ev[2].action, ScriptAction::Kill(true));
        assert_eq!(ev[5].action, ScriptAction::Cmd { v: 0.0, w: 0.0 });
    }

    #[test]
    fn unknown_field_reports_location() {
        let bad = MINIMAL.replace("seed: 1", "seed: 1\nsede: 2");
        let err = Scenario::from_yaml(&bad, "t.yaml").unwrap_err().to_string();
        assert!(err.contains("sede") && err.contains("line"), "{err}");
    }

    #[test]
    fn fractional_ticks_rejected() {
        let bad = MINIMAL.replace("{duration: 1, v: 0.5}", "{duration: 1.03, v: 0.5}");
        let err = Scenario::from_yaml(&bad, "t.yaml").unwrap_err();
        assert!(matches!(err, ScenarioError::Invalid { .. }));
    }

    #[test]
    fn teleop_and_script_are_exclusive() {
        let bad = MINIMAL.replace("drive:\n", "drive:\n  teleop: true\n");
        assert!(Scenario::from_yaml(&bad, "t.yaml").is_err());
    }

    #[test]
    fn json_round_trip() {
        let s = Scenario::from_yaml(MINIMAL, "t.yaml").unwrap();
        let back: Scenario = serde_json::from_value(s.to_json()).unwrap();
        assert_eq!(back, s);
    }
}
