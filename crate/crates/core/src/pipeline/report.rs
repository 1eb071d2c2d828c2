//! Run summary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bus::TopicStats;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ModuleTiming {
    pub calls: u64,
    pub mean_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
}

impl ModuleTiming {
    pub fn from_samples(ms: &[f64]) -> ModuleTiming {
        if ms.is_empty() {
            return ModuleTiming::default();
        }
        let mut sorted = ms.to_vec();
        sorted.sort_by(f64::total_cmp);
        let idx = ((sorted.len() as f64 * 0.95).ceil() as usize).clamp(1, sorted.len()) - 1;
        ModuleTiming {
            calls: ms.len() as u64,
            mean_ms: ms.iter().sum::<f64>() / ms.len() as f64,
            p95_ms: sorted[idx],
            max_ms: sorted[sorted.len() - 1],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MapSummary {
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
    pub occupied: usize,
    pub free: usize,
    pub epoch: u64,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrackingSummary {
    pub final_state: String,
    pub losses: u64,
    pub relocalisations: u64,
    pub scaler_failures: usize,
    pub scale: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlSummary {
    pub clamped: u64,
    pub suppressed: u64,
    pub retraced_ticks: u64,
    pub killed_ticks: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub ticks: u64,
    pub sim_time_s: f64,
    pub wall_time_s: f64,
    /// Camera frames produced by the segmenter.
    pub frames_processed: u64,
    pub keyframes_forwarded: u64,
    pub keyframes_gated: u64,
    pub boundaries: u64,
    pub local_maps: u64,
    pub fused: u64,
    /// Frames per wall-clock second.
    pub pipeline_rate_hz: f64,
    pub scaled_ate_m: Option<f64>,
    pub raw_ate_m: Option<f64>,
    pub final_scaled_error_m: Option<f64>,
    pub final_raw_error_m: Option<f64>,
    pub map: MapSummary,
    pub tracking: TrackingSummary,
    pub control: ControlSummary,
    pub modules: BTreeMap<String, ModuleTiming>,
    pub topics: BTreeMap<String, TopicStats>,
}

fn opt(v: Option<f64>, unit: &str) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}{unit}"))
}

impl RunReport {
    pub fn load(path: &Path) -> std::io::Result<RunReport> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scenario        {} (seed {})", self.scenario, self.seed);
        let _ = writeln!(
            s,
            "time            {} ticks, {:.1} s simulated, {:.2} s wall",
            self.ticks, self.sim_time_s, self.wall_time_s
        );
        let _ = writeln!(
            s,
            "frames          {} processed, {} keyframes forwarded, {} gated ({:.1} Hz)",
            self.frames_processed, self.keyframes_forwarded, self.keyframes_gated, self.pipeline_rate_hz
        );
        let _ = writeln!(
            s,
            "mapping         {} boundaries, {} local maps, {} fused",
            self.boundaries, self.local_maps, self.fused
        );
        let _ = writeln!(
            s,
            "ate             scaled {}  raw {}",
            opt(self.scaled_ate_m, " m"),
            opt(self.raw_ate_m, " m")
        );
        let _ = writeln!(
            s,
            "final error     scaled {}  raw {}",
            opt(self.final_scaled_error_m, " m"),
            opt(self.final_raw_error_m, " m")
        );
        let t = &self.tracking;
        let _ = writeln!(
            s,
            "tracking        {} ({} losses, {} relocalisations, scale {}, {} scaler failures)",
            t.final_state,
            t.losses,
            t.relocalisations,
            opt(t.scale, ""),
            t.scaler_failures
        );
        let m = &self.map;
        let _ = writeln!(
            s,
            "map             {}x{} @ {} m, {} occupied, {} free, epoch {}, iou {:.3}",
            m.width, m.height, m.resolution, m.occupied, m.free, m.epoch, m.iou
        );
        let c = &self.control;
        let _ = writeln!(
            s,
            "control         {} clamped, {} suppressed, {} retraced ticks, {} killed ticks",
            c.clamped, c.suppressed, c.retraced_ticks, c.killed_ticks
        );
        let _ = writeln!(s, "modules");
        for (name, t) in &self.modules {
            let _ = writeln!(
                s,
                "  {name:<12} {:>7} calls  mean {:>8.3} ms  p95 {:>8.3} ms  max {:>8.3} ms",
                t.calls, t.mean_ms, t.p95_ms, t.max_ms
            );
        }
        let _ = writeln!(s, "topics");
        for (name, t) in &self.topics {
            let _ = writeln!(
                s,
                "  {name:<18} {:>7} published {:>8} delivered {:>6} dropped",
                t.published, t.delivered, t.dropped
            );
        }
        s
    }
}
