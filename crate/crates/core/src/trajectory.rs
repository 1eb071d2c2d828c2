//! Timestamped position tracks and their plain-text file format.
//!
//! One sample per line: `t x y z [qw qx qy qz]`, whitespace separated.
//! Blank lines and anything after `#` are ignored.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("timestamps must be strictly increasing (sample {index}: {prev} then {stamp})")]
    NonMonotonic { index: usize, prev: f64, stamp: f64 },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub stamp: f64,
    pub position: [f64; 3],
    /// `[w, x, y, z]`
    pub orientation: Option<[f64; 4]>,
}

impl TrajectorySample {
    pub fn planar(stamp: f64, x: f64, y: f64, yaw: f64) -> Self {
        let (s, c) = (0.5 * yaw).sin_cos();
        TrajectorySample {
            stamp,
            position: [x, y, 0.0],
            orientation: Some([c, 0.0, 0.0, s]),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    samples: Vec<TrajectorySample>,
}

impl Trajectory {
    pub fn new(samples: Vec<TrajectorySample>) -> Result<Self, TrajectoryError> {
        for (i, w) in samples.windows(2).enumerate() {
            if !(w[1].stamp > w[0].stamp) {
                return Err(TrajectoryError::NonMonotonic {
                    index: i + 1,
                    prev: w[0].stamp,
                    stamp: w[1].stamp,
                });
            }
        }
        Ok(Trajectory { samples })
    }

    pub fn samples(&self) -> &[TrajectorySample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn push(&mut self, sample: TrajectorySample) -> Result<(), TrajectoryError> {
        if let Some(last) = self.samples.last() {
            if !(sample.stamp > last.stamp) {
                return Err(TrajectoryError::NonMonotonic {
                    index: self.samples.len(),
                    prev: last.stamp,
                    stamp: sample.stamp,
                });
            }
        }
        self.samples.push(sample);
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, TrajectoryError> {
        let mut samples = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let vals = line
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<f64>().map_err(|_| TrajectoryError::Parse {
                        line: n + 1,
                        msg: format!("not a number: {tok:?}"),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            let orientation = match vals.len() {
                4 => None,
                8 => Some([vals[4], vals[5], vals[6], vals[7]]),
                k => {
                    return Err(TrajectoryError::Parse {
                        line: n + 1,
                        msg: format!("expected 4 or 8 fields, found {k}"),
                    })
                }
            };
            samples.push(TrajectorySample {
                stamp: vals[0],
                position: [vals[1], vals[2], vals[3]],
                orientation,
            });
        }
        Trajectory::new(samples)
    }

    pub fn load(path: &Path) -> Result<Self, TrajectoryError> {
        let text = std::fs::read_to_string(path).map_err(|source| TrajectoryError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Trajectory::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# t x y z qw qx qy qz\n");
        for s in &self.samples {
            let _ = write!(out, "{} {} {} {}", s.stamp, s.position[0], s.position[1], s.position[2]);
            if let Some(q) = s.orientation {
                let _ = write!(out, " {} {} {} {}", q[0], q[1], q[2], q[3]);
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), TrajectoryError> {
        std::fs::write(path, self.to_text()).map_err(|source| TrajectoryError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}
