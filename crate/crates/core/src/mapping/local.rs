use serde::{Deserialize, Serialize};

use super::{cell_index, CellState, MappingError};
use crate::context::{ColumnRay, GroundBoundary, GroundEntry};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalMapConfig {
    pub resolution: f64,
    pub width_m: f64,
    pub length_m: f64,
}

impl Default for LocalMapConfig {
    fn default() -> Self {
        LocalMapConfig {
            resolution: 0.05,
            width_m: 1.1,
            length_m: 2.5,
        }
    }
}

impl LocalMapConfig {
    pub fn validate(&self) -> Result<(), MappingError> {
        if !(self.resolution > 0.0 && self.width_m > 0.0 && self.length_m > 0.0) {
            return Err(MappingError::InvalidConfig(
                "resolution and footprint dimensions must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn cols(&self) -> usize {
        (self.width_m / self.resolution - 1e-9).ceil() as usize
    }

    pub fn rows(&self) -> usize {
        (self.length_m / self.resolution - 1e-9).ceil() as usize
    }
}

/// Robot-relative grid in front of the robot. Row 0 touches the robot's
/// front edge; column 0 is the rightmost strip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalMap {
    pub config: LocalMapConfig,
    cols: usize,
    rows: usize,
    #[serde(with = "super::cells")]
    cells: Vec<CellState>,
}

impl LocalMap {
    pub fn unknown(config: LocalMapConfig) -> Self {
        let (cols, rows) = (config.cols(), config.rows());
        LocalMap {
            config,
            cols,
            rows,
            cells: vec![CellState::Unknown; cols * rows],
        }
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cells(&self) -> &[CellState] {
        &self.cells
    }

    pub fn get(&self, col: usize, row: usize) -> CellState {
        self.cells[row * self.cols + col]
    }

    pub fn count(&self, state: CellState) -> usize {
        self.cells.iter().filter(|&&c| c == state).count()
    }

    /// Raises a cell to `state` if that has higher priority
    /// (Occupied over Free over Unknown).
    fn mark(&mut self, col: usize, row: usize, state: CellState) {
        let c = &mut self.cells[row * self.cols + col];
        let rank = |s: CellState| s.code();
        if rank(state) > rank(*c) {
            *c = state;
        }
    }

    /// `(x_lateral, y_forward)` of a cell centre.
    pub fn cell_center(&self, col: usize, row: usize) -> (f64, f64) {
        let res = self.config.resolution;
        (
            -self.config.width_m / 2.0 + (col as f64 + 0.5) * res,
            (row as f64 + 0.5) * res,
        )
    }

    /// Cell containing ground point `(x_lateral, y_forward)`, if inside the
    /// footprint. Points on the far or left edge belong to the last cell.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let res = self.config.resolution;
        let half = self.config.width_m / 2.0;
        if !(y >= 0.0 && y <= self.config.length_m + 1e-9 && x.abs() <= half + 1e-9) {
            return None;
        }
        let col = cell_index(x + half, res).clamp(0, self.cols as i64 - 1) as usize;
        let row = cell_index(y, res).clamp(0, self.rows as i64 - 1) as usize;
        Some((col, row))
    }
}

/// Rasterises one projected boundary into the local footprint.
///
/// Each column contributes along its ground ray: free space up to the
/// obstacle base and the base cell itself as occupied, the whole ray as free
/// when clear, nothing when filtered.
pub fn build_local_map(
    boundary: &GroundBoundary,
    rays: &[ColumnRay],
    config: &LocalMapConfig,
) -> Result<LocalMap, MappingError> {
    config.validate()?;
    if rays.len() != boundary.len() {
        return Err(MappingError::RayCountMismatch {
            boundary: boundary.len(),
            rays: rays.len(),
        });
    }
    let mut map = LocalMap::unknown(*config);
    let step = config.resolution / 4.0;
    for (entry, ray) in boundary.entries.iter().zip(rays) {
        match *entry {
            GroundEntry::Filtered { .. } => {}
            GroundEntry::Clear => {
                let mut y = step / 2.0;
                while y < config.length_m {
                    if let Some((c, r)) = map.cell_of(ray.x_at(y), y) {
                        map.mark(c, r, CellState::Free);
                    }
                    y += step;
                }
            }
            GroundEntry::Obstacle { x, y } => {
                let Some(hit) = map.cell_of(x, y) else { continue };
                // straight segment from where the ray leaves the robot to the base
                let x_start = ray.x_at(0.0);
                let mut s = step / 2.0;
                while s < y {
                    let xs = x_start + (x - x_start) * s / y;
                    if let Some(cell) = map.cell_of(xs, s) {
                        if cell != hit {
                            map.mark(cell.0, cell.1, CellState::Free);
                        }
                    }
                    s += step;
                }
                map.mark(hit.0, hit.1, CellState::Occupied);
            }
        }
    }
    Ok(map)
}
