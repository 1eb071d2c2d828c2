//! Local and global ternary occupancy grids.

mod cells;
pub mod export;
pub mod global;
pub mod iou;
pub mod local;

pub use export::{export_pgm, export_yaml, patch_to_pgm, save_map, MapFiles};
pub use global::{fuse_local, CellRect, GlobalMap, GridPatch, GridUpdate, LogOddsParams, TernaryGrid};
pub use iou::{facing_edges, map_iou};
pub use local::{build_local_map, LocalMap, LocalMapConfig};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellState {
    #[default]
    Unknown,
    Free,
    Occupied,
}

impl CellState {
    pub fn code(self) -> u8 {
        match self {
            CellState::Unknown => 0,
            CellState::Free => 1,
            CellState::Occupied => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<CellState> {
        match code {
            0 => Some(CellState::Unknown),
            1 => Some(CellState::Free),
            2 => Some(CellState::Occupied),
            _ => None,
        }
    }

    /// Grey level used in exported maps.
    pub fn pgm_value(self) -> u8 {
        match self {
            CellState::Free => 254,
            CellState::Occupied => 0,
            CellState::Unknown => 205,
        }
    }

    fn symbol(self) -> char {
        match self {
            CellState::Unknown => 'u',
            CellState::Free => 'f',
            CellState::Occupied => 'o',
        }
    }

    fn from_symbol(c: char) -> Option<CellState> {
        match c {
            'u' => Some(CellState::Unknown),
            'f' => Some(CellState::Free),
            'o' => Some(CellState::Occupied),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum MappingError {
    #[error("global map has no observed cells")]
    EmptyMap,
    #[error("boundary has {boundary} columns but {rays} column rays were given")]
    RayCountMismatch { boundary: usize, rays: usize },
    #[error("invalid map configuration: {0}")]
    InvalidConfig(String),
    #[error("patch epoch {got} does not follow {expected}")]
    EpochGap { expected: u64, got: u64 },
    #[error("patch has {got} cells, expected {expected}")]
    PatchSize { expected: usize, got: usize },
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
}

/// Index of the lattice cell `[i * res, (i + 1) * res)` containing `v`.
///
/// The small bias keeps values that land on a cell edge after a division
/// such as `1.4 / 0.05` in the upper cell.
pub fn cell_index(v: f64, res: f64) -> i64 {
    (v / res + 1e-9).floor() as i64
}
