//! Turns `map/global` updates into a patch stream a client can follow.

use ctxmap_core::mapping::{GridPatch, GridUpdate, MappingError, TernaryGrid};

/// Server-side copy of the ternary map as clients see it.
#[derive(Debug, Clone, Default)]
pub struct GridSync {
    grid: TernaryGrid,
}

impl GridSync {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn grid(&self) -> &TernaryGrid {
        &self.grid
    }

    /// Applies a bus update and returns the patch that moves a client from
    /// the previous state to the new one. Full snapshots are diffed.
    pub fn ingest(&mut self, update: &GridUpdate) -> Result<GridPatch, MappingError> {
        let patch = match update {
            GridUpdate::Snapshot(full) => self.grid.diff(full),
            GridUpdate::Patch(p) => p.clone(),
        };
        if let Some(e) = self.grid.epoch() {
            if patch.epoch <= e {
                return Err(MappingError::EpochGap {
                    expected: e + 1,
                    got: patch.epoch,
                });
            }
        }
        self.grid.apply(&GridUpdate::Patch(patch.clone()))?;
        Ok(patch)
    }

    /// What a joining client starts from.
    pub fn snapshot(&self) -> GridPatch {
        self.grid.snapshot()
    }
}
