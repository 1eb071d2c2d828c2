use serde::{Deserialize, Serialize};

use super::local::LocalMap;
use super::{cell_index, CellState, MappingError};
use crate::geometry::Pose2;

/// Axis-aligned block of world lattice cells; `(x, y)` is the south-west cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct CellRect {
    pub x: i64,
    pub y: i64,
    pub width: u32,
    pub height: u32,
}

impl CellRect {
    pub const EMPTY: CellRect = CellRect { x: 0, y: 0, width: 0, height: 0 };

    pub fn is_empty(&self) -> bool {
        self.width == 0 || self.height == 0
    }

    pub fn area(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn contains(&self, ix: i64, iy: i64) -> bool {
        ix >= self.x && iy >= self.y && ix < self.x + self.width as i64 && iy < self.y + self.height as i64
    }

    pub fn single(ix: i64, iy: i64) -> CellRect {
        CellRect { x: ix, y: iy, width: 1, height: 1 }
    }

    pub fn union(&self, other: &CellRect) -> CellRect {
        if self.is_empty() {
            return *other;
        }
        if other.is_empty() {
            return *self;
        }
        let x0 = self.x.min(other.x);
        let y0 = self.y.min(other.y);
        let x1 = (self.x + self.width as i64).max(other.x + other.width as i64);
        let y1 = (self.y + self.height as i64).max(other.y + other.height as i64);
        CellRect {
            x: x0,
            y: y0,
            width: (x1 - x0) as u32,
            height: (y1 - y0) as u32,
        }
    }

    /// Row-major offset of a contained cell, row 0 at the south edge.
    fn offset(&self, ix: i64, iy: i64) -> usize {
        (iy - self.y) as usize * self.width as usize + (ix - self.x) as usize
    }
}

/// Rectangular block of ternary states plus the map extent after applying it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridPatch {
    pub epoch: u64,
    pub extent: CellRect,
    pub rect: CellRect,
    /// Row-major, row 0 at the south edge of `rect`.
    #[serde(with = "super::cells")]
    pub cells: Vec<CellState>,
}

impl GridPatch {
    pub fn get(&self, ix: i64, iy: i64) -> Option<CellState> {
        self.rect.contains(ix, iy).then(|| self.cells[self.rect.offset(ix, iy)])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "grid", rename_all = "snake_case")]
pub enum GridUpdate {
    Snapshot(GridPatch),
    Patch(GridPatch),
}

impl GridUpdate {
    pub fn patch(&self) -> &GridPatch {
        match self {
            GridUpdate::Snapshot(p) | GridUpdate::Patch(p) => p,
        }
    }
}

/// Dense storage that grows without moving existing cells.
#[derive(Debug, Clone, PartialEq)]
struct Dense<T> {
    rect: CellRect,
    data: Vec<T>,
}

impl<T: Copy + Default> Dense<T> {
    fn new() -> Self {
        Dense { rect: CellRect::EMPTY, data: Vec::new() }
    }

    fn get(&self, ix: i64, iy: i64) -> T {
        if self.rect.contains(ix, iy) {
            self.data[self.rect.offset(ix, iy)]
        } else {
            T::default()
        }
    }

    fn get_mut(&mut self, ix: i64, iy: i64) -> &mut T {
        if !self.rect.contains(ix, iy) {
            self.grow(&CellRect::single(ix, iy));
        }
        let o = self.rect.offset(ix, iy);
        &mut self.data[o]
    }

    fn grow(&mut self, want: &CellRect) {
        const MARGIN: i64 = 16;
        let mut target = self.rect.union(want);
        if target == self.rect {
            return;
        }
        // over-allocate so a robot driving off the edge does not reallocate every cell
        target = target.union(&CellRect {
            x: want.x - MARGIN,
            y: want.y - MARGIN,
            width: want.width + 2 * MARGIN as u32,
            height: want.height + 2 * MARGIN as u32,
        });
        let mut data = vec![T::default(); target.area()];
        for iy in self.rect.y..self.rect.y + self.rect.height as i64 {
            for ix in self.rect.x..self.rect.x + self.rect.width as i64 {
                data[target.offset(ix, iy)] = self.data[self.rect.offset(ix, iy)];
            }
        }
        self.rect = target;
        self.data = data;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogOddsParams {
    pub hit: f64,
    pub miss: f64,
    pub clamp: f64,
    pub occupied_above: f64,
    pub free_below: f64,
}

impl Default for LogOddsParams {
    fn default() -> Self {
        LogOddsParams {
            hit: 1.2,
            miss: -0.6,
            clamp: 4.0,
            occupied_above: 0.5,
            free_below: -0.5,
        }
    }
}

impl LogOddsParams {
    pub fn state(&self, l: f64) -> CellState {
        if l > self.occupied_above {
            CellState::Occupied
        } else if l < self.free_below {
            CellState::Free
        } else {
            CellState::Unknown
        }
    }
}

/// World-anchored log-odds grid. Cell `(i, j)` covers
/// `[i * res, (i + 1) * res) x [j * res, (j + 1) * res)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalMap {
    resolution: f64,
    params: LogOddsParams,
    logodds: Dense<f64>,
    observed: CellRect,
    dirty: CellRect,
    epoch: u64,
}

impl GlobalMap {
    pub fn new(resolution: f64) -> Self {
        Self::with_params(resolution, LogOddsParams::default())
    }

    pub fn with_params(resolution: f64, params: LogOddsParams) -> Self {
        GlobalMap {
            resolution,
            params,
            logodds: Dense::new(),
            observed: CellRect::EMPTY,
            dirty: CellRect::EMPTY,
            epoch: 0,
        }
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Bounding block of every cell that has received an observation.
    pub fn extent(&self) -> CellRect {
        self.observed
    }

    pub fn is_empty(&self) -> bool {
        self.observed.is_empty()
    }

    pub fn log_odds(&self, ix: i64, iy: i64) -> f64 {
        self.logodds.get(ix, iy)
    }

    pub fn state(&self, ix: i64, iy: i64) -> CellState {
        self.params.state(self.logodds.get(ix, iy))
    }

    pub fn cell_of(&self, x: f64, y: f64) -> (i64, i64) {
        (cell_index(x, self.resolution), cell_index(y, self.resolution))
    }

    /// World coordinates of the south-west corner of a cell.
    pub fn cell_corner(&self, ix: i64, iy: i64) -> (f64, f64) {
        (ix as f64 * self.resolution, iy as f64 * self.resolution)
    }

    pub fn count(&self, state: CellState) -> usize {
        self.cells().filter(|&(_, _, s)| s == state).count()
    }

    /// Every cell of the observed extent with its ternary state.
    pub fn cells(&self) -> impl Iterator<Item = (i64, i64, CellState)> + '_ {
        let r = self.observed;
        (r.y..r.y + r.height as i64)
            .flat_map(move |iy| (r.x..r.x + r.width as i64).map(move |ix| (ix, iy, self.state(ix, iy))))
    }

    /// Adds one local map observed from `pose`; bumps the epoch.
    pub fn fuse(&mut self, local: &LocalMap, pose: &Pose2) {
        for row in 0..local.rows() {
            for col in 0..local.cols() {
                let delta = match local.get(col, row) {
                    CellState::Unknown => continue,
                    CellState::Free => self.params.miss,
                    CellState::Occupied => self.params.hit,
                };
                let (lat, fwd) = local.cell_center(col, row);
                let (wx, wy) = pose.transform_point(fwd, lat);
                let (ix, iy) = self.cell_of(wx, wy);
                let clamp = self.params.clamp;
                let before = self.params.state(self.logodds.get(ix, iy));
                let l = self.logodds.get_mut(ix, iy);
                *l = (*l + delta).clamp(-clamp, clamp);
                let after = self.params.state(*l);
                let cell = CellRect::single(ix, iy);
                self.observed = self.observed.union(&cell);
                if before != after {
                    self.dirty = self.dirty.union(&cell);
                }
            }
        }
        self.epoch += 1;
    }

    fn block(&self, rect: CellRect) -> GridPatch {
        let mut cells = Vec::with_capacity(rect.area());
        for iy in rect.y..rect.y + rect.height as i64 {
            for ix in rect.x..rect.x + rect.width as i64 {
                cells.push(self.state(ix, iy));
            }
        }
        GridPatch {
            epoch: self.epoch,
            extent: self.observed,
            rect,
            cells,
        }
    }

    /// Full ternary grid over the observed extent.
    pub fn snapshot(&self) -> GridPatch {
        self.block(self.observed)
    }

    /// States of all cells whose ternary value changed since the last call.
    pub fn take_patch(&mut self) -> GridPatch {
        let rect = std::mem::replace(&mut self.dirty, CellRect::EMPTY);
        self.block(rect)
    }
}

/// Functional form of [`GlobalMap::fuse`].
pub fn fuse_local(global: &GlobalMap, local: &LocalMap, pose: &Pose2) -> GlobalMap {
    let mut g = global.clone();
    g.fuse(local, pose);
    g
}

/// Ternary map rebuilt from a snapshot and the patches that follow it.
#[derive(Debug, Clone, PartialEq)]
pub struct TernaryGrid {
    cells: Dense<CellState>,
    extent: CellRect,
    epoch: Option<u64>,
}

impl Default for TernaryGrid {
    fn default() -> Self {
        Self::new()
    }
}

impl TernaryGrid {
    pub fn new() -> Self {
        TernaryGrid {
            cells: Dense::new(),
            extent: CellRect::EMPTY,
            epoch: None,
        }
    }

    pub fn epoch(&self) -> Option<u64> {
        self.epoch
    }

    pub fn extent(&self) -> CellRect {
        self.extent
    }

    pub fn state(&self, ix: i64, iy: i64) -> CellState {
        self.cells.get(ix, iy)
    }

    fn write(&mut self, p: &GridPatch) -> Result<(), MappingError> {
        if p.cells.len() != p.rect.area() {
            return Err(MappingError::PatchSize {
                expected: p.rect.area(),
                got: p.cells.len(),
            });
        }
        if !p.rect.is_empty() {
            self.cells.grow(&p.rect);
        }
        for iy in p.rect.y..p.rect.y + p.rect.height as i64 {
            for ix in p.rect.x..p.rect.x + p.rect.width as i64 {
                *self.cells.get_mut(ix, iy) = p.cells[p.rect.offset(ix, iy)];
            }
        }
        self.extent = p.extent;
        self.epoch = Some(p.epoch);
        Ok(())
    }

    pub fn apply(&mut self, update: &GridUpdate) -> Result<(), MappingError> {
        match update {
            GridUpdate::Snapshot(p) => {
                *self = TernaryGrid::new();
                self.write(p)
            }
            GridUpdate::Patch(p) => {
                if let Some(e) = self.epoch {
                    if p.epoch <= e {
                        return Err(MappingError::EpochGap { expected: e + 1, got: p.epoch });
                    }
                }
                self.write(p)
            }
        }
    }

    /// Patch that turns this grid into `target` (cells outside either extent
    /// are unknown).
    pub fn diff(&self, target: &GridPatch) -> GridPatch {
        let mut rect = CellRect::EMPTY;
        let t = target.rect;
        for iy in t.y..t.y + t.height as i64 {
            for ix in t.x..t.x + t.width as i64 {
                if target.cells[t.offset(ix, iy)] != self.state(ix, iy) {
                    rect = rect.union(&CellRect::single(ix, iy));
                }
            }
        }
        let e = self.extent;
        for iy in e.y..e.y + e.height as i64 {
            for ix in e.x..e.x + e.width as i64 {
                if !t.contains(ix, iy) && self.state(ix, iy) != CellState::Unknown {
                    rect = rect.union(&CellRect::single(ix, iy));
                }
            }
        }
        let mut cells = Vec::with_capacity(rect.area());
        for iy in rect.y..rect.y + rect.height as i64 {
            for ix in rect.x..rect.x + rect.width as i64 {
                cells.push(target.get(ix, iy).unwrap_or_default());
            }
        }
        GridPatch {
            epoch: target.epoch,
            extent: target.extent,
            rect,
            cells,
        }
    }

    pub fn snapshot(&self) -> GridPatch {
        let r = self.extent;
        let mut cells = Vec::with_capacity(r.area());
        for iy in r.y..r.y + r.height as i64 {
            for ix in r.x..r.x + r.width as i64 {
                cells.push(self.state(ix, iy));
            }
        }
        GridPatch {
            epoch: self.epoch.unwrap_or(0),
            extent: r,
            rect: r,
            cells,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::{ColumnRay, GroundBoundary, GroundEntry};
    use crate::mapping::local::{build_local_map, LocalMapConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn local_with_obstacle(x: f64, y: f64) -> LocalMap {
        let b = GroundBoundary {
            entries: vec![GroundEntry::Obstacle { x, y }],
            rows: vec![None],
        };
        build_local_map(&b, &[ColumnRay { x0: x, slope: 0.0 }], &LocalMapConfig::default()).unwrap()
    }

    fn random_local(rng: &mut ChaCha8Rng) -> LocalMap {
        let n = 22;
        let entries = (0..n)
            .map(|_| match rng.random_range(0..3) {
                0 => GroundEntry::Clear,
                1 => GroundEntry::Filtered { x: 0.0, y: 1.0 },
                _ => {
                    let x = rng.random_range(-0.5..0.5);
                    GroundEntry::Obstacle { x, y: rng.random_range(0.3..2.4) }
                }
            })
            .collect::<Vec<_>>();
        let rays = (0..n).map(|j| ColumnRay { x0: -0.525 + 0.05 * j as f64, slope: 0.0 }).collect::<Vec<_>>();
        build_local_map(&GroundBoundary { entries, rows: vec![None; n] }, &rays, &LocalMapConfig::default()).unwrap()
    }

    #[test]
    fn identity_fusion_reproduces_local() {
        let local = local_with_obstacle(0.0, 1.0);
        let g = fuse_local(&GlobalMap::new(0.05), &local, &Pose2::IDENTITY);
        for row in 0..local.rows() {
            for col in 0..local.cols() {
                // local column j sits at lateral -0.55 + j res, i.e. world cell j - 11
                assert_eq!(g.state(row as i64, col as i64 - 11), local.get(col, row), "({col},{row})");
            }
        }
        assert_eq!(g.count(CellState::Occupied), 1);
        assert_eq!(g.state(20, 0), CellState::Occupied);
    }

    #[test]
    fn repeated_fusion_does_not_flicker() {
        let local = local_with_obstacle(0.0, 1.0);
        let mut g = GlobalMap::new(0.05);
        g.fuse(&local, &Pose2::IDENTITY);
        let first: Vec<_> = g.cells().collect();
        g.fuse(&local, &Pose2::IDENTITY);
        assert_eq!(g.cells().collect::<Vec<_>>(), first);
        // hand computation: two hits 2.4, two misses -1.2
        assert!((g.log_odds(20, 0) - 2.4).abs() < 1e-12);
        assert!((g.log_odds(5, 0) + 1.2).abs() < 1e-12);
        for _ in 0..10 {
            g.fuse(&local, &Pose2::IDENTITY);
        }
        assert_eq!(g.log_odds(20, 0), 4.0);
        assert_eq!(g.log_odds(5, 0), -4.0);
    }

    #[test]
    fn single_miss_never_clears_an_occupied_cell() {
        let occ = local_with_obstacle(0.0, 1.0);
        let free = local_with_obstacle(0.0, 2.0);
        let mut g = GlobalMap::new(0.05);
        g.fuse(&occ, &Pose2::IDENTITY);
        g.fuse(&free, &Pose2::IDENTITY);
        assert_eq!(g.state(20, 0), CellState::Occupied);
        g.fuse(&free, &Pose2::IDENTITY);
        assert_ne!(g.state(20, 0), CellState::Free);
    }

    #[test]
    fn rotated_pose_matches_rotation_oracle() {
        let local = local_with_obstacle(0.0, 1.0);
        let pose = Pose2::new(2.0, -1.0, FRAC_PI_2);
        let g = fuse_local(&GlobalMap::new(0.05), &local, &pose);
        let (lat, fwd) = local.cell_center(11, 20);
        // yaw 90 degrees: robot forward is world +y, robot left is world -x
        let (wx, wy) = (2.0 - lat, -1.0 + fwd);
        let expect = ((wx / 0.05).floor() as i64, (wy / 0.05).floor() as i64);
        assert_eq!(g.state(expect.0, expect.1), CellState::Occupied);
        assert_eq!(g.count(CellState::Occupied), 1);
        let ext = g.extent();
        assert_eq!((ext.width, ext.height), (1, 21));
    }

    #[test]
    fn disjoint_fusions_commute() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a = random_local(&mut rng);
            let b = random_local(&mut rng);
            let pa = Pose2::new(0.0, 0.0, 0.3);
            let pb = Pose2::new(10.0, 5.0, -1.0);
            let mut g1 = GlobalMap::new(0.05);
            g1.fuse(&a, &pa);
            g1.fuse(&b, &pb);
            let mut g2 = GlobalMap::new(0.05);
            g2.fuse(&b, &pb);
            g2.fuse(&a, &pa);
            assert_eq!(g1.extent(), g2.extent());
            for (ix, iy, s) in g1.cells() {
                assert_eq!(g2.state(ix, iy), s);
                assert_eq!(g1.log_odds(ix, iy).to_bits(), g2.log_odds(ix, iy).to_bits());
            }
        }
    }

    #[test]
    fn growth_keeps_existing_cells() {
        let local = local_with_obstacle(0.0, 1.0);
        let mut g = GlobalMap::new(0.05);
        g.fuse(&local, &Pose2::IDENTITY);
        let before: Vec<_> = g.cells().filter(|c| c.2 != CellState::Unknown).collect();
        g.fuse(&local, &Pose2::new(-40.0, 30.0, 2.0));
        for (ix, iy, s) in before {
            assert_eq!(g.state(ix, iy), s);
        }
    }

    #[test]
    fn observations_stay_inside_transformed_footprint() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let local = random_local(&mut rng);
            let pose = Pose2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-3.0..3.0));
            let g = fuse_local(&GlobalMap::new(0.05), &local, &pose);
            let inv = pose.inverse();
            for (ix, iy, s) in g.cells() {
                if s == CellState::Unknown {
                    continue;
                }
                let (cx, cy) = ((ix as f64 + 0.5) * 0.05, (iy as f64 + 0.5) * 0.05);
                let (fx, fy) = inv.transform_point(cx, cy);
                // cell centre within half a diagonal of the footprint
                let slack = 0.05 * std::f64::consts::SQRT_2 / 2.0 + 1e-9;
                assert!(fx >= -slack && fx <= 2.5 + slack && fy.abs() <= 0.55 + slack);
            }
        }
    }

    #[test]
    fn patches_rebuild_the_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut g = GlobalMap::new(0.05);
        let mut client = TernaryGrid::new();
        client.apply(&GridUpdate::Snapshot(g.snapshot())).unwrap();
        let mut pose = Pose2::IDENTITY;
        for _ in 0..30 {
            g.fuse(&random_local(&mut rng), &pose);
            client.apply(&GridUpdate::Patch(g.take_patch())).unwrap();
            pose = pose.compose(&Pose2::new(0.3, 0.0, 0.2));
        }
        assert_eq!(client.snapshot(), g.snapshot());
        assert_eq!(client.epoch(), Some(30));
    }

    #[test]
    fn diff_of_snapshots_rebuilds_the_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let mut g = GlobalMap::new(0.05);
        let mut server = TernaryGrid::new();
        let mut client = TernaryGrid::new();
        let mut pose = Pose2::IDENTITY;
        for _ in 0..30 {
            g.fuse(&random_local(&mut rng), &pose);
            let patch = server.diff(&g.snapshot());
            server.apply(&GridUpdate::Snapshot(g.snapshot())).unwrap();
            client.apply(&GridUpdate::Patch(patch)).unwrap();
            pose = pose.compose(&Pose2::new(0.3, 0.0, -0.25));
        }
        assert_eq!(client.snapshot(), g.snapshot());
    }

    #[test]
    fn stale_patch_rejected() {
        let mut g = GlobalMap::new(0.05);
        g.fuse(&local_with_obstacle(0.0, 1.0), &Pose2::IDENTITY);
        let mut client = TernaryGrid::new();
        client.apply(&GridUpdate::Snapshot(g.snapshot())).unwrap();
        let p = g.snapshot();
        assert!(matches!(client.apply(&GridUpdate::Patch(p)), Err(MappingError::EpochGap { .. })));
    }
}
