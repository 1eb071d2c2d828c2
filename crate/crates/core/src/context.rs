//! Obstacle-boundary extraction from segmentation masks and its projection
//! onto the ground plane.
//!
//! Ground coordinates are in the robot frame: `x_lateral` positive to the
//! left, `y_forward` positive ahead, both in metres.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mask::{SegClass, SegMask};
use crate::sim::CameraModel;

#[derive(Debug, Error, PartialEq)]
pub enum ContextError {
    #[error("pixel row {row} is at or above the horizon")]
    HorizonInView { row: f64 },
    #[error("homography is singular (det = {0:e})")]
    Singular(f64),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("boundary has {got} columns but the image is {expected} wide")]
    WidthMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RawEntry {
    Clear,
    ObstacleRow(u32),
}

/// First obstacle pixel per column, scanning up from the image bottom.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawBoundary {
    pub height: usize,
    pub entries: Vec<RawEntry>,
}

fn is_obstacle(c: SegClass) -> bool {
    // unlabeled counts as an obstacle; sky is skipped
    !matches!(c, SegClass::Road | SegClass::Sky)
}

pub fn extract_boundary(mask: &SegMask) -> RawBoundary {
    let (w, h) = (mask.width(), mask.height());
    let labels = mask.labels();
    let entries = (0..w)
        .map(|col| {
            (0..h)
                .rev()
                .find(|&row| is_obstacle(labels[row * w + col]))
                .map_or(RawEntry::Clear, |row| RawEntry::ObstacleRow(row as u32))
        })
        .collect();
    RawBoundary { height: h, entries }
}

/// Fixed image-to-ground mapping for the mounted camera.
///
/// Stored as a centred transform `g` acting on `(u - u0, v - v0, 1)`, where
/// `(u0, v0)` moves the top-left pixel origin onto the optical centre row and
/// the image's middle column. Subtracting the centre before the matrix
/// product keeps mirrored columns exactly mirrored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Homography {
    g: [[f64; 3]; 3],
    center: [f64; 2],
    width: usize,
    height: usize,
}

impl Homography {
    /// Equivalent 3x3 matrix acting on raw `(u, v, 1)` pixel coordinates.
    pub fn matrix(&self) -> [[f64; 3]; 3] {
        let [u0, v0] = self.center;
        let mut h = self.g;
        for row in h.iter_mut() {
            row[2] -= row[0] * u0 + row[1] * v0;
        }
        h
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.g;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn image_size(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Ground point `(x_lateral, y_forward)` seen at pixel `(u, v)`.
    pub fn project(&self, u: f64, v: f64) -> Result<(f64, f64), ContextError> {
        let du = u - self.center[0];
        let dv = v - self.center[1];
        let g = &self.g;
        let w = g[2][0] * du + g[2][1] * dv + g[2][2];
        if !(w > 1e-12) {
            return Err(ContextError::HorizonInView { row: v });
        }
        let x = (g[0][0] * du + g[0][1] * dv + g[0][2]) / w;
        let y = (g[1][0] * du + g[1][1] * dv + g[1][2]) / w;
        Ok((x, y))
    }

    pub fn column_rays(&self) -> Vec<ColumnRay> {
        (0..self.width).map(|c| self.column_ray(c)).collect()
    }

    /// Ground line traced by one image column, as `x = x0 + slope * y`.
    pub fn column_ray(&self, col: usize) -> ColumnRay {
        let bottom = (self.height - 1) as f64;
        let horizon = self.center[1] - self.g[2][2] / self.g[2][1];
        let upper = 0.5 * (bottom + horizon.max(0.0));
        let u = col as f64;
        match (self.project(u, bottom), self.project(u, upper)) {
            (Ok((x1, y1)), Ok((x2, y2))) if (y2 - y1).abs() > 1e-12 => {
                let slope = (x2 - x1) / (y2 - y1);
                ColumnRay { x0: x1 - slope * y1, slope }
            }
            (Ok((x1, _)), _) => ColumnRay { x0: x1, slope: 0.0 },
            _ => ColumnRay { x0: 0.0, slope: 0.0 },
        }
    }
}

pub fn build_homography(camera: &CameraModel) -> Result<Homography, ContextError> {
    camera.validate().map_err(ContextError::InvalidCamera)?;
    let h = camera.mount_height;
    let (s, c) = camera.mount_pitch.sin_cos();
    let (fx, fy) = (camera.fx, camera.fy);
    // Pinhole ray through centred pixel (du, dv) meets z = 0 at
    //   x_lateral = -h (du / fx) / (s + c dv / fy)
    //   y_forward =  h (c - s dv / fy) / (s + c dv / fy)
    let g = [
        [-h / fx, 0.0, 0.0],
        [0.0, -h * s / fy, h * c],
        [0.0, c / fy, s],
    ];
    // Pixel rows count from the image top, so the optical row sits at cy.
    // The middle column is used as lateral origin so the mapping is
    // symmetric about the robot centreline; the mount offset drops out.
    let hom = Homography {
        g,
        center: [camera.width as f64 / 2.0, camera.cy],
        width: camera.width,
        height: camera.height,
    };
    let det = hom.determinant();
    if det.abs() <= 1e-12 {
        return Err(ContextError::Singular(det));
    }
    hom.project(hom.center[0], (camera.height - 1) as f64)?;
    Ok(hom)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroundEntry {
    Clear,
    Obstacle { x: f64, y: f64 },
    /// Steep boundary segment; not treated as an obstacle base.
    Filtered { x: f64, y: f64 },
}

/// Ground line of an image column: `x_lateral = x0 + slope * y_forward`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnRay {
    pub x0: f64,
    pub slope: f64,
}

impl ColumnRay {
    pub fn x_at(&self, y: f64) -> f64 {
        self.x0 + self.slope * y
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundBoundary {
    pub entries: Vec<GroundEntry>,
    /// Raw boundary row per column, kept for the debug dump.
    pub rows: Vec<Option<u32>>,
}

impl GroundBoundary {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn obstacles(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.entries.iter().filter_map(|e| match e {
            GroundEntry::Obstacle { x, y } => Some((*x, *y)),
            _ => None,
        })
    }

    /// Debug dump: one line per column, `col row x y flag`, `NA` for missing values.
    pub fn debug_dump(&self) -> String {
        let mut out = String::new();
        for (col, e) in self.entries.iter().enumerate() {
            let row = self.rows.get(col).copied().flatten().map_or("NA".to_string(), |r| r.to_string());
            let (xy, flag) = match e {
                GroundEntry::Clear => (None, "clear"),
                GroundEntry::Obstacle { x, y } => (Some((x, y)), "obstacle"),
                GroundEntry::Filtered { x, y } => (Some((x, y)), "filtered"),
            };
            let (xs, ys) = xy.map_or(("NA".to_string(), "NA".to_string()), |(x, y)| (format!("{x:.4}"), format!("{y:.4}")));
            let _ = writeln!(out, "{col} {row} {xs} {ys} {flag}");
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryFilter {
    /// Farthest forward distance kept as an obstacle (m).
    pub max_range: f64,
    /// Largest allowed row change between neighbouring columns.
    pub grad_threshold: f64,
    /// Lateral half-width of the mapped footprint (m).
    pub half_width: f64,
}

impl Default for BoundaryFilter {
    fn default() -> Self {
        BoundaryFilter {
            max_range: 2.5,
            grad_threshold: 1.0,
            half_width: 0.55,
        }
    }
}

pub fn filter_boundary(
    raw: &RawBoundary,
    hom: &Homography,
    params: &BoundaryFilter,
) -> Result<GroundBoundary, ContextError> {
    let (width, _) = hom.image_size();
    if raw.entries.len() != width {
        return Err(ContextError::WidthMismatch {
            expected: width,
            got: raw.entries.len(),
        });
    }
    // project and apply the range / footprint limits
    let mut kept: Vec<Option<(u32, f64, f64)>> = raw
        .entries
        .iter()
        .enumerate()
        .map(|(col, e)| match *e {
            RawEntry::Clear => None,
            RawEntry::ObstacleRow(row) => match hom.project(col as f64, row as f64) {
                Ok((x, y)) if y > 0.0 && y <= params.max_range && x.abs() <= params.half_width => Some((row, x, y)),
                _ => None,
            },
        })
        .collect();

    let steep: Vec<bool> = (0..kept.len())
        .map(|i| {
            let Some((row, _, _)) = kept[i] else { return false };
            let jump = |j: usize| {
                kept[j].is_some_and(|(r, _, _)| (r as f64 - row as f64).abs() > params.grad_threshold)
            };
            (i > 0 && jump(i - 1)) || (i + 1 < kept.len() && jump(i + 1))
        })
        .collect();

    let entries = kept
        .iter_mut()
        .zip(&steep)
        .map(|(k, &s)| match *k {
            None => GroundEntry::Clear,
            Some((_, x, y)) if s => GroundEntry::Filtered { x, y },
            Some((_, x, y)) => GroundEntry::Obstacle { x, y },
        })
        .collect();

    Ok(GroundBoundary {
        entries,
        rows: raw
            .entries
            .iter()
            .map(|e| match e {
                RawEntry::Clear => None,
                RawEntry::ObstacleRow(r) => Some(*r),
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose2;
    use crate::sim::{render_segmentation, Footprint, GroundExtent, Obstacle, ObstacleClass, Scene};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_scan(mask: &SegMask) -> Vec<RawEntry> {
        let mut out = Vec::new();
        for col in 0..mask.width() {
            let mut found = RawEntry::Clear;
            let mut row = mask.height();
            while row > 0 {
                row -= 1;
                let c = mask.get(col, row);
                if c != SegClass::Road && c != SegClass::Sky {
                    found = RawEntry::ObstacleRow(row as u32);
                    break;
                }
            }
            out.push(found);
        }
        out
    }

    #[test]
    fn extract_examples() {
        let road = SegMask::filled(8, 4, SegClass::Road);
        assert!(extract_boundary(&road).entries.iter().all(|e| *e == RawEntry::Clear));
        let obj = SegMask::filled(8, 4, SegClass::Object);
        assert!(extract_boundary(&obj).entries.iter().all(|e| *e == RawEntry::ObstacleRow(3)));
        let mut sky_top = SegMask::filled(3, 4, SegClass::Road);
        for c in 0..3 {
            sky_top.set(c, 0, SegClass::Sky);
        }
        sky_top.set(1, 0, SegClass::Unlabeled);
        let b = extract_boundary(&sky_top);
        assert_eq!(b.entries, vec![RawEntry::Clear, RawEntry::ObstacleRow(0), RawEntry::Clear]);
    }

    #[test]
    fn extract_matches_naive_scan_on_random_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let ids: Vec<u8> = (0..64 * 32).map(|_| rng.random_range(0..5)).collect();
            let m = SegMask::from_ids(64, 32, &ids).unwrap();
            let b = extract_boundary(&m);
            assert_eq!(b.entries.len(), 64);
            assert_eq!(b.entries, naive_scan(&m));
        }
    }

    #[test]
    fn homography_symmetry() {
        let cam = CameraModel::default();
        let h = build_homography(&cam).unwrap();
        let (x, _) = h.project(256.0, 255.0).unwrap();
        assert_eq!(x, 0.0);
        for d in [1.0, 17.0, 100.0, 255.0] {
            for v in [140.0, 200.0, 255.0] {
                let (xl, yl) = h.project(256.0 - d, v).unwrap();
                let (xr, yr) = h.project(256.0 + d, v).unwrap();
                assert_eq!(xl, -xr);
                assert_eq!(yl, yr);
            }
        }
    }

    #[test]
    fn symmetry_survives_lateral_offset_and_off_centre_cx() {
        let cam = CameraModel {
            cx: 250.0,
            mount_lateral_offset: 0.07,
            ..CameraModel::default()
        };
        let h = build_homography(&cam).unwrap();
        assert_eq!(h.project(256.0, 255.0).unwrap().0, 0.0);
        assert_eq!(h.project(200.0, 220.0).unwrap().0, -h.project(312.0, 220.0).unwrap().0);
    }

    /// Independent oracle: intersect the camera ray with z = 0.
    fn ray_cast(cam: &CameraModel, u: f64, v: f64) -> (f64, f64) {
        let d = cam.ray_robot(u, v);
        let t = -cam.mount_height / d[2];
        (t * d[1], t * d[0])
    }

    #[test]
    fn homography_matches_ray_cast() {
        let cam = CameraModel::default();
        let h = build_homography(&cam).unwrap();
        for k in 0..20 {
            let v = 255.0 - 9.0 * k as f64;
            let u = 13.0 + 25.0 * k as f64;
            let (x, y) = h.project(u, v).unwrap();
            let (ox, oy) = ray_cast(&cam, u, v);
            assert!((x - ox).abs() < 1e-9 && (y - oy).abs() < 1e-9, "({u},{v})");
        }
    }

    #[test]
    fn matrix_form_agrees_with_centred_form() {
        let h = build_homography(&CameraModel::default()).unwrap();
        let m = h.matrix();
        for (u, v) in [(0.0, 255.0), (300.0, 180.0), (511.0, 100.0)] {
            let w = m[2][0] * u + m[2][1] * v + m[2][2];
            let x = (m[0][0] * u + m[0][1] * v + m[0][2]) / w;
            let y = (m[1][0] * u + m[1][1] * v + m[1][2]) / w;
            let (px, py) = h.project(u, v).unwrap();
            assert!((x - px).abs() < 1e-9 && (y - py).abs() < 1e-9);
        }
        assert!(h.determinant().abs() > 1e-12);
    }

    #[test]
    fn horizon_rows_are_rejected() {
        let cam = CameraModel::default();
        let h = build_homography(&cam).unwrap();
        assert!(matches!(h.project(10.0, cam.horizon_row()), Err(ContextError::HorizonInView { .. })));
        assert!(h.project(10.0, 0.0).is_err());
        let up = CameraModel {
            mount_pitch: -0.7,
            ..CameraModel::default()
        };
        assert!(matches!(build_homography(&up), Err(ContextError::HorizonInView { .. })));
    }

    #[test]
    fn projection_is_monotone_in_row() {
        let h = build_homography(&CameraModel::default()).unwrap();
        for col in [0.0, 128.0, 256.0, 511.0] {
            let mut prev = f64::INFINITY;
            for v in 70..256 {
                let (_, y) = h.project(col, v as f64).unwrap();
                assert!(y < prev);
                prev = y;
            }
        }
    }

    fn raw(rows: &[Option<u32>]) -> RawBoundary {
        RawBoundary {
            height: 256,
            entries: rows
                .iter()
                .map(|r| r.map_or(RawEntry::Clear, RawEntry::ObstacleRow))
                .collect(),
        }
    }

    fn narrow_camera(width: usize) -> CameraModel {
        CameraModel {
            width,
            cx: width as f64 / 2.0,
            ..CameraModel::default()
        }
    }

    #[test]
    fn gradient_filter_marks_both_jump_ends() {
        let cam = narrow_camera(6);
        let h = build_homography(&cam).unwrap();
        let b = filter_boundary(
            &raw(&[Some(200), Some(200), Some(120), Some(118), Some(117), Some(117)]),
            &h,
            &BoundaryFilter::default(),
        )
        .unwrap();
        assert!(matches!(b.entries[1], GroundEntry::Filtered { .. }));
        assert!(matches!(b.entries[2], GroundEntry::Filtered { .. }));
        assert!(matches!(b.entries[0], GroundEntry::Obstacle { .. }));
        assert!(matches!(b.entries[5], GroundEntry::Obstacle { .. }));
    }

    #[test]
    fn flat_boundary_kept() {
        let cam = narrow_camera(8);
        let h = build_homography(&cam).unwrap();
        let b = filter_boundary(&raw(&[Some(200); 8]), &h, &BoundaryFilter::default()).unwrap();
        assert_eq!(b.obstacles().count(), 8);
        assert!(b.obstacles().all(|(_, y)| y < 2.0));
    }

    #[test]
    fn far_obstacle_becomes_clear() {
        let cam = narrow_camera(4);
        let h = build_homography(&cam).unwrap();
        // oracle: find the row whose ray-cast ground distance is about 3.1 m
        let row = (0..256u32)
            .rev()
            .find(|&r| {
                let (_, y) = ray_cast(&cam, 2.0, r as f64);
                y >= 3.1
            })
            .unwrap();
        assert!(ray_cast(&cam, 2.0, row as f64).1 > 2.5);
        let b = filter_boundary(&raw(&[Some(row); 4]), &h, &BoundaryFilter::default()).unwrap();
        assert!(b.entries.iter().all(|e| *e == GroundEntry::Clear));
    }

    #[test]
    fn clear_is_never_promoted() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cam = narrow_camera(64);
        let h = build_homography(&cam).unwrap();
        for _ in 0..100 {
            let rows: Vec<Option<u32>> = (0..64)
                .map(|_| rng.random_bool(0.7).then(|| rng.random_range(60..256)))
                .collect();
            let b = filter_boundary(&raw(&rows), &h, &BoundaryFilter::default()).unwrap();
            assert_eq!(b.len(), 64);
            for (r, e) in rows.iter().zip(&b.entries) {
                if r.is_none() {
                    assert_eq!(*e, GroundEntry::Clear);
                }
                if let GroundEntry::Obstacle { x, y } = e {
                    assert!(*y > 0.0 && *y <= 2.5 && x.abs() <= 0.55);
                }
            }
        }
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let h = build_homography(&narrow_camera(4)).unwrap();
        assert!(matches!(
            filter_boundary(&raw(&[None; 3]), &h, &BoundaryFilter::default()),
            Err(ContextError::WidthMismatch { .. })
        ));
    }

    #[test]
    fn single_box_boundary_lands_on_true_edge() {
        let cam = CameraModel::default();
        let h = build_homography(&cam).unwrap();
        let near = 1.4;
        let scene = Scene {
            ground: GroundExtent { min: [-10.0, -10.0], max: [10.0, 10.0] },
            obstacles: vec![Obstacle {
                footprint: Footprint::Box { min: [near, -0.4], max: [near + 0.5, 0.4] },
                height: 0.8,
                class: ObstacleClass::Object,
                label: None,
            }],
            robot_start: Pose2::IDENTITY,
        };
        let mask = render_segmentation(&scene, &Pose2::IDENTITY, &cam);
        let b = filter_boundary(&extract_boundary(&mask), &h, &BoundaryFilter::default()).unwrap();
        let pts: Vec<_> = b.obstacles().collect();
        assert!(pts.len() > 50);
        for (x, y) in pts {
            // robot +y is left; the box spans lateral [-0.4, 0.4]
            assert!((y - near).abs() <= 0.05, "y={y}");
            assert!(x.abs() <= 0.4 + 0.05, "x={x}");
        }
    }

    #[test]
    fn debug_dump_format() {
        let h = build_homography(&narrow_camera(2)).unwrap();
        let b = filter_boundary(&raw(&[None, Some(250)]), &h, &BoundaryFilter::default()).unwrap();
        let dump = b.debug_dump();
        let lines: Vec<_> = dump.lines().collect();
        assert_eq!(lines[0], "0 NA NA NA clear");
        assert!(lines[1].starts_with("1 250 ") && lines[1].ends_with(" obstacle"));
    }
}
