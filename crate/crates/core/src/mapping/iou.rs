use super::global::GlobalMap;
use super::CellState;
use crate::sim::Scene;

type Segment = ([f64; 2], [f64; 2]);

/// Obstacle edges whose outward side faces the robot's start position.
pub fn facing_edges(scene: &Scene) -> Vec<Segment> {
    let (sx, sy) = (scene.robot_start.x, scene.robot_start.y);
    scene
        .obstacles
        .iter()
        .flat_map(|o| o.footprint.edges())
        .filter(|(a, b)| {
            // edges are counter-clockwise, so the outward normal is (dy, -dx)
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let (mx, my) = ((a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0);
            dy * (sx - mx) - dx * (sy - my) > 1e-9
        })
        .collect()
}

fn point_segment_distance(p: [f64; 2], (a, b): &Segment) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p[0] - a[0] - t * dx).hypot(p[1] - a[1] - t * dy)
}

/// Agreement between occupied cells and the true camera-facing edges,
/// tolerant to `band` metres of misplacement.
///
/// Occupied cells within `band` of an edge count as hits. Edge cells with
/// no occupied cell within `band` count as misses. The score is
/// `hits / (occupied + misses)`: 1 for a map that traces every facing edge
/// and nothing else, 0 for an empty map. A scene without obstacles scores 1.
pub fn map_iou(global: &GlobalMap, scene: &Scene, band: f64) -> f64 {
    let edges = facing_edges(scene);
    if edges.is_empty() {
        return 1.0;
    }
    let res = global.resolution();
    let center = |ix: i64, iy: i64| [(ix as f64 + 0.5) * res, (iy as f64 + 0.5) * res];

    let mut truth: Vec<(i64, i64)> = Vec::new();
    for (a, b) in &edges {
        let len = (b[0] - a[0]).hypot(b[1] - a[1]);
        let n = (len / (res / 4.0)).ceil().max(1.0) as usize;
        for k in 0..=n {
            let t = k as f64 / n as f64;
            truth.push(global.cell_of(a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])));
        }
    }
    truth.sort_unstable();
    truth.dedup();

    let occupied: Vec<[f64; 2]> = global
        .cells()
        .filter(|c| c.2 == CellState::Occupied)
        .map(|(ix, iy, _)| center(ix, iy))
        .collect();
    if occupied.is_empty() {
        return 0.0;
    }
    let hits = occupied
        .iter()
        .filter(|&&p| edges.iter().any(|e| point_segment_distance(p, e) <= band + 1e-9))
        .count();
    let misses = truth
        .iter()
        .filter(|&&(ix, iy)| {
            let t = center(ix, iy);
            !occupied.iter().any(|o| (o[0] - t[0]).hypot(o[1] - t[1]) <= band + 1e-9)
        })
        .count();
    hits as f64 / (occupied.len() + misses) as f64
}
