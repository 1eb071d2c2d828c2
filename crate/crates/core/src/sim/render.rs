use crate::geometry::Pose2;
use crate::mask::{SegClass, SegMask};

use super::camera::CameraModel;
use super::scene::Scene;

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Ray-casts one labelled frame as the segmenter would have produced it.
///
/// Each pixel takes the class of the first obstacle its ray enters; rays
/// that miss every obstacle are `Road` if they reach the ground inside the
/// scene extent and `Sky` otherwise. Non-finite rays come out `Unlabeled`.
pub fn render_segmentation(scene: &Scene, pose: &Pose2, camera: &CameraModel) -> SegMask {
    let (w, h) = (camera.width, camera.height);
    let mut mask = SegMask::filled(w, h, SegClass::Sky);

    // Every ray of one image column lies in a plane through the camera
    // centre; only obstacles straddling that plane can be hit.
    let (origin, down) = {
        let (o, d0) = camera.ray_world(pose, camera.cx, camera.cy);
        let (_, d1) = camera.ray_world(pose, camera.cx, camera.cy + camera.fy);
        (o, [d1[0] - d0[0], d1[1] - d0[1], d1[2] - d0[2]])
    };
    let corners: Vec<Vec<[f64; 3]>> = scene.obstacles.iter().map(|o| o.corners()).collect();
    let mut column_obstacles: Vec<Vec<usize>> = Vec::with_capacity(w);
    for u in 0..w {
        let (_, d) = camera.ray_world(pose, u as f64, camera.cy);
        let n = cross(d, down);
        let hits = corners
            .iter()
            .enumerate()
            .filter(|(_, cs)| {
                let mut pos = false;
                let mut neg = false;
                for c in cs.iter() {
                    let s = dot(n, [c[0] - origin[0], c[1] - origin[1], c[2] - origin[2]]);
                    pos |= s >= 0.0;
                    neg |= s <= 0.0;
                }
                pos && neg
            })
            .map(|(i, _)| i)
            .collect();
        column_obstacles.push(hits);
    }

    for v in 0..h {
        for (u, candidates) in column_obstacles.iter().enumerate() {
            let (o, d) = camera.ray_world(pose, u as f64, v as f64);
            if !d.iter().all(|x| x.is_finite()) {
                mask.set(u, v, SegClass::Unlabeled);
                continue;
            }
            let mut best: Option<(f64, SegClass)> = None;
            for &k in candidates {
                let ob = &scene.obstacles[k];
                if let Some(t) = ob.ray_entry(o, d) {
                    if best.map_or(true, |(bt, _)| t < bt) {
                        best = Some((t, ob.class.seg_class()));
                    }
                }
            }
            let class = match best {
                Some((_, c)) => c,
                None if d[2] < 0.0 => {
                    let t = -o[2] / d[2];
                    let (gx, gy) = (o[0] + t * d[0], o[1] + t * d[1]);
                    if !gx.is_finite() || !gy.is_finite() {
                        SegClass::Unlabeled
                    } else if scene.ground.contains(gx, gy) {
                        SegClass::Road
                    } else {
                        SegClass::Sky
                    }
                }
                None => SegClass::Sky,
            };
            mask.set(u, v, class);
        }
    }
    mask
}
