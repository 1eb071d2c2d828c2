//! Closed-form similarity alignment between the unscaled visual path and the
//! metric wheel path, plus the periodic re-estimation loop that feeds the
//! scaled odometry.
//!
//! The rotation comes from Horn's quaternion formulation: the optimal unit
//! quaternion is the eigenvector of the largest eigenvalue of a symmetric
//! 4x4 matrix assembled from the cross-covariance of the centred point sets.
//! Scale uses the symmetric form `sqrt(sum |b'|^2 / sum |a'|^2)`, which makes
//! the estimate invert exactly when source and target swap roles.

use nalgebra::{Matrix3, Matrix4, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::SimilarityTransform3;
use crate::trajectory::Trajectory;

#[derive(Debug, Error, PartialEq)]
pub enum AlignmentError {
    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),
    #[error("eigen-decomposition did not converge")]
    NumericalFailure,
    #[error("invalid input: {0}")]
    InvalidInput(&'static str),
}

/// One associated visual/wheel sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointPair {
    pub visual: [f64; 3],
    pub wheel: [f64; 3],
    pub stamp: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PairedSamples {
    pub pairs: Vec<PointPair>,
}

impl PairedSamples {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn sources(&self) -> Vec<Vector3<f64>> {
        self.pairs.iter().map(|p| Vector3::from(p.visual)).collect()
    }

    pub fn targets(&self) -> Vec<Vector3<f64>> {
        self.pairs.iter().map(|p| Vector3::from(p.wheel)).collect()
    }
}

const SPREAD_EPS: f64 = 1e-18;

fn centroid(points: &[Vector3<f64>]) -> Vector3<f64> {
    points.iter().sum::<Vector3<f64>>() / points.len() as f64
}

struct Centred {
    source_centroid: Vector3<f64>,
    target_centroid: Vector3<f64>,
    source_spread: f64,
    target_spread: f64,
    cross: Matrix3<f64>,
}

fn centre(source: &[Vector3<f64>], target: &[Vector3<f64>]) -> Result<Centred, AlignmentError> {
    if source.len() != target.len() {
        return Err(AlignmentError::InvalidInput("source and target lengths differ"));
    }
    if source.len() < 3 {
        return Err(AlignmentError::DegenerateInput("need at least 3 point pairs"));
    }
    if source.iter().chain(target).any(|p| !p.iter().all(|v| v.is_finite())) {
        return Err(AlignmentError::InvalidInput("non-finite coordinate"));
    }
    let sc = centroid(source);
    let tc = centroid(target);
    let mut source_spread = 0.0;
    let mut target_spread = 0.0;
    let mut cross = Matrix3::zeros();
    for (a, b) in source.iter().zip(target) {
        let a = a - sc;
        let b = b - tc;
        source_spread += a.norm_squared();
        target_spread += b.norm_squared();
        cross += a * b.transpose();
    }
    if source_spread <= SPREAD_EPS {
        return Err(AlignmentError::DegenerateInput("source points coincide"));
    }
    if target_spread <= SPREAD_EPS {
        return Err(AlignmentError::DegenerateInput("target points coincide"));
    }
    Ok(Centred {
        source_centroid: sc,
        target_centroid: tc,
        source_spread,
        target_spread,
        cross,
    })
}

/// Horn's symmetric 4x4 matrix `N` for cross-covariance `M = sum a' b'^T`.
fn horn_matrix(m: &Matrix3<f64>) -> Matrix4<f64> {
    let (sxx, sxy, sxz) = (m[(0, 0)], m[(0, 1)], m[(0, 2)]);
    let (syx, syy, syz) = (m[(1, 0)], m[(1, 1)], m[(1, 2)]);
    let (szx, szy, szz) = (m[(2, 0)], m[(2, 1)], m[(2, 2)]);
    Matrix4::new(
        sxx + syy + szz,
        syz - szy,
        szx - sxz,
        sxy - syx,
        syz - szy,
        sxx - syy - szz,
        sxy + syx,
        szx + sxz,
        szx - sxz,
        sxy + syx,
        -sxx + syy - szz,
        syz + szy,
        sxy - syx,
        szx + sxz,
        syz + szy,
        -sxx - syy + szz,
    )
}

fn optimal_rotation(cross: &Matrix3<f64>) -> Result<UnitQuaternion<f64>, AlignmentError> {
    let n = horn_matrix(cross);
    let scale = n.abs().max().max(f64::MIN_POSITIVE);
    let eig = (n / scale)
        .try_symmetric_eigen(1e-15, 10_000)
        .ok_or(AlignmentError::NumericalFailure)?;
    let (best, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0usize, f64::NEG_INFINITY), |acc, (i, &v)| {
            if v > acc.1 {
                (i, v)
            } else {
                acc
            }
        });
    let v = eig.eigenvectors.column(best);
    let q = Quaternion::new(v[0], v[1], v[2], v[3]);
    if !(q.norm() > 0.5) || !q.coords.iter().all(|c| c.is_finite()) {
        return Err(AlignmentError::NumericalFailure);
    }
    Ok(UnitQuaternion::from_quaternion(q))
}

/// Least-squares similarity `(s, R, t)` minimising `sum |target_i - (s R source_i + t)|^2`.
pub fn estimate_similarity(
    source: &[Vector3<f64>],
    target: &[Vector3<f64>],
) -> Result<SimilarityTransform3, AlignmentError> {
    let c = centre(source, target)?;
    let rotation = optimal_rotation(&c.cross)?;
    let scale = (c.target_spread / c.source_spread).sqrt();
    let translation = c.target_centroid - scale * (rotation * c.source_centroid);
    SimilarityTransform3::new(scale, rotation, translation)
        .map_err(|_| AlignmentError::NumericalFailure)
}

/// Same as [`estimate_similarity`] with the scale pinned to one.
pub fn estimate_rigid(
    source: &[Vector3<f64>],
    target: &[Vector3<f64>],
) -> Result<SimilarityTransform3, AlignmentError> {
    let c = centre(source, target)?;
    let rotation = optimal_rotation(&c.cross)?;
    let translation = c.target_centroid - rotation * c.source_centroid;
    SimilarityTransform3::new(1.0, rotation, translation)
        .map_err(|_| AlignmentError::NumericalFailure)
}

pub fn alignment_rmse(
    t: &SimilarityTransform3,
    source: &[Vector3<f64>],
    target: &[Vector3<f64>],
) -> Result<f64, AlignmentError> {
    if source.len() != target.len() {
        return Err(AlignmentError::InvalidInput("source and target lengths differ"));
    }
    if source.is_empty() {
        return Err(AlignmentError::InvalidInput("empty point lists"));
    }
    let sum: f64 = source
        .iter()
        .zip(target)
        .map(|(a, b)| (b - t.apply(a)).norm_squared())
        .sum();
    Ok((sum / source.len() as f64).sqrt())
}

/// Pairs visual samples with wheel samples by timestamp.
///
/// All candidate pairs with `|dt| <= max_gap` are visited in order of
/// increasing `|dt|` (ties broken by visual index, then wheel index) and
/// accepted when neither endpoint is taken yet. Output is ordered by the
/// visual timestamp.
pub fn associate_by_timestamp(visual: &Trajectory, wheel: &Trajectory, max_gap: f64) -> PairedSamples {
    let vs = visual.samples();
    let ws = wheel.samples();
    let mut candidates = Vec::new();
    for (i, v) in vs.iter().enumerate() {
        // wheel stamps are sorted; only scan the window that can match
        let lo = ws.partition_point(|w| w.stamp < v.stamp - max_gap);
        for (j, w) in ws.iter().enumerate().skip(lo) {
            if w.stamp > v.stamp + max_gap {
                break;
            }
            let dt = (w.stamp - v.stamp).abs();
            if dt <= max_gap {
                candidates.push((dt, i, j));
            }
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut visual_used = vec![None; vs.len()];
    let mut wheel_used = vec![false; ws.len()];
    for (_, i, j) in candidates {
        if visual_used[i].is_none() && !wheel_used[j] {
            visual_used[i] = Some(j);
            wheel_used[j] = true;
        }
    }
    let pairs = visual_used
        .iter()
        .enumerate()
        .filter_map(|(i, j)| {
            j.map(|j| PointPair {
                visual: vs[i].position,
                wheel: ws[j].position,
                stamp: vs[i].stamp,
            })
        })
        .collect();
    PairedSamples { pairs }
}

/// Output of one scaler period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalerUpdate {
    pub stamp: f64,
    pub transform: SimilarityTransform3,
    /// False until the first successful estimate.
    pub valid: bool,
    pub pairs_used: usize,
    pub rmse: Option<f64>,
}

/// Re-estimates the visual-to-metric similarity over the whole accumulated
/// path once per `period`.
#[derive(Debug, Clone)]
pub struct OdometryScaler {
    period: f64,
    history: PairedSamples,
    current: SimilarityTransform3,
    valid: bool,
    next_due: Option<f64>,
    failures: usize,
}

impl OdometryScaler {
    pub fn new(period: f64) -> Self {
        OdometryScaler {
            period,
            history: PairedSamples::default(),
            current: SimilarityTransform3::identity(),
            valid: false,
            next_due: None,
            failures: 0,
        }
    }

    pub fn push(&mut self, pair: PointPair) {
        self.history.pairs.push(pair);
    }

    pub fn extend(&mut self, pairs: impl IntoIterator<Item = PointPair>) {
        self.history.pairs.extend(pairs);
    }

    pub fn history(&self) -> &PairedSamples {
        &self.history
    }

    pub fn current(&self) -> (SimilarityTransform3, bool) {
        (self.current, self.valid)
    }

    /// Estimates that failed and were replaced by the last good transform.
    pub fn failures(&self) -> usize {
        self.failures
    }

    /// Advances the scaler clock. Returns an update when a period boundary
    /// has been reached (the first call establishes the phase and fires).
    pub fn tick(&mut self, now: f64) -> Option<ScalerUpdate> {
        match self.next_due {
            Some(due) if now + 1e-9 < due => return None,
            _ => {}
        }
        self.next_due = Some(match self.next_due {
            None => now + self.period,
            Some(due) => {
                let mut d = due;
                while d <= now + 1e-9 {
                    d += self.period;
                }
                d
            }
        });
        Some(self.update(now))
    }

    /// Runs one estimate over the full history right now.
    pub fn update(&mut self, now: f64) -> ScalerUpdate {
        let mut rmse = None;
        if self.history.len() >= 3 {
            let src = self.history.sources();
            let dst = self.history.targets();
            match estimate_similarity(&src, &dst) {
                Ok(t) => {
                    self.current = t;
                    self.valid = true;
                    rmse = alignment_rmse(&t, &src, &dst).ok();
                }
                Err(e) => {
                    log::debug!("scaler holding last transform: {e}");
                    self.failures += 1;
                }
            }
        }
        ScalerUpdate {
            stamp: now,
            transform: self.current,
            valid: self.valid,
            pairs_used: self.history.len(),
            rmse,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::TrajectorySample;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};
    use std::f64::consts::PI;

    fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                )
            })
            .collect()
    }

    fn residual(t: &SimilarityTransform3, s: &[Vector3<f64>], d: &[Vector3<f64>]) -> f64 {
        s.iter().zip(d).map(|(a, b)| (b - t.apply(a)).norm_squared()).sum()
    }

    #[test]
    fn identity_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = random_points(&mut rng, 10);
        let t = estimate_similarity(&pts, &pts).unwrap();
        assert!((t.scale - 1.0).abs() < 1e-9);
        assert!(t.rotation_angle() < 1e-9);
        assert!(t.translation_vector().norm() < 1e-9);
    }

    #[test]
    fn pure_scale_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts = random_points(&mut rng, 10);
        let target: Vec<_> = pts.iter().map(|p| 2.0 * p).collect();
        let t = estimate_similarity(&pts, &target).unwrap();
        assert!((t.scale - 2.0).abs() < 1e-9);
        assert!(t.rotation_angle() < 1e-9);
        assert!(t.translation_vector().norm() < 1e-9);
    }

    #[test]
    fn generative_case_recovers_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let src = random_points(&mut rng, 10);
        let truth = SimilarityTransform3::from_yaw(0.37, 30f64.to_radians(), [1.0, 2.0, 0.0]).unwrap();
        let dst: Vec<_> = src.iter().map(|p| truth.apply(p)).collect();
        let t = estimate_similarity(&src, &dst).unwrap();
        assert!((t.scale - 0.37).abs() < 1e-9);
        let rel = t.unit_quaternion().inverse() * truth.unit_quaternion();
        assert!(rel.angle() < 1e-9);
        assert!((t.translation_vector() - Vector3::new(1.0, 2.0, 0.0)).norm() < 1e-9);
        assert!(alignment_rmse(&t, &src, &dst).unwrap() < 1e-9);
    }

    #[test]
    fn degenerate_inputs() {
        let p = vec![Vector3::new(1.0, 2.0, 3.0); 5];
        let q: Vec<_> = (0..5).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        assert_eq!(
            estimate_similarity(&p, &q),
            Err(AlignmentError::DegenerateInput("source points coincide"))
        );
        assert_eq!(
            estimate_similarity(&q, &p),
            Err(AlignmentError::DegenerateInput("target points coincide"))
        );
        assert!(matches!(
            estimate_similarity(&q[..2], &q[..2]),
            Err(AlignmentError::DegenerateInput(_))
        ));
        assert!(matches!(
            estimate_similarity(&q[..3], &q[..4]),
            Err(AlignmentError::InvalidInput(_))
        ));
    }

    #[test]
    fn rmse_examples() {
        let src: Vec<_> = (0..6).map(|i| Vector3::new(i as f64, (i * i) as f64, 0.0)).collect();
        let shifted: Vec<_> = src.iter().map(|p| p + Vector3::new(0.1, 0.0, 0.0)).collect();
        let id = SimilarityTransform3::identity();
        assert!(alignment_rmse(&id, &src, &src).unwrap() < 1e-12);
        assert!((alignment_rmse(&id, &src, &shifted).unwrap() - 0.1).abs() < 1e-12);
        assert!(alignment_rmse(&id, &src, &shifted[..3]).is_err());
    }

    #[test]
    fn rmse_monte_carlo_band() {
        let noise = Normal::new(0.0, 0.01).unwrap();
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let src = random_points(&mut rng, 10);
            let truth = SimilarityTransform3::from_yaw(
                rng.random_range(0.5..3.0),
                rng.random_range(-PI..PI),
                [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), 0.0],
            )
            .unwrap();
            let dst: Vec<_> = src
                .iter()
                .map(|p| {
                    truth.apply(p)
                        + Vector3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng))
                })
                .collect();
            let t = estimate_similarity(&src, &dst).unwrap();
            let e = alignment_rmse(&t, &src, &dst).unwrap();
            assert!((0.005..=0.03).contains(&e), "seed {seed}: rmse {e}");
        }
    }

    #[test]
    fn local_optimality_against_perturbations() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let noise = Normal::new(0.0, 0.05).unwrap();
        let src = random_points(&mut rng, 12);
        let truth = SimilarityTransform3::from_yaw(1.7, 0.4, [0.3, -1.0, 2.0]).unwrap();
        let dst: Vec<_> = src
            .iter()
            .map(|p| truth.apply(p) + Vector3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng)))
            .collect();
        let best = estimate_similarity(&src, &dst).unwrap();
        let base = residual(&best, &src, &dst);
        for _ in 0..1000 {
            let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let dq = UnitQuaternion::from_scaled_axis(axis * 1e-3);
            let pert = SimilarityTransform3::new(
                best.scale * (1.0 + rng.random_range(-1e-3..1e-3)),
                dq * best.unit_quaternion(),
                best.translation_vector()
                    + Vector3::new(rng.random_range(-1e-3..1e-3), rng.random_range(-1e-3..1e-3), rng.random_range(-1e-3..1e-3)),
            )
            .unwrap();
            assert!(residual(&pert, &src, &dst) >= base - 1e-12);
        }
    }

    #[test]
    fn scale_invariant_to_rigid_motion_of_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let src = random_points(&mut rng, 10);
        let noise = Normal::new(0.0, 0.02).unwrap();
        let dst: Vec<_> = src
            .iter()
            .map(|p| 0.8 * p + Vector3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng)))
            .collect();
        let s0 = estimate_similarity(&src, &dst).unwrap().scale;
        let rigid = SimilarityTransform3::from_yaw(1.0, 1.1, [4.0, -2.0, 0.5]).unwrap();
        let moved: Vec<_> = dst.iter().map(|p| rigid.apply(p)).collect();
        let s1 = estimate_similarity(&src, &moved).unwrap().scale;
        assert!((s0 - s1).abs() < 1e-9);
    }

    #[test]
    fn rmse_invariant_under_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let src = random_points(&mut rng, 10);
        let dst: Vec<_> = src.iter().map(|p| p * 1.3 + Vector3::new(rng.random_range(-0.1..0.1), 0.0, 0.0)).collect();
        let e0 = alignment_rmse(&estimate_similarity(&src, &dst).unwrap(), &src, &dst).unwrap();
        let mut idx: Vec<usize> = (0..10).collect();
        idx.reverse();
        idx.swap(2, 7);
        let ps: Vec<_> = idx.iter().map(|&i| src[i]).collect();
        let pd: Vec<_> = idx.iter().map(|&i| dst[i]).collect();
        let e1 = alignment_rmse(&estimate_similarity(&ps, &pd).unwrap(), &ps, &pd).unwrap();
        assert!((e0 - e1).abs() < 1e-12);
    }

    #[test]
    fn collinear_source_residual_is_zero() {
        let src: Vec<_> = (0..8).map(|i| Vector3::new(0.25 * i as f64, 0.0, 0.0)).collect();
        let truth = SimilarityTransform3::from_yaw(1.0 / 0.37, 0.6, [1.0, -0.5, 0.0]).unwrap();
        let dst: Vec<_> = src.iter().map(|p| truth.apply(p)).collect();
        let t = estimate_similarity(&src, &dst).unwrap();
        assert!((t.scale - 1.0 / 0.37).abs() < 1e-9);
        assert!(alignment_rmse(&t, &src, &dst).unwrap() < 1e-9);
    }

    fn traj(stamps: &[f64]) -> Trajectory {
        Trajectory::new(
            stamps
                .iter()
                .map(|&t| TrajectorySample { stamp: t, position: [t, 0.0, 0.0], orientation: None })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn association_examples() {
        let a = traj(&[0.0, 1.0, 2.0]);
        assert_eq!(associate_by_timestamp(&a, &a, 0.1).len(), 3);

        let wheel = traj(&[0.0, 1.0, 2.0]);
        assert!(associate_by_timestamp(&traj(&[0.4]), &wheel, 0.3).is_empty());

        let pairs = associate_by_timestamp(&traj(&[0.9, 1.05]), &wheel, 0.2);
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs.pairs[0].stamp, 1.05);
        assert_eq!(pairs.pairs[0].wheel[0], 1.0);
    }

    /// Brute-force oracle: enumerate every partial one-to-one matching of
    /// admissible pairs and keep the stable ones (no admissible pair where
    /// both sides would strictly prefer each other). With distinct gaps the
    /// stable matching is unique.
    fn stable_matchings(v: &[f64], w: &[f64], gap: f64) -> Vec<Vec<Option<usize>>> {
        fn rec(i: usize, v: &[f64], w: &[f64], gap: f64, cur: &mut Vec<Option<usize>>, used: &mut Vec<bool>, out: &mut Vec<Vec<Option<usize>>>) {
            if i == v.len() {
                out.push(cur.clone());
                return;
            }
            cur.push(None);
            rec(i + 1, v, w, gap, cur, used, out);
            cur.pop();
            for j in 0..w.len() {
                if !used[j] && (v[i] - w[j]).abs() <= gap {
                    used[j] = true;
                    cur.push(Some(j));
                    rec(i + 1, v, w, gap, cur, used, out);
                    cur.pop();
                    used[j] = false;
                }
            }
        }
        let mut all = Vec::new();
        rec(0, v, w, gap, &mut Vec::new(), &mut vec![false; w.len()], &mut all);
        all.into_iter()
            .filter(|m| {
                let wheel_partner = |j: usize| m.iter().position(|x| *x == Some(j));
                for i in 0..v.len() {
                    for j in 0..w.len() {
                        let d = (v[i] - w[j]).abs();
                        if d > gap || m[i] == Some(j) {
                            continue;
                        }
                        let vi_better = m[i].map_or(true, |k| d < (v[i] - w[k]).abs());
                        let wj_better = wheel_partner(j).map_or(true, |k| d < (v[k] - w[j]).abs());
                        if vi_better && wj_better {
                            return false;
                        }
                    }
                }
                true
            })
            .collect()
    }

    #[test]
    fn association_matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..200 {
            let nv = rng.random_range(1..=5);
            let nw = rng.random_range(1..=5);
            let mut v: Vec<f64> = (0..nv).map(|_| rng.random_range(0.0..3.0)).collect();
            let mut w: Vec<f64> = (0..nw).map(|_| rng.random_range(0.0..3.0)).collect();
            v.sort_by(f64::total_cmp);
            w.sort_by(f64::total_cmp);
            v.dedup();
            w.dedup();
            let gap = rng.random_range(0.05..1.0);
            let stable = stable_matchings(&v, &w, gap);
            assert_eq!(stable.len(), 1, "v={v:?} w={w:?}");
            let expected: Vec<(f64, f64)> = stable[0]
                .iter()
                .enumerate()
                .filter_map(|(i, j)| j.map(|j| (v[i], w[j])))
                .collect();
            let got: Vec<(f64, f64)> = associate_by_timestamp(&traj(&v), &traj(&w), gap)
                .pairs
                .iter()
                .map(|p| (p.visual[0], p.wheel[0]))
                .collect();
            assert_eq!(got, expected);
        }
    }

    fn square_path(step: f64) -> Vec<[f64; 3]> {
        // 2 m square traversed at `step` metres per sample
        let n = (2.0 / step).round() as usize;
        let mut pts = Vec::new();
        let corners = [[0.0, 0.0], [2.0, 0.0], [2.0, 2.0], [0.0, 2.0]];
        for k in 0..4 {
            let a = corners[k];
            let b = corners[(k + 1) % 4];
            for i in 0..n {
                let f = i as f64 / n as f64;
                pts.push([a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1]), 0.0]);
            }
        }
        pts
    }

    #[test]
    fn scaler_converges_on_square_path() {
        let mut scaler = OdometryScaler::new(1.0);
        let truth = square_path(0.1);
        for (k, p) in truth.iter().enumerate() {
            scaler.push(PointPair {
                visual: [0.37 * p[0], 0.37 * p[1], 0.0],
                wheel: *p,
                stamp: k as f64 * 0.1,
            });
        }
        let u = scaler.tick(8.0).unwrap();
        assert!(u.valid);
        assert!((u.transform.scale - 1.0 / 0.37).abs() < 1e-6);
    }

    #[test]
    fn scaler_cold_start_emits_identity() {
        let mut scaler = OdometryScaler::new(1.0);
        scaler.push(PointPair { visual: [0.0; 3], wheel: [0.0; 3], stamp: 0.0 });
        scaler.push(PointPair { visual: [1.0, 0.0, 0.0], wheel: [2.0, 0.0, 0.0], stamp: 0.5 });
        let u = scaler.tick(1.0).unwrap();
        assert!(!u.valid);
        assert_eq!(u.transform, SimilarityTransform3::identity());
        // not due again until a full period has elapsed
        assert!(scaler.tick(1.5).is_none());
        assert!(scaler.tick(2.0).is_some());
    }

    #[test]
    fn scaler_holds_last_good_on_degenerate_history() {
        let mut scaler = OdometryScaler::new(1.0);
        for i in 0..3 {
            scaler.push(PointPair { visual: [1.0; 3], wheel: [i as f64, 0.0, 0.0], stamp: i as f64 });
        }
        let u = scaler.tick(3.0).unwrap();
        assert!(!u.valid);
        assert_eq!(u.transform, SimilarityTransform3::identity());
        assert_eq!(scaler.failures(), 1);
    }

    #[test]
    fn scaler_straight_line_residual_zero() {
        let mut scaler = OdometryScaler::new(1.0);
        for k in 0..20 {
            let x = 0.05 * k as f64;
            scaler.push(PointPair { visual: [0.37 * x, 0.0, 0.0], wheel: [x + 1.0, 2.0, 0.0], stamp: k as f64 * 0.1 });
        }
        let u = scaler.tick(2.0).unwrap();
        assert!(u.valid);
        assert!((u.transform.scale - 1.0 / 0.37).abs() < 1e-9);
        assert!(u.rmse.unwrap() < 1e-9);
    }
}
