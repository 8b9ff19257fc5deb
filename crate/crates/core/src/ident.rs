//! Teammate identification by rigid trajectory matching.

use nalgebra::{Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, VecDeque};

use crate::manifold::{Rotation, Vec3};

/// Sliding window of timestamped positions.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajWindow {
    entries: VecDeque<(f64, Vec3)>,
    capacity: usize,
}

impl TrajWindow {
    pub fn new(capacity: usize) -> Self {
        TrajWindow { entries: VecDeque::with_capacity(capacity), capacity: capacity.max(1) }
    }

    pub fn from_entries(capacity: usize, entries: impl IntoIterator<Item = (f64, Vec3)>) -> Self {
        let mut w = Self::new(capacity);
        for (t, p) in entries {
            w.push(t, p);
        }
        w
    }

    /// Appends an entry; returns false (and ignores it) unless `t` is later
    /// than the newest entry.
    pub fn push(&mut self, t: f64, p: Vec3) -> bool {
        if let Some(&(last, _)) = self.entries.back() {
            if !(t > last) {
                return false;
            }
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back((t, p));
        true
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, i: usize) -> (f64, Vec3) {
        self.entries[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &(f64, Vec3)> {
        self.entries.iter()
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.entries.iter().map(|e| e.1).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtrinsicEstimate {
    pub rot: Rotation,
    pub pos: Vec3,
    pub residual_rms: f64,
}

impl ExtrinsicEstimate {
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rot.apply(p) + self.pos
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IdentError {
    #[error("not enough data: {got} entries, need {need}")]
    NotEnoughData { got: usize, need: usize },
    #[error("degenerate geometry: associated positions are collinear")]
    DegenerateGeometry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentParams {
    /// Timestamp association tolerance, s.
    pub tol: f64,
    /// Acceptance threshold on the post-fit RMS, m.
    pub thr: f64,
    /// Excitation threshold on the second singular value of the scatter, m^2.
    pub sigma2_min: f64,
    /// Minimum number of time-associated pairs before matching is tried.
    pub min_pairs: usize,
}

impl Default for IdentParams {
    fn default() -> Self {
        IdentParams { tol: 0.025, thr: 0.1, sigma2_min: 1.0, min_pairs: 30 }
    }
}

impl IdentParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.tol > 0.0 && self.thr > 0.0 && self.sigma2_min >= 0.0) {
            return Err("tol and thr must be positive and sigma2_min non-negative".into());
        }
        if self.min_pairs < 3 {
            return Err("min_pairs must be at least 3".into());
        }
        Ok(())
    }
}

/// Greedy monotone association of entries whose timestamps differ by at
/// most `tol`. Returns `(index in a, index in b)` pairs.
pub fn associate_by_time(a: &TrajWindow, b: &TrajWindow, tol: f64) -> Vec<(usize, usize)> {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < a.len() && j < b.len() {
        let (ta, tb) = (a.get(i).0, b.get(j).0);
        if (ta - tb).abs() <= tol {
            out.push((i, j));
            i += 1;
            j += 1;
        } else if ta < tb {
            i += 1;
        } else {
            j += 1;
        }
    }
    out
}

/// Singular values (descending) of the centered scatter matrix.
pub fn scatter_singular_values(points: &[Vec3]) -> [f64; 3] {
    let c = points.iter().sum::<Vec3>() / points.len() as f64;
    let h: Matrix3<f64> = points.iter().map(|p| (p - c) * (p - c).transpose()).sum();
    // Symmetric PSD: singular values are the eigenvalues.
    let mut ev: Vec<f64> = SymmetricEigen::new(h).eigenvalues.iter().map(|v| v.max(0.0)).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    [ev[0], ev[1], ev[2]]
}

pub fn traj_excited(w: &TrajWindow, sigma2_min: f64) -> Result<(bool, [f64; 3]), IdentError> {
    if w.len() < 3 {
        return Err(IdentError::NotEnoughData { got: w.len(), need: 3 });
    }
    let sv = scatter_singular_values(&w.positions());
    Ok((sv[1] > sigma2_min, sv))
}

/// Least-squares rigid transform `T` with `a ≈ T b` (no scale).
pub fn rigid_fit(a: &[Vec3], b: &[Vec3]) -> Result<ExtrinsicEstimate, IdentError> {
    let n = a.len();
    if n < 3 || b.len() != n {
        return Err(IdentError::NotEnoughData { got: n.min(b.len()), need: 3 });
    }
    let ca = a.iter().sum::<Vec3>() / n as f64;
    let cb = b.iter().sum::<Vec3>() / n as f64;
    let mut m = Matrix3::zeros();
    for (pa, pb) in a.iter().zip(b) {
        m += (pa - ca) * (pb - cb).transpose();
    }
    let sa = scatter_singular_values(a);
    let sb = scatter_singular_values(b);
    let tiny = |s: [f64; 3]| s[1] <= 1e-12 * s[0].max(f64::MIN_POSITIVE);
    if tiny(sa) || tiny(sb) {
        return Err(IdentError::DegenerateGeometry);
    }
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let d = (u * vt).determinant().signum();
    let r = u * Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * vt;
    let rot = Rotation::from_matrix_projected(r);
    let pos = ca - rot.apply(&cb);
    let sse: f64 = a.iter().zip(b).map(|(pa, pb)| (pa - rot.apply(pb) - pos).norm_squared()).sum();
    Ok(ExtrinsicEstimate { rot, pos, residual_rms: (sse / n as f64).sqrt() })
}

/// Registers window `b` onto window `a` over time-associated pairs.
pub fn traj_match(a: &TrajWindow, b: &TrajWindow, tol: f64) -> Result<(f64, ExtrinsicEstimate), IdentError> {
    let pairs = associate_by_time(a, b, tol);
    let pa: Vec<Vec3> = pairs.iter().map(|&(i, _)| a.get(i).1).collect();
    let pb: Vec<Vec3> = pairs.iter().map(|&(_, j)| b.get(j).1).collect();
    let est = rigid_fit(&pa, &pb)?;
    Ok((est.residual_rms, est))
}

/// A candidate object trajectory for identification.
#[derive(Debug, Clone)]
pub struct Candidate<'a> {
    pub tracker_id: u32,
    pub window: &'a TrajWindow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Identification {
    pub tracker_id: u32,
    pub teammate_id: u8,
    pub estimate: ExtrinsicEstimate,
}

/// Matches temporary-tracker trajectories against teammates' self-reported
/// trajectories. Each teammate and each tracker is assigned at most once.
pub fn identify(candidates: &[Candidate<'_>], received: &BTreeMap<u8, TrajWindow>, params: &IdentParams) -> Vec<Identification> {
    let mut out: Vec<Identification> = Vec::new();
    for cand in candidates {
        if cand.window.len() < params.min_pairs {
            continue;
        }
        match traj_excited(cand.window, params.sigma2_min) {
            Ok((true, _)) => {}
            _ => continue,
        }
        for (&mate, traj) in received {
            if out.iter().any(|m| m.teammate_id == mate) {
                continue;
            }
            let pairs = associate_by_time(cand.window, traj, params.tol);
            if pairs.len() < params.min_pairs {
                continue;
            }
            let sub: Vec<Vec3> = pairs.iter().map(|&(i, _)| cand.window.get(i).1).collect();
            if scatter_singular_values(&sub)[1] <= params.sigma2_min {
                continue;
            }
            let other: Vec<Vec3> = pairs.iter().map(|&(_, j)| traj.get(j).1).collect();
            let Ok(est) = rigid_fit(&sub, &other) else { continue };
            if est.residual_rms < params.thr {
                out.push(Identification { tracker_id: cand.tracker_id, teammate_id: mate, estimate: est });
                break;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::so3_exp;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn circle(n: usize, r: f64, offset: Vec3) -> TrajWindow {
        TrajWindow::from_entries(
            n,
            (0..n).map(|k| {
                let a = std::f64::consts::TAU * k as f64 / n as f64;
                (0.1 * k as f64, offset + Vec3::new(r * a.cos(), r * a.sin(), 0.2 * (3.0 * a).sin()))
            }),
        )
    }

    fn transform(w: &TrajWindow, r: &Rotation, p: &Vec3) -> TrajWindow {
        TrajWindow::from_entries(w.capacity(), w.iter().map(|&(t, q)| (t, r.apply(&q) + p)))
    }

    #[test]
    fn window_keeps_capacity_and_order() {
        let mut w = TrajWindow::new(3);
        for k in 0..5 {
            assert!(w.push(k as f64, Vec3::zeros()));
        }
        assert!(!w.push(4.0, Vec3::zeros()));
        assert_eq!(w.len(), 3);
        assert_eq!(w.get(0).0, 2.0);
    }

    #[test]
    fn association_cases() {
        let a = TrajWindow::from_entries(100, (0..10).map(|k| (0.1 * k as f64, Vec3::zeros())));
        assert_eq!(associate_by_time(&a, &a, 0.025).len(), 10);
        let b = TrajWindow::from_entries(100, (0..10).step_by(2).map(|k| (0.1 * k as f64 + 0.01, Vec3::zeros())));
        assert_eq!(associate_by_time(&a, &b, 0.025), vec![(0, 0), (2, 1), (4, 2), (6, 3), (8, 4)]);
        let c = TrajWindow::from_entries(100, (0..10).map(|k| (0.1 * k as f64 + 0.05, Vec3::zeros())));
        assert!(associate_by_time(&a, &c, 0.025).is_empty());
    }

    #[test]
    fn excitation_cases() {
        let line = TrajWindow::from_entries(100, (0..50).map(|k| (k as f64, Vec3::new(k as f64, 2.0 * k as f64, 0.0))));
        let (ok, sv) = traj_excited(&line, 0.05).unwrap();
        assert!(!ok && sv[1] < 1e-9);
        let same = TrajWindow::from_entries(100, (0..10).map(|k| (k as f64, Vec3::new(1.0, 1.0, 1.0))));
        assert_eq!(traj_excited(&same, 0.05).unwrap(), (false, [0.0, 0.0, 0.0]));
        assert!(matches!(traj_excited(&TrajWindow::new(10), 0.05), Err(IdentError::NotEnoughData { .. })));
    }

    #[test]
    fn circle_scatter_is_half_the_count() {
        // Uniform samples on a unit circle: sum of cos^2 = sum of sin^2 = K/2.
        let k = 100;
        let w = TrajWindow::from_entries(k, (0..k).map(|i| {
            let a = std::f64::consts::TAU * i as f64 / k as f64;
            (i as f64, Vec3::new(a.cos(), a.sin(), 0.0))
        }));
        let (ok, sv) = traj_excited(&w, 0.05).unwrap();
        assert!(ok);
        assert!((sv[0] - 50.0).abs() < 1e-9 && (sv[1] - 50.0).abs() < 1e-9 && sv[2].abs() < 1e-9);
    }

    #[test]
    fn identity_match() {
        let a = circle(100, 1.0, Vec3::zeros());
        let (res, est) = traj_match(&a, &a, 0.025).unwrap();
        assert!(res < 1e-12);
        assert!(est.rot.angle_to(&Rotation::identity()) < 1e-12);
        assert!(est.pos.norm() < 1e-12);
    }

    #[test]
    fn recovers_far_offset_transforms() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let r0 = so3_exp(&Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0))).unwrap();
            let p0 = Vec3::new(rng.gen_range(-1e4..1e4), rng.gen_range(-1e4..1e4), rng.gen_range(-1e4..1e4));
            let a = circle(100, 2.0, Vec3::new(1e4, -1e4, 5e3));
            // b = T0^-1 a
            let b = transform(&a, &r0.transpose(), &-r0.apply_inverse(&p0));
            let (res, est) = traj_match(&a, &b, 0.025).unwrap();
            assert!(est.rot.angle_to(&r0) < 1e-9);
            assert!((est.pos - p0).norm() < 1e-9 * 1e4);
            assert!(res < 1e-8);
        }
    }

    #[test]
    fn collinear_is_degenerate() {
        let a = TrajWindow::from_entries(100, (0..20).map(|k| (k as f64, Vec3::new(k as f64, 0.0, 0.0))));
        assert_eq!(traj_match(&a, &a, 0.01).unwrap_err(), IdentError::DegenerateGeometry);
        let short = TrajWindow::from_entries(100, (0..2).map(|k| (k as f64, Vec3::new(k as f64, 1.0, 0.0))));
        assert!(matches!(traj_match(&short, &short, 0.01), Err(IdentError::NotEnoughData { .. })));
    }

    #[test]
    fn identify_is_one_to_one() {
        let a = circle(100, 1.5, Vec3::zeros());
        let r = Rotation::rot_z(0.7);
        let p = Vec3::new(3.0, -1.0, 0.5);
        let theirs = transform(&a, &r, &p);
        let mut received = BTreeMap::new();
        received.insert(2u8, theirs.clone());
        received.insert(3u8, theirs);
        let cands = [Candidate { tracker_id: 7, window: &a }, Candidate { tracker_id: 8, window: &a }];
        let ids = identify(&cands, &received, &IdentParams::default());
        assert_eq!(ids.len(), 2);
        assert_ne!(ids[0].teammate_id, ids[1].teammate_id);
        // a = T^-1 theirs
        assert!(ids[0].estimate.rot.angle_to(&r.transpose()) < 1e-9);
    }

    #[test]
    fn static_object_is_never_identified() {
        let pole = TrajWindow::from_entries(100, (0..100).map(|k| (0.1 * k as f64, Vec3::new(2.0, 1.0, 1.0))));
        let mut received = BTreeMap::new();
        received.insert(2u8, circle(100, 1.0, Vec3::zeros()));
        assert!(identify(&[Candidate { tracker_id: 1, window: &pole }], &received, &IdentParams::default()).is_empty());
    }
}
