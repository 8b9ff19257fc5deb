//! Measurement residuals and their Jacobians with respect to the error state.

use nalgebra::{Matrix3, SymmetricEigen};

use super::map::LocalMap;
use super::FilterParams;
use crate::manifold::{hat, Mat3, Rotation, SwarmState, Vec3};

/// Correspondence of a scan point with a local map plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointResidual {
    pub value: f64,
    pub normal: Vec3,
    pub point_body: Vec3,
    pub plane_point: Vec3,
}

impl PointResidual {
    /// Re-evaluates the residual at another state with the same plane.
    pub fn evaluate(&self, state: &SwarmState) -> f64 {
        self.normal.dot(&(state.ego_rot.apply(&self.point_body) + state.ego_pos - self.plane_point))
    }

    /// Derivatives with respect to `(δθ, δp)`.
    pub fn jacobian(&self, state: &SwarmState) -> (Vec3, Vec3) {
        let rt_n = state.ego_rot.apply_inverse(&self.normal);
        (self.point_body.cross(&rt_n), self.normal)
    }
}

/// Least-squares plane through `pts`: unit normal, centroid and RMS
/// point-to-plane distance.
pub fn fit_plane(pts: &[Vec3]) -> Option<(Vec3, Vec3, f64)> {
    if pts.len() < 3 {
        return None;
    }
    let c = pts.iter().sum::<Vec3>() / pts.len() as f64;
    let cov: Matrix3<f64> = pts.iter().map(|p| (p - c) * (p - c).transpose()).sum();
    let eig = SymmetricEigen::new(cov);
    let i = eig.eigenvalues.imin();
    let n = eig.eigenvectors.column(i).into_owned();
    let norm = n.norm();
    if !(norm > 0.0) {
        return None;
    }
    let n = n / norm;
    let ev = eig.eigenvalues;
    let mut sorted = [ev[0], ev[1], ev[2]];
    sorted.sort_by(f64::total_cmp);
    // Reject near-collinear neighbourhoods.
    if sorted[1] < 1e-6 {
        return None;
    }
    let rms = (pts.iter().map(|p| (p - c).dot(&n).powi(2)).sum::<f64>() / pts.len() as f64).sqrt();
    Some((n, c, rms))
}

/// Plane correspondences for body-frame points at `state`.
pub fn point_plane_residuals(map: &LocalMap, pts_body: &[Vec3], state: &SwarmState, params: &FilterParams) -> Vec<PointResidual> {
    if map.is_empty() {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(pts_body.len());
    let mut nbrs = Vec::with_capacity(params.knn);
    for b in pts_body {
        let w = state.ego_rot.apply(b) + state.ego_pos;
        let nn = map.knn(&w, params.knn, params.max_nn_dist);
        if nn.len() < params.knn {
            continue;
        }
        nbrs.clear();
        nbrs.extend(nn.iter().map(|e| e.0));
        let Some((normal, centroid, rms)) = fit_plane(&nbrs) else { continue };
        if rms > params.plane_tol {
            continue;
        }
        let value = normal.dot(&(w - centroid));
        if value.abs() > params.residual_gate {
            continue;
        }
        out.push(PointResidual { value, normal, point_body: *b, plane_point: centroid });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObsKind {
    Active,
    Passive,
}

/// This drone's detection of a teammate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActiveObs {
    pub teammate_id: u8,
    /// Measured teammate position in this drone's body frame.
    pub meas_body: Vec3,
    /// Teammate's self-estimated position in its own global frame at the
    /// update time.
    pub teammate_pos: Vec3,
}

/// A teammate's detection of this drone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PassiveObs {
    pub sender_id: u8,
    /// Measured position of this drone in the sender's body frame.
    pub meas_body: Vec3,
    /// Sender pose in its own global frame at the observation time.
    pub sender_rot: Rotation,
    pub sender_pos: Vec3,
    /// This drone's own displacement (global frame) from the observation
    /// time to the update time.
    pub self_offset: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObsResidual {
    pub kind: ObsKind,
    pub teammate_id: u8,
    pub value: Vec3,
    pub noise: Mat3,
    /// Index of the teammate in the state's extrinsic list.
    pub ext_index: usize,
    pub j_rot: Mat3,
    pub j_pos: Mat3,
    pub j_ext_rot: Mat3,
    pub j_ext_pos: Mat3,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObsBuild {
    pub residuals: Vec<ObsResidual>,
    /// Measurements naming a teammate id this state does not know.
    pub unknown: usize,
    /// Measurements skipped because the extrinsic is not initialized yet.
    pub uninitialized: usize,
}

pub fn active_residual(state: &SwarmState, obs: &ActiveObs, ext_index: usize, sigma: f64) -> ObsResidual {
    let e = &state.extrinsics[ext_index];
    let r = &state.ego_rot;
    let v = r.apply_inverse(&(e.rot.apply(&obs.teammate_pos) + e.pos - state.ego_pos));
    let rt = r.matrix().transpose();
    ObsResidual {
        kind: ObsKind::Active,
        teammate_id: obs.teammate_id,
        value: v - obs.meas_body,
        noise: Mat3::identity() * (sigma * sigma),
        ext_index,
        j_rot: hat(&v),
        j_pos: -rt,
        j_ext_rot: -rt * e.rot.matrix() * hat(&obs.teammate_pos),
        j_ext_pos: rt,
    }
}

pub fn passive_residual(state: &SwarmState, obs: &PassiveObs, ext_index: usize, sigma: f64) -> ObsResidual {
    let e = &state.extrinsics[ext_index];
    let w = e.rot.apply_inverse(&(state.ego_pos - obs.self_offset - e.pos));
    let value = obs.sender_rot.apply_inverse(&(w - obs.sender_pos)) - obs.meas_body;
    let rjt = obs.sender_rot.matrix().transpose();
    let rjt_ret = rjt * e.rot.matrix().transpose();
    ObsResidual {
        kind: ObsKind::Passive,
        teammate_id: obs.sender_id,
        value,
        noise: Mat3::identity() * (sigma * sigma),
        ext_index,
        j_rot: Mat3::zeros(),
        j_pos: rjt_ret,
        j_ext_rot: rjt * hat(&w),
        j_ext_pos: -rjt_ret,
    }
}

/// Residuals of active and passive observations at `state`. Measurements
/// for unknown or uninitialized teammates are skipped and counted.
pub fn mutual_obs_residuals(state: &SwarmState, active: &[ActiveObs], passive: &[PassiveObs], sigma: f64) -> ObsBuild {
    let mut out = ObsBuild::default();
    let lookup = |id: u8, out: &mut ObsBuild| match state.extrinsic_index(id) {
        None => {
            out.unknown += 1;
            None
        }
        Some(k) if !state.extrinsics[k].initialized => {
            out.uninitialized += 1;
            None
        }
        Some(k) => Some(k),
    };
    for a in active {
        if let Some(k) = lookup(a.teammate_id, &mut out) {
            out.residuals.push(active_residual(state, a, k, sigma));
        }
    }
    for p in passive {
        if let Some(k) = lookup(p.sender_id, &mut out) {
            out.residuals.push(passive_residual(state, p, k, sigma));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{so3_exp, ErrorVector, SwarmState, IDX_POS, IDX_ROT};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, s: f64) -> Vec3 {
        Vec3::new(rng.gen_range(-s..s), rng.gen_range(-s..s), rng.gen_range(-s..s))
    }

    fn random_state(rng: &mut ChaCha8Rng) -> SwarmState {
        let mut s = SwarmState::new(Vec3::new(0.0, 0.0, -9.81), &[2, 5]);
        s.ego_rot = so3_exp(&rand_vec(rng, 2.0)).unwrap();
        s.ego_pos = rand_vec(rng, 10.0);
        for e in &mut s.extrinsics {
            e.rot = so3_exp(&rand_vec(rng, 2.0)).unwrap();
            e.pos = rand_vec(rng, 10.0);
            e.initialized = true;
        }
        s
    }

    fn perturbed(s: &SwarmState, i: usize, h: f64) -> SwarmState {
        let mut d = ErrorVector::zeros(s.dim());
        d[i] = h;
        s.boxplus(&d).unwrap()
    }

    /// Jacobian column `i` by central differences.
    fn fd<F: Fn(&SwarmState) -> Vec3>(s: &SwarmState, i: usize, f: F) -> Vec3 {
        let h = 1e-6;
        (f(&perturbed(s, i, h)) - f(&perturbed(s, i, -h))) / (2.0 * h)
    }

    fn close(analytic: &Vec3, numeric: &Vec3) -> bool {
        (analytic - numeric).norm() <= 1e-4 * analytic.norm().max(numeric.norm()).max(1.0)
    }

    #[test]
    fn point_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let s = random_state(&mut rng);
            let r = PointResidual {
                value: 0.0,
                normal: rand_vec(&mut rng, 1.0).normalize(),
                point_body: rand_vec(&mut rng, 20.0),
                plane_point: rand_vec(&mut rng, 10.0),
            };
            let (jr, jp) = r.jacobian(&s);
            for k in 0..3 {
                let f = |x: &SwarmState| Vec3::new(r.evaluate(x), 0.0, 0.0);
                assert!(close(&Vec3::new(jr[k], 0.0, 0.0), &fd(&s, IDX_ROT + k, f)));
                assert!(close(&Vec3::new(jp[k], 0.0, 0.0), &fd(&s, IDX_POS + k, f)));
            }
        }
    }

    fn check_obs<F: Fn(&SwarmState) -> ObsResidual>(s: &SwarmState, build: F) {
        let r = build(s);
        let off = SwarmState::extrinsic_offset(r.ext_index);
        let blocks = [(IDX_ROT, r.j_rot), (IDX_POS, r.j_pos), (off, r.j_ext_rot), (off + 3, r.j_ext_pos)];
        for (base, j) in blocks {
            for k in 0..3 {
                let num = fd(s, base + k, |x| build(x).value);
                assert!(close(&j.column(k).into_owned(), &num), "block {base} col {k}: {} vs {num}", j.column(k));
            }
        }
        // everything else has zero derivative
        for i in [6, 9, 12, 15, SwarmState::extrinsic_offset(1 - r.ext_index)] {
            assert!(fd(s, i, |x| build(x).value).norm() < 1e-6);
        }
    }

    #[test]
    fn observation_jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let s = random_state(&mut rng);
            let a = ActiveObs { teammate_id: 2, meas_body: rand_vec(&mut rng, 5.0), teammate_pos: rand_vec(&mut rng, 10.0) };
            check_obs(&s, |x| active_residual(x, &a, 0, 0.1));
            let p = PassiveObs {
                sender_id: 5,
                meas_body: rand_vec(&mut rng, 5.0),
                sender_rot: so3_exp(&rand_vec(&mut rng, 2.0)).unwrap(),
                sender_pos: rand_vec(&mut rng, 10.0),
                self_offset: rand_vec(&mut rng, 0.3),
            };
            check_obs(&s, |x| passive_residual(x, &p, 1, 0.1));
        }
    }

    #[test]
    fn consistent_observations_have_zero_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_state(&mut rng);
        let e = &s.extrinsics[0];
        // teammate pose in its own frame
        let rj = so3_exp(&rand_vec(&mut rng, 1.0)).unwrap();
        let pj = rand_vec(&mut rng, 5.0);
        let mate_in_mine = e.rot.apply(&pj) + e.pos;
        let a = ActiveObs { teammate_id: 2, meas_body: s.ego_rot.apply_inverse(&(mate_in_mine - s.ego_pos)), teammate_pos: pj };
        assert!(active_residual(&s, &a, 0, 0.1).value.norm() < 1e-12);
        let me_in_theirs = e.rot.apply_inverse(&(s.ego_pos - e.pos));
        let p = PassiveObs {
            sender_id: 2,
            meas_body: rj.apply_inverse(&(me_in_theirs - pj)),
            sender_rot: rj,
            sender_pos: pj,
            self_offset: Vec3::zeros(),
        };
        assert!(passive_residual(&s, &p, 0, 0.1).value.norm() < 1e-12);
    }

    #[test]
    fn extrinsic_translation_shifts_active_residual() {
        let mut s = SwarmState::new(Vec3::zeros(), &[2]);
        s.extrinsics[0].initialized = true;
        let a = ActiveObs { teammate_id: 2, meas_body: Vec3::new(1.0, 2.0, 3.0), teammate_pos: Vec3::new(1.0, 2.0, 3.0) };
        let before = active_residual(&s, &a, 0, 0.1).value;
        s.extrinsics[0].pos = Vec3::new(0.1, 0.0, 0.0);
        let after = active_residual(&s, &a, 0, 0.1).value;
        assert!((after - before - Vec3::new(0.1, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn uninitialized_and_unknown_are_skipped() {
        let s = SwarmState::new(Vec3::zeros(), &[2]);
        let a = [
            ActiveObs { teammate_id: 2, meas_body: Vec3::x(), teammate_pos: Vec3::zeros() },
            ActiveObs { teammate_id: 9, meas_body: Vec3::x(), teammate_pos: Vec3::zeros() },
        ];
        let b = mutual_obs_residuals(&s, &a, &[], 0.1);
        assert!(b.residuals.is_empty());
        assert_eq!((b.unknown, b.uninitialized), (1, 1));
    }

    #[test]
    fn plane_fit_and_offset() {
        let pts: Vec<Vec3> = (0..5).map(|i| Vec3::new(i as f64 * 0.1, (i * i) as f64 * 0.05, 2.0)).collect();
        let (n, c, rms) = fit_plane(&pts).unwrap();
        assert!((n.z.abs() - 1.0).abs() < 1e-12 && rms < 1e-12);
        assert!((c.z - 2.0).abs() < 1e-12);
        let line: Vec<Vec3> = (0..5).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        assert!(fit_plane(&line).is_none());
    }
}
