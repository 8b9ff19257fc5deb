//! Error-state iterated Kalman filter over the swarm state: IMU prediction,
//! scan undistortion, point-to-plane and mutual-observation updates, and the
//! local map.

mod map;
mod residuals;

pub use map::LocalMap;
pub use residuals::{
    active_residual, fit_plane, mutual_obs_residuals, passive_residual, point_plane_residuals, ActiveObs, ObsBuild,
    ObsKind, ObsResidual, PassiveObs, PointResidual,
};

use nalgebra::{DMatrix, DVector, SMatrix};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use thiserror::Error;

use crate::ident::ExtrinsicEstimate;
use crate::manifold::{
    hat, so3_exp, ErrorVector, ManifoldError, Mat3, Rotation, SwarmState, Vec3, EGO_DIM, EXT_DIM, IDX_BA, IDX_BG,
    IDX_GRAV, IDX_POS, IDX_ROT, IDX_VEL,
};
use crate::sensor_sim::{ImuSample, LidarScan};

type Mat18 = SMatrix<f64, EGO_DIM, EGO_DIM>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterParams {
    /// Continuous-time noise densities (per square-root second).
    pub gyro_noise: f64,
    pub accel_noise: f64,
    pub gyro_bias_walk: f64,
    pub accel_bias_walk: f64,
    pub ext_rot_walk: f64,
    pub ext_pos_walk: f64,
    pub point_sigma: f64,
    /// Mutual observation noise, m.
    pub obs_sigma: f64,
    pub max_iter: usize,
    /// Convergence threshold on the iterated step.
    pub eps: f64,
    /// Step size (rad or m) above which correspondences are searched again.
    pub research_step: f64,
    /// Point-residual information along rotation or position directions
    /// weaker than this fraction of the strongest one is discarded; 0 keeps
    /// everything.
    pub degeneracy_ratio: f64,
    pub map_leaf: f64,
    pub map_chunk: f64,
    /// Voxel size for down-sampling scans before the update; 0 disables it.
    pub scan_leaf: f64,
    pub knn: usize,
    pub plane_tol: f64,
    pub residual_gate: f64,
    pub max_nn_dist: f64,
    /// Passive observations older than this are dropped, s.
    pub passive_max_age: f64,
    /// Length of the static window used for gravity and gyro-bias init, s.
    pub gravity_init_time: f64,
    pub init_rot_sigma: f64,
    pub init_pos_sigma: f64,
    pub init_vel_sigma: f64,
    pub init_bg_sigma: f64,
    pub init_ba_sigma: f64,
    pub init_grav_sigma: f64,
    /// Prior sigmas of a freshly initialized extrinsic (rad, m), scaled by
    /// the fit residual relative to the acceptance threshold.
    pub ext_init_rot_sigma: f64,
    pub ext_init_pos_sigma: f64,
}

impl Default for FilterParams {
    fn default() -> Self {
        FilterParams {
            gyro_noise: 0.005,
            accel_noise: 0.06,
            gyro_bias_walk: 2e-4,
            accel_bias_walk: 3e-3,
            ext_rot_walk: 1e-4,
            ext_pos_walk: 1e-4,
            point_sigma: 0.05,
            obs_sigma: 0.1,
            max_iter: 5,
            eps: 1e-6,
            research_step: 0.02,
            degeneracy_ratio: 0.05,
            map_leaf: 0.2,
            map_chunk: 8.0,
            scan_leaf: 0.4,
            knn: 5,
            plane_tol: 0.05,
            residual_gate: 0.5,
            max_nn_dist: 1.0,
            passive_max_age: 0.2,
            gravity_init_time: 0.5,
            init_rot_sigma: 1e-4,
            init_pos_sigma: 1e-4,
            init_vel_sigma: 0.01,
            init_bg_sigma: 0.005,
            init_ba_sigma: 0.05,
            init_grav_sigma: 0.1,
            ext_init_rot_sigma: 5f64.to_radians(),
            ext_init_pos_sigma: 0.2,
        }
    }
}

impl FilterParams {
    pub fn validate(&self) -> Result<(), String> {
        let nonneg = [
            self.gyro_noise,
            self.accel_noise,
            self.gyro_bias_walk,
            self.accel_bias_walk,
            self.ext_rot_walk,
            self.ext_pos_walk,
            self.scan_leaf,
            self.research_step,
            self.degeneracy_ratio,
        ];
        if nonneg.iter().any(|v| !(*v >= 0.0)) {
            return Err("noise densities and leaf sizes must be non-negative".into());
        }
        let pos = [
            self.point_sigma,
            self.obs_sigma,
            self.eps,
            self.map_leaf,
            self.plane_tol,
            self.residual_gate,
            self.max_nn_dist,
            self.passive_max_age,
            self.gravity_init_time,
            self.init_rot_sigma,
            self.init_pos_sigma,
            self.init_vel_sigma,
            self.init_bg_sigma,
            self.init_ba_sigma,
            self.init_grav_sigma,
            self.ext_init_rot_sigma,
            self.ext_init_pos_sigma,
        ];
        if pos.iter().any(|v| !(*v > 0.0)) {
            return Err("sigmas, tolerances and sizes must be positive".into());
        }
        if self.map_chunk < self.map_leaf {
            return Err("map_chunk must be at least map_leaf".into());
        }
        if self.degeneracy_ratio >= 1.0 {
            return Err("degeneracy_ratio must be below 1".into());
        }
        if self.max_iter == 0 || self.knn < 3 {
            return Err("need max_iter >= 1 and knn >= 3".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("bad time step {dt} s")]
    BadDt { dt: f64 },
    #[error("no motion history covers t = {t} s")]
    UndistortionUnavailable { t: f64 },
    #[error("extrinsic of teammate {0} is already initialized")]
    AlreadyInitialized(u8),
    #[error("teammate {0} is not part of the state")]
    UnknownTeammate(u8),
    #[error("filter is still collecting its static initialization window")]
    NotInitialized,
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
}

/// Largest IMU step accepted by the predictor, s.
pub const MAX_DT: f64 = 0.1;
/// Largest gap between a point time and the motion history, s.
const MAX_TRAIL_GAP: f64 = 0.05;
const TIME_EPS: f64 = 1e-9;

/// State snapshot used to undistort scans: the pose at `t` and the
/// (bias-corrected) inputs held until the next snapshot.
#[derive(Debug, Clone, Copy, PartialEq)]
struct TrailPoint {
    t: f64,
    rot: Rotation,
    pos: Vec3,
    vel: Vec3,
    omega: Vec3,
    acc_world: Vec3,
}

impl TrailPoint {
    fn at(&self, t: f64) -> (Rotation, Vec3) {
        let tau = t - self.t;
        let rot = self.rot.plus(&(self.omega * tau));
        let pos = self.pos + self.vel * tau + 0.5 * self.acc_world * tau * tau;
        (rot, pos)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct UpdateStats {
    pub iterations: usize,
    pub converged: bool,
    pub point_residuals: usize,
    pub active_residuals: usize,
    pub passive_residuals: usize,
    /// Observations skipped because the teammate is unknown or its
    /// extrinsic is not initialized.
    pub skipped_obs: usize,
    /// The information matrix needed damping to factorize.
    pub regularized: bool,
}

/// One drone's filter.
#[derive(Debug, Clone)]
pub struct FilterInstance {
    pub state: SwarmState,
    pub cov: DMatrix<f64>,
    pub map: LocalMap,
    params: FilterParams,
    mutual_obs: bool,
    time: f64,
    initialized: bool,
    init_buf: Vec<ImuSample>,
    last_input: Option<ImuSample>,
    trail: Vec<TrailPoint>,
    coasted_inputs: usize,
}

impl FilterInstance {
    /// A filter that initializes itself from the first
    /// `gravity_init_time` seconds of (static) IMU data.
    pub fn new(teammates: &[u8], mutual_obs: bool, params: FilterParams) -> Result<Self, String> {
        params.validate()?;
        let state = SwarmState::new(Vec3::zeros(), teammates);
        let n = state.dim();
        Ok(FilterInstance {
            state,
            cov: DMatrix::zeros(n, n),
            map: LocalMap::new(params.map_leaf, params.map_chunk),
            params,
            mutual_obs,
            time: 0.0,
            initialized: false,
            init_buf: Vec::new(),
            last_input: None,
            trail: Vec::new(),
            coasted_inputs: 0,
        })
    }

    /// Starts from a given state at time `t` with the default prior
    /// covariance, skipping static initialization.
    pub fn with_state(state: SwarmState, t: f64, mutual_obs: bool, params: FilterParams) -> Result<Self, String> {
        let teammates: Vec<u8> = state.extrinsics.iter().map(|e| e.teammate_id).collect();
        let mut f = Self::new(&teammates, mutual_obs, params)?;
        f.state = state;
        f.start(t);
        Ok(f)
    }

    pub fn params(&self) -> &FilterParams {
        &self.params
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    pub fn mutual_obs(&self) -> bool {
        self.mutual_obs
    }

    /// Time the state refers to.
    pub fn time(&self) -> f64 {
        self.time
    }

    /// IMU samples replaced by the previous input because they were not finite.
    pub fn coasted_inputs(&self) -> usize {
        self.coasted_inputs
    }

    fn start(&mut self, t: f64) {
        let p = &self.params;
        let mut cov = DMatrix::zeros(self.state.dim(), self.state.dim());
        let sig = [
            (IDX_ROT, p.init_rot_sigma),
            (IDX_POS, p.init_pos_sigma),
            (IDX_VEL, p.init_vel_sigma),
            (IDX_BG, p.init_bg_sigma),
            (IDX_BA, p.init_ba_sigma),
            (IDX_GRAV, p.init_grav_sigma),
        ];
        for (i, s) in sig {
            for k in 0..3 {
                cov[(i + k, i + k)] = s * s;
            }
        }
        for (k, e) in self.state.extrinsics.iter().enumerate() {
            if e.initialized {
                let o = SwarmState::extrinsic_offset(k);
                for j in 0..3 {
                    cov[(o + j, o + j)] = p.ext_init_rot_sigma.powi(2);
                    cov[(o + 3 + j, o + 3 + j)] = p.ext_init_pos_sigma.powi(2);
                }
            }
        }
        self.cov = cov;
        self.time = t;
        self.initialized = true;
        self.init_buf.clear();
        self.trail.clear();
        self.push_trail();
    }

    fn push_trail(&mut self) {
        let (omega, acc_world) = match &self.last_input {
            Some(u) => (u.gyro - self.state.bias_gyro, self.state.ego_rot.apply(&(u.accel - self.state.bias_acc)) + self.state.gravity),
            None => (Vec3::zeros(), Vec3::zeros()),
        };
        self.trail.push(TrailPoint {
            t: self.time,
            rot: self.state.ego_rot,
            pos: self.state.ego_pos,
            vel: self.state.ego_vel,
            omega,
            acc_world,
        });
    }

    /// Feeds one IMU sample. Before initialization samples are collected
    /// for the static window; afterwards the state is propagated to the
    /// sample time.
    pub fn push_imu(&mut self, sample: &ImuSample) -> Result<(), FilterError> {
        if !sample.timestamp.is_finite() {
            return Err(FilterError::BadDt { dt: f64::NAN });
        }
        let mut u = *sample;
        if !u.is_finite() {
            match self.last_input {
                Some(prev) => {
                    u = ImuSample { timestamp: sample.timestamp, ..prev };
                    self.coasted_inputs += 1;
                }
                None => return Ok(()),
            }
        }
        if !self.initialized {
            if let Some(last) = self.init_buf.last() {
                if u.timestamp <= last.timestamp {
                    return Err(FilterError::BadDt { dt: u.timestamp - last.timestamp });
                }
            }
            self.init_buf.push(u);
            self.last_input = Some(u);
            let span = u.timestamp - self.init_buf[0].timestamp;
            if span >= self.params.gravity_init_time - TIME_EPS {
                self.static_init();
            }
            return Ok(());
        }
        let dt = u.timestamp - self.time;
        if dt < -TIME_EPS {
            return Err(FilterError::BadDt { dt });
        }
        if dt > TIME_EPS {
            let prev = self.last_input.unwrap_or(u);
            let mid = ImuSample {
                gyro: 0.5 * (prev.gyro + u.gyro),
                accel: 0.5 * (prev.accel + u.accel),
                timestamp: prev.timestamp,
            };
            self.last_input = Some(mid);
            self.propagate(dt)?;
        }
        self.last_input = Some(u);
        Ok(())
    }

    fn static_init(&mut self) {
        let n = self.init_buf.len() as f64;
        let acc: Vec3 = self.init_buf.iter().map(|s| s.accel).sum::<Vec3>() / n;
        let gyro: Vec3 = self.init_buf.iter().map(|s| s.gyro).sum::<Vec3>() / n;
        self.state.gravity = -acc;
        self.state.bias_gyro = gyro;
        let t = self.init_buf.last().map_or(0.0, |s| s.timestamp);
        self.start(t);
    }

    /// Propagates the state to `t` with the most recent input held.
    pub fn predict_to(&mut self, t: f64) -> Result<(), FilterError> {
        if !self.initialized {
            return Err(FilterError::NotInitialized);
        }
        let dt = t - self.time;
        if dt < -TIME_EPS {
            return Err(FilterError::BadDt { dt });
        }
        if dt > TIME_EPS {
            self.propagate(dt)?;
        }
        Ok(())
    }

    fn propagate(&mut self, dt: f64) -> Result<(), FilterError> {
        let u = self.last_input.ok_or(FilterError::NotInitialized)?;
        self.predict(dt, &u)?;
        self.push_trail();
        Ok(())
    }

    /// One prediction step of length `dt` with input `u`.
    pub fn predict(&mut self, dt: f64, u: &ImuSample) -> Result<(), FilterError> {
        if !(dt > 0.0 && dt <= MAX_DT) {
            return Err(FilterError::BadDt { dt });
        }
        let p = &self.params;
        let s = &mut self.state;
        let omega = u.gyro - s.bias_gyro;
        let a_body = u.accel - s.bias_acc;
        let r = *s.ego_rot.matrix();
        let acc_world = r * a_body + s.gravity;

        // Keep the trail's held input in sync with what drives this step.
        if let Some(last) = self.trail.last_mut() {
            if (last.t - self.time).abs() < TIME_EPS {
                last.omega = omega;
                last.acc_world = acc_world;
            }
        }

        s.ego_pos += s.ego_vel * dt + 0.5 * acc_world * dt * dt;
        s.ego_vel += acc_world * dt;
        s.ego_rot = s.ego_rot.plus(&(omega * dt));

        let mut f = Mat18::identity();
        let i3 = Mat3::identity();
        let exp_neg = so3_exp(&(-omega * dt))?;
        f.fixed_view_mut::<3, 3>(IDX_ROT, IDX_ROT).copy_from(exp_neg.matrix());
        f.fixed_view_mut::<3, 3>(IDX_ROT, IDX_BG).copy_from(&(-i3 * dt));
        f.fixed_view_mut::<3, 3>(IDX_POS, IDX_VEL).copy_from(&(i3 * dt));
        f.fixed_view_mut::<3, 3>(IDX_VEL, IDX_ROT).copy_from(&(-r * hat(&a_body) * dt));
        f.fixed_view_mut::<3, 3>(IDX_VEL, IDX_BA).copy_from(&(-r * dt));
        f.fixed_view_mut::<3, 3>(IDX_VEL, IDX_GRAV).copy_from(&(i3 * dt));

        let n = s.dim();
        let pee: Mat18 = self.cov.fixed_view::<EGO_DIM, EGO_DIM>(0, 0).into_owned();
        let mut pee = f * pee * f.transpose();
        let q = [
            (IDX_ROT, p.gyro_noise),
            (IDX_VEL, p.accel_noise),
            (IDX_BG, p.gyro_bias_walk),
            (IDX_BA, p.accel_bias_walk),
        ];
        for (i, d) in q {
            for k in 0..3 {
                pee[(i + k, i + k)] += d * d * dt;
            }
        }
        self.cov.fixed_view_mut::<EGO_DIM, EGO_DIM>(0, 0).copy_from(&pee);
        if n > EGO_DIM {
            let pex = self.cov.view((0, EGO_DIM), (EGO_DIM, n - EGO_DIM)).into_owned();
            let pex = DMatrix::from_iterator(EGO_DIM, EGO_DIM, f.iter().copied()) * pex;
            self.cov.view_mut((0, EGO_DIM), (EGO_DIM, n - EGO_DIM)).copy_from(&pex);
            self.cov.view_mut((EGO_DIM, 0), (n - EGO_DIM, EGO_DIM)).copy_from(&pex.transpose());
            for (k, e) in s.extrinsics.iter().enumerate() {
                if !e.initialized {
                    continue;
                }
                let o = SwarmState::extrinsic_offset(k);
                for j in 0..3 {
                    self.cov[(o + j, o + j)] += p.ext_rot_walk.powi(2) * dt;
                    self.cov[(o + 3 + j, o + 3 + j)] += p.ext_pos_walk.powi(2) * dt;
                }
            }
        }
        self.time += dt;
        Ok(())
    }

    /// The estimated pose at time `t` within the stored motion history.
    pub fn pose_at(&self, t: f64) -> Result<(Rotation, Vec3), FilterError> {
        let first = self.trail.first().ok_or(FilterError::UndistortionUnavailable { t })?;
        let last = self.trail.last().unwrap_or(first);
        if t < first.t - MAX_TRAIL_GAP || t > last.t + MAX_TRAIL_GAP {
            return Err(FilterError::UndistortionUnavailable { t });
        }
        let i = self.trail.partition_point(|e| e.t <= t).saturating_sub(1);
        Ok(self.trail[i].at(t))
    }

    /// Re-expresses every point in the body frame at the scan end time,
    /// using the motion history since the previous scan. Call after
    /// [`predict_to`](Self::predict_to) the scan end.
    pub fn undistort_scan(&self, scan: &LidarScan) -> Result<LidarScan, FilterError> {
        let (r_end, p_end) = self.pose_at(scan.scan_end_time)?;
        let t0 = scan.scan_start_time();
        let mut out = scan.clone();
        let mut cache: Option<(f64, Rotation, Vec3)> = None;
        for pt in &mut out.points {
            let t = t0 + pt.t_offset;
            let (r, p) = match cache {
                Some((tc, r, p)) if tc == t => (r, p),
                _ => {
                    let (r, p) = self.pose_at(t)?;
                    cache = Some((t, r, p));
                    (r, p)
                }
            };
            pt.pos_body = r_end.apply_inverse(&(r.apply(&pt.pos_body) + p - p_end));
        }
        Ok(out)
    }

    /// Drops motion history before the current time.
    pub fn clear_trail(&mut self) {
        self.trail.clear();
        self.push_trail();
    }

    /// Indices of the blocks estimated in an update.
    fn active_indices(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..EGO_DIM).collect();
        if self.mutual_obs {
            for (k, e) in self.state.extrinsics.iter().enumerate() {
                if e.initialized {
                    let o = SwarmState::extrinsic_offset(k);
                    idx.extend(o..o + EXT_DIM);
                }
            }
        }
        idx
    }

    /// Iterated update with point-to-plane residuals from `points_body`
    /// (scan-end body frame) and mutual observations. Observations are
    /// ignored when mutual observation is disabled.
    pub fn iterated_update(
        &mut self,
        points_body: &[Vec3],
        active: &[ActiveObs],
        passive: &[PassiveObs],
    ) -> Result<UpdateStats, FilterError> {
        if !self.initialized {
            return Err(FilterError::NotInitialized);
        }
        let params = self.params.clone();
        let pts = if params.scan_leaf > 0.0 { voxel_downsample(points_body, params.scan_leaf) } else { points_body.to_vec() };
        let (active, passive) = if self.mutual_obs { (active, passive) } else { (&[][..], &[][..]) };

        let idx = self.active_indices();
        let m = idx.len();
        let mut pos_of = vec![usize::MAX; self.state.dim()];
        for (j, &i) in idx.iter().enumerate() {
            pos_of[i] = j;
        }
        let p_a = DMatrix::from_fn(m, m, |r, c| self.cov[(idx[r], idx[c])]);
        let (p_inv, mut regularized) = spd_inverse(&p_a);
        let prior = self.state.clone();
        let mut x = prior.clone();
        let mut stats = UpdateStats::default();
        let mut corr: Vec<PointResidual> = Vec::new();
        let mut research = true;
        let mut info = DMatrix::zeros(m, m);

        for it in 0..params.max_iter {
            stats.iterations = it + 1;
            if research {
                corr = point_plane_residuals(&self.map, &pts, &x, &params);
            }
            let obs = mutual_obs_residuals(&x, active, passive, params.obs_sigma);
            info.fill(0.0);
            let mut grad = DVector::zeros(m);
            let w_pt = 1.0 / (params.point_sigma * params.point_sigma);
            let mut hh = SMatrix::<f64, 6, 6>::zeros();
            let mut hz = SMatrix::<f64, 6, 1>::zeros();
            for c in &corr {
                let z = c.evaluate(&x);
                let (jr, jp) = c.jacobian(&x);
                let h = SMatrix::<f64, 6, 1>::new(jr.x, jr.y, jr.z, jp.x, jp.y, jp.z);
                hh += h * h.transpose() * w_pt;
                hz += h * (z * w_pt);
            }
            if params.degeneracy_ratio > 0.0 {
                let keep = well_constrained_projector(&hh, params.degeneracy_ratio);
                hh = keep * hh * keep;
                hz = keep * hz;
            }
            for r in 0..6 {
                grad[r] += hz[r];
                for c in 0..6 {
                    info[(r, c)] += hh[(r, c)];
                }
            }
            stats.skipped_obs = obs.unknown + obs.uninitialized;
            stats.active_residuals = obs.residuals.iter().filter(|o| o.kind == ObsKind::Active).count();
            stats.passive_residuals = obs.residuals.len() - stats.active_residuals;
            for o in &obs.residuals {
                let off = SwarmState::extrinsic_offset(o.ext_index);
                let cols = [
                    (IDX_ROT, o.j_rot),
                    (IDX_POS, o.j_pos),
                    (off, o.j_ext_rot),
                    (off + 3, o.j_ext_pos),
                ];
                let w = o.noise.try_inverse().unwrap_or_else(|| Mat3::identity() / params.obs_sigma.powi(2));
                for &(ci, ja) in &cols {
                    let a = pos_of[ci];
                    if a == usize::MAX {
                        continue;
                    }
                    let g = ja.transpose() * w * o.value;
                    for k in 0..3 {
                        grad[a + k] += g[k];
                    }
                    for &(cj, jb) in &cols {
                        let b = pos_of[cj];
                        if b == usize::MAX {
                            continue;
                        }
                        let blk = ja.transpose() * w * jb;
                        for r in 0..3 {
                            for c in 0..3 {
                                info[(a + r, b + c)] += blk[(r, c)];
                            }
                        }
                    }
                }
            }
            stats.point_residuals = corr.len();

            let full_d = x.boxminus(&prior)?;
            let d = DVector::from_fn(m, |r, _| full_d[idx[r]]);
            let a = &p_inv + &info;
            let rhs = -(grad + &p_inv * d);
            let (delta, reg) = spd_solve(&a, &rhs);
            regularized |= reg;
            let mut full = ErrorVector::zeros(x.dim());
            for (j, &i) in idx.iter().enumerate() {
                full[i] = delta[j];
            }
            x = x.boxplus(&full)?;
            let step = delta.amax();
            research = step > params.research_step;
            if step < params.eps {
                stats.converged = true;
                break;
            }
        }

        // Posterior covariance from the final information matrix.
        let a = &p_inv + &info;
        let (post, reg) = spd_inverse(&a);
        regularized |= reg;
        x.renormalize();
        self.state = x;
        let active_set: HashSet<usize> = idx.iter().copied().collect();
        let n = self.state.dim();
        for r in 0..n {
            for c in 0..n {
                let ar = active_set.contains(&r);
                let ac = active_set.contains(&c);
                if ar && ac {
                    self.cov[(r, c)] = 0.5 * (post[(pos_of[r], pos_of[c])] + post[(pos_of[c], pos_of[r])]);
                } else if ar != ac {
                    self.cov[(r, c)] = 0.0;
                }
            }
        }
        stats.regularized = regularized;
        // The updated pose anchors the next scan's motion history.
        self.clear_trail();
        Ok(stats)
    }

    /// Inserts scan-end body-frame points into the map at the current pose.
    pub fn map_update(&mut self, points_body: &[Vec3]) -> usize {
        let r = self.state.ego_rot;
        let p = self.state.ego_pos;
        let world: Vec<Vec3> = points_body.iter().map(|b| r.apply(b) + p).collect();
        self.map.insert(&world)
    }

    /// Sets the extrinsic of `teammate` from an identification result and
    /// gives it a prior covariance scaled by the fit quality.
    pub fn init_extrinsic(&mut self, teammate: u8, est: &ExtrinsicEstimate, accept_thr: f64) -> Result<(), FilterError> {
        let k = self.state.extrinsic_index(teammate).ok_or(FilterError::UnknownTeammate(teammate))?;
        if self.state.extrinsics[k].initialized {
            return Err(FilterError::AlreadyInitialized(teammate));
        }
        let e = &mut self.state.extrinsics[k];
        e.rot = est.rot.renormalized();
        e.pos = est.pos;
        e.initialized = true;
        let scale = if accept_thr > 0.0 { (est.residual_rms / accept_thr).clamp(0.25, 1.0) } else { 1.0 };
        let o = SwarmState::extrinsic_offset(k);
        let n = self.state.dim();
        for i in o..o + EXT_DIM {
            for j in 0..n {
                self.cov[(i, j)] = 0.0;
                self.cov[(j, i)] = 0.0;
            }
        }
        for j in 0..3 {
            self.cov[(o + j, o + j)] = (self.params.ext_init_rot_sigma * scale).powi(2);
            self.cov[(o + 3 + j, o + 3 + j)] = (self.params.ext_init_pos_sigma * scale).powi(2);
        }
        Ok(())
    }

    /// Marginal standard deviation of error-state component `i`.
    pub fn sigma(&self, i: usize) -> f64 {
        self.cov[(i, i)].max(0.0).sqrt()
    }
}

/// Keeps the first point falling in each voxel of size `leaf`.
pub fn voxel_downsample(points: &[Vec3], leaf: f64) -> Vec<Vec3> {
    let mut seen = HashSet::with_capacity(points.len());
    points
        .iter()
        .filter(|p| {
            let k = [(p.x / leaf).floor() as i64, (p.y / leaf).floor() as i64, (p.z / leaf).floor() as i64];
            seen.insert(k)
        })
        .copied()
        .collect()
}

fn damped(a: &DMatrix<f64>) -> (nalgebra::linalg::Cholesky<f64, nalgebra::Dyn>, bool) {
    if let Some(c) = a.clone().cholesky() {
        return (c, false);
    }
    let scale = a.diagonal().amax().max(1e-12);
    let mut lambda = 1e-9 * scale;
    loop {
        let m = a + DMatrix::identity(a.nrows(), a.ncols()) * lambda;
        if let Some(c) = m.cholesky() {
            return (c, true);
        }
        lambda *= 10.0;
    }
}

/// Block-diagonal projector onto the rotation and position directions
/// whose information is at least `ratio` times the strongest in its block.
fn well_constrained_projector(hh: &SMatrix<f64, 6, 6>, ratio: f64) -> SMatrix<f64, 6, 6> {
    let mut keep = SMatrix::<f64, 6, 6>::zeros();
    for b in [0, 3] {
        let block: Mat3 = hh.fixed_view::<3, 3>(b, b).into_owned();
        let eig = block.symmetric_eigen();
        let top = eig.eigenvalues.max();
        let mut proj = Mat3::zeros();
        for k in 0..3 {
            if top > 0.0 && eig.eigenvalues[k] >= ratio * top {
                let v = eig.eigenvectors.column(k);
                proj += v * v.transpose();
            }
        }
        keep.fixed_view_mut::<3, 3>(b, b).copy_from(&proj);
    }
    keep
}

fn spd_inverse(a: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let (c, reg) = damped(a);
    (c.inverse(), reg)
}

fn spd_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, bool) {
    let (c, reg) = damped(a);
    (c.solve(b), reg)
}
