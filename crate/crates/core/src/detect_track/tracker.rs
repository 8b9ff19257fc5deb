use nalgebra::{Matrix3, Matrix3x6, Matrix6, Vector6};

use super::cluster::{connected_components, Cluster};
use super::DetectParams;
use crate::ident::TrajWindow;
use crate::kdtree::KdTree;
use crate::manifold::{Rotation, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackerKind {
    Temporary,
    Teammate(u8),
}

#[derive(Debug, Clone)]
pub struct TrackerState {
    pub id: u32,
    pub kind: TrackerKind,
    pub pos: Vec3,
    pub vel: Vec3,
    pub cov: Matrix6<f64>,
    pub steps_since_update: usize,
    /// Scans since the last LiDAR detection (odometry fallback does not reset it).
    pub steps_since_detection: usize,
    pub trajectory: TrajWindow,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TrackError {
    #[error("dt must be positive, got {0}")]
    BadDt(f64),
    #[error("teammate tracker {0} predicted without a teammate velocity")]
    MissingTeammateVelocity(u32),
}

/// Where an accepted position measurement came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasurementSource {
    Cluster,
    Recluster,
    Odometry,
}

#[derive(Debug, Clone)]
pub struct TrackerUpdate {
    /// `None` when the tracker was killed.
    pub state: Option<TrackerState>,
    pub used_cluster: Option<usize>,
    pub source: Option<MeasurementSource>,
    /// Measured object position in the body frame (LiDAR detections only).
    pub detection_body: Option<Vec3>,
    /// Predicted-vs-detected distance when a teammate is detected again
    /// after a long coast.
    pub reacquisition_gap: Option<ReacquisitionGap>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReacquisitionGap {
    pub gap: f64,
    pub coast_scans: usize,
}

/// Lazily built index over the raw scan for predicted-region re-clustering.
pub struct RawIndex<'a> {
    points: &'a [Vec3],
    tree: Option<KdTree>,
    /// Points examined by region queries, for instrumentation.
    pub touched: usize,
}

impl<'a> RawIndex<'a> {
    pub fn new(points: &'a [Vec3]) -> Self {
        RawIndex { points, tree: None, touched: 0 }
    }

    fn region(&mut self, center: &Vec3, radius: f64) -> Vec<Vec3> {
        let points = self.points;
        let tree = self.tree.get_or_insert_with(|| KdTree::build(points.to_vec()));
        tree.reset_visited();
        let mut idx = Vec::new();
        tree.radius_search(center, radius, &mut idx);
        self.touched += tree.visited();
        idx.sort_unstable();
        idx.into_iter().map(|i| points[i]).collect()
    }
}

impl TrackerState {
    pub fn spawn(id: u32, pos: Vec3, t: f64, params: &DetectParams) -> Self {
        let mut cov = Matrix6::zeros();
        let sp = params.meas_sigma * params.meas_sigma;
        let sv = params.init_vel_sigma * params.init_vel_sigma;
        for i in 0..3 {
            cov[(i, i)] = sp;
            cov[(i + 3, i + 3)] = sv;
        }
        let mut trajectory = TrajWindow::new(params.window);
        trajectory.push(t, pos);
        TrackerState {
            id,
            kind: TrackerKind::Temporary,
            pos,
            vel: Vec3::zeros(),
            cov,
            steps_since_update: 0,
            steps_since_detection: 0,
            trajectory,
        }
    }

    pub fn is_alive(&self, params: &DetectParams) -> bool {
        self.steps_since_update <= params.max_coast
    }
}

fn cv_transition(dt: f64) -> Matrix6<f64> {
    let mut f = Matrix6::identity();
    for i in 0..3 {
        f[(i, i + 3)] = dt;
    }
    f
}

/// White-acceleration process noise of the constant-velocity model.
fn cv_noise(dt: f64, sigma_acc: f64) -> Matrix6<f64> {
    let q = sigma_acc * sigma_acc;
    let mut m = Matrix6::zeros();
    for i in 0..3 {
        m[(i, i)] = q * dt.powi(3) / 3.0;
        m[(i, i + 3)] = q * dt * dt / 2.0;
        m[(i + 3, i)] = q * dt * dt / 2.0;
        m[(i + 3, i + 3)] = q * dt;
    }
    m
}

/// Constant-velocity prediction. Teammate trackers move with the velocity
/// the teammate reports, already rotated into this drone's global frame.
pub fn tracker_predict(
    tr: &TrackerState,
    dt: f64,
    teammate_vel_global: Option<&Vec3>,
    params: &DetectParams,
) -> Result<TrackerState, TrackError> {
    if !(dt > 0.0) {
        return Err(TrackError::BadDt(dt));
    }
    let mut out = tr.clone();
    match tr.kind {
        TrackerKind::Temporary => {
            out.pos += tr.vel * dt;
        }
        TrackerKind::Teammate(_) => {
            let v = teammate_vel_global.ok_or(TrackError::MissingTeammateVelocity(tr.id))?;
            out.vel = *v;
            out.pos += v * dt;
        }
    }
    let f = cv_transition(dt);
    out.cov = f * tr.cov * f.transpose() + cv_noise(dt, params.accel_sigma);
    out.steps_since_update += 1;
    out.steps_since_detection += 1;
    Ok(out)
}

fn kf_position_update(tr: &mut TrackerState, z: &Vec3, sigma: f64) {
    let h = Matrix3x6::<f64>::identity();
    let r = Matrix3::identity() * (sigma * sigma);
    let s = h * tr.cov * h.transpose() + r;
    let Some(s_inv) = s.try_inverse() else { return };
    let k = tr.cov * h.transpose() * s_inv;
    let x = Vector6::new(tr.pos.x, tr.pos.y, tr.pos.z, tr.vel.x, tr.vel.y, tr.vel.z);
    let innov = z - tr.pos;
    let x = x + k * innov;
    tr.pos = Vec3::new(x[0], x[1], x[2]);
    tr.vel = Vec3::new(x[3], x[4], x[5]);
    // Joseph form keeps the covariance symmetric positive-definite.
    let ikh = Matrix6::identity() - k * h;
    tr.cov = ikh * tr.cov * ikh.transpose() + k * r * k.transpose();
    tr.cov = (tr.cov + tr.cov.transpose()) * 0.5;
}

/// Body-frame measurement of a marker cluster: the centroid of the visible
/// cap pushed back along the viewing ray toward the sphere center.
pub fn marker_measurement(c: &Cluster, params: &DetectParams) -> Vec3 {
    let d = c.centroid_body.norm();
    if d < 1e-9 {
        return c.centroid_body;
    }
    c.centroid_body * ((d + params.marker_center_offset) / d)
}

fn size_ok(c: &Cluster, params: &DetectParams) -> bool {
    (0..3).all(|i| c.extent[i] >= params.size_min[i] && c.extent[i] <= params.size_max[i])
}

/// One association/update step.
///
/// `clusters` are valid detections in the body frame, `taken` marks those
/// already claimed by other trackers this scan, `foreign` those closer to
/// another tracker's prediction (never counted as a re-acquisition of this
/// one), `raw` indexes all scan
/// points, and `self_pose` maps body to global. `fallback` is the teammate's
/// self-reported position mapped into this drone's global frame.
#[allow(clippy::too_many_arguments)]
pub fn tracker_update(
    tr: &TrackerState,
    clusters: &[Cluster],
    taken: &[bool],
    foreign: &[bool],
    raw: &mut RawIndex<'_>,
    self_pose: (&Rotation, &Vec3),
    t: f64,
    fallback: Option<&Vec3>,
    params: &DetectParams,
) -> TrackerUpdate {
    let (rot, trans) = self_pose;
    let to_global = |b: &Vec3| rot.apply(b) + trans;
    let mut st = tr.clone();
    // The marker kept moving between its sampling and the scan end.
    let measure = |c: &Cluster| marker_measurement(c, params) + rot.apply_inverse(&(tr.vel * c.lag));
    let mut out = TrackerUpdate { state: None, used_cluster: None, source: None, detection_body: None, reacquisition_gap: None };

    // Nearest cluster within the gate; ties go to the larger cluster.
    let mut best: Option<(usize, f64)> = None;
    let mut nearest_any = f64::INFINITY;
    for (i, c) in clusters.iter().enumerate() {
        if taken.get(i).copied().unwrap_or(false) {
            continue;
        }
        let d = (to_global(&measure(c)) - st.pos).norm();
        if !foreign.get(i).copied().unwrap_or(false) {
            nearest_any = nearest_any.min(d);
        }
        if d > params.gate {
            continue;
        }
        let better = match best {
            None => true,
            Some((j, bd)) => d < bd || (d == bd && c.point_count > clusters[j].point_count),
        };
        if better {
            best = Some((i, d));
        }
    }

    let long_coast = matches!(st.kind, TrackerKind::Teammate(_)) && st.steps_since_detection >= params.reacquire_min_scans;
    if long_coast && nearest_any <= params.reacquire_radius {
        out.reacquisition_gap = Some(ReacquisitionGap { gap: nearest_any, coast_scans: st.steps_since_detection });
    }

    let detection = if let Some((i, _)) = best {
        out.used_cluster = Some(i);
        Some((measure(&clusters[i]), MeasurementSource::Cluster))
    } else {
        // Re-cluster raw points in the predicted region.
        let center = rot.apply_inverse(&(st.pos - trans));
        let region = raw.region(&center, params.region_radius);
        let found = if region.len() >= params.min_pts {
            let tree = KdTree::build(region.clone());
            connected_components(&tree, params.cluster_tol)
                .into_iter()
                .filter(|m| (params.min_pts..=params.max_pts).contains(&m.len()))
                .map(|m| Cluster::from_members(&region, m))
                .filter(|c| size_ok(c, params))
                .map(|c| (marker_measurement(&c, params), c.point_count))
                .min_by(|a, b| {
                    let da = (a.0 - center).norm();
                    let db = (b.0 - center).norm();
                    da.total_cmp(&db).then(b.1.cmp(&a.1))
                })
        } else {
            None
        };
        found.map(|(m, _)| (m, MeasurementSource::Recluster))
    };

    match detection {
        Some((body, src)) => {
            let g = to_global(&body);
            if long_coast && out.reacquisition_gap.is_none() {
                out.reacquisition_gap = Some(ReacquisitionGap { gap: (g - st.pos).norm(), coast_scans: st.steps_since_detection });
            }
            kf_position_update(&mut st, &g, params.meas_sigma);
            st.steps_since_update = 0;
            st.steps_since_detection = 0;
            st.trajectory.push(t, st.pos);
            out.source = Some(src);
            out.detection_body = Some(body);
        }
        None => {
            if let (TrackerKind::Teammate(_), Some(p)) = (st.kind, fallback) {
                kf_position_update(&mut st, p, params.odometry_sigma);
                st.steps_since_update = 0;
                out.source = Some(MeasurementSource::Odometry);
            }
        }
    }
    if st.is_alive(params) {
        out.state = Some(st);
    }
    out
}
