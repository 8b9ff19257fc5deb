//! Teammate detection from reflectivity, clustering, and Kalman trackers.

mod cluster;
mod tracker;

pub use cluster::{connected_components, euclidean_cluster, reflectivity_filter, reject_invalid, Cluster};
pub use tracker::{
    marker_measurement, tracker_predict, tracker_update, MeasurementSource, RawIndex, ReacquisitionGap, TrackError,
    TrackerKind, TrackerState, TrackerUpdate,
};

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::manifold::{Rotation, Vec3};
use crate::sensor_sim::{LidarPoint, LidarScan};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectParams {
    pub reflectivity_threshold: u8,
    pub cluster_tol: f64,
    pub min_pts: usize,
    pub max_pts: usize,
    pub size_min: [f64; 3],
    pub size_max: [f64; 3],
    /// Association gate around a tracker's prediction, m.
    pub gate: f64,
    /// Radius of the predicted region searched when no cluster matches, m.
    pub region_radius: f64,
    /// Scans a tracker may coast before it is dropped.
    pub max_coast: usize,
    pub meas_sigma: f64,
    pub accel_sigma: f64,
    pub init_vel_sigma: f64,
    /// Noise of the teammate-odometry fallback measurement, m.
    pub odometry_sigma: f64,
    /// Distance from the visible-cap centroid back to the marker center, m.
    pub marker_center_offset: f64,
    /// Trajectory window capacity.
    pub window: usize,
    /// Coast length (scans without detection) after which a re-detection
    /// is reported as a re-acquisition.
    pub reacquire_min_scans: usize,
    pub reacquire_radius: f64,
}

impl Default for DetectParams {
    fn default() -> Self {
        DetectParams {
            reflectivity_threshold: 200,
            cluster_tol: 0.3,
            min_pts: 3,
            max_pts: 2000,
            size_min: [0.05; 3],
            size_max: [0.8; 3],
            gate: 0.5,
            region_radius: 0.8,
            max_coast: 10,
            meas_sigma: 0.05,
            accel_sigma: 1.0,
            init_vel_sigma: 2.0,
            odometry_sigma: 0.1,
            marker_center_offset: 2.0 / 3.0 * 0.25,
            window: 100,
            reacquire_min_scans: 100,
            reacquire_radius: 2.0,
        }
    }
}

impl DetectParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.cluster_tol > 0.0 && self.gate > 0.0 && self.region_radius > 0.0) {
            return Err("cluster_tol, gate and region_radius must be positive".into());
        }
        if self.min_pts == 0 || self.min_pts > self.max_pts {
            return Err("need 1 <= min_pts <= max_pts".into());
        }
        if (0..3).any(|i| self.size_min[i] > self.size_max[i]) {
            return Err("size_min must not exceed size_max".into());
        }
        if !(self.meas_sigma > 0.0 && self.odometry_sigma > 0.0 && self.accel_sigma >= 0.0) {
            return Err("tracker noise sigmas must be positive".into());
        }
        if self.window < 3 {
            return Err("window must hold at least 3 entries".into());
        }
        Ok(())
    }
}

/// High-reflectivity clusters of drone size, in the body frame.
pub fn detect(scan: &LidarScan, params: &DetectParams) -> Vec<Cluster> {
    let hi: Vec<&LidarPoint> = cluster::bright_points(scan, params.reflectivity_threshold).collect();
    let pos: Vec<Vec3> = hi.iter().map(|p| p.pos_body).collect();
    let mut clusters = euclidean_cluster(&pos, params.cluster_tol, params.min_pts, params.max_pts);
    for c in &mut clusters {
        let mean_offset = c.members.iter().map(|&i| hi[i].t_offset).sum::<f64>() / c.members.len() as f64;
        c.lag = (scan.scan_period - mean_offset).max(0.0);
    }
    reject_invalid(clusters, &Vec3::from(params.size_min), &Vec3::from(params.size_max))
}

/// What a drone currently knows about a teammate, in its own global frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TeammateHint {
    pub pos: Vec3,
    pub vel: Vec3,
}

#[derive(Debug, Clone, Default)]
pub struct TrackStep {
    /// LiDAR detections of identified teammates, body frame.
    pub active: Vec<(u8, Vec3)>,
    pub reacquisitions: Vec<(u8, ReacquisitionGap)>,
    pub spawned: usize,
    pub killed: usize,
}

/// All trackers owned by one drone.
#[derive(Debug, Clone, Default)]
pub struct TrackerSet {
    trackers: Vec<TrackerState>,
    next_id: u32,
    last_time: Option<f64>,
}

impl TrackerSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn trackers(&self) -> &[TrackerState] {
        &self.trackers
    }

    pub fn teammate(&self, id: u8) -> Option<&TrackerState> {
        self.trackers.iter().find(|t| t.kind == TrackerKind::Teammate(id))
    }

    /// Turns a temporary tracker into the tracker of teammate `teammate`.
    pub fn promote(&mut self, tracker_id: u32, teammate: u8) -> bool {
        if self.teammate(teammate).is_some() {
            return false;
        }
        match self.trackers.iter_mut().find(|t| t.id == tracker_id && t.kind == TrackerKind::Temporary) {
            Some(t) => {
                t.kind = TrackerKind::Teammate(teammate);
                true
            }
            None => false,
        }
    }

    /// Predict, associate, update, spawn and prune for one scan.
    ///
    /// `raw` holds all scan points in the scan-end body frame and `hints`
    /// the teammates' self-reported states mapped into this drone's frame.
    #[allow(clippy::too_many_arguments)]
    pub fn step(
        &mut self,
        t: f64,
        clusters: &[Cluster],
        raw: &[Vec3],
        pose: (&Rotation, &Vec3),
        hints: &BTreeMap<u8, TeammateHint>,
        params: &DetectParams,
    ) -> TrackStep {
        let mut out = TrackStep::default();
        if let Some(t0) = self.last_time {
            let dt = t - t0;
            if dt > 0.0 {
                for tr in &mut self.trackers {
                    let v = match tr.kind {
                        TrackerKind::Teammate(id) => hints.get(&id).map(|h| h.vel).unwrap_or(tr.vel),
                        TrackerKind::Temporary => tr.vel,
                    };
                    if let Ok(next) = tracker_predict(tr, dt, Some(&v), params) {
                        *tr = next;
                    }
                }
            }
        }
        self.last_time = Some(t);

        // Teammates first, in id order, then temporaries by age.
        self.trackers.sort_by_key(|tr| match tr.kind {
            TrackerKind::Teammate(id) => (0, id as u32, tr.id),
            TrackerKind::Temporary => (1, 0, tr.id),
        });
        let mut taken = vec![false; clusters.len()];
        let mut index = RawIndex::new(raw);
        let mut kept = Vec::with_capacity(self.trackers.len());
        let (rot, trans) = pose;
        let detected: Vec<Vec3> = clusters.iter().map(|c| rot.apply(&marker_measurement(c, params)) + trans).collect();
        let predicted: Vec<(u32, Vec3)> = self.trackers.iter().map(|tr| (tr.id, tr.pos)).collect();
        for tr in self.trackers.drain(..) {
            let foreign: Vec<bool> = detected
                .iter()
                .map(|g| {
                    let own = (g - tr.pos).norm();
                    predicted.iter().any(|(id, p)| *id != tr.id && (g - p).norm() < own)
                })
                .collect();
            let fallback = match tr.kind {
                TrackerKind::Teammate(id) => hints.get(&id).map(|h| h.pos),
                TrackerKind::Temporary => None,
            };
            let up = tracker_update(&tr, clusters, &taken, &foreign, &mut index, pose, t, fallback.as_ref(), params);
            if let Some(i) = up.used_cluster {
                taken[i] = true;
            }
            if let TrackerKind::Teammate(id) = tr.kind {
                if let Some(g) = up.reacquisition_gap {
                    out.reacquisitions.push((id, g));
                }
                if let Some(b) = up.detection_body {
                    out.active.push((id, b));
                }
            }
            match up.state {
                Some(s) => kept.push(s),
                None => out.killed += 1,
            }
        }
        self.trackers = kept;

        for (i, g) in detected.iter().enumerate() {
            if taken[i] {
                continue;
            }
            let g = *g;
            if self.trackers.iter().any(|tr| (tr.pos - g).norm() <= params.gate) {
                continue;
            }
            self.trackers.push(TrackerState::spawn(self.next_id, g, t, params));
            self.next_id += 1;
            out.spawned += 1;
        }

        // Temporaries sitting on an identified teammate are duplicates.
        let mates: Vec<Vec3> = self
            .trackers
            .iter()
            .filter(|tr| matches!(tr.kind, TrackerKind::Teammate(_)))
            .map(|tr| tr.pos)
            .collect();
        let before = self.trackers.len();
        self.trackers
            .retain(|tr| tr.kind != TrackerKind::Temporary || mates.iter().all(|m| (m - tr.pos).norm() > params.gate));
        out.killed += before - self.trackers.len();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob(center: Vec3) -> Cluster {
        Cluster { centroid_body: center, extent: Vec3::repeat(0.3), point_count: 12, members: vec![], lag: 0.0 }
    }

    #[test]
    fn detection_lag_is_mean_time_to_scan_end() {
        let pt = |x: f64, t: f64| {
            let k = x.fract();
            LidarPoint { pos_body: Vec3::new(x, k, 0.5 * k), reflectivity: 255, t_offset: t }
        };
        let scan = LidarScan {
            points: vec![pt(5.0, 0.02), pt(5.1, 0.03), pt(5.2, 0.04), pt(9.0, 0.1), pt(9.1, 0.1), pt(9.2, 0.1)],
            scan_end_time: 1.0,
            scan_period: 0.1,
            drone_id: 1,
        };
        let mut lags: Vec<f64> = detect(&scan, &DetectParams::default()).iter().map(|c| c.lag).collect();
        lags.sort_by(f64::total_cmp);
        assert_eq!(lags.len(), 2);
        assert!(lags[0].abs() < 1e-12 && (lags[1] - 0.07).abs() < 1e-12, "{lags:?}");
    }

    #[test]
    fn unmatched_clusters_spawn_and_matched_ones_do_not() {
        let p = DetectParams { marker_center_offset: 0.0, ..DetectParams::default() };
        let mut set = TrackerSet::new();
        let id = Rotation::identity();
        let z = Vec3::zeros();
        let hints = BTreeMap::new();
        let s = set.step(0.0, &[blob(Vec3::new(3.0, 0.0, 0.0))], &[], (&id, &z), &hints, &p);
        assert_eq!(s.spawned, 1);
        let s = set.step(0.1, &[blob(Vec3::new(3.05, 0.0, 0.0)), blob(Vec3::new(-3.0, 0.0, 0.0))], &[], (&id, &z), &hints, &p);
        assert_eq!(s.spawned, 1);
        assert_eq!(set.trackers().len(), 2);
    }

    #[test]
    fn promoted_tracker_reports_active_observations() {
        let p = DetectParams { marker_center_offset: 0.0, ..DetectParams::default() };
        let mut set = TrackerSet::new();
        let id = Rotation::identity();
        let z = Vec3::zeros();
        let mut hints = BTreeMap::new();
        set.step(0.0, &[blob(Vec3::new(3.0, 0.0, 0.0))], &[], (&id, &z), &hints, &p);
        let tid = set.trackers()[0].id;
        assert!(set.promote(tid, 2));
        assert!(!set.promote(tid, 3));
        hints.insert(2, TeammateHint { pos: Vec3::new(3.0, 0.0, 0.0), vel: Vec3::zeros() });
        let s = set.step(0.1, &[blob(Vec3::new(3.0, 0.01, 0.0))], &[], (&id, &z), &hints, &p);
        assert_eq!(s.active, vec![(2, Vec3::new(3.0, 0.01, 0.0))]);
    }

    #[test]
    fn params_validate() {
        assert!(DetectParams::default().validate().is_ok());
        assert!(DetectParams { min_pts: 0, ..DetectParams::default() }.validate().is_err());
    }
}
