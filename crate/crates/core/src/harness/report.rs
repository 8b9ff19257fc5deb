//! Run summary, metrics and the per-scan CSV.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use super::config::{Mode, Preset};
use crate::manifold::{so3_log, Rotation, Vec3};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("no estimates to evaluate")]
pub struct EmptyInput;

/// Root-mean-square position error of timestamped estimates against the
/// ground truth evaluated at the same times. No alignment is applied.
pub fn compute_rmse<F: Fn(f64) -> Vec3>(est: &[(f64, Vec3)], gt: F) -> Result<f64, EmptyInput> {
    if est.is_empty() {
        return Err(EmptyInput);
    }
    let sum: f64 = est.iter().map(|(t, p)| (p - gt(*t)).norm_squared()).sum();
    Ok((sum / est.len() as f64).sqrt())
}

/// Rotation error (degrees) and translation error (m) between an estimated
/// and a true rigid transform.
pub fn compute_extrinsic_error(est: (&Rotation, &Vec3), truth: (&Rotation, &Vec3)) -> (f64, f64) {
    (est.0.angle_to(truth.0).to_degrees(), (est.1 - truth.1).norm())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExtrinsicSample {
    pub t: f64,
    pub rot_err_deg: f64,
    pub pos_err: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExtrinsicReport {
    pub teammate: u8,
    pub init_time: Option<f64>,
    pub init_rot_err_deg: Option<f64>,
    pub init_pos_err: Option<f64>,
    pub final_rot_err_deg: Option<f64>,
    pub final_pos_err: Option<f64>,
    pub series: Vec<ExtrinsicSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentRecord {
    pub t: f64,
    pub teammate: u8,
    /// The labelled tracker was following that teammate.
    pub correct: bool,
    pub initialized: bool,
    pub rot_err_deg: f64,
    pub pos_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReacqRecord {
    pub t: f64,
    pub teammate: u8,
    pub gap: f64,
    pub coast_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DroneReport {
    pub id: u8,
    pub mutual_obs: bool,
    pub scans: usize,
    pub rmse: f64,
    pub max_error: f64,
    pub final_error: f64,
    pub final_rot_err_deg: f64,
    pub gravity_norm: f64,
    pub bytes_per_s: f64,
    pub msgs_per_s: f64,
    pub map_points: usize,
    pub extrinsics: Vec<ExtrinsicReport>,
    pub identifications: Vec<IdentRecord>,
    pub reacquisitions: Vec<ReacqRecord>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub update_mean_ms: f64,
    pub update_p95_ms: f64,
    pub update_max_ms: f64,
    pub scan_mean_ms: f64,
    pub scan_max_ms: f64,
    pub wall_s: f64,
}

impl TimingStats {
    pub fn from_samples(update_s: &[f64], scan_s: &[f64], wall_s: f64) -> Self {
        let ms = |v: &[f64]| {
            let mut v: Vec<f64> = v.iter().map(|x| x * 1e3).collect();
            v.sort_by(f64::total_cmp);
            v
        };
        let u = ms(update_s);
        let s = ms(scan_s);
        let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
        let pct = |v: &[f64], p: f64| if v.is_empty() { 0.0 } else { v[((v.len() - 1) as f64 * p).round() as usize] };
        TimingStats {
            update_mean_ms: mean(&u),
            update_p95_ms: pct(&u, 0.95),
            update_max_ms: u.last().copied().unwrap_or(0.0),
            scan_mean_ms: mean(&s),
            scan_max_ms: s.last().copied().unwrap_or(0.0),
            wall_s,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BusSummary {
    pub delivered: u64,
    pub dropped: u64,
    pub corrupt: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub seed: u64,
    pub mode: Mode,
    pub preset: Preset,
    pub duration: f64,
    pub threads: usize,
    pub drones: Vec<DroneReport>,
    pub timing: TimingStats,
    pub bus: BusSummary,
}

impl RunReport {
    pub fn drone(&self, id: u8) -> Option<&DroneReport> {
        self.drones.iter().find(|d| d.id == id)
    }

    /// Human-readable summary.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "seed {} | {:?} | {:?} | {:.1} s | schema v{}",
            self.seed, self.preset, self.mode, self.duration, self.schema_version
        );
        for d in &self.drones {
            let _ = writeln!(
                s,
                "drone {}: rmse {:.3} m, max {:.3} m, final {:.3} m / {:.2} deg, {:.0} B/s",
                d.id, d.rmse, d.max_error, d.final_error, d.final_rot_err_deg, d.bytes_per_s
            );
            for e in &d.extrinsics {
                match (e.init_time, e.final_rot_err_deg, e.final_pos_err) {
                    (Some(t0), Some(r), Some(p)) => {
                        let _ = writeln!(s, "  ext {}: init {:.1} s, final {:.2} deg {:.3} m", e.teammate, t0, r, p);
                    }
                    _ => {
                        let _ = writeln!(s, "  ext {}: not initialized", e.teammate);
                    }
                }
            }
            for r in &d.reacquisitions {
                let _ = writeln!(s, "  reacquired {} at {:.1} s after {:.1} s: gap {:.3} m", r.teammate, r.t, r.coast_s, r.gap);
            }
        }
        let t = &self.timing;
        let _ = writeln!(
            s,
            "update mean {:.1} ms, p95 {:.1} ms, max {:.1} ms; wall {:.1} s",
            t.update_mean_ms, t.update_p95_ms, t.update_max_ms, t.wall_s
        );
        s
    }
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub t: f64,
    pub drone: u8,
    pub est_rot: Rotation,
    pub est_pos: Vec3,
    pub gt_rot: Rotation,
    pub gt_pos: Vec3,
    pub point_residuals: usize,
    pub active_residuals: usize,
    pub passive_residuals: usize,
    pub iterations: usize,
    pub map_points: usize,
    pub update_ms: f64,
    pub scan_ms: f64,
}

pub fn csv_header(timing: bool) -> String {
    let mut h = String::from(
        "t,drone,est_x,est_y,est_z,est_rx,est_ry,est_rz,gt_x,gt_y,gt_z,gt_rx,gt_ry,gt_rz,pos_err,rot_err_deg,point_res,active_res,passive_res,iterations,map_points",
    );
    if timing {
        h.push_str(",update_ms,scan_ms");
    }
    h.push('\n');
    h
}

pub fn csv_line(r: &CsvRow, timing: bool) -> String {
    let rv = |rot: &Rotation| so3_log(rot).unwrap_or_else(|_| Vec3::zeros());
    let (er, gr) = (rv(&r.est_rot), rv(&r.gt_rot));
    let mut s = format!(
        "{:.3},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.4},{},{},{},{},{}",
        r.t,
        r.drone,
        r.est_pos.x,
        r.est_pos.y,
        r.est_pos.z,
        er.x,
        er.y,
        er.z,
        r.gt_pos.x,
        r.gt_pos.y,
        r.gt_pos.z,
        gr.x,
        gr.y,
        gr.z,
        (r.est_pos - r.gt_pos).norm(),
        r.est_rot.angle_to(&r.gt_rot).to_degrees(),
        r.point_residuals,
        r.active_residuals,
        r.passive_residuals,
        r.iterations,
        r.map_points
    );
    if timing {
        let _ = write!(s, ",{:.3},{:.3}", r.update_ms, r.scan_ms);
    }
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(t: f64) -> Vec3 {
        Vec3::new(t, 2.0 * t, -t)
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(compute_rmse(&[], line), Err(EmptyInput));
        let exact: Vec<(f64, Vec3)> = (0..50).map(|k| (k as f64 * 0.1, line(k as f64 * 0.1))).collect();
        assert_eq!(compute_rmse(&exact, line).unwrap(), 0.0);
        let off = Vec3::new(0.03, 0.0, 0.04);
        let shifted: Vec<(f64, Vec3)> = exact.iter().map(|(t, p)| (*t, p + off)).collect();
        assert!((compute_rmse(&shifted, line).unwrap() - 0.05).abs() < 1e-12);
    }

    #[test]
    fn rmse_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let est: Vec<(f64, Vec3)> = (0..500)
            .map(|k| {
                let t = k as f64 * 0.1;
                (t, line(t) + Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            })
            .collect();
        let mut acc = 0.0;
        for (t, p) in &est {
            let g = line(*t);
            acc += (p.x - g.x).powi(2) + (p.y - g.y).powi(2) + (p.z - g.z).powi(2);
        }
        let brute = (acc / est.len() as f64).sqrt();
        assert!((compute_rmse(&est, line).unwrap() - brute).abs() < 1e-12);
    }

    #[test]
    fn extrinsic_error_of_identity_offset() {
        let r = Rotation::rot_z(0.1);
        let (a, p) = compute_extrinsic_error((&r, &Vec3::x()), (&Rotation::identity(), &Vec3::zeros()));
        assert!((a - 0.1f64.to_degrees()).abs() < 1e-9);
        assert!((p - 1.0).abs() < 1e-15);
        let five = Rotation::rot_z(5f64.to_radians());
        let (a, p) = compute_extrinsic_error((&five, &Vec3::x()), (&Rotation::identity(), &Vec3::x()));
        assert!((a - 5.0).abs() < 1e-9 && p == 0.0);
        assert_eq!(compute_extrinsic_error((&five, &Vec3::x()), (&five, &Vec3::x())), (0.0, 0.0));
    }

    #[test]
    fn timing_percentiles() {
        let v: Vec<f64> = (1..=100).map(|i| i as f64 * 1e-3).collect();
        let t = TimingStats::from_samples(&v, &v, 1.0);
        assert!((t.update_max_ms - 100.0).abs() < 1e-9);
        assert!((t.update_p95_ms - 95.0).abs() < 1.01);
    }

    #[test]
    fn csv_columns_match_header() {
        let row = CsvRow {
            t: 1.0,
            drone: 1,
            est_rot: Rotation::identity(),
            est_pos: Vec3::zeros(),
            gt_rot: Rotation::identity(),
            gt_pos: Vec3::zeros(),
            point_residuals: 1,
            active_residuals: 0,
            passive_residuals: 0,
            iterations: 2,
            map_points: 3,
            update_ms: 0.5,
            scan_ms: 1.0,
        };
        for timing in [false, true] {
            let h = csv_header(timing).trim().split(',').count();
            assert_eq!(csv_line(&row, timing).trim().split(',').count(), h);
        }
    }
}
