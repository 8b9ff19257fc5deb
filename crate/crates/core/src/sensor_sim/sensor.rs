use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::trajectory::TrueTrajectory;
use super::world::{Plane, WorldModel};
use super::SimError;
use crate::manifold::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldOfView {
    /// Full horizontal circle between two elevation bounds, degrees.
    Full360 { v_min_deg: f64, v_max_deg: f64 },
    /// Rectangular pyramid around the body +x axis, full angles in degrees.
    Pyramid { h_deg: f64, v_deg: f64 },
}

impl FieldOfView {
    pub fn contains(&self, dir_body: &Vec3) -> bool {
        let d = dir_body.normalize();
        let el = d.z.asin().to_degrees();
        match *self {
            FieldOfView::Full360 { v_min_deg, v_max_deg } => (v_min_deg..=v_max_deg).contains(&el),
            FieldOfView::Pyramid { h_deg, v_deg } => {
                let az = d.y.atan2(d.x).to_degrees();
                az.abs() <= 0.5 * h_deg && el.abs() <= 0.5 * v_deg
            }
        }
    }

    /// Random direction for packet `packet` of `packets`. The 360-degree
    /// pattern sweeps azimuth sectors in packet order like a spinning head;
    /// the pyramid pattern covers the whole FoV in every packet.
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R, packet: usize, packets: usize) -> Vec3 {
        let (az, el) = match *self {
            FieldOfView::Full360 { v_min_deg, v_max_deg } => {
                let (lo, hi) = (v_min_deg.to_radians().sin(), v_max_deg.to_radians().sin());
                let sector = std::f64::consts::TAU / packets as f64;
                let az = (packet as f64 + rng.gen_range(0.0..1.0)) * sector;
                (az, rng.gen_range(lo..hi).asin())
            }
            FieldOfView::Pyramid { h_deg, v_deg } => {
                let (h, v) = (0.5 * h_deg.to_radians(), 0.5 * v_deg.to_radians());
                (rng.gen_range(-h..h), rng.gen_range(-v..v))
            }
        };
        let (se, ce) = el.sin_cos();
        let (sa, ca) = az.sin_cos();
        Vec3::new(ce * ca, ce * sa, se)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorModel {
    pub fov: FieldOfView,
    pub max_range: f64,
    #[serde(default = "default_min_range")]
    pub min_range: f64,
    pub points_per_scan: usize,
    pub scan_period: f64,
    pub range_noise_sigma: f64,
    pub imu_rate: f64,
    /// Gyro white-noise density, rad/s/sqrt(Hz).
    pub gyro_noise: f64,
    /// Accelerometer white-noise density, m/s^2/sqrt(Hz).
    pub accel_noise: f64,
    /// Gyro bias random walk, rad/s/sqrt(s).
    pub gyro_bias_walk: f64,
    /// Accelerometer bias random walk, m/s^2/sqrt(s).
    pub accel_bias_walk: f64,
    /// Scale the maximum range by sqrt(reflectivity / 255), so dark
    /// surfaces drop out long before bright ones.
    #[serde(default)]
    pub reflectivity_range: bool,
}

fn default_min_range() -> f64 {
    0.1
}

impl SensorModel {
    /// 360-degree spinning-style sensor (-7..52 deg elevation).
    pub fn full360() -> Self {
        SensorModel {
            fov: FieldOfView::Full360 { v_min_deg: -7.0, v_max_deg: 52.0 },
            max_range: 40.0,
            min_range: 0.1,
            points_per_scan: 12000,
            scan_period: 0.1,
            range_noise_sigma: 0.02,
            imu_rate: 200.0,
            gyro_noise: 0.003,
            accel_noise: 0.04,
            gyro_bias_walk: 1e-4,
            accel_bias_walk: 2e-3,
            reflectivity_range: false,
        }
    }

    /// Narrow pyramid sensor, 70.4 x 77.2 degrees.
    pub fn pyramid() -> Self {
        SensorModel {
            fov: FieldOfView::Pyramid { h_deg: 70.4, v_deg: 77.2 },
            points_per_scan: 6000,
            ..Self::full360()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.scan_period > 0.0) {
            return Err(SimError::InvalidSensor("scan_period must be positive".into()));
        }
        if self.imu_rate < 10.0 / self.scan_period {
            return Err(SimError::InvalidSensor("imu_rate must be at least 10x the scan rate".into()));
        }
        if !(self.max_range > self.min_range) || self.min_range < 0.0 {
            return Err(SimError::InvalidSensor("need 0 <= min_range < max_range".into()));
        }
        let noise = [self.range_noise_sigma, self.gyro_noise, self.accel_noise, self.gyro_bias_walk, self.accel_bias_walk];
        if noise.iter().any(|s| !(*s >= 0.0)) {
            return Err(SimError::InvalidSensor("noise sigmas must be non-negative".into()));
        }
        Ok(())
    }

    pub fn noiseless(mut self) -> Self {
        self.range_noise_sigma = 0.0;
        self.gyro_noise = 0.0;
        self.accel_noise = 0.0;
        self.gyro_bias_walk = 0.0;
        self.accel_bias_walk = 0.0;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    pub gyro: Vec3,
    pub accel: Vec3,
    pub timestamp: f64,
}

impl ImuSample {
    pub fn is_finite(&self) -> bool {
        self.gyro.iter().chain(self.accel.iter()).all(|x| x.is_finite()) && self.timestamp.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LidarPoint {
    pub pos_body: Vec3,
    pub reflectivity: u8,
    /// Sample time measured from the start of the scan window, s.
    pub t_offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LidarScan {
    pub points: Vec<LidarPoint>,
    pub scan_end_time: f64,
    pub scan_period: f64,
    pub drone_id: u8,
}

impl LidarScan {
    pub fn scan_start_time(&self) -> f64 {
        self.scan_end_time - self.scan_period
    }
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    let n: f64 = StandardNormal.sample(rng);
    n * sigma
}

fn gaussian3<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> Vec3 {
    Vec3::new(gaussian(rng, sigma), gaussian(rng, sigma), gaussian(rng, sigma))
}

/// Synthesizes one IMU sample from the true trajectory. `gravity_world` is
/// the gravity vector itself, e.g. `(0, 0, -9.81)`.
pub fn synth_imu<R: Rng + ?Sized>(
    traj: &TrueTrajectory,
    t: f64,
    bias_g: &Vec3,
    bias_a: &Vec3,
    gravity_world: &Vec3,
    model: &SensorModel,
    rng: &mut R,
) -> Result<ImuSample, SimError> {
    let k = traj.eval(t)?;
    let root_rate = model.imu_rate.sqrt();
    let gyro = k.omega_body + bias_g + gaussian3(rng, model.gyro_noise * root_rate);
    let accel = k.rot.apply_inverse(&(k.acc - gravity_world)) + bias_a + gaussian3(rng, model.accel_noise * root_rate);
    Ok(ImuSample { gyro, accel, timestamp: t })
}

/// Number of distinct sample instants per scan. Rays are grouped into
/// packets that share one timestamp and pose.
pub const PACKETS_PER_SCAN: usize = 50;

/// Keeps the planes whose bounding sphere meets the cone spanned by `dirs`.
fn cone_cull<'a>(planes: &[&'a Plane], origin: &Vec3, dirs: &[Vec3], out: &mut Vec<&'a Plane>) {
    out.clear();
    let sum: Vec3 = dirs.iter().sum();
    if dirs.is_empty() || sum.norm() < 1e-9 {
        out.extend_from_slice(planes);
        return;
    }
    let axis = sum.normalize();
    let min_cos = dirs.iter().map(|d| d.dot(&axis)).fold(1.0f64, f64::min);
    let half = min_cos.clamp(-1.0, 1.0).acos();
    for p in planes {
        let v = p.point - origin;
        let dist = v.norm();
        let r = p.bounding_radius();
        if !r.is_finite() || dist <= r {
            out.push(p);
            continue;
        }
        let angle = (v.dot(&axis) / dist).clamp(-1.0, 1.0).acos();
        if angle - (r / dist).asin() <= half + 1e-6 {
            out.push(p);
        }
    }
}

/// Ray-casts one scan of `self_id` over the window `[t0, t1]`.
pub fn synth_scan<R: Rng + ?Sized>(
    world: &WorldModel,
    trajs: &[TrueTrajectory],
    self_id: u8,
    window: (f64, f64),
    model: &SensorModel,
    rng: &mut R,
) -> Result<LidarScan, SimError> {
    let me = trajs.iter().find(|t| t.drone_id == self_id).ok_or(SimError::UnknownDrone(self_id))?;
    let (t0, t1) = window;
    let period = t1 - t0;
    if (period - model.scan_period).abs() > 1e-9 {
        return Err(SimError::InvalidSensor(format!(
            "scan window {period} s differs from the scan period {} s",
            model.scan_period
        )));
    }
    let start = me.eval(t0)?;
    me.eval(t1)?;
    let margin = period * start.vel.norm() + 1.0;
    let planes = world.planes_near(&start.pos, model.max_range + margin);

    let n = model.points_per_scan;
    let mut points = Vec::with_capacity(n);
    let mut markers = Vec::with_capacity(trajs.len());
    let mut dirs = Vec::new();
    let mut visible = Vec::new();
    for packet in 0..PACKETS_PER_SCAN {
        let lo = packet * n / PACKETS_PER_SCAN;
        let hi = (packet + 1) * n / PACKETS_PER_SCAN;
        let t_offset = (packet as f64 + 0.5) * period / PACKETS_PER_SCAN as f64;
        let t = t0 + t_offset;
        let pose = me.eval_unchecked(t);
        markers.clear();
        markers.extend(
            trajs
                .iter()
                .filter(|o| o.drone_id != self_id)
                .map(|o| o.eval_unchecked(t.min(o.end_time)).pos),
        );
        dirs.clear();
        dirs.extend((lo..hi).map(|_| model.fov.sample(rng, packet, PACKETS_PER_SCAN)));
        let world_dirs: Vec<Vec3> = dirs.iter().map(|d| pose.rot.apply(d)).collect();
        cone_cull(&planes, &pose.pos, &world_dirs, &mut visible);
        for (dir_body, dir) in dirs.iter().zip(&world_dirs) {
            let noise = gaussian(rng, model.range_noise_sigma).clamp(-3.0 * model.range_noise_sigma, 3.0 * model.range_noise_sigma);
            let Some(hit) = world.cast(&visible, &markers, &pose.pos, dir, model.max_range) else {
                continue;
            };
            if hit.range < model.min_range {
                continue;
            }
            if model.reflectivity_range && hit.range > model.max_range * (hit.reflectivity as f64 / 255.0).sqrt() {
                continue;
            }
            points.push(LidarPoint {
                pos_body: dir_body * (hit.range + noise),
                reflectivity: hit.reflectivity,
                t_offset,
            });
        }
    }
    Ok(LidarScan { points, scan_end_time: t1, scan_period: period, drone_id: self_id })
}
