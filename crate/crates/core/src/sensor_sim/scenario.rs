//! Scenario construction from a run configuration: world presets, default
//! trajectories and per-drone sensors.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use std::f64::consts::TAU;

use super::sensor::SensorModel;
use super::trajectory::{Keyframe, TrajectorySpec, TrueTrajectory, Wiggle};
use super::world::{box_planes, Plane, WorldModel};
use super::SimError;
use crate::harness::{Preset, ScenarioConfig, SensorPreset};
use crate::manifold::Vec3;
use crate::rng::{stream, tag};

/// Everything the simulator needs about one drone.
#[derive(Debug, Clone)]
pub struct DroneSetup {
    pub id: u8,
    pub trajectory: TrueTrajectory,
    pub sensor: SensorModel,
    /// Initial true IMU biases.
    pub bias_gyro: Vec3,
    pub bias_acc: Vec3,
    /// Whether the filter fuses mutual observations.
    pub mutual_obs: bool,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub world: WorldModel,
    pub drones: Vec<DroneSetup>,
    /// Gravity in the world frame.
    pub gravity: Vec3,
    pub duration: f64,
}

impl Scenario {
    pub fn trajectories(&self) -> Vec<TrueTrajectory> {
        self.drones.iter().map(|d| d.trajectory.clone()).collect()
    }
}

pub const GRAVITY: f64 = 9.81;

struct PresetOut {
    planes: Vec<Plane>,
    trajectories: Vec<TrajectorySpec>,
    sensors: Vec<SensorModel>,
}

pub fn make_scenario(cfg: &ScenarioConfig) -> Result<Scenario, SimError> {
    let n = cfg.drone_count();
    if n == 0 || n > 32 {
        return Err(SimError::InvalidScenario(format!("drone count {n} must be in 1..=32")));
    }
    if !(cfg.duration > 0.0) {
        return Err(SimError::InvalidScenario("duration must be positive".into()));
    }
    let preset = build_preset(cfg.world.preset, n, cfg.seed)?;
    let mut world = WorldModel::new(preset.planes);
    world.planes.extend(cfg.world.planes.iter().cloned());
    world.decoys = cfg.world.decoys.clone();
    world.drone_marker_radius = cfg.world.marker_radius;
    world.marker_reflectivity = cfg.world.marker_reflectivity;
    world.incidence_attenuation = cfg.world.incidence_attenuation;
    world.validate()?;

    let end = cfg.duration + 1.0;
    let mut drones = Vec::with_capacity(n);
    for k in 0..n {
        let id = (k + 1) as u8;
        let dc = cfg.drones.get(k);
        let spec = dc.and_then(|d| d.trajectory.clone()).unwrap_or_else(|| preset.trajectories[k].clone());
        let trajectory = TrueTrajectory::new(id, spec, end)?;
        let mut sensor = match dc.and_then(|d| d.sensor_model.clone()) {
            Some(m) => m,
            None => match dc.and_then(|d| d.sensor) {
                Some(SensorPreset::Full360) => SensorModel::full360(),
                Some(SensorPreset::Pyramid) => SensorModel::pyramid(),
                None => preset.sensors[k].clone(),
            },
        };
        if let Some(p) = dc.and_then(|d| d.points_per_scan) {
            sensor.points_per_scan = p;
        }
        cfg.imu.apply(&mut sensor);
        sensor.validate()?;
        let mut rng = stream(cfg.seed, &[tag::BIAS, id as u64]);
        let mut draw = |s: f64| {
            Vec3::from_fn(|_, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * s
            })
        };
        let bias_gyro = draw(cfg.imu.gyro_bias_sigma);
        let bias_acc = draw(cfg.imu.accel_bias_sigma);
        let mutual_obs = dc.and_then(|d| d.mutual_obs).unwrap_or(cfg.mode.mutual_obs());
        drones.push(DroneSetup { id, trajectory, sensor, bias_gyro, bias_acc, mutual_obs });
    }
    Ok(Scenario { world, drones, gravity: Vec3::new(0.0, 0.0, -GRAVITY), duration: cfg.duration })
}

fn build_preset(preset: Preset, n: usize, seed: u64) -> Result<PresetOut, SimError> {
    let out = match preset {
        Preset::Empty => PresetOut {
            planes: Vec::new(),
            trajectories: (0..n).map(|k| TrajectorySpec::hover([3.0 * k as f64, 0.0, 1.5], 0.0)).collect(),
            sensors: vec![SensorModel::full360(); n],
        },
        Preset::Room => room(n, seed),
        Preset::Wall => wall(n, seed)?,
        Preset::Corridor => corridor(n, seed)?,
        Preset::Exploration => exploration(n, seed)?,
    };
    Ok(out)
}

fn vertical(center: Vec3, along: Vec3, width: f64, height: f64, refl: u8) -> Plane {
    Plane::rect(center, along, Vec3::z(), width, height, refl)
}

fn floor(center: Vec3, sx: f64, sy: f64, refl: u8) -> Plane {
    Plane::rect(center, Vec3::x(), Vec3::y(), sx, sy, refl)
}

fn ceiling(center: Vec3, sx: f64, sy: f64, refl: u8) -> Plane {
    Plane::rect(center, Vec3::y(), Vec3::x(), sy, sx, refl)
}

/// Wiggles with per-axis periods drawn from `rng`, switched on at `t_on`.
fn random_wiggles<R: Rng>(rng: &mut R, amp_xy: f64, amp_z: f64, t_on: f64, t_off: f64) -> (Vec<Wiggle>, Vec<Wiggle>) {
    let scale = rng.gen_range(0.85..1.15);
    let mut axis = |a: [f64; 3], lo: f64, hi: f64| Wiggle {
        amp: a,
        period: rng.gen_range(lo..hi),
        phase_deg: rng.gen_range(0.0..360.0),
        t_on,
        t_off,
        ramp: 2.0,
    };
    let w = vec![
        axis([amp_xy * scale, 0.0, 0.0], 5.0, 8.0),
        axis([0.0, amp_xy * scale, 0.0], 6.0, 9.5),
        axis([0.0, 0.0, amp_z], 4.0, 7.0),
    ];
    let yaw = vec![axis([25.0, 0.0, 0.0], 7.0, 11.0)];
    (w, yaw)
}

/// 24 x 24 x 8 m hall with pillars, shelves and slanted panels.
fn room_planes() -> Vec<Plane> {
    let (x, y) = (Vec3::x(), Vec3::y());
    let mut p = vec![
        floor(Vec3::new(0.0, 0.0, 0.0), 24.0, 24.0, 60),
        ceiling(Vec3::new(0.0, 0.0, 8.0), 24.0, 24.0, 50),
        vertical(Vec3::new(12.0, 0.0, 4.0), y, 24.0, 8.0, 90),
        vertical(Vec3::new(-12.0, 0.0, 4.0), -y, 24.0, 8.0, 80),
        vertical(Vec3::new(0.0, 12.0, 4.0), -x, 24.0, 8.0, 100),
        vertical(Vec3::new(0.0, -12.0, 4.0), x, 24.0, 8.0, 70),
    ];
    let boxes = [
        ([-8.0, -8.0, 0.0], [-6.0, -5.0, 3.0]),
        ([5.0, -9.0, 0.0], [8.0, -7.0, 2.0]),
        ([6.0, 4.0, 0.0], [7.5, 7.0, 4.0]),
        ([-9.0, 5.0, 0.0], [-7.0, 8.0, 1.5]),
        ([-3.0, 8.0, 0.0], [1.0, 9.5, 2.5]),
        ([8.5, -2.0, 0.0], [9.5, -1.0, 6.0]),
        ([-6.5, -1.0, 0.0], [-5.5, 0.5, 5.0]),
        ([1.0, -7.5, 0.0], [2.5, -6.0, 1.2]),
    ];
    for (i, (lo, hi)) in boxes.iter().enumerate() {
        p.extend(box_planes(Vec3::from(*lo), Vec3::from(*hi), 110 + 7 * i as u8, true));
    }
    let tilt = |c: [f64; 3], u: Vec3, v: Vec3, refl| Plane::rect(Vec3::from(c), u, v.normalize(), 3.0, 2.0, refl);
    p.push(tilt([10.0, 8.0, 2.0], Vec3::new(-1.0, 1.0, 0.0).normalize(), Vec3::new(0.5, 0.5, 1.0), 120));
    p.push(tilt([-10.0, -9.0, 3.0], Vec3::new(1.0, -1.0, 0.0).normalize(), Vec3::new(-0.6, -0.6, 1.0), 130));
    p
}

fn room(n: usize, seed: u64) -> PresetOut {
    let trajectories = (0..n)
        .map(|k| {
            let mut rng = stream(seed, &[tag::TRAJECTORY, k as u64]);
            let ang = TAU * k as f64 / n as f64 + 0.3;
            let r = if n == 1 { 0.0 } else { 3.0 };
            let yaw = (ang + std::f64::consts::PI).to_degrees() + rng.gen_range(-20.0..20.0);
            let (wiggles, yaw_wiggles) = random_wiggles(&mut rng, 1.0, 0.1, 0.8, f64::INFINITY);
            TrajectorySpec {
                start: [r * ang.cos(), r * ang.sin(), 1.5],
                start_yaw_deg: yaw,
                keyframes: Vec::new(),
                wiggles,
                yaw_wiggles,
            }
        })
        .collect();
    PresetOut { planes: room_planes(), trajectories, sensors: vec![SensorModel::full360(); n] }
}

/// One large smooth wall at x = 0. The open area behind the drones holds
/// floor and clutter that drones 1 and 3 see but drone 2 never does while
/// it faces the wall.
fn wall(n: usize, seed: u64) -> Result<PresetOut, SimError> {
    if n != 3 {
        return Err(SimError::InvalidScenario("the wall preset needs exactly 3 drones".into()));
    }
    let (x, y) = (Vec3::x(), Vec3::y());
    let mut planes = vec![
        vertical(Vec3::new(0.0, 0.0, 12.0), -y, 60.0, 24.0, 90),
        floor(Vec3::new(-13.0, 0.0, 0.0), 26.0, 30.0, 60),
        vertical(Vec3::new(-22.0, 0.0, 4.0), -y, 30.0, 8.0, 80),
        vertical(Vec3::new(-11.0, 15.0, 4.0), -x, 22.0, 8.0, 100),
        vertical(Vec3::new(-11.0, -15.0, 4.0), x, 22.0, 8.0, 70),
    ];
    let boxes = [
        ([-16.0, -6.0, 0.0], [-14.0, -3.0, 3.0]),
        ([-18.0, 4.0, 0.0], [-15.5, 6.0, 2.0]),
        ([-13.0, -12.0, 0.0], [-11.0, -10.0, 4.0]),
        ([-12.0, 9.0, 0.0], [-10.0, 12.0, 1.5]),
    ];
    for (i, (lo, hi)) in boxes.iter().enumerate() {
        planes.extend(box_planes(Vec3::from(*lo), Vec3::from(*hi), 110 + 9 * i as u8, true));
    }

    let mut rng = stream(seed, &[tag::TRAJECTORY, 2]);
    // Drone 2: identify the others facing -x, then turn to the wall and
    // sweep along it at ~2 m stand-off.
    let (w2, _) = random_wiggles(&mut rng, 0.8, 0.05, 0.8, 17.0);
    let sweep = [
        (22.0, [-2.0, 0.0, 2.5], Some(0.0)),
        (30.0, [-2.0, 3.0, 2.6], None),
        (40.0, [-2.0, -3.0, 2.4], None),
        (50.0, [-2.0, 3.0, 2.6], None),
        (60.0, [-2.0, -3.0, 2.4], None),
        (68.0, [-2.0, 0.0, 2.5], None),
        (76.0, [-2.0, 3.0, 2.5], None),
        (84.0, [-2.0, -3.0, 2.5], None),
    ];
    let mut keyframes = vec![Keyframe { t: 18.5, pos: [-3.5, 0.0, 2.5], yaw_deg: Some(180.0) }];
    keyframes.extend(sweep.iter().map(|&(t, pos, yaw_deg)| Keyframe { t, pos, yaw_deg }));
    let d2 = TrajectorySpec { start: [-3.5, 0.0, 2.5], start_yaw_deg: 180.0, keyframes, wiggles: w2, yaw_wiggles: Vec::new() };

    let side = |k: u64, y0: f64| {
        let mut rng = stream(seed, &[tag::TRAJECTORY, k]);
        let (wiggles, yaw_wiggles) = random_wiggles(&mut rng, 1.0, 0.05, 0.8, f64::INFINITY);
        TrajectorySpec { start: [-8.0, y0, 1.5], start_yaw_deg: rng.gen_range(-30.0..30.0), keyframes: Vec::new(), wiggles, yaw_wiggles }
    };
    let trajectories = vec![side(1, 1.8), d2, side(3, -1.8)];
    let sensors = vec![SensorModel::full360(), SensorModel::pyramid(), SensorModel::full360()];
    Ok(PresetOut { planes, trajectories, sensors })
}

/// Length of the smooth corridor tube.
pub const CORRIDOR_LENGTH: f64 = 14.0;
const TUBE_HALF_WIDTH: f64 = 1.5;
const TUBE_HEIGHT: f64 = 3.0;
/// Matte tube lining. With reflectivity-limited range it is only seen
/// within a few metres, so the tube cannot be mapped from outside.
const TUBE_REFLECTIVITY: u8 = 6;

/// A smooth rectangular tube between two facades. Clutter sits beside the
/// mouths, behind the facades, where it cannot be seen from inside the tube.
fn corridor(n: usize, seed: u64) -> Result<PresetOut, SimError> {
    if n != 3 {
        return Err(SimError::InvalidScenario("the corridor preset needs exactly 3 drones".into()));
    }
    let (x, y) = (Vec3::x(), Vec3::y());
    let l = CORRIDOR_LENGTH;
    let (hw, h) = (TUBE_HALF_WIDTH, TUBE_HEIGHT);
    let dark = TUBE_REFLECTIVITY;
    let mut planes = vec![
        floor(Vec3::new(l / 2.0, 0.0, 0.0), l, 2.0 * hw, dark),
        vertical(Vec3::new(l / 2.0, hw, h / 2.0), x, l, h, dark),
        vertical(Vec3::new(l / 2.0, -hw, h / 2.0), -x, l, h, dark),
        ceiling(Vec3::new(l / 2.0, 0.0, h), l, 2.0 * hw, dark),
    ];
    // Open ground on both sides of the tube.
    for xc in [-15.0, l + 15.0] {
        planes.push(floor(Vec3::new(xc, 0.0, 0.0), 30.0, 40.0, 60));
    }
    // Facades with a hole where the tube passes through.
    let fh = 8.0;
    let fw = 20.0;
    for (xf, facing) in [(0.0, -y), (l, y)] {
        let side_w = fw / 2.0 - hw;
        for s in [-1.0, 1.0] {
            let c = Vec3::new(xf, s * (hw + side_w / 2.0), fh / 2.0);
            planes.push(vertical(c, facing, side_w, fh, 100));
        }
        planes.push(vertical(Vec3::new(xf, 0.0, h + (fh - h) / 2.0), facing, 2.0 * hw, fh - h, 100));
    }
    let clutter = [
        ([-4.0, 4.5, 0.0], [-2.5, 6.5, 2.5]),
        ([-3.0, -7.0, 0.0], [-1.0, -4.5, 3.5]),
        ([-8.0, -3.8, 0.0], [-7.2, -3.0, 1.0]),
        ([-1.5, 3.8, 0.0], [-0.5, 4.6, 5.0]),
        ([l + 1.0, 4.2, 0.0], [l + 3.0, 6.0, 3.0]),
        ([l + 2.5, -6.5, 0.0], [l + 4.0, -4.0, 2.0]),
        ([l + 0.5, -4.6, 0.0], [l + 1.3, -3.8, 4.5]),
        ([l + 7.0, 3.6, 0.0], [l + 8.0, 4.4, 1.2]),
    ];
    for (i, (lo, hi)) in clutter.iter().enumerate() {
        planes.extend(box_planes(Vec3::from(*lo), Vec3::from(*hi), 110 + 8 * i as u8, true));
    }

    // Leapfrog: all identify each other at the entrance, then drone 1
    // crosses in short advances while 2 and 3 hover; drone 1 waits at the
    // exit while 2 and then 3 cross.
    let id_end = 12.0;
    let entrance = |k: u64, start: [f64; 3]| {
        let mut rng = stream(seed, &[tag::TRAJECTORY, k]);
        let (wiggles, _) = random_wiggles(&mut rng, 0.5, 0.05, 0.8, id_end - 2.0);
        (wiggles, start)
    };
    let cross = |t0: f64, hold: [f64; 3]| {
        let mut kf = vec![Keyframe { t: t0 + 4.0, pos: [-0.5, 0.0, 1.5], yaw_deg: Some(0.0) }];
        let mut t = t0 + 4.0;
        let mut xk = -0.5;
        while xk < l + 0.5 {
            xk = (xk + 2.5).min(l + 1.5);
            t += 4.0;
            kf.push(Keyframe { t, pos: [xk, 0.0, 1.5], yaw_deg: None });
            t += 2.5;
            kf.push(Keyframe { t, pos: [xk, 0.0, 1.5], yaw_deg: None });
        }
        kf.push(Keyframe { t: t + 4.0, pos: hold, yaw_deg: Some(180.0) });
        (kf, t + 4.0)
    };
    let (w1, s1) = entrance(1, [-3.0, 1.2, 1.5]);
    let (k1, t1) = cross(id_end, [l + 3.0, 1.2, 1.5]);
    let (w2, s2) = entrance(2, [-3.0, -1.2, 1.5]);
    let (k2, t2) = cross(t1 + 2.0, [l + 3.0, -1.2, 1.5]);
    let (w3, s3) = entrance(3, [-5.5, 0.0, 1.5]);
    let (k3, _) = cross(t2 + 2.0, [l + 5.0, 0.0, 1.5]);
    let mk = |start: [f64; 3], wiggles, keyframes| TrajectorySpec { start, start_yaw_deg: 0.0, keyframes, wiggles, yaw_wiggles: Vec::new() };
    let trajectories = vec![mk(s1, w1, k1), mk(s2, w2, k2), mk(s3, w3, k3)];
    let mut sensor = SensorModel::full360();
    sensor.points_per_scan = 20000;
    sensor.reflectivity_range = true;
    Ok(PresetOut { planes, trajectories, sensors: vec![sensor; 3] })
}

/// Open ground with buildings. Drone 1 loiters near the origin; drone 2
/// leaves for a long excursion out of detection range and comes back.
fn exploration(n: usize, seed: u64) -> Result<PresetOut, SimError> {
    if !(2..=3).contains(&n) {
        return Err(SimError::InvalidScenario("the exploration preset needs 2 or 3 drones".into()));
    }
    let mut planes = vec![floor(Vec3::new(20.0, 0.0, 0.0), 100.0, 80.0, 60)];
    let buildings = [
        ([-9.0, -8.0], [-6.0, -4.0], 6.0),
        ([-8.0, 5.0], [-5.0, 9.0], 4.0),
        ([6.0, 6.0], [9.0, 8.0], 5.0),
        ([7.0, -9.0], [10.0, -6.0], 7.0),
        ([15.0, -2.0], [18.0, 2.0], 8.0),
        ([22.0, 10.0], [26.0, 13.0], 5.0),
        ([24.0, -14.0], [27.0, -10.0], 6.0),
        ([32.0, -3.0], [35.0, 1.0], 9.0),
        ([30.0, 16.0], [33.0, 19.0], 4.0),
        ([40.0, 8.0], [44.0, 11.0], 6.0),
        ([41.0, -12.0], [44.0, -8.0], 5.0),
        ([-2.0, -14.0], [2.0, -11.0], 3.0),
        ([-2.0, 12.0], [1.0, 15.0], 5.0),
        ([12.0, 14.0], [15.0, 18.0], 3.0),
        ([13.0, -18.0], [16.0, -14.0], 6.0),
        ([48.0, -3.0], [51.0, 0.0], 7.0),
        ([52.0, 10.0], [55.0, 13.0], 5.0),
        ([58.0, -13.0], [61.0, -10.0], 6.0),
        ([60.0, 2.0], [63.0, 5.0], 4.0),
    ];
    for (i, (lo, hi, h)) in buildings.iter().enumerate() {
        planes.extend(box_planes(Vec3::new(lo[0], lo[1], 0.0), Vec3::new(hi[0], hi[1], *h), 100 + 5 * i as u8, true));
    }
    let mut rng = stream(seed, &[tag::TRAJECTORY, 1]);
    let (w1, y1) = random_wiggles(&mut rng, 1.0, 0.1, 0.8, f64::INFINITY);
    let d1 = TrajectorySpec { start: [0.0, 0.0, 1.5], start_yaw_deg: 0.0, keyframes: Vec::new(), wiggles: w1, yaw_wiggles: y1 };

    let mut rng = stream(seed, &[tag::TRAJECTORY, 2]);
    let (w2, _) = random_wiggles(&mut rng, 1.0, 0.1, 0.8, 11.0);
    // Beyond sensor range of the loiterers from ~35 s to ~100 s.
    let loop_pts: [(f64, [f64; 2]); 10] = [
        (20.0, [14.0, 6.0]),
        (28.0, [30.0, 5.0]),
        (36.0, [46.0, 4.0]),
        (52.0, [54.0, 6.0]),
        (68.0, [56.0, -4.0]),
        (84.0, [52.0, -8.0]),
        (98.0, [46.0, -6.0]),
        (108.0, [32.0, -5.0]),
        (120.0, [16.0, -4.0]),
        (130.0, [4.0, 1.5]),
    ];
    let mut keyframes = vec![Keyframe { t: 13.0, pos: [3.5, 1.5, 1.6], yaw_deg: Some(0.0) }];
    keyframes.extend(loop_pts.iter().map(|&(t, p)| Keyframe { t, pos: [p[0], p[1], 1.8], yaw_deg: None }));
    let mut w2b = random_wiggles(&mut rng, 0.8, 0.1, 131.0, f64::INFINITY).0;
    let mut wiggles = w2;
    wiggles.append(&mut w2b);
    let d2 = TrajectorySpec { start: [3.5, 1.5, 1.6], start_yaw_deg: 90.0, keyframes, wiggles, yaw_wiggles: Vec::new() };
    let mut trajectories = vec![d1, d2];
    if n == 3 {
        let mut rng = stream(seed, &[tag::TRAJECTORY, 3]);
        let (w, y) = random_wiggles(&mut rng, 1.0, 0.1, 0.8, f64::INFINITY);
        trajectories.push(TrajectorySpec { start: [1.0, -3.5, 1.5], start_yaw_deg: 0.0, keyframes: Vec::new(), wiggles: w, yaw_wiggles: y });
    }
    Ok(PresetOut { planes, trajectories, sensors: vec![SensorModel::full360(); n] })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::ScenarioConfig;

    fn cfg(preset: &str, n: usize) -> ScenarioConfig {
        ScenarioConfig::from_toml_str(&format!(
            "seed = 42\nduration = 20.0\ndrone_count = {n}\n[world]\npreset = \"{preset}\"\n"
        ))
        .unwrap()
    }

    #[test]
    fn same_seed_same_scenario() {
        for (p, n) in [("room", 3), ("wall", 3), ("corridor", 3), ("exploration", 2)] {
            let a = make_scenario(&cfg(p, n)).unwrap();
            let b = make_scenario(&cfg(p, n)).unwrap();
            assert_eq!(a.world, b.world);
            for (da, db) in a.drones.iter().zip(&b.drones) {
                assert_eq!(da.trajectory, db.trajectory);
                assert_eq!(da.bias_acc, db.bias_acc);
            }
        }
    }

    #[test]
    fn wall_preset_shape() {
        let mut c = cfg("wall", 3);
        c.duration = 30.0;
        let s = make_scenario(&c).unwrap();
        let wall = &s.world.planes[0];
        assert_eq!(wall.normal, -Vec3::x());
        assert_eq!(s.drones[1].sensor.fov, SensorModel::pyramid().fov);
        // after the turn drone 2 looks straight at the wall
        let k = s.drones[1].trajectory.eval(26.0).unwrap();
        let fwd = k.rot.apply(&Vec3::x());
        assert!(fwd.dot(&Vec3::x()) > 0.99);
        assert!((k.pos.x + 2.0).abs() < 0.2);
    }

    #[test]
    fn corridor_preset_has_a_smooth_tube() {
        let s = make_scenario(&cfg("corridor", 3)).unwrap();
        let tube = &s.world.planes[..4];
        let long = tube.iter().filter(|p| p.normal.x.abs() < 1e-12).count();
        assert_eq!(long, 4);
        assert!(tube.iter().all(|p| p.reflectivity == TUBE_REFLECTIVITY));
        assert!(s.drones.iter().all(|d| d.sensor.reflectivity_range));
        assert!(make_scenario(&cfg("corridor", 2)).is_err());
    }

    #[test]
    fn static_surfaces_stay_below_the_marker_threshold() {
        let thr = crate::detect_track::DetectParams::default().reflectivity_threshold;
        for (p, n) in [("room", 3), ("wall", 3), ("corridor", 3), ("exploration", 3)] {
            let s = make_scenario(&cfg(p, n)).unwrap();
            assert!(s.world.planes.iter().all(|pl| pl.reflectivity < thr), "{p}");
        }
    }

    #[test]
    fn bad_presets_and_counts_are_rejected() {
        assert!(ScenarioConfig::from_toml_str("seed = 1\nduration = 5.0\n[world]\npreset = \"moon\"\n").is_err());
        assert!(ScenarioConfig::from_toml_str("seed = 1\nduration = 5.0\ndrone_count = 0\n").is_err());
        let mut c = cfg("room", 3);
        c.drone_count = 0;
        assert!(make_scenario(&c).is_err());
    }
}
