//! Run configuration, loaded from TOML. Unknown keys are rejected.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect_track::DetectParams;
use crate::esikf::FilterParams;
use crate::ident::IdentParams;
use crate::sensor_sim::{Plane, SensorModel, Sphere, TrajectorySpec};
use crate::swarm_net::ChannelModel;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot parse configuration: {0}")]
    Parse(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot read {path}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Swarm,
    Solo,
}

impl Mode {
    pub fn mutual_obs(self) -> bool {
        self == Mode::Swarm
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "swarm" => Ok(Mode::Swarm),
            "solo" => Ok(Mode::Solo),
            _ => Err(format!("unknown mode {s:?} (expected swarm or solo)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Empty,
    #[default]
    Room,
    Wall,
    Corridor,
    Exploration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorPreset {
    Full360,
    Pyramid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldSpec {
    pub preset: Preset,
    pub marker_radius: f64,
    pub marker_reflectivity: u8,
    pub incidence_attenuation: f64,
    /// Extra planes added to the preset.
    pub planes: Vec<Plane>,
    /// Static reflective objects that are not drones.
    pub decoys: Vec<Sphere>,
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec {
            preset: Preset::Room,
            marker_radius: 0.25,
            marker_reflectivity: 255,
            incidence_attenuation: 0.0,
            planes: Vec::new(),
            decoys: Vec::new(),
        }
    }
}

/// Per-drone overrides, in drone id order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DroneConfig {
    pub sensor: Option<SensorPreset>,
    pub sensor_model: Option<SensorModel>,
    pub points_per_scan: Option<usize>,
    pub trajectory: Option<TrajectorySpec>,
    pub mutual_obs: Option<bool>,
}

/// IMU error model overrides applied to every drone's sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImuSpec {
    /// Standard deviation of the initial true biases.
    pub gyro_bias_sigma: f64,
    pub accel_bias_sigma: f64,
    pub rate: Option<f64>,
    pub gyro_noise: Option<f64>,
    pub accel_noise: Option<f64>,
    pub gyro_bias_walk: Option<f64>,
    pub accel_bias_walk: Option<f64>,
}

impl Default for ImuSpec {
    fn default() -> Self {
        ImuSpec {
            gyro_bias_sigma: 0.005,
            accel_bias_sigma: 0.05,
            rate: None,
            gyro_noise: None,
            accel_noise: None,
            gyro_bias_walk: None,
            accel_bias_walk: None,
        }
    }
}

impl ImuSpec {
    pub fn apply(&self, s: &mut SensorModel) {
        let set = |dst: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set(&mut s.imu_rate, self.rate);
        set(&mut s.gyro_noise, self.gyro_noise);
        set(&mut s.accel_noise, self.accel_noise);
        set(&mut s.gyro_bias_walk, self.gyro_bias_walk);
        set(&mut s.accel_bias_walk, self.accel_bias_walk);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    /// Write the per-scan CSV.
    pub csv: bool,
    /// Add wall-clock timing columns to the CSV (makes it non-reproducible).
    pub csv_timing: bool,
    /// Keep every delivered message for `dump-msgs`.
    pub capture_msgs: bool,
    /// Sampling interval of the extrinsic error series in the report, s.
    pub series_interval: f64,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec { csv: true, csv_timing: false, capture_msgs: false, series_interval: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    /// Simulated time, s.
    pub duration: f64,
    #[serde(default = "default_drone_count")]
    pub drone_count: usize,
    #[serde(default)]
    pub mode: Mode,
    /// Worker threads for per-drone processing; 0 or 1 runs everything inline.
    #[serde(default = "default_threads")]
    pub threads: usize,
    #[serde(default)]
    pub world: WorldSpec,
    #[serde(default)]
    pub drones: Vec<DroneConfig>,
    #[serde(default)]
    pub imu: ImuSpec,
    #[serde(default)]
    pub channel: ChannelModel,
    #[serde(default)]
    pub detect: DetectParams,
    #[serde(default)]
    pub ident: IdentParams,
    #[serde(default)]
    pub filter: FilterParams,
    #[serde(default)]
    pub output: OutputSpec,
}

fn default_drone_count() -> usize {
    3
}

fn default_threads() -> usize {
    1
}

impl ScenarioConfig {
    /// Defaults for a preset world.
    pub fn preset(preset: Preset, drone_count: usize, seed: u64, duration: f64) -> Self {
        ScenarioConfig {
            seed,
            duration,
            drone_count,
            mode: Mode::Swarm,
            threads: 1,
            world: WorldSpec { preset, ..WorldSpec::default() },
            drones: Vec::new(),
            imu: ImuSpec::default(),
            channel: ChannelModel::default(),
            detect: DetectParams::default(),
            ident: IdentParams::default(),
            filter: FilterParams::default(),
            output: OutputSpec::default(),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(s).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, ConfigError> {
        let s = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml_str(&s)
    }

    pub fn drone_count(&self) -> usize {
        self.drone_count
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad("duration must be positive".into());
        }
        if self.drone_count == 0 || self.drone_count > 32 {
            return bad(format!("drone_count {} must be in 1..=32", self.drone_count));
        }
        if self.drones.len() > self.drone_count {
            return bad(format!("{} drone overrides for {} drones", self.drones.len(), self.drone_count));
        }
        if !(self.imu.gyro_bias_sigma >= 0.0 && self.imu.accel_bias_sigma >= 0.0) {
            return bad("bias sigmas must be non-negative".into());
        }
        if !(self.output.series_interval > 0.0) {
            return bad("series_interval must be positive".into());
        }
        let section = |name: &'static str| move |e: String| ConfigError::Invalid(format!("{name}: {e}"));
        self.channel.validate().map_err(section("channel"))?;
        self.detect.validate().map_err(section("detect"))?;
        self.ident.validate().map_err(section("ident"))?;
        self.filter.validate().map_err(section("filter"))?;
        for (i, d) in self.drones.iter().enumerate() {
            if let Some(s) = &d.sensor_model {
                s.validate().map_err(|e| ConfigError::Invalid(format!("drones[{i}].sensor_model: {e}")))?;
            }
        }
        Ok(())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }
}
