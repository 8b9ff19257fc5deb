//! Simulated world, ground-truth motion, IMU and LiDAR synthesis.

mod scenario;
mod sensor;
mod trajectory;
mod world;

pub use scenario::{make_scenario, DroneSetup, Scenario, CORRIDOR_LENGTH};
pub use sensor::{synth_imu, synth_scan, FieldOfView, ImuSample, LidarPoint, LidarScan, SensorModel, PACKETS_PER_SCAN};
pub use trajectory::{Keyframe, Kinematics, TrajectorySpec, TrueTrajectory, Wiggle};
pub use world::{box_planes, ray_sphere, Hit, Plane, Sphere, WorldModel};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid world: {0}")]
    InvalidWorld(String),
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("time {t} s is outside the trajectory domain [0, {end}]")]
    OutsideDomain { t: f64, end: f64 },
    #[error("invalid sensor model: {0}")]
    InvalidSensor(String),
    #[error("unknown drone id {0}")]
    UnknownDrone(u8),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}
