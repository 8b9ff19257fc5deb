//! Multi-drone LiDAR-inertial odometry with mutual observation: a simulated
//! swarm, teammate detection and identification, and an error-state
//! iterated Kalman filter over each drone's pose and its teammates' frames.

pub mod detect_track;
pub mod esikf;
pub mod harness;
pub mod ident;
pub mod kdtree;
pub mod manifold;
pub mod rng;
pub mod sensor_sim;
pub mod swarm_net;
