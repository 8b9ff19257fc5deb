//! Analytic ground-truth trajectories.
//!
//! A trajectory is a chain of quintic (minimum-jerk) segments between
//! keyframes, plus smoothly windowed sinusoidal wiggles. Attitude is level with
//! a yaw profile built the same way. All terms are C2, so velocity,
//! acceleration and body rate are exact.

use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use super::SimError;
use crate::manifold::{Rotation, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Keyframe {
    /// Arrival time, s.
    pub t: f64,
    pub pos: [f64; 3],
    #[serde(default)]
    pub yaw_deg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Wiggle {
    /// Amplitude per axis, m (or degrees for yaw wiggles, x component only).
    pub amp: [f64; 3],
    pub period: f64,
    #[serde(default)]
    pub phase_deg: f64,
    #[serde(default)]
    pub t_on: f64,
    #[serde(default = "default_t_off")]
    pub t_off: f64,
    #[serde(default = "default_ramp")]
    pub ramp: f64,
}

fn default_t_off() -> f64 {
    f64::INFINITY
}

fn default_ramp() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySpec {
    pub start: [f64; 3],
    #[serde(default)]
    pub start_yaw_deg: f64,
    #[serde(default)]
    pub keyframes: Vec<Keyframe>,
    #[serde(default)]
    pub wiggles: Vec<Wiggle>,
    #[serde(default)]
    pub yaw_wiggles: Vec<Wiggle>,
}

impl TrajectorySpec {
    pub fn hover(start: [f64; 3], yaw_deg: f64) -> Self {
        TrajectorySpec {
            start,
            start_yaw_deg: yaw_deg,
            keyframes: Vec::new(),
            wiggles: Vec::new(),
            yaw_wiggles: Vec::new(),
        }
    }
}

/// Value with first and second time derivatives.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Jet {
    v: f64,
    d1: f64,
    d2: f64,
}

impl std::ops::Add for Jet {
    type Output = Jet;
    fn add(self, o: Jet) -> Jet {
        Jet { v: self.v + o.v, d1: self.d1 + o.d1, d2: self.d2 + o.d2 }
    }
}

impl std::ops::Mul for Jet {
    type Output = Jet;
    fn mul(self, o: Jet) -> Jet {
        Jet {
            v: self.v * o.v,
            d1: self.d1 * o.v + self.v * o.d1,
            d2: self.d2 * o.v + 2.0 * self.d1 * o.d1 + self.v * o.d2,
        }
    }
}

/// Quintic smoothstep from 0 at `t0` to 1 at `t0 + dur`.
fn smoothstep(t: f64, t0: f64, dur: f64) -> Jet {
    if dur <= 0.0 {
        return Jet { v: if t >= t0 { 1.0 } else { 0.0 }, ..Jet::default() };
    }
    let s = (t - t0) / dur;
    if s <= 0.0 {
        return Jet::default();
    }
    if s >= 1.0 {
        return Jet { v: 1.0, ..Jet::default() };
    }
    let s2 = s * s;
    let s3 = s2 * s;
    Jet {
        v: s3 * (10.0 - 15.0 * s + 6.0 * s2),
        d1: 30.0 * s2 * (1.0 - s) * (1.0 - s) / dur,
        d2: 60.0 * s * (1.0 - 3.0 * s + 2.0 * s2) / (dur * dur),
    }
}

fn wiggle_jet(w: &Wiggle, axis: usize, t: f64) -> Jet {
    let a = w.amp[axis];
    if a == 0.0 {
        return Jet::default();
    }
    let env_on = smoothstep(t, w.t_on, w.ramp);
    let env = if w.t_off.is_finite() {
        let off = smoothstep(t, w.t_off, w.ramp);
        Jet { v: env_on.v - off.v, d1: env_on.d1 - off.d1, d2: env_on.d2 - off.d2 }
    } else {
        env_on
    };
    let omega = TAU / w.period;
    let arg = omega * t + w.phase_deg.to_radians();
    let (s, c) = arg.sin_cos();
    let wave = Jet { v: a * s, d1: a * omega * c, d2: -a * omega * omega * s };
    env * wave
}

/// Full kinematic state of a trajectory at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kinematics {
    pub rot: Rotation,
    pub pos: Vec3,
    pub vel: Vec3,
    pub acc: Vec3,
    /// Angular rate in the body frame, rad/s.
    pub omega_body: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrueTrajectory {
    pub drone_id: u8,
    pub spec: TrajectorySpec,
    pub end_time: f64,
}

impl TrueTrajectory {
    pub fn new(drone_id: u8, spec: TrajectorySpec, end_time: f64) -> Result<Self, SimError> {
        let mut last = 0.0;
        for k in &spec.keyframes {
            if !(k.t > last) {
                return Err(SimError::InvalidTrajectory(format!(
                    "drone {drone_id}: keyframe times must be strictly increasing and positive"
                )));
            }
            last = k.t;
        }
        for w in spec.wiggles.iter().chain(&spec.yaw_wiggles) {
            if !(w.period > 0.0) || w.ramp < 0.0 {
                return Err(SimError::InvalidTrajectory(format!(
                    "drone {drone_id}: wiggle period must be positive and ramp non-negative"
                )));
            }
        }
        if !(end_time > 0.0) {
            return Err(SimError::InvalidTrajectory("end time must be positive".into()));
        }
        Ok(TrueTrajectory { drone_id, spec, end_time })
    }

    /// Position and yaw jets of the keyframe chain.
    fn base(&self, t: f64) -> ([Jet; 3], Jet) {
        let mut prev_t = 0.0;
        let mut prev_pos = self.spec.start;
        let mut prev_yaw = self.spec.start_yaw_deg.to_radians();
        for k in &self.spec.keyframes {
            let yaw = k.yaw_deg.map_or(prev_yaw, f64::to_radians);
            if t < k.t {
                let s = smoothstep(t, prev_t, k.t - prev_t);
                let lerp = |a: f64, b: f64| Jet { v: a + (b - a) * s.v, d1: (b - a) * s.d1, d2: (b - a) * s.d2 };
                let pos = [0, 1, 2].map(|i| lerp(prev_pos[i], k.pos[i]));
                return (pos, lerp(prev_yaw, yaw));
            }
            prev_t = k.t;
            prev_pos = k.pos;
            prev_yaw = yaw;
        }
        let hold = |v: f64| Jet { v, ..Jet::default() };
        (prev_pos.map(hold), hold(prev_yaw))
    }

    pub fn eval(&self, t: f64) -> Result<Kinematics, SimError> {
        if !(0.0..=self.end_time + 1e-9).contains(&t) {
            return Err(SimError::OutsideDomain { t, end: self.end_time });
        }
        Ok(self.eval_unchecked(t))
    }

    pub(crate) fn eval_unchecked(&self, t: f64) -> Kinematics {
        let (mut pos, mut yaw) = self.base(t);
        for w in &self.spec.wiggles {
            for (axis, p) in pos.iter_mut().enumerate() {
                *p = *p + wiggle_jet(w, axis, t);
            }
        }
        for w in &self.spec.yaw_wiggles {
            let j = wiggle_jet(w, 0, t);
            yaw = yaw + Jet { v: j.v.to_radians(), d1: j.d1.to_radians(), d2: j.d2.to_radians() };
        }
        Kinematics {
            rot: Rotation::rot_z(yaw.v),
            pos: Vec3::new(pos[0].v, pos[1].v, pos[2].v),
            vel: Vec3::new(pos[0].d1, pos[1].d1, pos[2].d1),
            acc: Vec3::new(pos[0].d2, pos[1].d2, pos[2].d2),
            omega_body: Vec3::new(0.0, 0.0, yaw.d1),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TrueTrajectory {
        let spec = TrajectorySpec {
            start: [1.0, 2.0, 1.5],
            start_yaw_deg: 30.0,
            keyframes: vec![
                Keyframe { t: 4.0, pos: [3.0, 2.0, 1.5], yaw_deg: Some(90.0) },
                Keyframe { t: 6.0, pos: [3.0, 2.0, 1.5], yaw_deg: None },
                Keyframe { t: 9.0, pos: [0.0, 0.0, 2.0], yaw_deg: Some(-10.0) },
            ],
            wiggles: vec![Wiggle { amp: [0.5, 0.3, 0.1], period: 3.0, phase_deg: 20.0, t_on: 1.0, t_off: 7.0, ramp: 1.5 }],
            yaw_wiggles: vec![Wiggle { amp: [15.0, 0.0, 0.0], period: 5.0, phase_deg: 0.0, t_on: 0.5, t_off: f64::INFINITY, ramp: 2.0 }],
        };
        TrueTrajectory::new(1, spec, 12.0).unwrap()
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let tr = sample();
        let h = 1e-4;
        for i in 1..110 {
            let t = i as f64 * 0.1 + 0.013;
            let k = tr.eval(t).unwrap();
            let a = tr.eval(t - h).unwrap();
            let b = tr.eval(t + h).unwrap();
            let vel_fd = (b.pos - a.pos) / (2.0 * h);
            let acc_fd = (b.pos - 2.0 * k.pos + a.pos) / (h * h);
            assert!((vel_fd - k.vel).norm() < 1e-6, "t={t}");
            assert!((acc_fd - k.acc).norm() < 1e-3, "t={t}");
            let w_fd = b.rot.minus(&a.rot) / (2.0 * h);
            assert!((w_fd - k.omega_body).norm() < 1e-6, "t={t}");
        }
    }

    #[test]
    fn starts_static_at_start_pose() {
        let k = sample().eval(0.0).unwrap();
        assert_eq!(k.pos, Vec3::new(1.0, 2.0, 1.5));
        assert_eq!(k.vel, Vec3::zeros());
        assert!((k.rot.angle_to(&Rotation::rot_z(30f64.to_radians()))) < 1e-15);
    }

    #[test]
    fn holds_after_last_keyframe() {
        let k = sample().eval(11.0).unwrap();
        assert!((k.pos - Vec3::new(0.0, 0.0, 2.0)).norm() < 1e-12);
        assert!(k.vel.norm() < 1e-12);
    }

    #[test]
    fn outside_domain_is_an_error() {
        assert!(matches!(sample().eval(12.5), Err(SimError::OutsideDomain { .. })));
        assert!(sample().eval(-0.1).is_err());
    }

    #[test]
    fn rejects_unordered_keyframes() {
        let mut spec = sample().spec;
        spec.keyframes.swap(0, 1);
        assert!(TrueTrajectory::new(1, spec, 10.0).is_err());
    }
}
