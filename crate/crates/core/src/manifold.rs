//! SO(3) exponential/logarithm and the composite state manifold.
//!
//! The filter state lives on `SO(3) x R^15 x (SO(3) x R^3)^(N-1)`. Tangent
//! increments are flat vectors with a fixed block layout (see [`ErrorVector`]),
//! and rotations are perturbed on the right: `R ⊞ r = R Exp(r)`.

use nalgebra::{DVector, Matrix3, Vector3};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Ego blocks: rotation, position, velocity, gyro bias, accel bias, gravity.
pub const EGO_DIM: usize = 18;
/// Per-teammate blocks: extrinsic rotation and translation.
pub const EXT_DIM: usize = 6;

pub const IDX_ROT: usize = 0;
pub const IDX_POS: usize = 3;
pub const IDX_VEL: usize = 6;
pub const IDX_BG: usize = 9;
pub const IDX_BA: usize = 12;
pub const IDX_GRAV: usize = 15;

const EXP_TAYLOR_THRESHOLD: f64 = 1e-8;
const LOG_SMALL_ANGLE: f64 = 1e-6;
const ORTHONORMAL_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ManifoldError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("teammate layout mismatch")]
    LayoutMismatch,
}

/// Skew-symmetric (cross-product) matrix of `v`.
pub fn hat(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// A rotation matrix in SO(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Mat3);

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Mat3::identity())
    }

    /// Wraps a matrix after checking orthonormality and handedness.
    pub fn from_matrix(m: Mat3) -> Result<Self, ManifoldError> {
        if !m.iter().all(|x| x.is_finite()) {
            return Err(ManifoldError::InvalidArgument("non-finite rotation".into()));
        }
        let err = (m * m.transpose() - Mat3::identity()).abs().max();
        if err > ORTHONORMAL_TOL || (m.determinant() - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(ManifoldError::InvalidArgument(format!(
                "matrix is not a rotation (orthonormality error {err:.3e})"
            )));
        }
        Ok(Rotation(m))
    }

    /// Projects an arbitrary (nearly orthonormal) matrix onto SO(3) via the
    /// polar decomposition.
    pub fn from_matrix_projected(m: Mat3) -> Self {
        let svd = m.svd(true, true);
        let u = svd.u.expect("svd u");
        let v_t = svd.v_t.expect("svd v_t");
        let mut d = Mat3::identity();
        if (u * v_t).determinant() < 0.0 {
            d[(2, 2)] = -1.0;
        }
        Rotation(u * d * v_t)
    }

    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::identity();
        }
        so3_exp_unchecked(&(axis * (angle / n)))
    }

    pub fn rot_z(yaw: f64) -> Self {
        let (s, c) = yaw.sin_cos();
        Rotation(Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn transpose(&self) -> Rotation {
        Rotation(self.0.transpose())
    }

    pub fn compose(&self, other: &Rotation) -> Rotation {
        Rotation(self.0 * other.0)
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    pub fn apply_inverse(&self, v: &Vec3) -> Vec3 {
        self.0.tr_mul(v)
    }

    /// Right perturbation `R Exp(r)`.
    pub fn plus(&self, r: &Vec3) -> Rotation {
        Rotation(self.0 * so3_exp_unchecked(r).0)
    }

    /// `Log(other^T self)`.
    pub fn minus(&self, other: &Rotation) -> Vec3 {
        so3_log_unchecked(&(other.0.tr_mul(&self.0)))
    }

    /// Geodesic angle to `other` in radians.
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        self.minus(other).norm()
    }

    pub fn renormalized(&self) -> Rotation {
        Self::from_matrix_projected(self.0)
    }

    /// Maximum absolute deviation of `R R^T` from identity.
    pub fn orthonormality_error(&self) -> f64 {
        (self.0 * self.0.transpose() - Mat3::identity()).abs().max()
    }
}

/// Exponential map `R^3 -> SO(3)`.
pub fn so3_exp(r: &Vec3) -> Result<Rotation, ManifoldError> {
    if !r.iter().all(|x| x.is_finite()) {
        return Err(ManifoldError::InvalidArgument("non-finite rotation vector".into()));
    }
    Ok(so3_exp_unchecked(r))
}

fn so3_exp_unchecked(r: &Vec3) -> Rotation {
    let theta2 = r.norm_squared();
    let theta = theta2.sqrt();
    let k = hat(r);
    let (a, b) = if theta < EXP_TAYLOR_THRESHOLD {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Rotation(Mat3::identity() + k * a + k * k * b)
}

/// Principal logarithm `SO(3) -> R^3`, with `|result| <= pi`.
pub fn so3_log(r: &Rotation) -> Result<Vec3, ManifoldError> {
    let m = r.matrix();
    Rotation::from_matrix(*m)?;
    Ok(so3_log_unchecked(m))
}

fn so3_log_unchecked(m: &Mat3) -> Vec3 {
    let vee = Vec3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
    // atan2 stays well conditioned near 0 and pi, unlike acos of the trace.
    let theta = (0.5 * vee.norm()).atan2(0.5 * (m.trace() - 1.0));
    if theta < LOG_SMALL_ANGLE {
        // theta / (2 sin theta) ~ 1/2 + theta^2 / 12
        return vee * (0.5 + theta * theta / 12.0);
    }
    if theta > std::f64::consts::PI - LOG_SMALL_ANGLE {
        return log_near_pi(m, theta, &vee);
    }
    vee * (theta / (2.0 * theta.sin()))
}

/// Near pi the antisymmetric part vanishes; recover the axis from the
/// symmetric part `(R + I) / 2 = a a^T` using its largest diagonal entry.
fn log_near_pi(m: &Mat3, theta: f64, vee: &Vec3) -> Vec3 {
    let s = ((m + m.transpose()) * 0.5 + Mat3::identity()) * 0.5;
    let i = (0..3)
        .max_by(|&a, &b| s[(a, a)].total_cmp(&s[(b, b)]))
        .unwrap_or(0);
    let mut axis = Vec3::new(s[(0, i)], s[(1, i)], s[(2, i)]) / s[(i, i)].max(0.0).sqrt();
    axis /= axis.norm();
    if axis.dot(vee) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

/// Global extrinsic of one teammate frame relative to the ego global frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtrinsicBlock {
    pub teammate_id: u8,
    pub rot: Rotation,
    pub pos: Vec3,
    pub initialized: bool,
}

/// Full per-drone filter state.
#[derive(Debug, Clone, PartialEq)]
pub struct SwarmState {
    pub ego_rot: Rotation,
    pub ego_pos: Vec3,
    pub ego_vel: Vec3,
    pub bias_gyro: Vec3,
    pub bias_acc: Vec3,
    pub gravity: Vec3,
    /// Sorted by teammate id.
    pub extrinsics: Vec<ExtrinsicBlock>,
}

/// Flat tangent increment. Layout: `δθ, δp, δv, δbg, δba, δg`, then per
/// teammate (in extrinsic order) `δθ_ext, δp_ext`.
pub type ErrorVector = DVector<f64>;

impl SwarmState {
    /// State at the origin of the ego frame with uninitialized extrinsics for
    /// every id in `teammates`.
    pub fn new(gravity: Vec3, teammates: &[u8]) -> Self {
        let mut ids = teammates.to_vec();
        ids.sort_unstable();
        ids.dedup();
        SwarmState {
            ego_rot: Rotation::identity(),
            ego_pos: Vec3::zeros(),
            ego_vel: Vec3::zeros(),
            bias_gyro: Vec3::zeros(),
            bias_acc: Vec3::zeros(),
            gravity,
            extrinsics: ids
                .into_iter()
                .map(|teammate_id| ExtrinsicBlock {
                    teammate_id,
                    rot: Rotation::identity(),
                    pos: Vec3::zeros(),
                    initialized: false,
                })
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        EGO_DIM + EXT_DIM * self.extrinsics.len()
    }

    pub fn zero_error(&self) -> ErrorVector {
        ErrorVector::zeros(self.dim())
    }

    /// Index of the teammate's extrinsic block within `extrinsics`.
    pub fn extrinsic_index(&self, teammate_id: u8) -> Option<usize> {
        self.extrinsics
            .binary_search_by_key(&teammate_id, |e| e.teammate_id)
            .ok()
    }

    pub fn extrinsic(&self, teammate_id: u8) -> Option<&ExtrinsicBlock> {
        self.extrinsic_index(teammate_id).map(|i| &self.extrinsics[i])
    }

    /// Offset of the k-th extrinsic block in the error vector.
    pub fn extrinsic_offset(k: usize) -> usize {
        EGO_DIM + EXT_DIM * k
    }

    fn same_layout(&self, other: &SwarmState) -> bool {
        self.extrinsics.len() == other.extrinsics.len()
            && self
                .extrinsics
                .iter()
                .zip(&other.extrinsics)
                .all(|(a, b)| a.teammate_id == b.teammate_id)
    }

    pub fn boxplus(&self, delta: &ErrorVector) -> Result<SwarmState, ManifoldError> {
        if delta.len() != self.dim() {
            return Err(ManifoldError::DimensionMismatch {
                expected: self.dim(),
                got: delta.len(),
            });
        }
        let d = |i: usize| Vec3::new(delta[i], delta[i + 1], delta[i + 2]);
        let rot_plus = |r: &Rotation, v: Vec3| if v == Vec3::zeros() { *r } else { r.plus(&v) };
        let extrinsics = self
            .extrinsics
            .iter()
            .enumerate()
            .map(|(k, e)| {
                let o = Self::extrinsic_offset(k);
                ExtrinsicBlock {
                    teammate_id: e.teammate_id,
                    rot: rot_plus(&e.rot, d(o)),
                    pos: e.pos + d(o + 3),
                    initialized: e.initialized,
                }
            })
            .collect();
        Ok(SwarmState {
            ego_rot: rot_plus(&self.ego_rot, d(IDX_ROT)),
            ego_pos: self.ego_pos + d(IDX_POS),
            ego_vel: self.ego_vel + d(IDX_VEL),
            bias_gyro: self.bias_gyro + d(IDX_BG),
            bias_acc: self.bias_acc + d(IDX_BA),
            gravity: self.gravity + d(IDX_GRAV),
            extrinsics,
        })
    }

    /// `self ⊟ other`.
    pub fn boxminus(&self, other: &SwarmState) -> Result<ErrorVector, ManifoldError> {
        if !self.same_layout(other) {
            return Err(ManifoldError::LayoutMismatch);
        }
        let mut out = ErrorVector::zeros(self.dim());
        let mut put = |i: usize, v: Vec3| out.fixed_rows_mut::<3>(i).copy_from(&v);
        put(IDX_ROT, self.ego_rot.minus(&other.ego_rot));
        put(IDX_POS, self.ego_pos - other.ego_pos);
        put(IDX_VEL, self.ego_vel - other.ego_vel);
        put(IDX_BG, self.bias_gyro - other.bias_gyro);
        put(IDX_BA, self.bias_acc - other.bias_acc);
        put(IDX_GRAV, self.gravity - other.gravity);
        for (k, (a, b)) in self.extrinsics.iter().zip(&other.extrinsics).enumerate() {
            let o = Self::extrinsic_offset(k);
            put(o, a.rot.minus(&b.rot));
            put(o + 3, a.pos - b.pos);
        }
        Ok(out)
    }

    /// Projects every rotation back onto SO(3).
    pub fn renormalize(&mut self) {
        self.ego_rot = self.ego_rot.renormalized();
        for e in &mut self.extrinsics {
            e.rot = e.rot.renormalized();
        }
    }
}
