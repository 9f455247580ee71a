//! Rotation-group algebra and Plücker lines.
//!
//! Rotations are plain `Matrix3<f64>` values; tangent vectors are axis-angle
//! 3-vectors. The retraction `R ↦ R·exp(s^)` is what the Gauss-Newton refiner
//! uses to keep iterates on SO(3).

use nalgebra::{Matrix3, Vector3, Vector6};

use crate::error::{PoseError, Result};

/// Below this angle the exp/log maps switch to their Taylor expansions.
pub const SMALL_ANGLE: f64 = 1e-4;

/// Distance from pi at which the logarithm refuses to pick an axis sign.
pub const NEAR_PI: f64 = 1e-6;

/// Tolerance used by [`is_rotation`].
pub const ROTATION_TOL: f64 = 1e-9;

/// Rigid transform mapping world coordinates into the camera frame: `x_c = R·X + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Matrix3::identity(), Vector3::zeros())
    }

    /// Maps a world point into the camera frame.
    pub fn transform(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x + self.translation
    }

    /// Maps a camera-frame point back into the world frame.
    pub fn inverse_transform(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (x - self.translation)
    }

    /// `(‖R - R'‖_F, ‖t - t'‖)`.
    pub fn distance(&self, other: &Pose) -> (f64, f64) {
        (
            (self.rotation - other.rotation).norm(),
            (self.translation - other.translation).norm(),
        )
    }
}

/// Skew-symmetric matrix with `hat(s)·v = s × v`.
pub fn hat(s: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -s.z, s.y, s.z, 0.0, -s.x, -s.y, s.x, 0.0)
}

/// Inverse of [`hat`]. Rejects matrices whose symmetric part is not negligible.
pub fn vee(m: &Matrix3<f64>) -> Result<Vector3<f64>> {
    let scale = m.norm();
    let asym = (m + m.transpose()).norm();
    if asym > 1e-6 * scale {
        return Err(PoseError::NotSkewSymmetric {
            ratio: asym / scale,
        });
    }
    Ok(Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)]))
}

/// `vee` of the skew part `(M - Mᵀ)/2`, without any symmetry check.
pub fn vee_skew_part(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// Rodrigues' formula.
pub fn exp_so3(s: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = s.norm_squared();
    let theta = theta2.sqrt();
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    let k = hat(s);
    Matrix3::identity() + k * a + k * k * b
}

/// Axis-angle vector of a rotation, with `‖s‖ < π`.
///
/// Returns the zero vector for the identity and `NearPiRotation` when the
/// angle is within [`NEAR_PI`] of π.
pub fn log_so3(r: &Matrix3<f64>) -> Result<Vector3<f64>> {
    let w = vee_skew_part(r);
    let sin_phi = w.norm();
    let cos_phi = 0.5 * (r.trace() - 1.0);
    let phi = sin_phi.atan2(cos_phi);
    if std::f64::consts::PI - phi < NEAR_PI {
        return Err(PoseError::NearPiRotation { angle: phi });
    }
    let factor = if phi < SMALL_ANGLE {
        1.0 + phi * phi / 6.0
    } else {
        phi / sin_phi
    };
    Ok(w * factor)
}

/// `R·exp(s^)`.
pub fn retract(r: &Matrix3<f64>, s: &Vector3<f64>) -> Matrix3<f64> {
    r * exp_so3(s)
}

/// Checks orthonormality and unit determinant within [`ROTATION_TOL`].
pub fn is_rotation(r: &Matrix3<f64>) -> bool {
    (r.transpose() * r - Matrix3::identity()).norm() <= ROTATION_TOL
        && (r.determinant() - 1.0).abs() <= ROTATION_TOL
}

/// Rotation from Euler angles `[a, b, c]` applied as `Rz(c)·Ry(b)·Rx(a)`.
pub fn rotation_from_euler(angles: &Vector3<f64>) -> Matrix3<f64> {
    let rx = exp_so3(&Vector3::new(angles.x, 0.0, 0.0));
    let ry = exp_so3(&Vector3::new(0.0, angles.y, 0.0));
    let rz = exp_so3(&Vector3::new(0.0, 0.0, angles.z));
    rz * ry * rx
}

/// Plücker coordinates `[P×Q; Q−P]` of the line through two points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PluckerLine {
    pub moment: Vector3<f64>,
    pub direction: Vector3<f64>,
}

impl PluckerLine {
    pub fn from_endpoints(p: &Vector3<f64>, q: &Vector3<f64>) -> Result<Self> {
        if (q - p).norm() <= 1e-9 {
            return Err(PoseError::DegenerateLine);
        }
        Ok(Self {
            moment: p.cross(q),
            direction: q - p,
        })
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.moment.x,
            self.moment.y,
            self.moment.z,
            self.direction.x,
            self.direction.y,
            self.direction.z,
        )
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            moment: self.moment * alpha,
            direction: self.direction * alpha,
        }
    }
}

/// Slides two points along their line so they sit √3 apart about the same midpoint.
pub fn normalize_line_endpoints(
    p: &Vector3<f64>,
    q: &Vector3<f64>,
) -> Result<(Vector3<f64>, Vector3<f64>)> {
    let d = q - p;
    let len = d.norm();
    if len <= 1e-9 {
        return Err(PoseError::DegenerateLine);
    }
    let mid = (p + q) * 0.5;
    let half = d * (0.5 * 3f64.sqrt() / len);
    Ok((mid - half, mid + half))
}
