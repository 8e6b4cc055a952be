use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{ensure_finite3, GeometryError, Result, ROTATION_TOLERANCE};

/// Below this angle `exp_so3` switches to the second-order Taylor form.
const EXP_SMALL_ANGLE: f64 = 1e-8;
/// Below this angle `log_so3` uses the first-order trace branch.
const LOG_SMALL_ANGLE: f64 = 1e-6;
/// Once `cos(angle)` drops below this value the axis is read from the
/// symmetric part of the matrix instead of the skew part.
const LOG_NEAR_PI_COS: f64 = -0.99;

/// Exponential coordinates of a rotation: axis times angle, in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AxisAngle(pub Vector3<f64>);

impl AxisAngle {
    pub const ZERO: AxisAngle = AxisAngle(Vector3::new(0.0, 0.0, 0.0));

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        AxisAngle(Vector3::new(x, y, z))
    }

    pub fn angle(&self) -> f64 {
        self.0.norm()
    }

    /// True when the vector lies strictly inside the canonical chart `‖θ‖ < π`.
    pub fn is_chart_valid(&self) -> bool {
        self.angle() < PI
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.0.x, self.0.y, self.0.z]
    }
}

/// A 3x3 matrix known to satisfy `RᵀR = I` and `det R = +1` within
/// [`ROTATION_TOLERANCE`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Matrix3<f64>", into = "Matrix3<f64>")]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    pub fn identity() -> Self {
        RotationMatrix(Matrix3::identity())
    }

    /// Validates orthonormality and orientation.
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        if !m.iter().all(|x| x.is_finite()) {
            return Err(GeometryError::NonFinite("rotation matrix"));
        }
        let orthogonality = (m.transpose() * m - Matrix3::identity()).abs().max();
        let det = m.determinant();
        if orthogonality > ROTATION_TOLERANCE || (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(GeometryError::InvalidRotation { orthogonality, det });
        }
        Ok(RotationMatrix(m))
    }

    /// Wraps a matrix produced by a closed-form map that is orthonormal by
    /// construction (Rodrigues, products and transposes of rotations).
    pub(crate) fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        RotationMatrix(m)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        RotationMatrix(self.0.transpose())
    }

    pub fn compose(&self, other: &RotationMatrix) -> Self {
        RotationMatrix(self.0 * other.0)
    }

    /// Rotation about the world z axis.
    pub fn from_yaw(yaw: f64) -> Self {
        let (s, c) = yaw.sin_cos();
        RotationMatrix(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    pub fn orthogonality_residual(&self) -> f64 {
        (self.0.transpose() * self.0 - Matrix3::identity()).abs().max()
    }
}

impl TryFrom<Matrix3<f64>> for RotationMatrix {
    type Error = GeometryError;
    fn try_from(m: Matrix3<f64>) -> Result<Self> {
        RotationMatrix::new(m)
    }
}

impl From<RotationMatrix> for Matrix3<f64> {
    fn from(r: RotationMatrix) -> Self {
        r.0
    }
}

/// Skew-symmetric matrix `[v]×`.
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`hat`] applied to the skew part of `m`: `vee((m - mᵀ) / 2)`.
pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// Rodrigues formula `exp([θ]×)`.
pub fn exp_so3(theta: &AxisAngle) -> Result<RotationMatrix> {
    ensure_finite3(&theta.0, "axis-angle")?;
    let angle = theta.angle();
    let k = hat(&theta.0);
    let m = if angle < EXP_SMALL_ANGLE {
        Matrix3::identity() + k + 0.5 * k * k
    } else {
        let (s, c) = angle.sin_cos();
        let unit = k / angle;
        Matrix3::identity() + s * unit + (1.0 - c) * unit * unit
    };
    Ok(RotationMatrix::from_matrix_unchecked(m))
}

/// Inverse of [`exp_so3`] returning `‖θ‖ ∈ [0, π]`.
///
/// At exactly `π` the axis sign is ambiguous; the returned axis has its first
/// nonzero component positive.
pub fn log_so3(r: &RotationMatrix) -> Result<AxisAngle> {
    let r = RotationMatrix::new(*r.matrix())?;
    let m = r.matrix();
    let skew = vee(m);
    let sin_angle = skew.norm();
    let cos_angle = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let angle = sin_angle.atan2(cos_angle);

    if angle < LOG_SMALL_ANGLE {
        // θ = skew · angle / sin(angle), with angle/sin ≈ 1 + angle²/6.
        return Ok(AxisAngle(skew * (1.0 + angle * angle / 6.0)));
    }
    if cos_angle > LOG_NEAR_PI_COS {
        return Ok(AxisAngle(skew * (angle / sin_angle)));
    }

    // (R + Rᵀ)/2 = cos I + (1 - cos) a aᵀ
    let sym = (m + m.transpose()) * 0.5;
    let outer = (sym - Matrix3::identity() * cos_angle) / (1.0 - cos_angle);
    let i = (0..3)
        .max_by(|&a, &b| outer[(a, a)].total_cmp(&outer[(b, b)]))
        .unwrap_or(0);
    let ai = outer[(i, i)].max(0.0).sqrt();
    let mut axis = Vector3::zeros();
    for j in 0..3 {
        axis[j] = if j == i { ai } else { outer[(i, j)] / ai };
    }
    axis /= axis.norm();

    let dot = axis.dot(&skew);
    if dot.abs() > 1e-12 {
        if dot < 0.0 {
            axis = -axis;
        }
    } else if let Some(first) = axis.iter().copied().find(|c| c.abs() > 1e-12) {
        if first < 0.0 {
            axis = -axis;
        }
    }
    Ok(AxisAngle(axis * angle))
}
