use std::f64::consts::FRAC_PI_2;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use super::so3::{exp_so3, log_so3, AxisAngle, RotationMatrix};
use super::{GeometryError, Result};

const QUAT_NORM_TOLERANCE: f64 = 1e-9;
const GIMBAL_BAND: f64 = 1e-6;

/// Unit quaternion `(w, x, y, z)`. Canonical outputs have `w ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let q = Quaternion { w, x, y, z };
        q.validate()?;
        Ok(q)
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    fn validate(&self) -> Result<()> {
        if !self.to_array().iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite("quaternion"));
        }
        let n = self.norm();
        if (n - 1.0).abs() > QUAT_NORM_TOLERANCE {
            return Err(GeometryError::NonUnitQuaternion(n));
        }
        Ok(())
    }

    pub fn to_rotation(&self) -> Result<RotationMatrix> {
        self.validate()?;
        let Quaternion { w, x, y, z } = *self;
        let m = Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        );
        RotationMatrix::new(m)
    }

    /// Shepperd's method, branching on the largest of `w², x², y², z²`.
    pub fn from_rotation(r: &RotationMatrix) -> Self {
        let m = r.matrix();
        let tr = m.trace();
        let (w, x, y, z);
        if tr > m[(0, 0)] && tr > m[(1, 1)] && tr > m[(2, 2)] {
            let s = 2.0 * (1.0 + tr).sqrt();
            w = 0.25 * s;
            x = (m[(2, 1)] - m[(1, 2)]) / s;
            y = (m[(0, 2)] - m[(2, 0)]) / s;
            z = (m[(1, 0)] - m[(0, 1)]) / s;
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = 2.0 * (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt();
            w = (m[(2, 1)] - m[(1, 2)]) / s;
            x = 0.25 * s;
            y = (m[(0, 1)] + m[(1, 0)]) / s;
            z = (m[(0, 2)] + m[(2, 0)]) / s;
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = 2.0 * (1.0 - m[(0, 0)] + m[(1, 1)] - m[(2, 2)]).sqrt();
            w = (m[(0, 2)] - m[(2, 0)]) / s;
            x = (m[(0, 1)] + m[(1, 0)]) / s;
            y = 0.25 * s;
            z = (m[(1, 2)] + m[(2, 1)]) / s;
        } else {
            let s = 2.0 * (1.0 - m[(0, 0)] - m[(1, 1)] + m[(2, 2)]).sqrt();
            w = (m[(1, 0)] - m[(0, 1)]) / s;
            x = (m[(0, 2)] + m[(2, 0)]) / s;
            y = (m[(1, 2)] + m[(2, 1)]) / s;
            z = 0.25 * s;
        }
        let n = (w * w + x * x + y * y + z * z).sqrt();
        let mut q = Quaternion { w: w / n, x: x / n, y: y / n, z: z / n };
        let flip = if q.w != 0.0 {
            q.w < 0.0
        } else {
            [q.x, q.y, q.z].into_iter().find(|c| *c != 0.0).is_some_and(|c| c < 0.0)
        };
        if flip {
            q = Quaternion { w: -q.w, x: -q.x, y: -q.y, z: -q.z };
        }
        q
    }
}

/// Intrinsic ZYX angles: `R = Rz(yaw) · Ry(pitch) · Rx(roll)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EulerAngles {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl EulerAngles {
    pub fn to_array(&self) -> [f64; 3] {
        [self.roll, self.pitch, self.yaw]
    }

    pub fn to_rotation(&self) -> Result<RotationMatrix> {
        if !self.to_array().iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite("Euler angles"));
        }
        let (sr, cr) = self.roll.sin_cos();
        let (sp, cp) = self.pitch.sin_cos();
        let (sy, cy) = self.yaw.sin_cos();
        let m = Matrix3::new(
            cy * cp,
            cy * sp * sr - sy * cr,
            cy * sp * cr + sy * sr,
            sy * cp,
            sy * sp * sr + cy * cr,
            sy * sp * cr - cy * sr,
            -sp,
            cp * sr,
            cp * cr,
        );
        RotationMatrix::new(m)
    }

    /// Fails inside the gimbal-lock band `|pitch ∓ π/2| < 1e-6`.
    pub fn from_rotation(r: &RotationMatrix) -> Result<Self> {
        let m = r.matrix();
        let pitch = (-m[(2, 0)]).clamp(-1.0, 1.0).asin();
        if (pitch.abs() - FRAC_PI_2).abs() < GIMBAL_BAND {
            return Err(GeometryError::DegenerateChart { pitch });
        }
        Ok(EulerAngles {
            roll: m[(2, 1)].atan2(m[(2, 2)]),
            pitch,
            yaw: m[(1, 0)].atan2(m[(0, 0)]),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RotationChart {
    AxisAngle,
    Quaternion,
    Euler,
}

impl RotationChart {
    /// Number of scalars the chart uses.
    pub fn dim(self) -> usize {
        match self {
            RotationChart::AxisAngle | RotationChart::Euler => 3,
            RotationChart::Quaternion => 4,
        }
    }

    pub const ALL: [RotationChart; 3] =
        [RotationChart::AxisAngle, RotationChart::Quaternion, RotationChart::Euler];
}

/// A rotation in one of the supported charts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rotation {
    AxisAngle(AxisAngle),
    Quaternion(Quaternion),
    Euler(EulerAngles),
}

impl Rotation {
    pub fn chart(&self) -> RotationChart {
        match self {
            Rotation::AxisAngle(_) => RotationChart::AxisAngle,
            Rotation::Quaternion(_) => RotationChart::Quaternion,
            Rotation::Euler(_) => RotationChart::Euler,
        }
    }

    pub fn to_matrix(&self) -> Result<RotationMatrix> {
        match self {
            Rotation::AxisAngle(a) => exp_so3(a),
            Rotation::Quaternion(q) => q.to_rotation(),
            Rotation::Euler(e) => e.to_rotation(),
        }
    }

    pub fn from_matrix(r: &RotationMatrix, chart: RotationChart) -> Result<Self> {
        Ok(match chart {
            RotationChart::AxisAngle => Rotation::AxisAngle(log_so3(r)?),
            RotationChart::Quaternion => Rotation::Quaternion(Quaternion::from_rotation(r)),
            RotationChart::Euler => Rotation::Euler(EulerAngles::from_rotation(r)?),
        })
    }

    pub fn to_vec(&self) -> Vec<f64> {
        match self {
            Rotation::AxisAngle(a) => a.to_array().to_vec(),
            Rotation::Quaternion(q) => q.to_array().to_vec(),
            Rotation::Euler(e) => e.to_array().to_vec(),
        }
    }
}

/// Converts between charts, always routing through the rotation matrix.
pub fn rotation_convert(src: &Rotation, dst: RotationChart) -> Result<Rotation> {
    Rotation::from_matrix(&src.to_matrix()?, dst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_4;

    #[test]
    fn zero_axis_angle_to_quaternion() {
        let q = rotation_convert(&Rotation::AxisAngle(AxisAngle::ZERO), RotationChart::Quaternion)
            .unwrap();
        assert_eq!(q, Rotation::Quaternion(Quaternion { w: 1.0, x: 0.0, y: 0.0, z: 0.0 }));
    }

    #[test]
    fn quarter_turn_about_x() {
        let q = rotation_convert(
            &Rotation::AxisAngle(AxisAngle::new(FRAC_PI_2, 0.0, 0.0)),
            RotationChart::Quaternion,
        )
        .unwrap();
        let Rotation::Quaternion(q) = q else { panic!() };
        assert!((q.w - FRAC_PI_4.cos()).abs() < 1e-15);
        assert!((q.x - FRAC_PI_4.sin()).abs() < 1e-15);
        assert!(q.y.abs() < 1e-15 && q.z.abs() < 1e-15);
    }

    #[test]
    fn quaternion_sign_is_canonical() {
        // 3π/2 about z is the same rotation as -π/2; canonical form has w > 0.
        let r = exp_so3(&AxisAngle::new(0.0, 0.0, 1.5 * std::f64::consts::PI)).unwrap();
        let q = Quaternion::from_rotation(&r);
        assert!(q.w > 0.0);
        assert!(q.z < 0.0);
    }

    #[test]
    fn gimbal_lock_is_rejected() {
        let e = EulerAngles { roll: 0.2, pitch: FRAC_PI_2, yaw: -0.4 };
        let r = e.to_rotation().unwrap();
        assert!(matches!(
            EulerAngles::from_rotation(&r),
            Err(GeometryError::DegenerateChart { .. })
        ));
    }

    #[test]
    fn euler_matches_elementary_product() {
        let e = EulerAngles { roll: 0.3, pitch: -0.7, yaw: 1.9 };
        let rx = exp_so3(&AxisAngle::new(e.roll, 0.0, 0.0)).unwrap();
        let ry = exp_so3(&AxisAngle::new(0.0, e.pitch, 0.0)).unwrap();
        let rz = exp_so3(&AxisAngle::new(0.0, 0.0, e.yaw)).unwrap();
        let expected = rz.matrix() * ry.matrix() * rx.matrix();
        assert!((e.to_rotation().unwrap().matrix() - expected).abs().max() < 1e-15);
        let back = EulerAngles::from_rotation(&e.to_rotation().unwrap()).unwrap();
        assert!((back.roll - e.roll).abs() < 1e-12);
        assert!((back.pitch - e.pitch).abs() < 1e-12);
        assert!((back.yaw - e.yaw).abs() < 1e-12);
    }

    #[test]
    fn non_unit_quaternion_rejected() {
        assert!(matches!(
            Quaternion::new(1.0, 0.1, 0.0, 0.0),
            Err(GeometryError::NonUnitQuaternion(_))
        ));
    }
}
