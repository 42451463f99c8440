use std::ops::Mul;

use nalgebra::{Matrix3, Point3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance accepted on user-supplied rotation matrices before they are
/// projected back onto SO(3).
const INPUT_TOL: f64 = 1e-6;

/// A proper rigid motion `p ↦ R p + t`, millimetres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Validate `rotation` (orthonormal, det +1 within 1e-6) and snap it to
    /// the nearest exact rotation.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        crate::volume::check_rotation(&rotation, "rotation")
            .map_err(|_| Error::Geometry(format!("not a proper rotation (tolerance {INPUT_TOL:e}): {rotation}")))?;
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::Geometry("translation is not finite".into()));
        }
        Ok(Self {
            rotation: project_to_rotation(&rotation),
            translation,
        })
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    pub fn from_rotation(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: *rotation.matrix(),
            translation,
        }
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let axis = Unit::new_normalize(*axis);
        Self::from_rotation(Rotation3::from_axis_angle(&axis, angle), translation)
    }

    /// Used internally where `rotation` is known to come from an orthogonal
    /// decomposition.
    pub(crate) fn from_parts_unchecked(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn apply_point(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn apply_points(&self, pts: &[Point3<f64>]) -> Vec<Point3<f64>> {
        pts.iter().map(|p| self.apply_point(p)).collect()
    }

    /// `self ∘ other`: apply `other` first.
    pub fn then_after(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Rotation angle in radians, in `[0, π]`.
    pub fn rotation_angle(&self) -> f64 {
        let c = ((self.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        c.acos()
    }

    /// Angle (radians) of the relative rotation between two transforms.
    pub fn rotation_angle_to(&self, other: &RigidTransform) -> f64 {
        self.inverse().then_after(other).rotation_angle()
    }

    /// Euler angles (radians) about the fixed X, Y and Z axes, so that
    /// `R = Rz(γ) Ry(β) Rx(α)`.
    pub fn euler_xyz(&self) -> [f64; 3] {
        let (a, b, c) = Rotation3::from_matrix_unchecked(self.rotation).euler_angles();
        [a, b, c]
    }

    /// Largest deviation from the rotation invariants `RᵀR = I`, `det R = 1`.
    pub fn orthonormality_error(&self) -> f64 {
        let r = &self.rotation;
        let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
        ortho.max((r.determinant() - 1.0).abs())
    }
}

impl Mul for RigidTransform {
    type Output = RigidTransform;
    fn mul(self, rhs: RigidTransform) -> RigidTransform {
        self.then_after(&rhs)
    }
}

/// `a ∘ b`: apply `b`, then `a`.
pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    a.then_after(b)
}

pub fn invert(a: &RigidTransform) -> RigidTransform {
    a.inverse()
}

/// Nearest rotation matrix in the Frobenius sense.
pub(crate) fn project_to_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let d = (u * vt).determinant().signum();
    u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * vt
}

/// JSON form: row-major `R` as three rows, `t` in millimetres.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RigidTransformJson {
    #[serde(rename = "R")]
    pub r: [[f64; 3]; 3],
    pub t: [f64; 3],
}

impl From<&RigidTransform> for RigidTransformJson {
    fn from(x: &RigidTransform) -> Self {
        let m = &x.rotation;
        Self {
            r: [
                [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
                [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
                [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
            ],
            t: [x.translation.x, x.translation.y, x.translation.z],
        }
    }
}

impl TryFrom<&RigidTransformJson> for RigidTransform {
    type Error = Error;
    fn try_from(j: &RigidTransformJson) -> Result<Self> {
        let r = Matrix3::from_row_slice(&j.r.concat());
        RigidTransform::new(r, Vector3::from(j.t))
    }
}

impl Serialize for RigidTransform {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        RigidTransformJson::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = RigidTransformJson::deserialize(d)?;
        RigidTransform::try_from(&j).map_err(serde::de::Error::custom)
    }
}


#[cfg(test)]
mod tests {
    use super::strategy::arb_transform;
    use super::*;
    use proptest::prelude::*;

    fn close(a: &RigidTransform, b: &RigidTransform, tol: f64) -> bool {
        (a.rotation - b.rotation).abs().max() < tol && (a.translation - b.translation).abs().max() < tol
    }

    #[test]
    fn identity_is_neutral() {
        let x = RigidTransform::from_axis_angle(&Vector3::new(1.0, 2.0, 3.0), 0.7, Vector3::new(1.0, -2.0, 5.0));
        assert_eq!(compose(&RigidTransform::identity(), &x), x);
        assert_eq!(compose(&x, &RigidTransform::identity()), x);
    }

    #[test]
    fn compose_applies_right_operand_first() {
        let shift = RigidTransform::from_translation(Vector3::new(1.0, 0.0, 0.0));
        let quarter = RigidTransform::from_axis_angle(&Vector3::z(), std::f64::consts::FRAC_PI_2, Vector3::zeros());
        let p = compose(&quarter, &shift).apply_point(&Point3::origin());
        assert!((p - Point3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn rejects_reflections_and_skew() {
        let refl = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(RigidTransform::new(refl, Vector3::zeros()).is_err());
        let skew = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(RigidTransform::new(skew, Vector3::zeros()).is_err());
    }

    #[test]
    fn json_round_trip() {
        let x = RigidTransform::from_axis_angle(&Vector3::new(0.3, -1.0, 0.2), 1.1, Vector3::new(4.0, 5.0, 6.0));
        let s = serde_json::to_string(&x).unwrap();
        assert!(s.contains("\"R\":[["));
        let back: RigidTransform = serde_json::from_str(&s).unwrap();
        assert!(close(&x, &back, 1e-12));
    }

    proptest! {
        #[test]
        fn inverse_cancels(x in arb_transform()) {
            prop_assert!(close(&compose(&invert(&x), &x), &RigidTransform::identity(), 1e-9));
            prop_assert!(close(&compose(&x, &invert(&x)), &RigidTransform::identity(), 1e-9));
        }

        #[test]
        fn composition_is_associative(a in arb_transform(), b in arb_transform(), c in arb_transform()) {
            let left = compose(&compose(&a, &b), &c);
            let right = compose(&a, &compose(&b, &c));
            prop_assert!(close(&left, &right, 1e-9));
            prop_assert!(left.orthonormality_error() < 1e-9);
        }
    }
}
