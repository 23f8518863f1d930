//! Axis-angle (Rodrigues vector) rotations.

use nalgebra::{Matrix3, Vector3};

use crate::error::{invalid, Result};

/// Converts a Rodrigues vector to a rotation matrix.
///
/// The rotation angle is the vector norm and the axis its direction. The zero
/// vector maps to the identity.
pub fn rodrigues(axis_angle: &Vector3<f64>) -> Result<Matrix3<f64>> {
    if !axis_angle.iter().all(|v| v.is_finite()) {
        return Err(invalid("axis_angle", format!("non-finite input {axis_angle:?}")));
    }
    Ok(rodrigues_unchecked(axis_angle))
}

/// `rodrigues` for inputs already known to be finite.
pub(crate) fn rodrigues_unchecked(v: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = v.norm_squared();
    // R = I + a [v]x + b [v]x^2 with a = sin(t)/t, b = (1 - cos(t))/t^2
    let (a, b) = if theta2 < 1e-16 {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    let k = skew(v);
    Matrix3::identity() + k * a + (k * k) * b
}

pub(crate) fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Axis-angle of the rotation conjugated by the reflection x -> -x.
pub fn mirror_axis_angle(v: &Vector3<f64>) -> Vector3<f64> {
    Vector3::new(v.x, -v.y, -v.z)
}
