use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rotation::mirror_axis_angle;

pub const NUM_SHAPE: usize = 10;
pub const NUM_POSE: usize = 48;
pub const NUM_TRANSLATION: usize = 3;
/// Length of the flattened parameter vector: shape, pose, translation.
pub const NUM_PARAMS: usize = NUM_SHAPE + NUM_POSE + NUM_TRANSLATION;

/// Offset of the pose block inside the flattened parameter vector.
pub const POSE_OFFSET: usize = NUM_SHAPE;
/// Offset of the translation block inside the flattened parameter vector.
pub const TRANSLATION_OFFSET: usize = NUM_SHAPE + NUM_POSE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HandType {
    Left,
    Right,
}

impl HandType {
    pub fn flipped(self) -> Self {
        match self {
            HandType::Left => HandType::Right,
            HandType::Right => HandType::Left,
        }
    }

    /// Channel index of this type in a center map (left = 0, right = 1).
    pub fn channel(self) -> usize {
        match self {
            HandType::Left => 0,
            HandType::Right => 1,
        }
    }

    pub fn from_channel(c: usize) -> Self {
        if c == 0 {
            HandType::Left
        } else {
            HandType::Right
        }
    }
}

/// Shape coefficients, per-bone axis-angle rotations (bone 0 is the global
/// rotation) and camera-frame translation in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ParamsRepr", try_from = "ParamsRepr")]
pub struct HandParams {
    pub shape: [f64; NUM_SHAPE],
    pub pose: [f64; NUM_POSE],
    pub translation: [f64; NUM_TRANSLATION],
}

impl Default for HandParams {
    fn default() -> Self {
        Self::zeros()
    }
}

impl HandParams {
    pub fn zeros() -> Self {
        Self {
            shape: [0.0; NUM_SHAPE],
            pose: [0.0; NUM_POSE],
            translation: [0.0; NUM_TRANSLATION],
        }
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != NUM_PARAMS {
            return Err(invalid(
                "params",
                format!("expected {NUM_PARAMS} values, got {}", v.len()),
            ));
        }
        let mut p = Self::zeros();
        p.shape.copy_from_slice(&v[..NUM_SHAPE]);
        p.pose.copy_from_slice(&v[POSE_OFFSET..TRANSLATION_OFFSET]);
        p.translation.copy_from_slice(&v[TRANSLATION_OFFSET..]);
        Ok(p)
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(NUM_PARAMS);
        v.extend_from_slice(&self.shape);
        v.extend_from_slice(&self.pose);
        v.extend_from_slice(&self.translation);
        v
    }

    pub fn is_finite(&self) -> bool {
        self.shape
            .iter()
            .chain(&self.pose)
            .chain(&self.translation)
            .all(|x| x.is_finite())
    }

    pub(crate) fn ensure_finite(&self) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(invalid("params", "non-finite parameter value"))
        }
    }

    /// Axis-angle of bone `k` (0 = global rotation).
    pub fn bone_rotation(&self, k: usize) -> Vector3<f64> {
        Vector3::new(self.pose[3 * k], self.pose[3 * k + 1], self.pose[3 * k + 2])
    }

    pub fn set_bone_rotation(&mut self, k: usize, v: &Vector3<f64>) {
        self.pose[3 * k..3 * k + 3].copy_from_slice(v.as_slice());
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::from(self.translation)
    }

    /// Articulation block (all bones except the global one).
    pub fn articulation(&self) -> &[f64] {
        &self.pose[3..]
    }

    /// Parameters describing the reflection of this hand through x = 0.
    pub fn mirrored(&self) -> Self {
        let mut out = self.clone();
        for k in 0..NUM_POSE / 3 {
            out.set_bone_rotation(k, &mirror_axis_angle(&self.bone_rotation(k)));
        }
        out.translation[0] = -self.translation[0];
        out
    }
}

#[derive(Serialize, Deserialize)]
struct ParamsRepr {
    shape: Vec<f64>,
    pose: Vec<f64>,
    translation: Vec<f64>,
}

impl From<HandParams> for ParamsRepr {
    fn from(p: HandParams) -> Self {
        Self {
            shape: p.shape.to_vec(),
            pose: p.pose.to_vec(),
            translation: p.translation.to_vec(),
        }
    }
}

impl TryFrom<ParamsRepr> for HandParams {
    type Error = Error;

    fn try_from(r: ParamsRepr) -> Result<Self> {
        let check = |name: &'static str, v: &[f64], n: usize| {
            if v.len() != n {
                Err(invalid(name, format!("expected {n} values, got {}", v.len())))
            } else {
                Ok(())
            }
        };
        check("shape", &r.shape, NUM_SHAPE)?;
        check("pose", &r.pose, NUM_POSE)?;
        check("translation", &r.translation, NUM_TRANSLATION)?;
        let mut p = Self::zeros();
        p.shape.copy_from_slice(&r.shape);
        p.pose.copy_from_slice(&r.pose);
        p.translation.copy_from_slice(&r.translation);
        Ok(p)
    }
}
