//! Pinhole camera shared by every hand in a scene.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Default focal length in pixels for multi-hand scenes.
pub const DEFAULT_FOCAL: f64 = 512.0;
/// Points closer than this (meters) are treated as behind the camera.
pub const Z_MIN: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Focal 512 with the principal point at the image center.
    pub fn centered(width: u32, height: u32) -> Self {
        Self {
            fx: DEFAULT_FOCAL,
            fy: DEFAULT_FOCAL,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_crop()?;
        if !(0.0..=self.width as f64).contains(&self.cx) || !(0.0..=self.height as f64).contains(&self.cy) {
            return Err(invalid("intrinsics", "principal point outside the image"));
        }
        Ok(())
    }

    /// Checks that hold for crops of a larger image, whose principal point
    /// may lie outside the crop.
    pub fn validate_crop(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.fx.is_finite() || !self.fy.is_finite() {
            return Err(invalid("intrinsics", "focal lengths must be positive"));
        }
        if !self.cx.is_finite() || !self.cy.is_finite() || self.width == 0 || self.height == 0 {
            return Err(invalid("intrinsics", "principal point must be finite and the image nonempty"));
        }
        Ok(())
    }

    /// Intrinsics after shifting the image origin by `(dx, dy)` pixels.
    pub fn shifted(&self, dx: f64, dy: f64, width: u32, height: u32) -> Self {
        Self {
            cx: self.cx + dx,
            cy: self.cy + dy,
            width,
            height,
            ..*self
        }
    }

    pub fn project_point(&self, p: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }
}

/// Perspective projection to pixel coordinates. No clipping to the image.
pub fn project(points: &[Vector3<f64>], k: &CameraIntrinsics) -> Result<Vec<Vector2<f64>>> {
    points
        .iter()
        .enumerate()
        .map(|(index, p)| {
            if !(p.z > Z_MIN) {
                return Err(Error::BehindCamera { index, z: p.z });
            }
            Ok(k.project_point(p))
        })
        .collect()
}

/// Camera-frame point at `depth` along the ray through `pixel`.
pub fn backproject_ray(pixel: &Vector2<f64>, depth: f64, k: &CameraIntrinsics) -> Result<Vector3<f64>> {
    if !(depth > 0.0) || !depth.is_finite() {
        return Err(invalid("depth", format!("must be positive, got {depth}")));
    }
    Ok(Vector3::new(
        (pixel.x - k.cx) / k.fx * depth,
        (pixel.y - k.cy) / k.fy * depth,
        depth,
    ))
}
