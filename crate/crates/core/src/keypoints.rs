//! 21-point 2D hand keypoints with visibility.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::hand_model::NUM_JOINTS;

/// Coordinates stored for an invisible keypoint.
pub const INVISIBLE: [f64; 2] = [-1.0, -1.0];

/// Keypoints in pixels. Invisible entries always hold [`INVISIBLE`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KeypointsRepr", into = "KeypointsRepr")]
pub struct Keypoints2D {
    points: [Vector2<f64>; NUM_JOINTS],
    visible: [bool; NUM_JOINTS],
}

#[derive(Serialize, Deserialize)]
struct KeypointsRepr {
    points: Vec<[f64; 2]>,
    visible: Vec<bool>,
}

impl From<Keypoints2D> for KeypointsRepr {
    fn from(k: Keypoints2D) -> Self {
        Self {
            points: k.points.iter().map(|p| [p.x, p.y]).collect(),
            visible: k.visible.to_vec(),
        }
    }
}

impl TryFrom<KeypointsRepr> for Keypoints2D {
    type Error = crate::Error;

    fn try_from(r: KeypointsRepr) -> Result<Self> {
        let points: Vec<_> = r.points.iter().map(|p| Vector2::new(p[0], p[1])).collect();
        Keypoints2D::new(&points, &r.visible)
    }
}

fn sentinel() -> Vector2<f64> {
    Vector2::new(INVISIBLE[0], INVISIBLE[1])
}

impl Keypoints2D {
    pub fn new(points: &[Vector2<f64>], visible: &[bool]) -> Result<Self> {
        if points.len() != NUM_JOINTS || visible.len() != NUM_JOINTS {
            return Err(invalid(
                "keypoints",
                format!("expected {NUM_JOINTS} points and flags, got {} and {}", points.len(), visible.len()),
            ));
        }
        let mut k = Self::invisible();
        for j in 0..NUM_JOINTS {
            if visible[j] {
                k.set(j, points[j])?;
            }
        }
        Ok(k)
    }

    /// All points visible.
    pub fn from_points(points: &[Vector2<f64>]) -> Result<Self> {
        Self::new(points, &[true; NUM_JOINTS])
    }

    pub fn invisible() -> Self {
        Self {
            points: [sentinel(); NUM_JOINTS],
            visible: [false; NUM_JOINTS],
        }
    }

    pub fn set(&mut self, j: usize, p: Vector2<f64>) -> Result<()> {
        if !(p.x.is_finite() && p.y.is_finite()) {
            return Err(invalid("keypoints", format!("visible point {j} is not finite")));
        }
        self.points[j] = p;
        self.visible[j] = true;
        Ok(())
    }

    pub fn hide(&mut self, j: usize) {
        self.points[j] = sentinel();
        self.visible[j] = false;
    }

    pub fn get(&self, j: usize) -> Option<Vector2<f64>> {
        self.visible[j].then_some(self.points[j])
    }

    pub fn is_visible(&self, j: usize) -> bool {
        self.visible[j]
    }

    pub fn points(&self) -> &[Vector2<f64>; NUM_JOINTS] {
        &self.points
    }

    pub fn visibility(&self) -> &[bool; NUM_JOINTS] {
        &self.visible
    }

    pub fn num_visible(&self) -> usize {
        self.visible.iter().filter(|v| **v).count()
    }

    pub fn iter_visible(&self) -> impl Iterator<Item = (usize, Vector2<f64>)> + '_ {
        (0..NUM_JOINTS).filter_map(|j| self.get(j).map(|p| (j, p)))
    }

    /// Mean of the visible points.
    pub fn visible_mean(&self) -> Option<Vector2<f64>> {
        let n = self.num_visible();
        if n == 0 {
            return None;
        }
        let sum = self.iter_visible().fold(Vector2::zeros(), |acc, (_, p)| acc + p);
        Some(sum / n as f64)
    }

    /// Applies `f` to every visible point.
    pub fn map(&self, f: impl Fn(Vector2<f64>) -> Vector2<f64>) -> Result<Self> {
        let mut out = Self::invisible();
        for (j, p) in self.iter_visible() {
            out.set(j, f(p))?;
        }
        Ok(out)
    }

    /// Axis-aligned bounds `[x0, y0, x1, y1]` of the visible points.
    pub fn bounds(&self) -> Option<[f64; 4]> {
        let mut it = self.iter_visible().peekable();
        it.peek()?;
        let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for (_, p) in it {
            b[0] = b[0].min(p.x);
            b[1] = b[1].min(p.y);
            b[2] = b[2].max(p.x);
            b[3] = b[3].max(p.y);
        }
        Some(b)
    }
}
