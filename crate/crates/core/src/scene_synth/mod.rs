//! Multi-hand composite scenes with exact labels: hands are rendered (or
//! imported as square crops), rescaled and pasted onto a shared canvas by
//! greedy shelf packing.

mod compose;
mod io;
mod layout;
mod random;

pub use compose::{compose_scene, scene_targets, synthesize_scene, Affine2, Instance, Scene};
pub use io::{read_scene, write_atomic, write_scene, SCENE_FILE};
pub use layout::{largest_free_square, plan_layout, Slot};
pub use random::{perturb_params, random_appearance, sample_legal_params};

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::camera::{project, CameraIntrinsics, Z_MIN};
use crate::error::{invalid, Error, Result};
use crate::hand_model::{lbs_forward, HandParams, HandRig, HandType};
use crate::heatmap::CenterDefinition;
use crate::imaging::{Mask, RgbImage};
use crate::keypoints::Keypoints2D;
use crate::renderer::{render_mesh, Lighting, Texture};

/// Side of the square composite canvas.
pub const CANVAS_SIZE: u32 = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub canvas_size: u32,
    pub min_side: u32,
    pub max_side: u32,
    /// Upper bound on hands per scene, base included.
    pub max_samples: usize,
    /// Hands per self-rendered scene are drawn from `min_hands..=max_hands`.
    pub min_hands: usize,
    pub max_hands: usize,
    pub left_fraction: f64,
    pub background: [f64; 3],
    /// Fraction of its slot a rendered hand spans.
    pub fill: f64,
    /// Largest tilt (radians) away from palm-to-camera.
    pub max_tilt: f64,
    pub max_flexion: f64,
    pub max_twist: f64,
    pub max_abduction: f64,
    pub max_shape: f64,
    pub center_definition: CenterDefinition,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            canvas_size: CANVAS_SIZE,
            min_side: 96,
            max_side: 320,
            max_samples: 10,
            min_hands: 3,
            max_hands: 6,
            left_fraction: 0.5,
            background: [0.5, 0.5, 0.5],
            fill: 0.85,
            max_tilt: 0.5,
            max_flexion: 1.0,
            max_twist: 0.15,
            max_abduction: 0.2,
            max_shape: 0.5,
            center_definition: CenterDefinition::VisibleMean,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.min_side == 0 || self.min_side > self.max_side {
            return bad("`min_side` must be positive and at most `max_side`");
        }
        if self.max_side > self.canvas_size {
            return bad("`max_side` exceeds `canvas_size`");
        }
        if self.max_samples == 0 || self.max_samples > 10 {
            return bad("`max_samples` must lie in 1..=10");
        }
        if self.min_hands == 0 || self.min_hands > self.max_hands || self.max_hands > self.max_samples {
            return bad("hand counts must satisfy 1 <= min_hands <= max_hands <= max_samples");
        }
        if !(0.0..=1.0).contains(&self.left_fraction) {
            return bad("`left_fraction` must lie in [0, 1]");
        }
        if !(self.fill > 0.0 && self.fill <= 1.0) {
            return bad("`fill` must lie in (0, 1]");
        }
        if self.background.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return bad("`background` must lie in [0, 1]");
        }
        let ranges = [self.max_tilt, self.max_flexion, self.max_twist, self.max_abduction, self.max_shape];
        if ranges.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return bad("parameter ranges must be non-negative");
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parameters a sample was rendered from, with the camera under which they
/// project onto the sample's labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSource {
    pub params: HandParams,
    pub texture: Texture,
    pub lighting: Lighting,
    pub camera: CameraIntrinsics,
}

/// A square single-hand crop with labels in patch pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct HandSample {
    pub rgb: RgbImage,
    pub mask: Mask,
    pub keypoints: Keypoints2D,
    /// Inclusive pixel bounds `[x0, y0, x1, y1]` of the mask.
    pub bbox: [f64; 4],
    pub hand_type: HandType,
    pub source: Option<SampleSource>,
    pub source_id: String,
}

impl HandSample {
    pub fn side(&self) -> u32 {
        self.rgb.width
    }

    pub fn validate(&self) -> Result<()> {
        let (w, h) = self.rgb.dims();
        if w != h || w == 0 {
            return Err(invalid("sample", format!("patch must be square, got {w}x{h}")));
        }
        if self.mask.dims() != (w, h) {
            return Err(invalid("sample", "mask and patch sizes differ"));
        }
        if self.mask.count() == 0 {
            return Err(invalid("sample", "empty mask"));
        }
        let max = (w - 1) as f64;
        if let Some((j, _)) = self
            .keypoints
            .iter_visible()
            .find(|(_, p)| !(0.0..=max).contains(&p.x) || !(0.0..=max).contains(&p.y))
        {
            return Err(invalid("sample", format!("visible keypoint {j} lies outside the patch")));
        }
        Ok(())
    }
}

fn mask_bbox(mask: &Mask) -> Option<[f64; 4]> {
    mask.bounds().map(|b| b.map(f64::from))
}

/// Renders a hand onto a square patch seen through `k_patch`.
pub fn render_sample(
    rig: &HandRig,
    params: &HandParams,
    texture: &Texture,
    lighting: &Lighting,
    k_patch: &CameraIntrinsics,
) -> Result<HandSample> {
    if k_patch.width != k_patch.height {
        return Err(invalid("k_patch", "patch must be square"));
    }
    let mesh = lbs_forward(rig, params)?;
    let (w, h) = (k_patch.width as f64, k_patch.height as f64);
    let inside = mesh.vertices.iter().all(|v| {
        let p = k_patch.project_point(v);
        v.z > Z_MIN && p.x >= 0.0 && p.y >= 0.0 && p.x <= w - 1.0 && p.y <= h - 1.0
    });
    if !inside {
        return Err(Error::Render("hand is not inside the patch frustum".into()));
    }
    let out = render_mesh(&mesh.vertices, rig.faces(), texture, lighting, k_patch)?;
    let bbox = mask_bbox(&out.silhouette).ok_or_else(|| Error::Render("empty silhouette".into()))?;
    let points = project(&mesh.joints, k_patch)?;
    let visible: Vec<bool> = points
        .iter()
        .map(|p| p.x >= 0.0 && p.y >= 0.0 && p.x <= w - 1.0 && p.y <= h - 1.0)
        .collect();
    Ok(HandSample {
        rgb: out.rgb,
        mask: out.silhouette,
        keypoints: Keypoints2D::new(&points, &visible)?,
        bbox,
        hand_type: rig.hand_type(),
        source: Some(SampleSource {
            params: params.clone(),
            texture: texture.clone(),
            lighting: lighting.clone(),
            camera: *k_patch,
        }),
        source_id: "rendered".into(),
    })
}

/// Horizontal mirror of a sample; a right hand becomes a left hand.
pub fn flip_sample(s: &HandSample) -> HandSample {
    let last = s.rgb.width as f64 - 1.0;
    let mut keypoints = Keypoints2D::invisible();
    for (j, p) in s.keypoints.iter_visible() {
        keypoints
            .set(j, Vector2::new(last - p.x, p.y))
            .expect("mirrored keypoint is finite");
    }
    HandSample {
        rgb: s.rgb.flipped(),
        mask: s.mask.flipped(),
        keypoints,
        bbox: [last - s.bbox[2], s.bbox[1], last - s.bbox[0], s.bbox[3]],
        hand_type: s.hand_type.flipped(),
        source: s.source.as_ref().map(|src| SampleSource {
            params: src.params.mirrored(),
            texture: src.texture.clone(),
            lighting: src.lighting.mirrored(),
            camera: CameraIntrinsics {
                cx: last - src.camera.cx,
                ..src.camera
            },
        }),
        source_id: s.source_id.clone(),
    }
}

/// Sets the translation of `params` so the hand spans about `fill` of the
/// square patch `k_patch`, centered, with every vertex inside the patch.
pub fn place_in_patch(rig: &HandRig, params: &HandParams, k_patch: &CameraIntrinsics, fill: f64) -> Result<HandParams> {
    let mut p = params.clone();
    p.translation = [0.0; 3];
    let rest = lbs_forward(rig, &p)?.vertices;
    let side = k_patch.width as f64;
    let lo = rest.iter().fold([f64::INFINITY; 3], |a, v| [a[0].min(v.x), a[1].min(v.y), a[2].min(v.z)]);
    let hi = rest.iter().fold([f64::NEG_INFINITY; 3], |a, v| [a[0].max(v.x), a[1].max(v.y), a[2].max(v.z)]);
    let extent = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    let mut z = k_patch.fx.max(k_patch.fy) * extent / (fill * side);
    let target = Vector2::new((side - 1.0) / 2.0, (side - 1.0) / 2.0);
    let mut xy = Vector2::new(-(lo[0] + hi[0]) / 2.0, -(lo[1] + hi[1]) / 2.0);
    let mut zc = z - (lo[2] + hi[2]) / 2.0;
    for attempt in 0..40 {
        p.translation = [xy.x, xy.y, zc];
        let verts: Vec<_> = rest.iter().map(|v| v + p.translation()).collect();
        if verts.iter().any(|v| v.z <= Z_MIN) {
            zc += 0.05;
            continue;
        }
        let px: Vec<Vector2<f64>> = verts.iter().map(|v| k_patch.project_point(v)).collect();
        let (mut a, mut b) = (Vector2::repeat(f64::INFINITY), Vector2::repeat(f64::NEG_INFINITY));
        for q in &px {
            a = a.inf(q);
            b = b.sup(q);
        }
        let mid = (a + b) / 2.0;
        let span = (b - a).max();
        if attempt < 4 {
            // recenter, then rescale depth toward the requested span
            xy -= Vector2::new((mid.x - target.x) * zc / k_patch.fx, (mid.y - target.y) * zc / k_patch.fy);
            let ratio = span / (fill * side);
            z = zc * ratio;
            zc = z;
            continue;
        }
        if a.x >= 1.0 && a.y >= 1.0 && b.x <= side - 2.0 && b.y <= side - 2.0 {
            return Ok(p);
        }
        zc *= 1.05;
        xy -= Vector2::new((mid.x - target.x) * zc / k_patch.fx, (mid.y - target.y) * zc / k_patch.fy);
    }
    Err(Error::Render("could not fit the hand inside its patch".into()))
}

#[cfg(test)]
mod tests;
