use image::imageops::{resize, FilterType};
use nalgebra::Vector2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    largest_free_square, place_in_patch, plan_layout, random_appearance, render_sample, sample_legal_params,
    HandSample, SampleSource, Slot, SynthConfig,
};
use crate::camera::CameraIntrinsics;
use crate::error::{invalid, Result};
use crate::fitter::{GroundTruth, RigPair};
use crate::hand_model::{HandType, NUM_JOINTS};
use crate::heatmap::{encode_targets, CenterDefinition, CenterMap, Detection};
use crate::imaging::{Mask, RgbImage};
use crate::keypoints::Keypoints2D;

/// Uniform scale and offset taking patch pixels to canvas pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine2 {
    pub scale: f64,
    pub offset: [f64; 2],
}

impl Affine2 {
    /// Resize of a `from`-pixel patch to `slot`, keeping pixel centers aligned.
    pub fn for_slot(from: u32, slot: &Slot) -> Self {
        let a = slot.side as f64 / from as f64;
        Self {
            scale: a,
            offset: [slot.x as f64 + 0.5 * a - 0.5, slot.y as f64 + 0.5 * a - 0.5],
        }
    }

    pub fn apply(&self, p: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new(self.scale * p.x + self.offset[0], self.scale * p.y + self.offset[1])
    }

    /// Camera whose projections equal this map applied after `k`.
    pub fn camera(&self, k: &CameraIntrinsics, width: u32, height: u32) -> CameraIntrinsics {
        CameraIntrinsics {
            fx: self.scale * k.fx,
            fy: self.scale * k.fy,
            cx: self.scale * k.cx + self.offset[0],
            cy: self.scale * k.cy + self.offset[1],
            width,
            height,
        }
    }
}

/// One pasted hand with labels in canvas pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub center: Vector2<f64>,
    pub hand_type: HandType,
    /// Keypoints covered by a later hand, or off the canvas, are hidden.
    pub keypoints: Keypoints2D,
    /// Inclusive pixel bounds of the pasted mask before occlusion.
    pub bbox: [f64; 4],
    /// Pixels this hand still owns after later hands are pasted.
    pub mask: Mask,
    pub affine: Affine2,
    /// Source parameters; the camera maps them onto canvas pixels.
    pub source: Option<SampleSource>,
    pub source_id: String,
}

impl Instance {
    pub fn detection(&self) -> Detection {
        Detection::ground_truth(self.center, self.hand_type, self.keypoints.clone(), self.bbox)
    }

    pub fn ground_truth(&self) -> Option<GroundTruth> {
        self.source.as_ref().map(|s| GroundTruth {
            params: s.params.clone(),
            camera: s.camera,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub canvas: RgbImage,
    /// Union of all hand pixels.
    pub mask: Mask,
    pub camera: CameraIntrinsics,
    /// In paste order; later instances occlude earlier ones.
    pub instances: Vec<Instance>,
    /// Hands requested, including those that found no room.
    pub requested: usize,
}

impl Scene {
    pub fn width(&self) -> u32 {
        self.canvas.width
    }

    pub fn height(&self) -> u32 {
        self.canvas.height
    }
}

struct Placed {
    keypoints: Keypoints2D,
    bbox: [f64; 4],
    hand_type: HandType,
    affine: Affine2,
    source: Option<SampleSource>,
    source_id: String,
}

struct Builder {
    size: u32,
    canvas: RgbImage,
    owner: Vec<Option<usize>>,
    placed: Vec<Placed>,
}

fn resized(sample: &HandSample, side: u32) -> (RgbImage, Mask) {
    if sample.side() == side {
        return (sample.rgb.clone(), sample.mask.clone());
    }
    let n = sample.side();
    let rgb = image::Rgb32FImage::from_fn(n, n, |x, y| image::Rgb(sample.rgb.get(x, y).map(|v| v as f32)));
    let rgb = resize(&rgb, side, side, FilterType::Triangle);
    let rgb = RgbImage {
        width: side,
        height: side,
        data: rgb.pixels().map(|p| p.0.map(|v| (v as f64).clamp(0.0, 1.0))).collect(),
    };
    let mask = Mask::from_luma8(&resize(&sample.mask.to_luma8(), side, side, FilterType::Nearest));
    (rgb, mask)
}

impl Builder {
    fn new(size: u32, background: [f64; 3]) -> Self {
        Self {
            size,
            canvas: RgbImage::filled(size, size, background),
            owner: vec![None; size as usize * size as usize],
            placed: Vec::new(),
        }
    }

    fn paste(&mut self, sample: &HandSample, slot: &Slot) -> Result<()> {
        let (rgb, mask) = resized(sample, slot.side);
        let affine = Affine2::for_slot(sample.side(), slot);
        let id = self.placed.len();
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
        for y in 0..slot.side {
            for x in 0..slot.side {
                let (cx, cy) = (slot.x + x, slot.y + y);
                if !mask.get(x, y) || cx >= self.size || cy >= self.size {
                    continue;
                }
                self.canvas.set(cx, cy, rgb.get(x, y));
                self.owner[(cy * self.size + cx) as usize] = Some(id);
                (x0, y0, x1, y1) = (x0.min(cx), y0.min(cy), x1.max(cx), y1.max(cy));
            }
        }
        if x0 > x1 {
            return Err(invalid("sample", format!("{} has no pixels on the canvas", sample.source_id)));
        }
        let mut keypoints = Keypoints2D::invisible();
        for (j, p) in sample.keypoints.iter_visible() {
            keypoints.set(j, affine.apply(&p))?;
        }
        let (w, h) = (self.size, self.size);
        self.placed.push(Placed {
            keypoints,
            bbox: [x0 as f64, y0 as f64, x1 as f64, y1 as f64],
            hand_type: sample.hand_type,
            affine,
            source: sample.source.as_ref().map(|s| SampleSource {
                camera: affine.camera(&s.camera, w, h),
                ..s.clone()
            }),
            source_id: sample.source_id.clone(),
        });
        Ok(())
    }

    fn finish(self, center_definition: CenterDefinition, camera: CameraIntrinsics, requested: usize) -> Scene {
        let n = self.size;
        let mut scene_mask = Mask::empty(n, n);
        for (i, o) in self.owner.iter().enumerate() {
            scene_mask.data[i] = o.is_some();
        }
        let mut instances = Vec::new();
        for (id, p) in self.placed.into_iter().enumerate() {
            let mut mask = Mask::empty(n, n);
            for (i, o) in self.owner.iter().enumerate() {
                mask.data[i] = *o == Some(id);
            }
            if mask.count() == 0 {
                continue;
            }
            let mut keypoints = p.keypoints;
            for j in 0..NUM_JOINTS {
                let Some(q) = keypoints.get(j) else { continue };
                let (x, y) = (q.x.round(), q.y.round());
                let on_canvas = x >= 0.0 && y >= 0.0 && x < n as f64 && y < n as f64;
                let covered = on_canvas && matches!(self.owner[(y as u32 * n + x as u32) as usize], Some(o) if o > id);
                if !on_canvas || covered {
                    keypoints.hide(j);
                }
            }
            let center = center_definition
                .center(&keypoints, &p.bbox)
                .or_else(|| CenterDefinition::BoxCenter.center(&keypoints, &p.bbox))
                .expect("box center always exists");
            instances.push(Instance {
                center,
                hand_type: p.hand_type,
                keypoints,
                bbox: p.bbox,
                mask,
                affine: p.affine,
                source: p.source,
                source_id: p.source_id,
            });
        }
        Scene {
            canvas: self.canvas,
            mask: scene_mask,
            camera,
            instances,
            requested,
        }
    }
}

/// Pastes `base` over the whole canvas, then each extra, rescaled to a
/// random side, at the next greedy shelf slot. Extras that find no room are
/// left out.
pub fn compose_scene<R: Rng>(base: &HandSample, extras: &[HandSample], rng: &mut R, cfg: &SynthConfig) -> Result<Scene> {
    cfg.validate()?;
    if 1 + extras.len() > cfg.max_samples {
        return Err(invalid(
            "extras",
            format!("{} extras exceed the limit of {} samples per scene", extras.len(), cfg.max_samples),
        ));
    }
    base.validate()?;
    for e in extras {
        e.validate()?;
    }
    let c = cfg.canvas_size;
    let mut b = Builder::new(c, cfg.background);
    b.paste(base, &Slot { x: 0, y: 0, side: c })?;
    for (slot, s) in plan_layout(rng, extras.len(), cfg).iter().zip(extras) {
        b.paste(s, slot)?;
    }
    Ok(b.finish(cfg.center_definition, CameraIntrinsics::centered(c, c), 1 + extras.len()))
}

/// Scene of hands rendered straight into their slots under the shared
/// camera, so every instance's parameters are exact in that camera. The
/// base hand takes the largest square left free by the extras.
pub fn synthesize_scene<R: Rng>(rigs: &RigPair, rng: &mut R, cfg: &SynthConfig) -> Result<Scene> {
    cfg.validate()?;
    let c = cfg.canvas_size;
    let k = CameraIntrinsics::centered(c, c);
    let count = rng.random_range(cfg.min_hands..=cfg.max_hands);
    let slots = plan_layout(rng, count - 1, cfg);
    let free = largest_free_square(&slots, c);
    let base = if free.side >= cfg.min_side {
        let side = rng.random_range(cfg.min_side..=free.side.min(cfg.max_side));
        Slot { side, ..free }
    } else {
        Slot { x: 0, y: 0, side: cfg.min_side }
    };
    let mut b = Builder::new(c, cfg.background);
    for (i, slot) in std::iter::once(base).chain(slots).enumerate() {
        let hand = if rng.random_bool(cfg.left_fraction) {
            HandType::Left
        } else {
            HandType::Right
        };
        let rig = rigs.get(hand);
        let mut params = sample_legal_params(rng, cfg);
        if hand == HandType::Left {
            params = params.mirrored();
        }
        let (texture, lighting) = random_appearance(rng, rig.num_vertices());
        let k_patch = k.shifted(-(slot.x as f64), -(slot.y as f64), slot.side, slot.side);
        let params = place_in_patch(rig, &params, &k_patch, cfg.fill)?;
        let mut sample = render_sample(rig, &params, &texture, &lighting, &k_patch)?;
        sample.source_id = format!("synthetic-{i}");
        b.paste(&sample, &slot)?;
    }
    Ok(b.finish(cfg.center_definition, k, count))
}

/// Center-map targets for the scene's labels.
pub fn scene_targets(scene: &Scene, center_definition: CenterDefinition, min_iou: f64) -> Result<CenterMap> {
    let dets: Vec<Detection> = scene
        .instances
        .iter()
        .map(|inst| {
            let mut d = inst.detection();
            if let Some(c) = center_definition.center(&inst.keypoints, &inst.bbox) {
                d.center = c;
            }
            d
        })
        .collect();
    encode_targets(&dets, scene.width(), scene.height(), min_iou)
}
