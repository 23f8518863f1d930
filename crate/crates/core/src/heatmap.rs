//! Center-map targets on the stride-8 grid: Gaussian encoding, focal loss and
//! max-pool peak decoding.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::hand_model::{HandType, NUM_JOINTS};
use crate::keypoints::Keypoints2D;

pub const STRIDE: usize = 8;
pub const CENTER_CHANNEL: usize = 0;
/// First of the two hand-type channels (left, right).
pub const TYPE_CHANNEL: usize = 1;
/// First of the 21 keypoint channels.
pub const KEYPOINT_CHANNEL: usize = 3;
pub const NUM_CHANNELS: usize = KEYPOINT_CHANNEL + NUM_JOINTS;
pub const DEFAULT_MIN_IOU: f64 = 0.7;
/// Predictions are clamped to `[FOCAL_EPS, 1 - FOCAL_EPS]` inside the focal loss.
pub const FOCAL_EPS: f64 = 1e-7;

/// Grid of `NUM_CHANNELS` channels, stored channel-major then row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

/// Borrowed view of one channel.
#[derive(Debug, Clone, Copy)]
pub struct Channel<'a> {
    pub width: usize,
    pub height: usize,
    pub values: &'a [f64],
}

impl<'a> Channel<'a> {
    pub fn new(width: usize, height: usize, values: &'a [f64]) -> Result<Self> {
        if values.len() != width * height {
            return Err(invalid("channel", format!("{} values for a {width}x{height} grid", values.len())));
        }
        Ok(Self { width, height, values })
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

/// Grid size for an image of `width` x `height` pixels.
pub fn grid_dims(width: u32, height: u32) -> (usize, usize) {
    ((width as usize).div_ceil(STRIDE), (height as usize).div_ceil(STRIDE))
}

impl CenterMap {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; NUM_CHANNELS * width * height],
        }
    }

    pub fn for_image(width: u32, height: u32) -> Self {
        let (w, h) = grid_dims(width, height);
        Self::zeros(w, h)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    fn plane(&self) -> usize {
        self.width * self.height
    }

    pub fn get(&self, c: usize, x: usize, y: usize) -> f64 {
        self.data[c * self.plane() + y * self.width + x]
    }

    /// Writes a value; rejects anything outside [0, 1].
    pub fn set(&mut self, c: usize, x: usize, y: usize, v: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&v) {
            return Err(invalid("value", format!("{v} outside [0, 1]")));
        }
        let i = c * self.plane() + y * self.width + x;
        self.data[i] = v;
        Ok(())
    }

    pub fn channel(&self, c: usize) -> Channel<'_> {
        let n = self.plane();
        Channel {
            width: self.width,
            height: self.height,
            values: &self.data[c * n..(c + 1) * n],
        }
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Channel rendered as an 8-bit grayscale image, one pixel per cell.
    pub fn channel_image(&self, c: usize) -> image::GrayImage {
        let ch = self.channel(c);
        image::GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            image::Luma([(ch.at(x as usize, y as usize) * 255.0).round() as u8])
        })
    }

    pub fn channel_png(&self, c: usize) -> Result<Vec<u8>> {
        crate::imaging::encode(&self.channel_image(c))
    }

    fn splat(&mut self, c: usize, cx: usize, cy: usize, radius: usize) {
        let sigma = radius as f64 / 3.0;
        let denom = 2.0 * sigma * sigma;
        let r = radius as isize;
        let base = c * self.plane();
        for dy in -r..=r {
            let y = cy as isize + dy;
            if y < 0 || y >= self.height as isize {
                continue;
            }
            for dx in -r..=r {
                let x = cx as isize + dx;
                if x < 0 || x >= self.width as isize {
                    continue;
                }
                let g = (-((dx * dx + dy * dy) as f64) / denom).exp();
                let cell = &mut self.data[base + y as usize * self.width + x as usize];
                *cell = cell.max(g);
            }
        }
    }
}

/// How a hand's center pixel is derived from its labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenterDefinition {
    #[default]
    VisibleMean,
    BoxCenter,
}

impl CenterDefinition {
    pub fn center(self, keypoints: &Keypoints2D, bbox: &[f64; 4]) -> Option<Vector2<f64>> {
        match self {
            CenterDefinition::VisibleMean => keypoints.visible_mean(),
            CenterDefinition::BoxCenter => {
                Some(Vector2::new(0.5 * (bbox[0] + bbox[2]), 0.5 * (bbox[1] + bbox[3])))
            }
        }
    }
}

/// A hand found on (or labelled in) an image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub center: Vector2<f64>,
    pub confidence: f64,
    pub hand_type: HandType,
    pub type_score: f64,
    pub keypoints: Keypoints2D,
    pub keypoint_confidence: [f64; NUM_JOINTS],
    /// `[x0, y0, x1, y1]` in pixels.
    pub bbox: [f64; 4],
}

impl Detection {
    /// A labelled instance with unit confidences.
    pub fn ground_truth(center: Vector2<f64>, hand_type: HandType, keypoints: Keypoints2D, bbox: [f64; 4]) -> Self {
        let mut keypoint_confidence = [0.0; NUM_JOINTS];
        for (j, _) in keypoints.iter_visible() {
            keypoint_confidence[j] = 1.0;
        }
        Self {
            center,
            confidence: 1.0,
            hand_type,
            type_score: 1.0,
            keypoints,
            keypoint_confidence,
            bbox,
        }
    }
}

fn check_min_iou(min_iou: f64) -> Result<()> {
    if !(min_iou > 0.0 && min_iou < 1.0) {
        return Err(invalid("min_iou", format!("must lie in (0, 1), got {min_iou}")));
    }
    Ok(())
}

/// Largest corner displacement (grid cells, unrounded) keeping IoU with the
/// box at or above `min_iou`, for a `w` x `h` box given in cells.
pub fn gaussian_radius_exact(w: f64, h: f64, min_iou: f64) -> Result<f64> {
    check_min_iou(min_iou)?;
    if !(w > 0.0 && h > 0.0) || !w.is_finite() || !h.is_finite() {
        return Err(invalid("box", format!("sides must be positive, got {w}x{h}")));
    }
    let m = min_iou;
    let b = w + h;
    // both corners displaced the same way
    let r1 = (b - (b * b - 4.0 * w * h * (1.0 - m) / (1.0 + m)).sqrt()) / 2.0;
    // prediction inside the box
    let r2 = (2.0 * b - (4.0 * b * b - 16.0 * w * h * (1.0 - m)).sqrt()) / 8.0;
    // prediction enclosing the box
    let r3 = (-2.0 * m * b + (4.0 * m * m * b * b - 16.0 * m * (m - 1.0) * w * h).sqrt()) / (8.0 * m);
    Ok(r1.min(r2).min(r3))
}

/// Integer splat radius in grid cells for a box measured in pixels.
pub fn gaussian_radius(box_w: f64, box_h: f64, min_iou: f64) -> Result<usize> {
    let r = gaussian_radius_exact(box_w / STRIDE as f64, box_h / STRIDE as f64, min_iou)?;
    Ok((r.floor() as usize).max(1))
}

fn cell_of(p: &Vector2<f64>) -> (usize, usize) {
    ((p.x / STRIDE as f64).floor() as usize, (p.y / STRIDE as f64).floor() as usize)
}

fn inside(p: &Vector2<f64>, width: u32, height: u32) -> bool {
    p.x >= 0.0 && p.y >= 0.0 && p.x < width as f64 && p.y < height as f64
}

/// Encodes labelled hands for an image of `width` x `height` pixels.
///
/// Keypoints outside the image are not splatted.
pub fn encode_targets(instances: &[Detection], width: u32, height: u32, min_iou: f64) -> Result<CenterMap> {
    check_min_iou(min_iou)?;
    let mut map = CenterMap::for_image(width, height);
    for (n, det) in instances.iter().enumerate() {
        if !inside(&det.center, width, height) {
            return Err(invalid(
                "instances",
                format!("center of instance {n} ({}, {}) is outside the image", det.center.x, det.center.y),
            ));
        }
        let radius = gaussian_radius(det.bbox[2] - det.bbox[0], det.bbox[3] - det.bbox[1], min_iou)?;
        let (cx, cy) = cell_of(&det.center);
        map.splat(CENTER_CHANNEL, cx, cy, radius);
        map.splat(TYPE_CHANNEL + det.hand_type.channel(), cx, cy, radius);
        for (j, p) in det.keypoints.iter_visible() {
            if inside(&p, width, height) {
                let (kx, ky) = cell_of(&p);
                map.splat(KEYPOINT_CHANNEL + j, kx, ky, radius);
            }
        }
    }
    Ok(map)
}

/// Nonzero local maxima over 3x3 windows at or above `threshold`, sorted by value
/// (descending) then by cell index.
pub fn channel_peaks(ch: Channel<'_>, threshold: f64) -> Vec<(usize, usize, f64)> {
    let (w, h) = (ch.width, ch.height);
    // separable max pool: rows then columns
    let mut rows = vec![f64::NEG_INFINITY; w * h];
    for y in 0..h {
        for x in 0..w {
            let lo = x.saturating_sub(1);
            let hi = (x + 1).min(w - 1);
            rows[y * w + x] = ch.values[y * w + lo..=y * w + hi].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        }
    }
    let mut peaks = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let lo = y.saturating_sub(1);
            let hi = (y + 1).min(h - 1);
            let pooled = (lo..=hi).map(|yy| rows[yy * w + x]).fold(f64::NEG_INFINITY, f64::max);
            let v = ch.at(x, y);
            if v >= threshold && v == pooled && v > 0.0 {
                peaks.push((x, y, v));
            }
        }
    }
    peaks.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.1, a.0).cmp(&(b.1, b.0))));
    peaks
}

fn cell_center(x: usize, y: usize) -> Vector2<f64> {
    Vector2::new((x as f64 + 0.5) * STRIDE as f64, (y as f64 + 0.5) * STRIDE as f64)
}

/// Decodes at most `max_k` hands from a center map.
///
/// Each keypoint-channel peak goes to the nearest detection center; per
/// channel every detection keeps its strongest assigned peak. The bbox is the
/// extent of the assigned keypoints, or the peak cell when none were found.
pub fn decode_peaks(map: &CenterMap, threshold: f64, max_k: usize) -> Result<Vec<Detection>> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(invalid("threshold", format!("must lie in [0, 1], got {threshold}")));
    }
    let mut peaks = channel_peaks(map.channel(CENTER_CHANNEL), threshold);
    peaks.truncate(max_k);
    let mut dets: Vec<Detection> = peaks
        .iter()
        .map(|&(x, y, v)| {
            let left = map.get(TYPE_CHANNEL, x, y);
            let right = map.get(TYPE_CHANNEL + 1, x, y);
            let (hand_type, type_score) = if right > left {
                (HandType::Right, right)
            } else {
                (HandType::Left, left)
            };
            let c = cell_center(x, y);
            let half = 0.5 * STRIDE as f64;
            Detection {
                center: c,
                confidence: v,
                hand_type,
                type_score,
                keypoints: Keypoints2D::invisible(),
                keypoint_confidence: [0.0; NUM_JOINTS],
                bbox: [c.x - half, c.y - half, c.x + half, c.y + half],
            }
        })
        .collect();
    if dets.is_empty() {
        return Ok(dets);
    }
    for j in 0..NUM_JOINTS {
        for (x, y, v) in channel_peaks(map.channel(KEYPOINT_CHANNEL + j), threshold) {
            let p = cell_center(x, y);
            // dets are in confidence order, so strict comparison breaks ties upward
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (n, d) in dets.iter().enumerate() {
                let dist = (d.center - p).norm_squared();
                if dist < best_d {
                    best_d = dist;
                    best = n;
                }
            }
            let d = &mut dets[best];
            if v > d.keypoint_confidence[j] {
                d.keypoint_confidence[j] = v;
                d.keypoints.set(j, p)?;
            }
        }
    }
    for d in &mut dets {
        if let Some(b) = d.keypoints.bounds() {
            d.bbox = [
                b[0].min(d.bbox[0]),
                b[1].min(d.bbox[1]),
                b[2].max(d.bbox[2]),
                b[3].max(d.bbox[3]),
            ];
        }
    }
    Ok(dets)
}

/// Penalty-reduced focal loss (gamma = 2, beta = 4) normalized by the number
/// of positive cells (target exactly 1).
pub fn focal_loss_center(pred: Channel<'_>, target: Channel<'_>) -> Result<f64> {
    if pred.width != target.width || pred.height != target.height || pred.values.len() != target.values.len() {
        return Err(invalid(
            "pred",
            format!("{}x{} prediction against {}x{} target", pred.width, pred.height, target.width, target.height),
        ));
    }
    let mut pos = 0usize;
    let mut sum = 0.0;
    for (&p, &t) in pred.values.iter().zip(target.values) {
        let p = p.clamp(FOCAL_EPS, 1.0 - FOCAL_EPS);
        if t == 1.0 {
            pos += 1;
            sum -= (1.0 - p).powi(2) * p.ln();
        } else {
            sum -= (1.0 - t).powi(4) * p * p * (1.0 - p).ln();
        }
    }
    Ok(sum / pos.max(1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalizationWeights {
    pub center: f64,
    pub hand_type: f64,
    pub keypoints: f64,
}

impl Default for LocalizationWeights {
    fn default() -> Self {
        Self {
            center: 1.0,
            hand_type: 1.0,
            keypoints: 1.0,
        }
    }
}

/// Weighted sum of the center, hand-type and keypoint focal losses.
pub fn localization_loss(pred: &CenterMap, gt: &CenterMap, weights: &LocalizationWeights) -> Result<f64> {
    if pred.width != gt.width || pred.height != gt.height {
        return Err(invalid(
            "pred",
            format!("{}x{} map against {}x{} target", pred.width, pred.height, gt.width, gt.height),
        ));
    }
    let term = |range: std::ops::Range<usize>| -> Result<f64> {
        range.map(|c| focal_loss_center(pred.channel(c), gt.channel(c))).sum()
    };
    let cp = term(CENTER_CHANNEL..TYPE_CHANNEL)?;
    let lr = term(TYPE_CHANNEL..KEYPOINT_CHANNEL)?;
    let kp = term(KEYPOINT_CHANNEL..NUM_CHANNELS)?;
    Ok(weights.center * cp + weights.hand_type * lr + weights.keypoints * kp)
}
