//! Keypoint, bone, regularization and consistency losses, plus evaluation
//! metrics.

mod metrics;
mod procrustes;

pub use metrics::{
    f_score, metrics, pck_curve, AlignMode, MetricReport, PCK_MAX_M, PCK_THRESHOLDS,
};
pub use procrustes::{procrustes_align, Similarity};

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::hand_model::{HandParams, NUM_BONES, NUM_JOINTS, NUM_SHAPE};
pub use crate::keypoints::Keypoints2D;

pub const NUM_EDGES: usize = NUM_JOINTS - 1;
/// Keypoints spanning the middle-finger proximal bone, the per-hand scale.
pub const SCALE_BONE: (usize, usize) = (9, 10);
/// Bones shorter than this (pixels) carry no direction.
pub const MIN_EDGE_PX: f64 = 1e-6;
/// Smallest admissible normalizer bone length in pixels.
pub const MIN_SCALE_PX: f64 = 1e-3;

/// Parent/child keypoint pairs forming a tree over the 21 keypoints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(usize, usize)>", into = "Vec<(usize, usize)>")]
pub struct BoneTopology {
    edges: Vec<(usize, usize)>,
}

impl TryFrom<Vec<(usize, usize)>> for BoneTopology {
    type Error = Error;

    fn try_from(edges: Vec<(usize, usize)>) -> Result<Self> {
        BoneTopology::new(edges)
    }
}

impl From<BoneTopology> for Vec<(usize, usize)> {
    fn from(t: BoneTopology) -> Self {
        t.edges
    }
}

impl Default for BoneTopology {
    fn default() -> Self {
        Self::hand()
    }
}

impl BoneTopology {
    pub fn new(edges: Vec<(usize, usize)>) -> Result<Self> {
        if edges.len() != NUM_EDGES {
            return Err(invalid("topology", format!("expected {NUM_EDGES} edges, got {}", edges.len())));
        }
        let mut parent = [None; NUM_JOINTS];
        for &(p, c) in &edges {
            if p >= NUM_JOINTS || c >= NUM_JOINTS || p == c {
                return Err(invalid("topology", format!("bad edge ({p}, {c})")));
            }
            if parent[c].replace(p).is_some() {
                return Err(invalid("topology", format!("keypoint {c} has two parents")));
            }
        }
        let roots: Vec<_> = (0..NUM_JOINTS).filter(|j| parent[*j].is_none()).collect();
        if roots.len() != 1 {
            return Err(invalid("topology", format!("expected one root, found {roots:?}")));
        }
        for start in 0..NUM_JOINTS {
            let mut j = start;
            for _ in 0..=NUM_JOINTS {
                match parent[j] {
                    Some(p) => j = p,
                    None => break,
                }
            }
            if j != roots[0] {
                return Err(invalid("topology", format!("keypoint {start} is on a cycle")));
            }
        }
        Ok(Self { edges })
    }

    /// Wrist to each finger base, then along each finger.
    pub fn hand() -> Self {
        let mut edges = Vec::with_capacity(NUM_EDGES);
        for f in 0..5 {
            let base = 1 + 4 * f;
            edges.push((0, base));
            for j in 0..3 {
                edges.push((base + j, base + j + 1));
            }
        }
        Self { edges }
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }
}

/// Unit bone directions; `None` where an endpoint is hidden or the bone is
/// shorter than [`MIN_EDGE_PX`].
pub fn bone_edges(kp: &Keypoints2D, topo: &BoneTopology) -> Vec<Option<Vector2<f64>>> {
    topo.edges
        .iter()
        .map(|&(p, c)| {
            let d = kp.get(c)? - kp.get(p)?;
            let len = d.norm();
            (len >= MIN_EDGE_PX).then(|| d / len)
        })
        .collect()
}

/// Length of the normalizer bone when both endpoints are visible.
pub fn scale_bone_length(kp: &Keypoints2D) -> Option<f64> {
    Some((kp.get(SCALE_BONE.1)? - kp.get(SCALE_BONE.0)?).norm())
}

/// Reprojection loss split into its terms, with a record of which
/// keypoints and bones entered each sum.
#[derive(Debug, Clone, PartialEq)]
pub struct ReprojectionTerms {
    pub joint: f64,
    pub bone: f64,
    pub joints_used: Vec<[bool; NUM_JOINTS]>,
    pub edges_used: Vec<[bool; NUM_EDGES]>,
}

impl ReprojectionTerms {
    pub fn total(&self) -> f64 {
        self.joint + self.bone
    }
}

fn check_counts(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(invalid("keypoints", format!("{a} predicted hands against {b} targets")));
    }
    Ok(())
}

/// Reprojection terms with caller-provided per-hand scales.
///
/// Keypoints count only where visible in both sets, bones only where valid
/// in both; each mean divides by the number of terms it actually summed.
pub fn reprojection_terms(
    pred: &[Keypoints2D],
    gt: &[Keypoints2D],
    topo: &BoneTopology,
    scales: &[f64],
) -> Result<ReprojectionTerms> {
    check_counts(pred.len(), gt.len())?;
    check_counts(scales.len(), gt.len())?;
    let mut joint_sum = 0.0;
    let mut joint_n = 0usize;
    let mut bone_sum = 0.0;
    let mut bone_n = 0usize;
    let mut joints_used = Vec::with_capacity(gt.len());
    let mut edges_used = Vec::with_capacity(gt.len());
    for (n, (p, g)) in pred.iter().zip(gt).enumerate() {
        let s = scales[n];
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::DegenerateScale { hand: n, length: s });
        }
        let mut used = [false; NUM_JOINTS];
        for j in 0..NUM_JOINTS {
            if let (Some(a), Some(b)) = (p.get(j), g.get(j)) {
                joint_sum += (a - b).norm() / s;
                joint_n += 1;
                used[j] = true;
            }
        }
        joints_used.push(used);
        let mut eused = [false; NUM_EDGES];
        for (e, (a, b)) in bone_edges(p, topo).into_iter().zip(bone_edges(g, topo)).enumerate() {
            if let (Some(a), Some(b)) = (a, b) {
                bone_sum += (a - b).norm();
                bone_n += 1;
                eused[e] = true;
            }
        }
        edges_used.push(eused);
    }
    Ok(ReprojectionTerms {
        joint: if joint_n == 0 { 0.0 } else { joint_sum / joint_n as f64 },
        bone: if bone_n == 0 { 0.0 } else { bone_sum / bone_n as f64 },
        joints_used,
        edges_used,
    })
}

/// Per-hand normalizer lengths from the targets.
pub fn target_scales(gt: &[Keypoints2D]) -> Result<Vec<f64>> {
    gt.iter()
        .enumerate()
        .map(|(hand, g)| match scale_bone_length(g) {
            Some(length) if length > MIN_SCALE_PX => Ok(length),
            other => Err(Error::DegenerateScale {
                hand,
                length: other.unwrap_or(0.0),
            }),
        })
        .collect()
}

/// Joint distances normalized by each target hand's middle-finger proximal
/// bone, plus bone-direction differences.
pub fn reprojection_loss(pred: &[Keypoints2D], gt: &[Keypoints2D], topo: &BoneTopology) -> Result<f64> {
    check_counts(pred.len(), gt.len())?;
    let scales = target_scales(gt)?;
    Ok(reprojection_terms(pred, gt, topo, &scales)?.total())
}

/// Per-dimension rotation bounds for the 45 articulation coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointLimits {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

pub const NUM_ARTICULATION: usize = 3 * (NUM_BONES - 1);

impl Default for JointLimits {
    /// Flexion (x) in [-0.3, 1.6]; twist (y) and abduction (z) in [-0.5, 0.5].
    fn default() -> Self {
        let mut min = Vec::with_capacity(NUM_ARTICULATION);
        let mut max = Vec::with_capacity(NUM_ARTICULATION);
        for _ in 1..NUM_BONES {
            min.extend([-0.3, -0.5, -0.5]);
            max.extend([1.6, 0.5, 0.5]);
        }
        Self { min, max }
    }
}

impl JointLimits {
    pub fn validate(&self) -> Result<()> {
        if self.min.len() != NUM_ARTICULATION || self.max.len() != NUM_ARTICULATION {
            return Err(invalid(
                "limits",
                format!("need {NUM_ARTICULATION} bounds, got {} and {}", self.min.len(), self.max.len()),
            ));
        }
        for (i, (lo, hi)) in self.min.iter().zip(&self.max).enumerate() {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(invalid("limits", format!("dimension {i}: [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    /// Total amount by which `articulation` leaves the bounds.
    pub fn excess(&self, articulation: &[f64]) -> f64 {
        articulation
            .iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(t, (lo, hi))| (t - hi).max(lo - t).max(0.0))
            .sum()
    }

    /// Largest single-dimension violation.
    pub fn max_violation(&self, articulation: &[f64]) -> f64 {
        articulation
            .iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(t, (lo, hi))| (t - hi).max(lo - t).max(0.0))
            .fold(0.0, f64::max)
    }
}

/// `w_pose` times the L1 excess of the articulation outside `limits`, plus
/// `w_shape` times the L2 norm of the shape coefficients.
pub fn regularization_loss(params: &HandParams, limits: &JointLimits, w_pose: f64, w_shape: f64) -> Result<f64> {
    limits.validate()?;
    let shape = params.shape.iter().take(NUM_SHAPE).map(|b| b * b).sum::<f64>().sqrt();
    Ok(w_pose * limits.excess(params.articulation()) + w_shape * shape)
}

/// Mean distance between mutually visible points of matched hands.
pub fn consistency_loss(local: &[Keypoints2D], reprojected: &[Keypoints2D]) -> Result<f64> {
    check_counts(local.len(), reprojected.len())?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (a, b) in local.iter().zip(reprojected) {
        for j in 0..NUM_JOINTS {
            if let (Some(p), Some(q)) = (a.get(j), b.get(j)) {
                sum += (p - q).norm();
                n += 1;
            }
        }
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// Mean Euclidean distance between corresponding 3D joints.
pub fn joint3d_loss(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<f64> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(invalid("joints", format!("{} predicted against {} targets", pred.len(), gt.len())));
    }
    Ok(pred.iter().zip(gt).map(|(a, b)| (a - b).norm()).sum::<f64>() / pred.len() as f64)
}
