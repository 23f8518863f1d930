use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::params::{HandType, NUM_POSE};
use crate::error::{io_err, Error, Result};

/// Bones in the kinematic tree (global root + 15 articulations).
pub const NUM_BONES: usize = NUM_POSE / 3;
/// Regressed keypoints: 16 kinematic joints + 5 fingertips.
pub const NUM_JOINTS: usize = 21;
/// Pose-corrective feature count: a flattened 3x3 matrix per articulated bone.
pub const NUM_POSE_FEATURES: usize = 9 * (NUM_BONES - 1);

/// Regressor row holding the pivot of each bone.
///
/// Keypoints follow the usual 21-point layout: wrist, then thumb, index,
/// middle, ring and pinky with four points each (three pivots and the tip).
/// Bones are finger-major in the same finger order.
pub const BONE_KEYPOINT: [usize; NUM_BONES] =
    [0, 1, 2, 3, 5, 6, 7, 9, 10, 11, 13, 14, 15, 17, 18, 19];
/// Regressor rows of the five fingertips (thumb to pinky).
pub const TIP_KEYPOINTS: [usize; 5] = [4, 8, 12, 16, 20];

const ROW_SUM_TOL: f64 = 1e-6;

/// Parametric hand mesh with linear blend skinning data.
#[derive(Debug, Clone, PartialEq)]
pub struct HandRig {
    pub(crate) template: Vec<Vector3<f64>>,
    pub(crate) faces: Vec<[usize; 3]>,
    pub(crate) shape_basis: Vec<Vec<Vector3<f64>>>,
    pub(crate) pose_basis: Vec<Vec<Vector3<f64>>>,
    pub(crate) joint_regressor: Vec<Vec<f64>>,
    pub(crate) skinning_weights: Vec<Vec<f64>>,
    pub(crate) parents: Vec<Option<usize>>,
    pub(crate) mean_pose: [f64; NUM_POSE],
    pub(crate) hand_type: HandType,
    /// Non-zero regressor entries per row, in vertex order.
    pub(crate) regressor_sparse: Vec<Vec<(usize, f64)>>,
    /// Non-zero skinning weights per vertex, in bone order.
    pub(crate) skin_sparse: Vec<Vec<(usize, f64)>>,
    /// Bones sorted so that every parent precedes its children.
    pub(crate) bone_order: Vec<usize>,
}

/// On-disk rig layout. Every numeric array is row-major, units are meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigFile {
    pub template: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
    pub shape_basis: Vec<Vec<[f64; 3]>>,
    pub pose_basis: Vec<Vec<[f64; 3]>>,
    pub joint_regressor: Vec<Vec<f64>>,
    pub skinning_weights: Vec<Vec<f64>>,
    /// Parent bone index, -1 for the root.
    pub parents: Vec<i64>,
    pub mean_pose: Vec<f64>,
    pub hand_type: HandType,
}

fn rig_err(invariant: &'static str, detail: impl Into<String>) -> Error {
    Error::Rig {
        invariant,
        detail: detail.into(),
    }
}

impl HandRig {
    /// Builds a rig and checks every invariant.
    pub fn from_file(file: RigFile) -> Result<Self> {
        let rig = Self::from_file_unchecked(file)?;
        rig.validate()?;
        Ok(rig)
    }

    /// Builds a rig checking only the array dimensions needed to index it
    /// safely. Numeric invariants are left to [`HandRig::validate`].
    pub fn from_file_unchecked(file: RigFile) -> Result<Self> {
        let v = file.template.len();
        if v == 0 {
            return Err(rig_err("dimensions", "empty template"));
        }
        if file.shape_basis.iter().any(|b| b.len() != v) {
            return Err(rig_err("dimensions", "shape_basis entries must have V rows"));
        }
        if file.pose_basis.len() != NUM_POSE_FEATURES || file.pose_basis.iter().any(|b| b.len() != v) {
            return Err(rig_err(
                "dimensions",
                format!("pose_basis must be {NUM_POSE_FEATURES} x V x 3"),
            ));
        }
        if file.joint_regressor.len() != NUM_JOINTS || file.joint_regressor.iter().any(|r| r.len() != v) {
            return Err(rig_err("dimensions", format!("joint_regressor must be {NUM_JOINTS} x V")));
        }
        if file.skinning_weights.len() != v
            || file.skinning_weights.iter().any(|r| r.len() != NUM_BONES)
        {
            return Err(rig_err("dimensions", format!("skinning_weights must be V x {NUM_BONES}")));
        }
        if file.parents.len() != NUM_BONES {
            return Err(rig_err("dimensions", format!("parents must list {NUM_BONES} bones")));
        }
        if file.mean_pose.len() != NUM_POSE {
            return Err(rig_err("dimensions", format!("mean_pose must have {NUM_POSE} entries")));
        }
        if let Some(f) = file.faces.iter().find(|f| f.iter().any(|&i| i >= v)) {
            return Err(rig_err("face_indices", format!("face {f:?} indexes past {v} vertices")));
        }
        let parents: Vec<Option<usize>> = file
            .parents
            .iter()
            .map(|&p| if p < 0 { None } else { Some(p as usize) })
            .collect();
        let bone_order = topological_order(&parents)?;

        let to_v = |a: &[f64; 3]| Vector3::new(a[0], a[1], a[2]);
        let mut mean_pose = [0.0; NUM_POSE];
        mean_pose.copy_from_slice(&file.mean_pose);
        let mut rig = Self {
            template: file.template.iter().map(to_v).collect(),
            faces: file.faces,
            shape_basis: file
                .shape_basis
                .iter()
                .map(|b| b.iter().map(to_v).collect())
                .collect(),
            pose_basis: file
                .pose_basis
                .iter()
                .map(|b| b.iter().map(to_v).collect())
                .collect(),
            joint_regressor: file.joint_regressor,
            skinning_weights: file.skinning_weights,
            parents,
            mean_pose,
            hand_type: file.hand_type,
            regressor_sparse: Vec::new(),
            skin_sparse: Vec::new(),
            bone_order,
        };
        rig.rebuild_caches();
        Ok(rig)
    }

    pub(crate) fn rebuild_caches(&mut self) {
        self.regressor_sparse = self
            .joint_regressor
            .iter()
            .map(|row| sparse(row))
            .collect();
        self.skin_sparse = self.skinning_weights.iter().map(|row| sparse(row)).collect();
    }

    pub fn to_file(&self) -> RigFile {
        let to_a = |v: &Vector3<f64>| [v.x, v.y, v.z];
        RigFile {
            template: self.template.iter().map(to_a).collect(),
            faces: self.faces.clone(),
            shape_basis: self
                .shape_basis
                .iter()
                .map(|b| b.iter().map(to_a).collect())
                .collect(),
            pose_basis: self
                .pose_basis
                .iter()
                .map(|b| b.iter().map(to_a).collect())
                .collect(),
            joint_regressor: self.joint_regressor.clone(),
            skinning_weights: self.skinning_weights.clone(),
            parents: self
                .parents
                .iter()
                .map(|p| p.map_or(-1, |i| i as i64))
                .collect(),
            mean_pose: self.mean_pose.to_vec(),
            hand_type: self.hand_type,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_file(Self::read_file(path)?)
    }

    pub fn read_file(path: &Path) -> Result<RigFile> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_file())?)
    }

    /// Checks the numeric invariants, naming the first one violated.
    pub fn validate(&self) -> Result<()> {
        match self.violations().into_iter().next() {
            Some((invariant, detail)) => Err(rig_err(invariant, detail)),
            None => Ok(()),
        }
    }

    /// Every violated numeric invariant with the first offending entry.
    pub fn violations(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let finite = self.template.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.shape_basis.iter().flatten().all(|v| v.iter().all(|x| x.is_finite()))
            && self.pose_basis.iter().flatten().all(|v| v.iter().all(|x| x.is_finite()))
            && self.mean_pose.iter().all(|x| x.is_finite());
        if !finite {
            out.push(("finite", "non-finite geometry value".to_string()));
        }
        let negative = self.joint_regressor.iter().enumerate().find_map(|(j, row)| {
            row.iter().find(|w| !(**w >= 0.0)).map(|w| format!("row {j} has entry {w}"))
        });
        if let Some(d) = negative {
            out.push(("joint_regressor_nonnegative", d));
        }
        let row_sum = self.joint_regressor.iter().enumerate().find_map(|(j, row)| {
            let s: f64 = row.iter().sum();
            (!((s - 1.0).abs() <= ROW_SUM_TOL)).then(|| format!("row {j} sums to {s}"))
        });
        if let Some(d) = row_sum {
            out.push(("joint_regressor_row_sum", d));
        }
        let skin = self.skinning_weights.iter().enumerate().find_map(|(i, row)| {
            let s: f64 = row.iter().sum();
            (!((s - 1.0).abs() <= ROW_SUM_TOL)).then(|| format!("vertex {i} sums to {s}"))
        });
        if let Some(d) = skin {
            out.push(("skinning_weights_row_sum", d));
        }
        out
    }

    pub fn num_vertices(&self) -> usize {
        self.template.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn template(&self) -> &[Vector3<f64>] {
        &self.template
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn shape_basis(&self) -> &[Vec<Vector3<f64>>] {
        &self.shape_basis
    }

    pub fn pose_basis(&self) -> &[Vec<Vector3<f64>>] {
        &self.pose_basis
    }

    pub fn joint_regressor(&self) -> &[Vec<f64>] {
        &self.joint_regressor
    }

    pub fn skinning_weights(&self) -> &[Vec<f64>] {
        &self.skinning_weights
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parents
    }

    pub fn mean_pose(&self) -> &[f64; NUM_POSE] {
        &self.mean_pose
    }

    pub fn hand_type(&self) -> HandType {
        self.hand_type
    }

    /// Overwrites one regressor entry. Intended for fault-injection tests of
    /// the validation path.
    pub fn set_regressor_entry(&mut self, joint: usize, vertex: usize, value: f64) {
        self.joint_regressor[joint][vertex] = value;
        self.rebuild_caches();
    }
}

fn sparse(row: &[f64]) -> Vec<(usize, f64)> {
    row.iter()
        .enumerate()
        .filter(|(_, w)| **w != 0.0)
        .map(|(i, w)| (i, *w))
        .collect()
}

fn topological_order(parents: &[Option<usize>]) -> Result<Vec<usize>> {
    let n = parents.len();
    let roots: Vec<usize> = (0..n).filter(|&k| parents[k].is_none()).collect();
    if roots != [0] {
        return Err(rig_err(
            "kinematic_tree",
            format!("expected bone 0 as the single root, found roots {roots:?}"),
        ));
    }
    if let Some(k) = (0..n).find(|&k| parents[k].is_some_and(|p| p >= n)) {
        return Err(rig_err("kinematic_tree", format!("bone {k} has out-of-range parent")));
    }
    let mut order = vec![0];
    let mut placed = vec![false; n];
    placed[0] = true;
    while order.len() < n {
        let before = order.len();
        for k in 0..n {
            if !placed[k] && parents[k].is_some_and(|p| placed[p]) {
                placed[k] = true;
                order.push(k);
            }
        }
        if order.len() == before {
            return Err(rig_err("kinematic_tree", "cycle in parent links"));
        }
    }
    Ok(order)
}
