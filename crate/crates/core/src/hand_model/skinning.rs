//! Blend shapes and linear blend skinning.

use nalgebra::{Matrix3, Vector3};

use super::params::{HandParams, NUM_SHAPE};
use super::rig::{HandRig, BONE_KEYPOINT, NUM_BONES, NUM_JOINTS, NUM_POSE_FEATURES};
use crate::error::{invalid, Result};
use crate::rotation::rodrigues_unchecked;

/// Posed mesh and regressed joints in the camera frame.
#[derive(Debug, Clone, PartialEq)]
pub struct HandMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub joints: Vec<Vector3<f64>>,
}

/// Per-evaluation quantities shared by every vertex.
struct PoseContext<'a> {
    rig: &'a HandRig,
    params: &'a HandParams,
    features: [f64; NUM_POSE_FEATURES],
    /// Affine skinning transform of each bone: x -> rot * x + offset.
    rot: [Matrix3<f64>; NUM_BONES],
    offset: [Vector3<f64>; NUM_BONES],
    translation: Vector3<f64>,
}

fn check_dims(rig: &HandRig, params: &HandParams) -> Result<()> {
    if rig.shape_basis.len() != NUM_SHAPE {
        return Err(invalid(
            "rig",
            format!(
                "rig has {} shape components, parameters carry {NUM_SHAPE}",
                rig.shape_basis.len()
            ),
        ));
    }
    params.ensure_finite()
}

/// Flattened `R(theta_j) - R(mean_j)` for every articulated bone.
fn pose_features(rig: &HandRig, params: &HandParams) -> [f64; NUM_POSE_FEATURES] {
    let mut f = [0.0; NUM_POSE_FEATURES];
    for j in 1..NUM_BONES {
        let r = rodrigues_unchecked(&params.bone_rotation(j));
        let mean = Vector3::new(
            rig.mean_pose[3 * j],
            rig.mean_pose[3 * j + 1],
            rig.mean_pose[3 * j + 2],
        );
        let rm = rodrigues_unchecked(&mean);
        for a in 0..3 {
            for b in 0..3 {
                f[9 * (j - 1) + 3 * a + b] = r[(a, b)] - rm[(a, b)];
            }
        }
    }
    f
}

fn shaped_vertex(rig: &HandRig, params: &HandParams, v: usize) -> Vector3<f64> {
    let mut p = rig.template[v];
    for (beta, basis) in params.shape.iter().zip(&rig.shape_basis) {
        p += basis[v] * *beta;
    }
    p
}

impl<'a> PoseContext<'a> {
    fn new(rig: &'a HandRig, params: &'a HandParams) -> Self {
        let features = pose_features(rig, params);

        let mut rest = [Vector3::zeros(); NUM_BONES];
        for (k, joint) in rest.iter_mut().enumerate() {
            for &(v, w) in &rig.regressor_sparse[BONE_KEYPOINT[k]] {
                *joint += shaped_vertex(rig, params, v) * w;
            }
        }

        let mut grot = [Matrix3::identity(); NUM_BONES];
        let mut gtrans = [Vector3::zeros(); NUM_BONES];
        for &k in &rig.bone_order {
            let local = rodrigues_unchecked(&params.bone_rotation(k));
            match rig.parents[k] {
                // the global rotation acts about the rig origin
                None => {
                    grot[k] = local;
                    gtrans[k] = local * rest[k];
                }
                Some(p) => {
                    grot[k] = grot[p] * local;
                    gtrans[k] = grot[p] * (rest[k] - rest[p]) + gtrans[p];
                }
            }
        }
        let mut offset = [Vector3::zeros(); NUM_BONES];
        for k in 0..NUM_BONES {
            offset[k] = gtrans[k] - grot[k] * rest[k];
        }
        Self {
            rig,
            params,
            features,
            rot: grot,
            offset,
            translation: params.translation(),
        }
    }

    fn blended_vertex(&self, v: usize) -> Vector3<f64> {
        let mut p = shaped_vertex(self.rig, self.params, v);
        for (f, basis) in self.features.iter().zip(&self.rig.pose_basis) {
            p += basis[v] * *f;
        }
        p
    }

    fn posed_vertex(&self, v: usize) -> Vector3<f64> {
        let p = self.blended_vertex(v);
        let mut out = Vector3::zeros();
        for &(k, w) in &self.rig.skin_sparse[v] {
            out += (self.rot[k] * p + self.offset[k]) * w;
        }
        out + self.translation
    }
}

fn regress(rig: &HandRig, row: usize, vertex: impl Fn(usize) -> Vector3<f64>) -> Vector3<f64> {
    let mut j = Vector3::zeros();
    for &(v, w) in &rig.regressor_sparse[row] {
        j += vertex(v) * w;
    }
    j
}

/// Rest-pose vertices after shape and pose-corrective blend shapes.
pub fn blend_shape(rig: &HandRig, params: &HandParams) -> Result<Vec<Vector3<f64>>> {
    check_dims(rig, params)?;
    let features = pose_features(rig, params);
    Ok((0..rig.num_vertices())
        .map(|v| {
            let mut p = shaped_vertex(rig, params, v);
            for (f, basis) in features.iter().zip(&rig.pose_basis) {
                p += basis[v] * *f;
            }
            p
        })
        .collect())
}

/// Skins the blended mesh through the kinematic chain, then applies the
/// global rotation and translation. Joints are regressed from the posed mesh.
pub fn lbs_forward(rig: &HandRig, params: &HandParams) -> Result<HandMesh> {
    check_dims(rig, params)?;
    let ctx = PoseContext::new(rig, params);
    let vertices: Vec<Vector3<f64>> = (0..rig.num_vertices()).map(|v| ctx.posed_vertex(v)).collect();
    let joints = (0..NUM_JOINTS)
        .map(|row| regress(rig, row, |v| vertices[v]))
        .collect();
    Ok(HandMesh { vertices, joints })
}

/// Regressed joints only, evaluating just the vertices the regressor reads.
/// Bitwise identical to the joints of [`lbs_forward`].
pub fn lbs_joints(rig: &HandRig, params: &HandParams) -> Result<Vec<Vector3<f64>>> {
    check_dims(rig, params)?;
    let ctx = PoseContext::new(rig, params);
    Ok((0..NUM_JOINTS)
        .map(|row| regress(rig, row, |v| ctx.posed_vertex(v)))
        .collect())
}

/// Forward-difference Jacobian of the 63 joint coordinates with respect to
/// the 61 flattened parameters. Row `3 * j + c` holds coordinate `c` of joint `j`.
pub fn joint_jacobian(rig: &HandRig, params: &HandParams, step: f64) -> Result<Vec<Vec<f64>>> {
    if !(step > 0.0) {
        return Err(invalid("step", "finite-difference step must be positive"));
    }
    let base = lbs_joints(rig, params)?;
    let x = params.to_vec();
    let mut jac = vec![vec![0.0; x.len()]; 3 * NUM_JOINTS];
    for i in 0..x.len() {
        let mut xp = x.clone();
        xp[i] += step;
        let joints = lbs_joints(rig, &HandParams::from_slice(&xp)?)?;
        for (j, (a, b)) in joints.iter().zip(&base).enumerate() {
            for c in 0..3 {
                jac[3 * j + c][i] = (a[c] - b[c]) / step;
            }
        }
    }
    Ok(jac)
}
