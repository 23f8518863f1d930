//! Parametric hand mesh: shape and pose blend shapes, linear blend skinning,
//! joint regression and left/right mirroring.

mod params;
pub mod procedural;
mod rig;
mod skinning;

pub use params::{
    HandParams, HandType, NUM_PARAMS, NUM_POSE, NUM_SHAPE, NUM_TRANSLATION, POSE_OFFSET,
    TRANSLATION_OFFSET,
};
pub use procedural::{test_rig, test_rig_file, test_rig_for};
pub use rig::{HandRig, RigFile, BONE_KEYPOINT, NUM_BONES, NUM_JOINTS, NUM_POSE_FEATURES, TIP_KEYPOINTS};
pub use skinning::{blend_shape, joint_jacobian, lbs_forward, lbs_joints, HandMesh};

use crate::rotation::mirror_axis_angle;
use nalgebra::Vector3;

fn reflect(v: &Vector3<f64>) -> Vector3<f64> {
    Vector3::new(-v.x, v.y, v.z)
}

/// Reflects a rig through the plane x = 0, producing the other hand.
///
/// Geometry is reflected, face winding reversed so normals stay outward, and
/// the pose-corrective basis re-signed so that posing the mirrored rig with
/// [`HandParams::mirrored`] yields the reflected mesh.
pub fn mirror_rig(rig: &HandRig) -> HandRig {
    let sign = [-1.0, 1.0, 1.0];
    let mut out = rig.clone();
    out.template = rig.template.iter().map(reflect).collect();
    out.faces = rig.faces.iter().map(|f| [f[0], f[2], f[1]]).collect();
    out.shape_basis = rig
        .shape_basis
        .iter()
        .map(|b| b.iter().map(reflect).collect())
        .collect();
    out.pose_basis = rig
        .pose_basis
        .iter()
        .enumerate()
        .map(|(n, b)| {
            let entry = n % 9;
            let s = sign[entry / 3] * sign[entry % 3];
            b.iter().map(|v| reflect(v) * s).collect()
        })
        .collect();
    for k in 0..NUM_BONES {
        let m = Vector3::new(rig.mean_pose[3 * k], rig.mean_pose[3 * k + 1], rig.mean_pose[3 * k + 2]);
        out.mean_pose[3 * k..3 * k + 3].copy_from_slice(mirror_axis_angle(&m).as_slice());
    }
    out.hand_type = rig.hand_type.flipped();
    out
}
