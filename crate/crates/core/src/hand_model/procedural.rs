//! Procedurally generated test rig.
//!
//! A right hand built from an elliptical palm tube and five three-segment
//! finger tubes. It matches the layout of a MANO-compatible asset (778
//! vertices, 16 bones, 21 regressed joints) so every code path can run
//! without licensed model files.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{HandType, NUM_POSE, NUM_SHAPE};
use super::rig::{HandRig, RigFile, BONE_KEYPOINT, NUM_BONES, NUM_JOINTS, NUM_POSE_FEATURES, TIP_KEYPOINTS};

pub const TEST_RIG_VERTICES: usize = 778;

const PALM_RINGS: usize = 13;
const PALM_SEGMENTS: usize = 22;
const PALM_LENGTH: f64 = 0.09;
const FINGER_SEGMENTS: usize = 8;
const RINGS_PER_BONE: usize = 4;
const BASIS_SEED: u64 = 0x4841_4e44;

struct FingerSpec {
    base: Vector3<f64>,
    dir: Vector3<f64>,
    lengths: [f64; 3],
    radius: (f64, f64),
}

fn finger_specs() -> [FingerSpec; 5] {
    let f = |base: [f64; 3], dir: [f64; 3], lengths, radius| FingerSpec {
        base: Vector3::from(base),
        dir: Vector3::from(dir).normalize(),
        lengths,
        radius,
    };
    [
        // thumb
        f([0.020, 0.018, 0.006], [0.75, 0.65, 0.15], [0.038, 0.033, 0.026], (0.0110, 0.0085)),
        f([0.027, 0.088, 0.0], [0.08, 1.0, 0.0], [0.040, 0.024, 0.020], (0.0090, 0.0072)),
        f([0.009, 0.090, 0.0], [0.0, 1.0, 0.0], [0.045, 0.028, 0.022], (0.0092, 0.0074)),
        f([-0.009, 0.087, 0.0], [-0.07, 1.0, 0.0], [0.042, 0.026, 0.021], (0.0088, 0.0070)),
        f([-0.026, 0.080, 0.0], [-0.15, 1.0, 0.0], [0.033, 0.019, 0.018], (0.0078, 0.0064)),
    ]
}

/// Per-vertex construction metadata used to derive the bases.
#[derive(Clone, Copy)]
struct VertexInfo {
    finger: Option<usize>,
    /// Center of the ring the vertex belongs to.
    center: Vector3<f64>,
    /// Tube axis direction at the vertex.
    axis: Vector3<f64>,
    /// Distance along the finger from its first pivot.
    along: f64,
}

struct Builder {
    vertices: Vec<Vector3<f64>>,
    info: Vec<VertexInfo>,
    faces: Vec<[usize; 3]>,
    weights: Vec<Vec<f64>>,
    regressor: Vec<Vec<(usize, f64)>>,
}

impl Builder {
    fn push(&mut self, p: Vector3<f64>, info: VertexInfo, weights: Vec<f64>) -> usize {
        self.vertices.push(p);
        self.info.push(info);
        self.weights.push(weights);
        self.vertices.len() - 1
    }

    /// Stitches consecutive rings with outward-facing triangles.
    fn stitch(&mut self, rings: &[usize], segments: usize) {
        for pair in rings.windows(2) {
            let (a0, b0) = (pair[0], pair[1]);
            for k in 0..segments {
                let k1 = (k + 1) % segments;
                let (a, b, c, d) = (a0 + k, a0 + k1, b0 + k, b0 + k1);
                self.faces.push([a, b, c]);
                self.faces.push([b, d, c]);
            }
        }
    }

    fn cap(&mut self, ring: usize, segments: usize, apex: usize, tip: bool) {
        for k in 0..segments {
            let (a, b) = (ring + k, ring + (k + 1) % segments);
            self.faces.push(if tip { [a, b, apex] } else { [b, a, apex] });
        }
    }
}

fn one_hot(k: usize) -> Vec<f64> {
    let mut w = vec![0.0; NUM_BONES];
    w[k] = 1.0;
    w
}

fn build_palm(b: &mut Builder) {
    let u = Vector3::x();
    let d = Vector3::y();
    let w = d.cross(&u);
    let info = |center| VertexInfo {
        finger: None,
        center,
        axis: d,
        along: 0.0,
    };
    let bottom = b.push(Vector3::new(0.0, -0.005, 0.0), info(Vector3::zeros()), one_hot(0));
    let mut rings = Vec::with_capacity(PALM_RINGS);
    for i in 0..PALM_RINGS {
        let y = PALM_LENGTH * i as f64 / (PALM_RINGS - 1) as f64;
        let center = Vector3::new(0.0, y, 0.0);
        let half_width = 0.030 + 0.012 * y / PALM_LENGTH;
        let half_depth = 0.014;
        let start = b.vertices.len();
        for k in 0..PALM_SEGMENTS {
            let phi = std::f64::consts::TAU * k as f64 / PALM_SEGMENTS as f64;
            let p = center + u * (half_width * phi.cos()) + w * (half_depth * phi.sin());
            b.push(p, info(center), one_hot(0));
        }
        rings.push(start);
    }
    let top_center = Vector3::new(0.0, PALM_LENGTH + 0.005, 0.0);
    let top = b.push(top_center, info(top_center), one_hot(0));
    b.stitch(&rings, PALM_SEGMENTS);
    b.cap(rings[0], PALM_SEGMENTS, bottom, false);
    b.cap(rings[PALM_RINGS - 1], PALM_SEGMENTS, top, true);
    b.regressor[0] = (0..PALM_SEGMENTS)
        .map(|k| (rings[0] + k, 1.0 / PALM_SEGMENTS as f64))
        .collect();
}

fn build_finger(b: &mut Builder, f: usize, shape: &FingerSpec) {
    let d = shape.dir;
    let u = (Vector3::x() - d * d.x).normalize();
    let w = d.cross(&u);
    let bones = [1 + 3 * f, 2 + 3 * f, 3 + 3 * f];
    let total: f64 = shape.lengths.iter().sum();
    let radius_at = |along: f64| shape.radius.0 + (shape.radius.1 - shape.radius.0) * along / total;

    let base_center = shape.base - d * 0.006;
    let base = b.push(
        base_center,
        VertexInfo {
            finger: Some(f),
            center: shape.base,
            axis: d,
            along: -0.006,
        },
        one_hot(0),
    );

    let mut rings = Vec::new();
    let mut pivot_along = 0.0;
    for (bi, &bone) in bones.iter().enumerate() {
        let parent = if bi == 0 { 0 } else { bones[bi - 1] };
        let child = bones.get(bi + 1).copied();
        for r in 0..RINGS_PER_BONE {
            let t = r as f64 / RINGS_PER_BONE as f64;
            let along = pivot_along + t * shape.lengths[bi];
            let center = shape.base + d * along;
            let radius = radius_at(along);

            let mut weights = vec![0.0; NUM_BONES];
            let w_parent = 0.5 * (1.0 - t / 0.3).max(0.0);
            let w_child = if child.is_some() { 0.5 * ((t - 0.7) / 0.3).max(0.0) } else { 0.0 };
            weights[parent] += w_parent;
            if let Some(c) = child {
                weights[c] += w_child;
            }
            weights[bone] += 1.0 - w_parent - w_child;

            let start = b.vertices.len();
            for k in 0..FINGER_SEGMENTS {
                let phi = std::f64::consts::TAU * k as f64 / FINGER_SEGMENTS as f64;
                let p = center + (u * phi.cos() + w * phi.sin()) * radius;
                let info = VertexInfo {
                    finger: Some(f),
                    center,
                    axis: d,
                    along,
                };
                b.push(p, info, weights.clone());
            }
            if r == 0 {
                let row = BONE_KEYPOINT[bone];
                b.regressor[row] = (0..FINGER_SEGMENTS)
                    .map(|k| (start + k, 1.0 / FINGER_SEGMENTS as f64))
                    .collect();
            }
            rings.push(start);
        }
        pivot_along += shape.lengths[bi];
    }
    let tip_center = shape.base + d * total;
    let tip = b.push(
        tip_center,
        VertexInfo {
            finger: Some(f),
            center: tip_center,
            axis: d,
            along: total,
        },
        one_hot(bones[2]),
    );
    b.stitch(&rings, FINGER_SEGMENTS);
    b.cap(rings[0], FINGER_SEGMENTS, base, false);
    b.cap(*rings.last().unwrap(), FINGER_SEGMENTS, tip, true);
    b.regressor[TIP_KEYPOINTS[f]] = vec![(tip, 1.0)];
}

fn shape_basis(b: &Builder, shapes: &[FingerSpec; 5], rng: &mut ChaCha8Rng) -> Vec<Vec<Vector3<f64>>> {
    let n = b.vertices.len();
    let mut basis = vec![vec![Vector3::zeros(); n]; NUM_SHAPE];
    let smooth: Vec<[f64; 12]> = (0..3)
        .map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)))
        .collect();
    for (v, (p, info)) in b.vertices.iter().zip(&b.info).enumerate() {
        let radial = p - info.center;
        basis[0][v] = p * 0.05;
        basis[2][v] = Vector3::new(0.08 * p.x, 0.0, 0.0);
        match info.finger {
            Some(f) => {
                let base = shapes[f].base;
                basis[1][v] = info.axis * (0.12 * info.along.max(0.0));
                basis[3][v] = radial * 0.12;
                basis[4][v] = Vector3::new(0.0, 0.08 * base.y, 0.0);
                if f == 0 {
                    basis[5][v] = (p - base) * 0.10;
                }
                if f == 1 {
                    basis[6][v] = info.axis * (0.08 * info.along.max(0.0));
                }
                if f == 4 {
                    basis[6][v] = info.axis * (-0.08 * info.along.max(0.0));
                }
            }
            None => {
                basis[3][v] = Vector3::new(0.0, 0.0, 0.12 * p.z);
                basis[4][v] = Vector3::new(0.0, 0.08 * p.y, 0.0);
            }
        }
        for (c, coeffs) in smooth.iter().enumerate() {
            let mut disp = Vector3::zeros();
            for axis in 0..3 {
                let a = &coeffs[4 * axis..4 * axis + 4];
                disp[axis] = 0.002 * (40.0 * a[0] * p.x + 40.0 * a[1] * p.y + 40.0 * a[2] * p.z + 3.0 * a[3]).sin();
            }
            basis[7 + c][v] = disp;
        }
    }
    basis
}

fn pose_basis(b: &Builder, rng: &mut ChaCha8Rng) -> Vec<Vec<Vector3<f64>>> {
    let n = b.vertices.len();
    let mut basis = vec![vec![Vector3::zeros(); n]; NUM_POSE_FEATURES];
    for (feat, field) in basis.iter_mut().enumerate() {
        let bone = 1 + feat / 9;
        let radial_gain: f64 = rng.random_range(-1.0..1.0);
        let axial_gain: f64 = rng.random_range(-1.0..1.0);
        for v in 0..n {
            let w = b.weights[v][bone];
            if w == 0.0 {
                continue;
            }
            let info = &b.info[v];
            let radial = (b.vertices[v] - info.center)
                .try_normalize(1e-12)
                .unwrap_or_else(Vector3::zeros);
            field[v] = (radial * radial_gain + info.axis * axial_gain) * (0.004 * w);
        }
    }
    basis
}

/// Rig file of the procedural right hand.
pub fn test_rig_file() -> RigFile {
    let shapes = finger_specs();
    let mut b = Builder {
        vertices: Vec::new(),
        info: Vec::new(),
        faces: Vec::new(),
        weights: Vec::new(),
        regressor: vec![Vec::new(); NUM_JOINTS],
    };
    build_palm(&mut b);
    for (f, shape) in shapes.iter().enumerate() {
        build_finger(&mut b, f, shape);
    }
    debug_assert_eq!(b.vertices.len(), TEST_RIG_VERTICES);

    let mut rng = ChaCha8Rng::seed_from_u64(BASIS_SEED);
    let shape = shape_basis(&b, &shapes, &mut rng);
    let pose = pose_basis(&b, &mut rng);
    let n = b.vertices.len();
    let joint_regressor = b
        .regressor
        .iter()
        .map(|row| {
            let mut dense = vec![0.0; n];
            for &(v, w) in row {
                dense[v] = w;
            }
            dense
        })
        .collect();
    let to_a = |v: &Vector3<f64>| [v.x, v.y, v.z];
    let mut parents = vec![-1i64; NUM_BONES];
    for f in 0..5 {
        parents[1 + 3 * f] = 0;
        parents[2 + 3 * f] = (1 + 3 * f) as i64;
        parents[3 + 3 * f] = (2 + 3 * f) as i64;
    }
    RigFile {
        template: b.vertices.iter().map(to_a).collect(),
        faces: b.faces,
        shape_basis: shape.iter().map(|s| s.iter().map(to_a).collect()).collect(),
        pose_basis: pose.iter().map(|s| s.iter().map(to_a).collect()).collect(),
        joint_regressor,
        skinning_weights: b.weights,
        parents,
        mean_pose: vec![0.0; NUM_POSE],
        hand_type: HandType::Right,
    }
}

/// The procedural right-hand test rig.
pub fn test_rig() -> HandRig {
    HandRig::from_file(test_rig_file()).expect("procedural rig satisfies its invariants")
}

/// The procedural rig for the requested side.
pub fn test_rig_for(hand: HandType) -> HandRig {
    match hand {
        HandType::Right => test_rig(),
        HandType::Left => super::mirror_rig(&test_rig()),
    }
}
