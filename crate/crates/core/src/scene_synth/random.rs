use nalgebra::{Rotation3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::SynthConfig;
use crate::fitter::CANONICAL_ROTATION;
use crate::hand_model::{HandParams, NUM_BONES, NUM_SHAPE};
use crate::renderer::{Lighting, Texture, NUM_SH};

/// Right-hand parameters inside the default joint limits: flexion in
/// `[0, max_flexion]`, small twist and spread, palm tilted at most
/// `max_tilt` away from the camera. Translation is left at zero.
pub fn sample_legal_params<R: Rng>(rng: &mut R, cfg: &SynthConfig) -> HandParams {
    let mut p = HandParams::zeros();
    for s in p.shape.iter_mut().take(NUM_SHAPE) {
        *s = rng.random_range(-cfg.max_shape..=cfg.max_shape);
    }
    for b in 1..NUM_BONES {
        p.pose[3 * b] = rng.random_range(0.0..=cfg.max_flexion);
        p.pose[3 * b + 1] = rng.random_range(-cfg.max_twist..=cfg.max_twist);
        p.pose[3 * b + 2] = rng.random_range(-cfg.max_abduction..=cfg.max_abduction);
    }
    let axis = Vector3::new(
        rng.random_range(-1.0..=1.0),
        rng.random_range(-1.0..=1.0),
        rng.random_range(-1.0..=1.0),
    );
    let tilt = match axis.try_normalize(1e-9) {
        Some(a) => a * rng.random_range(0.0..=cfg.max_tilt),
        None => Vector3::zeros(),
    };
    let r = Rotation3::new(Vector3::from(CANONICAL_ROTATION)) * Rotation3::new(tilt);
    p.set_bone_rotation(0, &r.scaled_axis());
    p
}

/// Adds Gaussian noise to every pose entry (radians) and translation
/// coordinate (meters). Shape is untouched.
pub fn perturb_params<R: Rng>(rng: &mut R, params: &HandParams, pose_sigma: f64, translation_sigma: f64) -> HandParams {
    let mut p = params.clone();
    let pose = Normal::new(0.0, pose_sigma.max(0.0)).expect("finite sigma");
    let trans = Normal::new(0.0, translation_sigma.max(0.0)).expect("finite sigma");
    for v in p.pose.iter_mut() {
        *v += pose.sample(rng);
    }
    for v in p.translation.iter_mut() {
        *v += trans.sample(rng);
    }
    p
}

/// Skin-like per-vertex albedo with mild noise and an ambient-plus-directional
/// light.
pub fn random_appearance<R: Rng>(rng: &mut R, num_vertices: usize) -> (Texture, Lighting) {
    let base: [f64; 3] = [
        rng.random_range(0.55..0.85),
        rng.random_range(0.38..0.62),
        rng.random_range(0.28..0.5),
    ];
    let rgb = (0..num_vertices)
        .map(|_| {
            let n: f64 = rng.random_range(-0.05..0.05);
            base.map(|c| (c + n).clamp(0.0, 1.0))
        })
        .collect();
    let mut lighting = Lighting::ambient(rng.random_range(0.75..0.95));
    let dir = [rng.random_range(-0.12..0.12), rng.random_range(-0.12..0.12), rng.random_range(0.0..0.15)];
    for c in 0..3 {
        // first-order band: y, z, x
        lighting.sh_coeffs[c * NUM_SH + 1] = dir[1];
        lighting.sh_coeffs[c * NUM_SH + 2] = dir[2];
        lighting.sh_coeffs[c * NUM_SH + 3] = dir[0];
    }
    (Texture::new(rgb).expect("albedo clamped to [0, 1]"), lighting)
}
