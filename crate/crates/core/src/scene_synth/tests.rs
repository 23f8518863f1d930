use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::camera::project;
use crate::fitter::RigPair;
use crate::hand_model::{lbs_joints, mirror_rig, test_rig};
use crate::heatmap::{channel_peaks, CENTER_CHANNEL, TYPE_CHANNEL};

fn patch_k(side: u32) -> CameraIntrinsics {
    CameraIntrinsics::new(400.0, 400.0, side as f64 / 2.0, side as f64 / 2.0, side, side).unwrap()
}

fn sample(seed: u64, side: u32) -> HandSample {
    let rig = test_rig();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = sample_legal_params(&mut rng, &SynthConfig::default());
    let (t, l) = random_appearance(&mut rng, rig.num_vertices());
    let k = patch_k(side);
    let p = place_in_patch(&rig, &p, &k, 0.85).unwrap();
    render_sample(&rig, &p, &t, &l, &k).unwrap()
}

fn inside_dilated(p: &Vector2<f64>, b: &[f64; 4], d: f64) -> bool {
    p.x >= b[0] - d && p.x <= b[2] + d && p.y >= b[1] - d && p.y <= b[3] + d
}

#[test]
fn rendered_keypoints_inside_dilated_box() {
    for seed in 0..200 {
        let s = sample(seed, 96);
        assert!(s.mask.count() > 0);
        s.validate().unwrap();
        for (j, p) in s.keypoints.iter_visible() {
            assert!(inside_dilated(&p, &s.bbox, 8.0), "seed {seed} joint {j}: {p} vs {:?}", s.bbox);
        }
    }
}

#[test]
fn canonical_hand_covers_patch_fraction() {
    let rig = test_rig();
    let mut p = HandParams::zeros();
    p.set_bone_rotation(0, &Vector3::from(crate::fitter::CANONICAL_ROTATION));
    p.translation = [0.0, 0.08, 0.6];
    let k = CameraIntrinsics::centered(256, 256);
    let s = render_sample(&rig, &p, &Texture::uniform(rig.num_vertices(), [0.6; 3]).unwrap(), &Lighting::ambient(1.0), &k).unwrap();
    assert!(s.mask.count() as f64 > 0.02 * 256.0 * 256.0, "{}", s.mask.count());
}

#[test]
fn stored_params_reproject_bitwise() {
    let s = sample(3, 128);
    let src = s.source.as_ref().unwrap();
    let again = project(&lbs_joints(&test_rig(), &src.params).unwrap(), &src.camera).unwrap();
    for (j, p) in s.keypoints.iter_visible() {
        assert_eq!(p, again[j]);
    }
}

#[test]
fn hand_outside_frustum_is_render_error() {
    let rig = test_rig();
    let mut p = HandParams::zeros();
    p.translation = [0.5, 0.0, 0.3];
    let r = render_sample(&rig, &p, &Texture::uniform(rig.num_vertices(), [0.5; 3]).unwrap(), &Lighting::ambient(1.0), &patch_k(64));
    assert!(matches!(r, Err(Error::Render(_))));
}

#[test]
fn double_flip_is_identity() {
    let s = sample(5, 96);
    let back = flip_sample(&flip_sample(&s));
    assert_eq!(back.rgb, s.rgb);
    assert_eq!(back.mask, s.mask);
    assert_eq!(back.hand_type, s.hand_type);
    assert_eq!(back.bbox, s.bbox);
    for (j, p) in s.keypoints.iter_visible() {
        assert!((back.keypoints.get(j).unwrap() - p).norm() < 1e-12);
    }
}

#[test]
fn flip_maps_left_edge_to_right_edge() {
    let mut s = sample(6, 96);
    s.keypoints.set(0, Vector2::new(0.0, 10.0)).unwrap();
    let f = flip_sample(&s);
    assert_eq!(f.keypoints.get(0).unwrap(), Vector2::new(95.0, 10.0));
    assert_eq!(f.mask.count(), s.mask.count());
    assert_eq!(f.hand_type, HandType::Left);
}

#[test]
fn flipped_source_matches_flipped_labels() {
    let s = sample(7, 128);
    let f = flip_sample(&s);
    let src = f.source.as_ref().unwrap();
    let left = mirror_rig(&test_rig());
    let pts = project(&lbs_joints(&left, &src.params).unwrap(), &src.camera).unwrap();
    for (j, p) in f.keypoints.iter_visible() {
        assert!((pts[j] - p).norm() < 1e-9, "{j}: {} vs {p}", pts[j]);
    }
}

#[test]
fn base_alone_fills_canvas() {
    let base = sample(1, 128);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let scene = compose_scene(&base, &[], &mut rng, &SynthConfig::default()).unwrap();
    assert_eq!(scene.instances.len(), 1);
    assert_eq!(scene.instances[0].affine.scale, 4.0);
    assert_eq!(scene.canvas.dims(), (512, 512));
    let box_side = scene.instances[0].bbox[2] - scene.instances[0].bbox[0];
    assert!(box_side > 4.0 * (base.bbox[2] - base.bbox[0]) - 4.0);
}

#[test]
fn too_many_extras_rejected() {
    let s = sample(1, 64);
    let extras = vec![s.clone(); 10];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(compose_scene(&s, &extras, &mut rng, &SynthConfig::default()).is_err());
}

fn within(b: &[f64; 4], c: u32) -> bool {
    b[0] >= 0.0 && b[1] >= 0.0 && b[2] <= (c - 1) as f64 && b[3] <= (c - 1) as f64
}

fn interiors_disjoint(a: &[f64; 4], b: &[f64; 4]) -> bool {
    a[2] < b[0] || b[2] < a[0] || a[3] < b[1] || b[3] < a[1]
}

#[test]
fn composition_audit() {
    let pool: Vec<HandSample> = (0..6).map(|i| sample(100 + i, 64)).collect();
    let cfg = SynthConfig::default();
    for seed in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = (seed % 10) as usize;
        let extras: Vec<HandSample> = (0..n).map(|i| pool[(seed as usize + i) % pool.len()].clone()).collect();
        let scene = compose_scene(&pool[seed as usize % pool.len()], &extras, &mut rng, &cfg).unwrap();
        assert!(scene.instances.len() <= 10);
        for (i, a) in scene.instances.iter().enumerate() {
            assert!(within(&a.bbox, 512), "seed {seed}");
            if i == 0 {
                continue;
            }
            let side = a.affine.scale * 64.0;
            assert!((96.0..=320.0).contains(&side), "seed {seed}: side {side}");
            for b in &scene.instances[i + 1..] {
                assert!(interiors_disjoint(&a.bbox, &b.bbox), "seed {seed}");
            }
        }
    }
}

#[test]
fn resized_labels_match_reprojection() {
    let pool: Vec<HandSample> = (0..4).map(|i| sample(200 + i, 128)).collect();
    let rig = test_rig();
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scene = compose_scene(&pool[0], &pool[1..], &mut rng, &SynthConfig::default()).unwrap();
        for inst in &scene.instances {
            let src = inst.source.as_ref().unwrap();
            let pts = project(&lbs_joints(&rig, &src.params).unwrap(), &src.camera).unwrap();
            for (j, p) in inst.keypoints.iter_visible() {
                assert!((pts[j] - p).norm() < 1e-6, "seed {seed} joint {j}");
            }
        }
    }
}

#[test]
fn occluded_keypoints_hidden() {
    let pool: Vec<HandSample> = (0..4).map(|i| sample(300 + i, 128)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let scene = compose_scene(&pool[0], &pool[1..], &mut rng, &SynthConfig::default()).unwrap();
    let base = &scene.instances[0];
    let mut hidden = 0;
    for j in 0..21 {
        if let Some(p) = pool[0].keypoints.get(j) {
            let q = base.affine.apply(&p);
            let (x, y) = (q.x.round() as u32, q.y.round() as u32);
            let covered = scene.instances[1..].iter().any(|o| o.mask.get(x, y));
            assert_eq!(base.keypoints.is_visible(j), !covered, "joint {j}");
            hidden += covered as usize;
        }
    }
    // instance masks partition the scene mask
    let total: usize = scene.instances.iter().map(|i| i.mask.count()).sum();
    assert_eq!(total, scene.mask.count());
    let _ = hidden;
}

fn rigs() -> RigPair {
    RigPair::from_right(test_rig())
}

#[test]
fn synthetic_scene_labels_are_exact() {
    let cfg = SynthConfig::default();
    let rigs = rigs();
    for seed in 0..4u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scene = synthesize_scene(&rigs, &mut rng, &cfg).unwrap();
        assert!((3..=6).contains(&scene.requested));
        for inst in &scene.instances {
            let src = inst.source.as_ref().unwrap();
            assert_eq!(src.camera, scene.camera);
            let pts = project(&lbs_joints(rigs.get(inst.hand_type), &src.params).unwrap(), &scene.camera).unwrap();
            for (j, p) in inst.keypoints.iter_visible() {
                assert!((pts[j] - p).norm() < 1e-9);
            }
        }
    }
}

#[test]
fn scene_invariants() {
    let cfg = SynthConfig::default();
    let rigs = rigs();
    for seed in 10..16u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scene = synthesize_scene(&rigs, &mut rng, &cfg).unwrap();
        for inst in &scene.instances {
            let pix: Vec<(u32, u32)> = (0..512u32)
                .flat_map(|y| (0..512u32).map(move |x| (x, y)))
                .filter(|&(x, y)| inst.mask.get(x, y))
                .collect();
            let n = pix.len() as f64;
            let cx = pix.iter().map(|p| p.0 as f64).sum::<f64>() / n;
            let cy = pix.iter().map(|p| p.1 as f64).sum::<f64>() / n;
            assert!(inside_dilated(&Vector2::new(cx, cy), &inst.bbox, 0.0));
            for (j, p) in inst.keypoints.iter_visible() {
                let near = pix
                    .iter()
                    .any(|&(x, y)| (x as f64 - p.x).powi(2) + (y as f64 - p.y).powi(2) <= 64.0);
                assert!(near, "seed {seed} joint {j}");
            }
        }
    }
}

#[test]
fn same_seed_same_scene() {
    let cfg = SynthConfig::default();
    let a = synthesize_scene(&rigs(), &mut ChaCha8Rng::seed_from_u64(42), &cfg).unwrap();
    let b = synthesize_scene(&rigs(), &mut ChaCha8Rng::seed_from_u64(42), &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn targets_have_one_peak_per_instance() {
    let cfg = SynthConfig::default();
    for seed in 20..24u64 {
        let scene = synthesize_scene(&rigs(), &mut ChaCha8Rng::seed_from_u64(seed), &cfg).unwrap();
        let map = scene_targets(&scene, CenterDefinition::VisibleMean, 0.7).unwrap();
        let peaks = channel_peaks(map.channel(CENTER_CHANNEL), 1.0);
        assert_eq!(peaks.len(), scene.instances.len(), "seed {seed}");
        for inst in &scene.instances {
            let (x, y) = ((inst.center.x / 8.0) as usize, (inst.center.y / 8.0) as usize);
            let right = map.get(TYPE_CHANNEL + HandType::Right.channel(), x, y);
            let left = map.get(TYPE_CHANNEL + HandType::Left.channel(), x, y);
            let t = if right >= left { HandType::Right } else { HandType::Left };
            assert_eq!(t, inst.hand_type);
        }
    }
}

#[test]
fn empty_scene_has_zero_map() {
    let scene = Scene {
        canvas: RgbImage::filled(64, 64, [0.5; 3]),
        mask: Mask::empty(64, 64),
        camera: CameraIntrinsics::centered(64, 64),
        instances: vec![],
        requested: 0,
    };
    let map = scene_targets(&scene, CenterDefinition::VisibleMean, 0.7).unwrap();
    assert!(map.data().iter().all(|v| *v == 0.0));
}

#[test]
fn scene_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synthesize_scene(&rigs(), &mut ChaCha8Rng::seed_from_u64(1), &SynthConfig::default()).unwrap();
    write_scene(dir.path(), &scene).unwrap();
    for name in ["canvas.png", "mask.png", "mask_0.png", SCENE_FILE] {
        assert!(dir.path().join(name).is_file(), "{name}");
    }
    let back = read_scene(dir.path()).unwrap();
    assert_eq!(back.instances, scene.instances);
    assert_eq!(back.mask, scene.mask);
    assert_eq!(back.camera, scene.camera);
    let first = std::fs::read(dir.path().join(SCENE_FILE)).unwrap();
    write_scene(dir.path(), &back).unwrap();
    assert_eq!(std::fs::read(dir.path().join(SCENE_FILE)).unwrap(), first);
}

#[test]
fn missing_asset_reported() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synthesize_scene(&rigs(), &mut ChaCha8Rng::seed_from_u64(1), &SynthConfig::default()).unwrap();
    write_scene(dir.path(), &scene).unwrap();
    std::fs::remove_file(dir.path().join("mask_0.png")).unwrap();
    let e = read_scene(dir.path()).unwrap_err();
    assert!(e.to_string().contains("mask_0.png"), "{e}");
}

#[test]
fn config_rejects_unknown_key() {
    let e = SynthConfig::from_toml_str("min_sides = 3\n").unwrap_err();
    assert!(e.to_string().contains("min_sides"));
}
