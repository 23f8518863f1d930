use nalgebra::Vector2;

use super::*;
use crate::hand_model::test_rig;
use crate::losses::JointLimits;

fn k() -> CameraIntrinsics {
    CameraIntrinsics::centered(256, 256)
}

fn truth() -> HandParams {
    let mut p = HandParams::zeros();
    p.set_bone_rotation(0, &Vector3::new(std::f64::consts::PI, 0.1, -0.05));
    for b in 1..16 {
        p.pose[3 * b] = 0.2 + 0.03 * b as f64;
    }
    p.shape[1] = 0.3;
    p.translation = [0.01, -0.02, 0.5];
    p
}

fn observe(rig: &HandRig, p: &HandParams) -> Observation {
    let mut obs = Observation::from_keypoints(reproject(rig, p, &k()).unwrap(), k());
    obs.ground_truth = Some(GroundTruth { params: p.clone(), camera: k() });
    obs
}

fn quick() -> FitConfig {
    FitConfig {
        stage1_iters: 60,
        rigid_iters: 10,
        decay_milestones: vec![45],
        stage2_iters: 0,
        w_shape: 0.0,
        ..FitConfig::default()
    }
}

#[test]
fn breakdown_sums_to_total() {
    let rig = test_rig();
    let obs = observe(&rig, &truth());
    let mut p = truth();
    p.pose[4] += 0.2;
    p.pose[40] = 2.5;
    let local = obs.keypoints.map(|q| q + Vector2::new(3.0, -2.0)).unwrap();
    let cfg = FitConfig {
        weights: LossWeights { j3d: 0.5, ..LossWeights::default() },
        ..FitConfig::default()
    };
    let mut o = obs.clone();
    o.joints3d = Some(lbs_joints(&rig, &truth()).unwrap());
    let tex = Texture::uniform(rig.num_vertices(), [0.5; 3]).unwrap();
    let b = loss_total(&p, &tex, &Lighting::ambient(1.0), &rig, &o, Some(&local), &cfg).unwrap();
    assert!(b.rep > 0.0 && b.reg > 0.0 && b.con > 0.0 && b.j3d > 0.0);
    assert_eq!(b.pho, 0.0);
    assert!((b.total - (b.rep + b.reg + b.con + b.pho + b.j3d)).abs() < 1e-12);
}

#[test]
fn ground_truth_has_zero_geometric_loss() {
    let rig = test_rig();
    let obs = observe(&rig, &truth());
    let mut cfg = FitConfig::default();
    cfg.w_shape = 0.0;
    let tex = Texture::uniform(rig.num_vertices(), [0.5; 3]).unwrap();
    let b = loss_total(&truth(), &tex, &Lighting::ambient(1.0), &rig, &obs, Some(&obs.keypoints), &cfg).unwrap();
    assert!(b.total < 1e-20, "{b:?}");
}

#[test]
fn gradient_vanishes_at_minimum() {
    let rig = test_rig();
    let obs = observe(&rig, &truth());
    let mut cfg = FitConfig::default();
    cfg.w_shape = 0.0;
    let objective = Objective::new(&rig, &obs, None, &cfg).unwrap();
    let f = |v: &[f64]| Ok(objective.geometry(&HandParams::from_slice(v)?)?.total);
    // the loss is a sum of norms, so the central stencil sees an O(step)
    // curvature asymmetry at the kink
    let g = gradient(f, &truth().to_vec(), 1e-6).unwrap();
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(norm < 1e-4, "{norm}");
}

#[test]
fn gradient_matches_fourth_order_stencil() {
    let rig = test_rig();
    let obs = observe(&rig, &truth());
    let cfg = FitConfig {
        weights: LossWeights { reg: 0.0, con: 0.0, ..LossWeights::default() },
        ..FitConfig::default()
    };
    let objective = Objective::new(&rig, &obs, None, &cfg).unwrap();
    let f = |v: &[f64]| -> Result<f64> { Ok(objective.geometry(&HandParams::from_slice(v)?)?.total) };
    let mut x = truth().to_vec();
    for (i, v) in x.iter_mut().enumerate() {
        *v += 0.05 * ((i * 13 % 7) as f64 - 3.0) / 3.0;
    }
    let g = gradient(f, &x, 1e-5).unwrap();
    let h = 1e-4;
    for i in 0..NUM_PARAMS {
        let at = |d: f64| {
            let mut y = x.clone();
            y[i] += d;
            f(&y).unwrap()
        };
        let oracle = (-at(2.0 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2.0 * h)) / (12.0 * h);
        let err = (g[i] - oracle).abs();
        assert!(err <= 1e-3 * oracle.abs().max(1e-3), "coordinate {i}: {} vs {oracle}", g[i]);
    }
}

#[test]
fn weights_scale_terms_linearly() {
    let rig = test_rig();
    let mut o = observe(&rig, &truth());
    o.joints3d = Some(lbs_joints(&rig, &truth()).unwrap());
    let mut p = truth();
    p.pose[20] = 2.2;
    p.translation[1] += 0.01;
    let local = o.keypoints.map(|q| q + Vector2::new(1.0, 4.0)).unwrap();
    let tex = Texture::uniform(rig.num_vertices(), [0.5; 3]).unwrap();
    let eval = |w: LossWeights| {
        let cfg = FitConfig { weights: w, ..FitConfig::default() };
        loss_total(&p, &tex, &Lighting::ambient(1.0), &rig, &o, Some(&local), &cfg).unwrap()
    };
    let one = LossWeights { rep: 1.0, reg: 1.0, con: 1.0, pho: 1.0, j3d: 1.0 };
    let base = eval(one.clone());
    let scaled = [
        eval(LossWeights { rep: 3.0, ..one.clone() }).rep / base.rep,
        eval(LossWeights { reg: 3.0, ..one.clone() }).reg / base.reg,
        eval(LossWeights { con: 3.0, ..one.clone() }).con / base.con,
        eval(LossWeights { j3d: 3.0, ..one.clone() }).j3d / base.j3d,
    ];
    for r in scaled {
        assert!((r - 3.0).abs() < 1e-12, "{scaled:?}");
    }
}

#[test]
fn principal_point_detection_starts_on_axis() {
    let rig = test_rig();
    let det = Detection::ground_truth(Vector2::new(128.0, 128.0), HandType::Right, Keypoints2D::invisible(), [0.0, 0.0, 1.0, 1.0]);
    let p = init_params(&det, &k(), &rig, &FitConfig::default()).unwrap();
    assert_eq!(p.translation, [0.0, 0.0, 0.6]);
}

#[test]
fn init_root_projects_near_center() {
    use rand::{Rng, SeedableRng};
    let rig = test_rig();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let c = Vector2::new(rng.random_range(0.0..256.0), rng.random_range(0.0..256.0));
        let det = Detection::ground_truth(c, HandType::Right, Keypoints2D::invisible(), [0.0, 0.0, 1.0, 1.0]);
        let p = init_params(&det, &k(), &rig, &FitConfig::default()).unwrap();
        let root = reproject(&rig, &p, &k()).unwrap().get(0).unwrap();
        assert!((root - c).norm() < 10.0, "{c} -> {root}");
    }
}

#[test]
fn zero_iterations_return_init() {
    let rig = test_rig();
    let obs = observe(&rig, &truth());
    let mut init = truth();
    init.pose[7] += 0.3;
    let cfg = FitConfig {
        stage1_iters: 0,
        rigid_iters: 0,
        ..FitConfig::default()
    };
    let r = fit_hand_from(&obs, None, &init, &rig, &cfg).unwrap();
    assert_eq!(r.params, init);
    assert!(r.trace.is_empty());
    assert!(!r.diverged);
}

#[test]
fn recovers_perturbed_pose() {
    let rig = test_rig();
    let gt = truth();
    let obs = observe(&rig, &gt);
    let mut init = gt.clone();
    for (i, v) in init.pose.iter_mut().enumerate().skip(3) {
        *v += 0.08 * ((i * 7 % 5) as f64 - 2.0) / 2.0;
    }
    init.translation[0] += 0.01;
    init.translation[2] += 0.02;
    let r = fit_hand_from(&obs, Some(&obs.keypoints), &init, &rig, &quick()).unwrap();
    let start = evaluate(&rig, &init, &k(), obs.ground_truth.as_ref().unwrap()).unwrap();
    let end = r.metrics.unwrap();
    assert!(end.mpjpe_2d_px.unwrap() < 0.5 * start.mpjpe_2d_px.unwrap(), "{start:?} -> {end:?}");
    assert!(r.trace.windows(2).all(|w| w[1].best <= w[0].best));
    assert_eq!(r.trace.len(), 60);
    assert!(!r.diverged);
}

#[test]
fn hidden_keypoints_never_enter_losses() {
    let rig = test_rig();
    let mut obs = observe(&rig, &truth());
    for j in [3, 4, 10, 11, 17] {
        obs.keypoints.hide(j);
    }
    let local = reproject(&rig, &truth(), &k()).unwrap();
    let r = fit_hand_from(&obs, Some(&local), &truth(), &rig, &FitConfig { stage1_iters: 5, rigid_iters: 0, ..quick() }).unwrap();
    assert!(r.audit.respects(&obs.keypoints, &BoneTopology::hand()));
    assert!(!r.audit.rep_joints[4] && !r.audit.con_joints[10]);
    assert!(r.audit.rep_joints[0] && r.audit.con_joints[0]);
}

#[test]
fn hidden_scale_bone_falls_back() {
    let rig = test_rig();
    let mut obs = observe(&rig, &truth());
    let full = observation_scale(&obs.keypoints, &BoneTopology::hand()).unwrap();
    obs.keypoints.hide(10);
    let fallback = observation_scale(&obs.keypoints, &BoneTopology::hand()).unwrap();
    assert!(fallback > 0.0 && fallback != full);
    assert!(matches!(
        observation_scale(&Keypoints2D::invisible(), &BoneTopology::hand()),
        Err(Error::DegenerateScale { .. })
    ));
}

#[test]
fn mismatched_rig_rejected() {
    let rig = test_rig();
    let obs = observe(&rig, &truth());
    let det = Detection::ground_truth(
        obs.keypoints.visible_mean().unwrap(),
        HandType::Left,
        obs.keypoints.clone(),
        obs.keypoints.bounds().unwrap(),
    );
    assert!(fit_hand(&obs, &det, &rig, &quick()).is_err());
}

#[test]
fn init_lies_on_detection_ray() {
    let rig = test_rig();
    let det = Detection::ground_truth(Vector2::new(40.0, 200.0), HandType::Right, Keypoints2D::invisible(), [0.0, 0.0, 1.0, 1.0]);
    let p = init_params(&det, &k(), &rig, &FitConfig::default()).unwrap();
    let px = k().project_point(&p.translation());
    assert!((px - det.center).norm() < 1e-9);
    assert!((p.translation[2] - 0.6).abs() < 1e-12);
    assert_eq!(&p.pose[3..], &rig.mean_pose()[3..]);
}

#[test]
fn limits_pull_illegal_start_to_boundary() {
    let rig = test_rig();
    let mut gt = HandParams::zeros();
    gt.set_bone_rotation(0, &Vector3::from(CANONICAL_ROTATION));
    gt.translation = [0.0, 0.0, 0.5];
    let obs = observe(&rig, &gt);
    let mut init = gt.clone();
    init.pose[3 * 5] = -0.8;
    let cfg = FitConfig {
        rigid_iters: 0,
        ..quick()
    };
    let r = fit_hand_from(&obs, None, &init, &rig, &cfg).unwrap();
    let lim = JointLimits::default();
    assert!(lim.max_violation(r.params.articulation()) < 0.05, "{:?}", r.params.pose[15]);
}

#[test]
fn trace_csv_has_header_and_rows() {
    let rig = test_rig();
    let obs = observe(&rig, &truth());
    let r = fit_hand_from(&obs, None, &truth(), &rig, &FitConfig { stage1_iters: 3, rigid_iters: 1, ..quick() }).unwrap();
    let csv = r.trace_csv().unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "stage,iteration,total,rep,reg,con,pho,j3d,best");
    assert_eq!(lines.len(), 4);
}

#[test]
fn appearance_stage_runs_with_image() {
    let rig = test_rig();
    let gt = truth();
    let mut obs = observe(&rig, &gt);
    let mesh = lbs_forward(&rig, &gt).unwrap();
    let tex = Texture::uniform(rig.num_vertices(), [0.8, 0.6, 0.5]).unwrap();
    let out = render_mesh(&mesh.vertices, rig.faces(), &tex, &Lighting::ambient(0.9), &k()).unwrap();
    obs.image = Some(out.rgb);
    obs.skin_mask = Some(out.silhouette);
    let cfg = FitConfig {
        stage1_iters: 2,
        rigid_iters: 0,
        stage2_iters: 80,
        ..quick()
    };
    let r = fit_hand_from(&obs, None, &gt, &rig, &cfg).unwrap();
    let s2: Vec<&TraceRow> = r.trace.iter().filter(|t| t.stage == 2).collect();
    assert_eq!(s2.len(), 80);
    assert!(r.stage2_loss.unwrap() < 0.5 * s2[0].pho);
}

#[test]
fn parallel_fits_keep_order() {
    let rigs = RigPair::from_right(test_rig());
    let mut jobs = Vec::new();
    for (i, hand) in [HandType::Right, HandType::Left, HandType::Right].into_iter().enumerate() {
        let mut p = truth();
        p.translation[0] = -0.05 + 0.05 * i as f64;
        if hand == HandType::Left {
            p = p.mirrored();
        }
        let obs = observe(rigs.get(hand), &p);
        let kp = obs.keypoints.clone();
        let det = Detection::ground_truth(kp.visible_mean().unwrap(), hand, kp.clone(), kp.bounds().unwrap());
        jobs.push((obs, det));
    }
    let cfg = FitConfig { stage1_iters: 2, rigid_iters: 1, ..quick() };
    let out = fit_detections(&jobs, &rigs, &cfg);
    for (r, (obs, det)) in out.iter().zip(&jobs) {
        let seq = fit_hand(obs, det, rigs.get(det.hand_type), &cfg).unwrap();
        assert_eq!(r.as_ref().unwrap().params, seq.params);
    }
}

#[test]
fn single_hand_scene_matches_direct_fit() {
    use crate::scene_synth::{synthesize_scene, SynthConfig};
    use rand::SeedableRng;
    let rigs = RigPair::from_right(test_rig());
    let scfg = SynthConfig { min_hands: 1, max_hands: 1, ..SynthConfig::default() };
    let scene = synthesize_scene(&rigs, &mut rand_chacha::ChaCha8Rng::seed_from_u64(2), &scfg).unwrap();
    let cfg = FitConfig { stage1_iters: 20, rigid_iters: 5, stage2_iters: 10, ..quick() };
    let fits = fit_scene(&scene, None, &rigs, &cfg).unwrap();
    assert_eq!(fits.len(), 1);
    let inst = &scene.instances[0];
    let obs = Observation {
        keypoints: inst.keypoints.clone(),
        skin_mask: Some(inst.mask.clone()),
        image: Some(scene.canvas.clone()),
        joints3d: None,
        camera: scene.camera,
        ground_truth: inst.ground_truth(),
    };
    let direct = fit_hand(&obs, &fits[0].detection, rigs.get(inst.hand_type), &cfg).unwrap();
    assert_eq!(fits[0].result, direct);
}

#[test]
fn permuted_detections_permute_results() {
    let rigs = RigPair::from_right(test_rig());
    let mut jobs = Vec::new();
    for i in 0..3 {
        let mut p = truth();
        p.translation[0] = -0.04 + 0.04 * i as f64;
        let obs = observe(&rigs.right, &p);
        let kp = obs.keypoints.clone();
        let det = Detection::ground_truth(kp.visible_mean().unwrap(), HandType::Right, kp.clone(), kp.bounds().unwrap());
        jobs.push((obs, det));
    }
    let cfg = FitConfig { stage1_iters: 8, rigid_iters: 2, ..quick() };
    let a = fit_detections(&jobs, &rigs, &cfg);
    let perm = [2, 0, 1];
    let permuted: Vec<_> = perm.iter().map(|&i| jobs[i].clone()).collect();
    let b = fit_detections(&permuted, &rigs, &cfg);
    for (k, &i) in perm.iter().enumerate() {
        assert_eq!(b[k].as_ref().unwrap(), a[i].as_ref().unwrap());
    }
}

#[test]
fn empty_map_gives_no_fits() {
    use crate::heatmap::CenterMap;
    use crate::scene_synth::{synthesize_scene, SynthConfig};
    use rand::SeedableRng;
    let rigs = RigPair::from_right(test_rig());
    let scene = synthesize_scene(&rigs, &mut rand_chacha::ChaCha8Rng::seed_from_u64(1), &SynthConfig::default()).unwrap();
    let map = CenterMap::for_image(512, 512);
    assert!(fit_scene(&scene, Some(&map), &rigs, &quick()).unwrap().is_empty());
}
