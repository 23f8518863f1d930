//! Per-hand optimization of shape, pose and translation against 2D
//! keypoints, followed by texture and lighting against the image.

mod config;
mod optim;
mod photometric;
mod scene;

pub use config::{FitConfig, LossWeights};
pub use optim::{gradient, gradient_masked, Adam};
pub use photometric::{fit_appearance, AppearanceFit};
pub use scene::{fit_scene, scene_jobs, SceneJob};

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{backproject_ray, project, CameraIntrinsics};
use crate::error::{invalid, Error, Result};
use crate::hand_model::{
    lbs_forward, lbs_joints, HandParams, HandRig, HandType, NUM_JOINTS, NUM_PARAMS, POSE_OFFSET,
    TRANSLATION_OFFSET,
};
use crate::heatmap::Detection;
use crate::imaging::{Mask, RgbImage};
use crate::keypoints::Keypoints2D;
use crate::losses::{
    consistency_loss, joint3d_loss, metrics, regularization_loss, reprojection_terms,
    scale_bone_length, AlignMode, BoneTopology, MetricReport, NUM_EDGES, MIN_SCALE_PX,
};
use crate::renderer::{photometric_loss, render_mesh, Lighting, Texture};

/// Global rotation that turns the rig's palm toward the camera.
pub const CANONICAL_ROTATION: [f64; 3] = [std::f64::consts::PI, 0.0, 0.0];
/// Losses above this abort the fit as diverged.
pub const DIVERGENCE_LOSS: f64 = 1e6;

/// What a single hand is fitted against.
#[derive(Debug, Clone)]
pub struct Observation {
    pub keypoints: Keypoints2D,
    pub skin_mask: Option<Mask>,
    pub image: Option<RgbImage>,
    /// Camera-frame 3D joints; enables the 3D joint term.
    pub joints3d: Option<Vec<Vector3<f64>>>,
    pub camera: CameraIntrinsics,
    /// Parameters that produced the observation, used only for metrics.
    pub ground_truth: Option<GroundTruth>,
}

/// Known parameters together with the camera under which they project onto
/// the observed labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub params: HandParams,
    pub camera: CameraIntrinsics,
}

impl Observation {
    pub fn from_keypoints(keypoints: Keypoints2D, camera: CameraIntrinsics) -> Self {
        Self {
            keypoints,
            skin_mask: None,
            image: None,
            joints3d: None,
            camera,
            ground_truth: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        if self.keypoints.num_visible() == 0 {
            return Err(invalid("observation", "no visible keypoints"));
        }
        let dims = (self.camera.width, self.camera.height);
        if let Some(m) = &self.skin_mask {
            if m.dims() != dims {
                return Err(invalid("skin_mask", format!("{:?} against intrinsics {dims:?}", m.dims())));
            }
        }
        if let Some(i) = &self.image {
            if i.dims() != dims {
                return Err(invalid("image", format!("{:?} against intrinsics {dims:?}", i.dims())));
            }
        }
        if let Some(j) = &self.joints3d {
            if j.len() != NUM_JOINTS {
                return Err(invalid("joints3d", format!("expected {NUM_JOINTS} joints, got {}", j.len())));
            }
        }
        Ok(())
    }
}

/// Weighted loss terms; `total` is their sum.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub rep: f64,
    pub reg: f64,
    pub con: f64,
    pub pho: f64,
    pub j3d: f64,
}

impl LossBreakdown {
    fn from_terms(rep: f64, reg: f64, con: f64, pho: f64, j3d: f64) -> Self {
        Self {
            total: rep + reg + con + pho + j3d,
            rep,
            reg,
            con,
            pho,
            j3d,
        }
    }
}

/// Which keypoints and bones entered the geometric loss sums.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossAudit {
    pub rep_joints: [bool; NUM_JOINTS],
    pub rep_edges: [bool; NUM_EDGES],
    pub con_joints: [bool; NUM_JOINTS],
}

impl LossAudit {
    /// True when no hidden observation keypoint or bone touching one was used.
    pub fn respects(&self, obs: &Keypoints2D, topo: &BoneTopology) -> bool {
        let joints_ok = (0..NUM_JOINTS).all(|j| obs.is_visible(j) || !(self.rep_joints[j] || self.con_joints[j]));
        let edges_ok = topo
            .edges()
            .iter()
            .enumerate()
            .all(|(e, &(p, c))| !self.rep_edges[e] || (obs.is_visible(p) && obs.is_visible(c)));
        joints_ok && edges_ok
    }
}

/// Normalizer for the reprojection joint term: the middle-finger proximal
/// bone, or the mean visible bone length when that bone is hidden.
pub fn observation_scale(kp: &Keypoints2D, topo: &BoneTopology) -> Result<f64> {
    if let Some(s) = scale_bone_length(kp).filter(|s| *s > MIN_SCALE_PX) {
        return Ok(s);
    }
    let lengths: Vec<f64> = topo
        .edges()
        .iter()
        .filter_map(|&(p, c)| Some((kp.get(c)? - kp.get(p)?).norm()))
        .filter(|l| *l > MIN_SCALE_PX)
        .collect();
    if lengths.is_empty() {
        return Err(Error::DegenerateScale { hand: 0, length: 0.0 });
    }
    Ok(lengths.iter().sum::<f64>() / lengths.len() as f64)
}

/// Starting parameters for a detection: mean articulation, canonical global
/// rotation and the detection center pushed to `cfg.init_depth`.
pub fn init_params(det: &Detection, k: &CameraIntrinsics, rig: &HandRig, cfg: &FitConfig) -> Result<HandParams> {
    let mut p = HandParams::zeros();
    p.pose.copy_from_slice(rig.mean_pose());
    p.set_bone_rotation(0, &Vector3::from(CANONICAL_ROTATION));
    let t = backproject_ray(&det.center, cfg.init_depth, k)?;
    p.translation = [t.x, t.y, t.z];
    Ok(p)
}

/// Reprojected joints as fully visible keypoints.
pub fn reproject(rig: &HandRig, params: &HandParams, k: &CameraIntrinsics) -> Result<Keypoints2D> {
    let joints = lbs_joints(rig, params)?;
    Keypoints2D::from_points(&project(&joints, k)?)
}

/// Loss evaluation with per-observation quantities computed once.
pub(crate) struct Objective<'a> {
    rig: &'a HandRig,
    obs: &'a Observation,
    local: Option<Keypoints2D>,
    cfg: &'a FitConfig,
    topo: BoneTopology,
    scale: f64,
}

impl<'a> Objective<'a> {
    pub(crate) fn new(rig: &'a HandRig, obs: &'a Observation, local: Option<&Keypoints2D>, cfg: &'a FitConfig) -> Result<Self> {
        obs.validate()?;
        cfg.limits.validate()?;
        let topo = BoneTopology::hand();
        let scale = observation_scale(&obs.keypoints, &topo)?;
        // local keypoints only count where the observation is visible
        let local = local.map(|l| {
            let mut m = l.clone();
            for j in 0..NUM_JOINTS {
                if !obs.keypoints.is_visible(j) {
                    m.hide(j);
                }
            }
            m
        });
        Ok(Self {
            rig,
            obs,
            local,
            cfg,
            topo,
            scale,
        })
    }

    fn geometry_with_joints(&self, params: &HandParams) -> Result<(LossBreakdown, Keypoints2D)> {
        let w = &self.cfg.weights;
        let joints = lbs_joints(self.rig, params)?;
        let reproj = Keypoints2D::from_points(&project(&joints, &self.obs.camera)?)?;
        let rep = if w.rep > 0.0 {
            let t = reprojection_terms(
                std::slice::from_ref(&reproj),
                std::slice::from_ref(&self.obs.keypoints),
                &self.topo,
                &[self.scale],
            )?;
            w.rep * t.total()
        } else {
            0.0
        };
        let reg = if w.reg > 0.0 {
            w.reg * regularization_loss(params, &self.cfg.limits, self.cfg.w_pose, self.cfg.w_shape)?
        } else {
            0.0
        };
        let con = match &self.local {
            Some(local) if w.con > 0.0 => w.con * consistency_loss(std::slice::from_ref(local), std::slice::from_ref(&reproj))?,
            _ => 0.0,
        };
        let j3d = match &self.obs.joints3d {
            Some(gt) if w.j3d > 0.0 => w.j3d * joint3d_loss(&joints, gt)?,
            _ => 0.0,
        };
        Ok((LossBreakdown::from_terms(rep, reg, con, 0.0, j3d), reproj))
    }

    /// Every geometric term (no photometric term).
    pub(crate) fn geometry(&self, params: &HandParams) -> Result<LossBreakdown> {
        Ok(self.geometry_with_joints(params)?.0)
    }

    fn full(&self, params: &HandParams, texture: &Texture, lighting: &Lighting) -> Result<LossBreakdown> {
        let mut b = self.geometry(params)?;
        let w = self.cfg.weights.pho;
        if let (Some(img), Some(mask)) = (&self.obs.image, &self.obs.skin_mask) {
            if w > 0.0 {
                let mesh = lbs_forward(self.rig, params)?;
                let out = render_mesh(&mesh.vertices, self.rig.faces(), texture, lighting, &self.obs.camera)?;
                b.pho = w * photometric_loss(&out, img, mask)?;
                b.total = b.rep + b.reg + b.con + b.pho + b.j3d;
            }
        }
        Ok(b)
    }

    pub(crate) fn audit(&self, params: &HandParams) -> Result<LossAudit> {
        let (_, reproj) = self.geometry_with_joints(params)?;
        let t = reprojection_terms(
            std::slice::from_ref(&reproj),
            std::slice::from_ref(&self.obs.keypoints),
            &self.topo,
            &[self.scale],
        )?;
        let mut con_joints = [false; NUM_JOINTS];
        if let Some(local) = &self.local {
            for (j, c) in con_joints.iter_mut().enumerate() {
                *c = local.is_visible(j) && reproj.is_visible(j);
            }
        }
        Ok(LossAudit {
            rep_joints: t.joints_used[0],
            rep_edges: t.edges_used[0],
            con_joints,
        })
    }
}

/// Weighted total loss and its terms. The photometric term is included when
/// the observation carries both an image and a skin mask.
pub fn loss_total(
    params: &HandParams,
    texture: &Texture,
    lighting: &Lighting,
    rig: &HandRig,
    obs: &Observation,
    local_kp: Option<&Keypoints2D>,
    cfg: &FitConfig,
) -> Result<LossBreakdown> {
    Objective::new(rig, obs, local_kp, cfg)?.full(params, texture, lighting)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub stage: u8,
    pub iteration: usize,
    pub total: f64,
    pub rep: f64,
    pub reg: f64,
    pub con: f64,
    pub pho: f64,
    pub j3d: f64,
    /// Best total of the current stage so far.
    pub best: f64,
}

impl TraceRow {
    fn new(stage: u8, iteration: usize, b: &LossBreakdown, best: f64) -> Self {
        Self {
            stage,
            iteration,
            total: b.total,
            rep: b.rep,
            reg: b.reg,
            con: b.con,
            pho: b.pho,
            j3d: b.j3d,
            best,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: HandParams,
    pub texture: Texture,
    pub lighting: Lighting,
    pub trace: Vec<TraceRow>,
    pub metrics: Option<MetricReport>,
    pub audit: LossAudit,
    pub stage1_loss: f64,
    pub stage2_loss: Option<f64>,
    pub converged: bool,
    pub diverged: bool,
}

impl FitResult {
    /// Loss trace as CSV with a header row.
    pub fn trace_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.trace {
            w.serialize(row).map_err(|e| invalid("trace", e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| invalid("trace", e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

fn rigid_mask() -> Vec<bool> {
    let mut m = vec![false; NUM_PARAMS];
    for i in 0..3 {
        m[POSE_OFFSET + i] = true;
        m[TRANSLATION_OFFSET + i] = true;
    }
    m
}

struct Stage1 {
    params: HandParams,
    loss: f64,
    trace: Vec<TraceRow>,
    converged: bool,
    diverged: bool,
}

fn stage1(objective: &Objective<'_>, init: &HandParams, cfg: &FitConfig) -> Result<Stage1> {
    let eval = |v: &[f64]| -> Result<f64> { Ok(objective.geometry(&HandParams::from_slice(v)?)?.total) };
    let mut cur = objective.geometry(init)?;
    let mut x = init.to_vec();
    let mut best = cur.total;
    let mut best_x = x.clone();
    let mut trace = Vec::with_capacity(cfg.stage1_iters);
    let mut adam = Adam::new(NUM_PARAMS);
    let rigid = rigid_mask();
    let all = vec![true; NUM_PARAMS];
    let mut diverged = !cur.total.is_finite() || cur.total > DIVERGENCE_LOSS;

    for it in 0..cfg.stage1_iters {
        if diverged {
            break;
        }
        let active = if it < cfg.rigid_iters { &rigid } else { &all };
        let g = match gradient_masked(eval, &x, cfg.fd_step, active) {
            Ok(g) => g,
            Err(_) => {
                diverged = true;
                break;
            }
        };
        let lr = FitConfig::rate_at(cfg.learning_rate, &cfg.decay_milestones, cfg.decay_factor, it);
        let rates: Vec<f64> = (0..NUM_PARAMS)
            .map(|i| match (active[i], i >= TRANSLATION_OFFSET) {
                (false, _) => 0.0,
                (true, true) => lr * cfg.translation_rate_scale,
                (true, false) => lr,
            })
            .collect();
        let mut step = adam.step(&g, &rates);
        for attempt in 0..=cfg.line_search_halvings {
            let trial: Vec<f64> = x.iter().zip(&step).map(|(a, s)| a + s).collect();
            let last = attempt == cfg.line_search_halvings;
            if let Ok(b) = HandParams::from_slice(&trial).and_then(|p| objective.geometry(&p)) {
                if b.total.is_finite() && (b.total <= cur.total || last) {
                    x = trial;
                    cur = b;
                    break;
                }
            }
            step.iter_mut().for_each(|s| *s *= 0.5);
        }
        if !cur.total.is_finite() || cur.total > DIVERGENCE_LOSS {
            diverged = true;
        } else if cur.total < best {
            best = cur.total;
            best_x.clone_from(&x);
        }
        trace.push(TraceRow::new(1, it, &cur, best));
    }
    let window = trace.len().min(20);
    let converged = !diverged
        && (window == 0 || trace[trace.len() - window].best - best <= 1e-6 * (1.0 + best.abs()));
    Ok(Stage1 {
        params: HandParams::from_slice(&best_x)?,
        loss: best,
        trace,
        converged,
        diverged,
    })
}

/// Two-stage fit from explicit starting parameters.
///
/// `local_kp` are keypoints decoded from local evidence (the heatmap); they
/// feed the consistency term. Stage 2 runs only when the observation has an
/// image and a skin mask.
pub fn fit_hand_from(
    obs: &Observation,
    local_kp: Option<&Keypoints2D>,
    init: &HandParams,
    rig: &HandRig,
    cfg: &FitConfig,
) -> Result<FitResult> {
    cfg.validate()?;
    if !init.is_finite() {
        return Err(invalid("init", "non-finite parameter"));
    }
    let objective = Objective::new(rig, obs, local_kp, cfg)?;
    let s1 = stage1(&objective, init, cfg)?;
    let mut trace = s1.trace;
    let mut texture = Texture::uniform(rig.num_vertices(), cfg.init_albedo)?;
    let mut lighting = Lighting::ambient(cfg.init_ambient);
    let mut stage2_loss = None;
    if let (Some(image), Some(mask)) = (&obs.image, &obs.skin_mask) {
        if !s1.diverged && cfg.stage2_iters > 0 {
            let mesh = lbs_forward(rig, &s1.params)?;
            let fit = fit_appearance(&mesh.vertices, rig.faces(), image, mask, &obs.camera, &texture, &lighting, cfg)?;
            trace.extend(fit.trace.iter().map(|(it, loss, best)| {
                let b = LossBreakdown::from_terms(0.0, 0.0, 0.0, cfg.weights.pho * loss, 0.0);
                TraceRow::new(2, *it, &b, cfg.weights.pho * best)
            }));
            texture = fit.texture;
            lighting = fit.lighting;
            stage2_loss = Some(fit.loss);
        }
    }
    let metrics = match &obs.ground_truth {
        Some(gt) => Some(evaluate(rig, &s1.params, &obs.camera, gt)?),
        None => None,
    };
    Ok(FitResult {
        audit: objective.audit(&s1.params)?,
        params: s1.params,
        texture,
        lighting,
        trace,
        metrics,
        stage1_loss: s1.loss,
        stage2_loss,
        converged: s1.converged,
        diverged: s1.diverged,
    })
}

/// Procrustes-aligned metrics of `params` (seen through `k`) against `gt`.
/// The 2D error uses every ground-truth joint, hidden or not.
pub fn evaluate(rig: &HandRig, params: &HandParams, k: &CameraIntrinsics, gt: &GroundTruth) -> Result<MetricReport> {
    let pred = lbs_forward(rig, params)?;
    let truth = lbs_forward(rig, &gt.params)?;
    let pk = Keypoints2D::from_points(&project(&pred.joints, k)?)?;
    let gk = Keypoints2D::from_points(&project(&truth.joints, &gt.camera)?)?;
    metrics(&pred.vertices, &pred.joints, &truth.vertices, &truth.joints, AlignMode::Procrustes, Some((&pk, &gk)))
}

/// Fits one detected hand. The rig must already match the detected side.
pub fn fit_hand(obs: &Observation, det: &Detection, rig: &HandRig, cfg: &FitConfig) -> Result<FitResult> {
    if rig.hand_type() != det.hand_type {
        return Err(invalid(
            "rig",
            format!("{:?} rig for a {:?} detection", rig.hand_type(), det.hand_type),
        ));
    }
    let init = init_params(det, &obs.camera, rig, cfg)?;
    let local = (det.keypoints.num_visible() > 0).then_some(&det.keypoints);
    fit_hand_from(obs, local, &init, rig, cfg)
}

/// Left and right rigs for scenes with both sides.
#[derive(Debug, Clone)]
pub struct RigPair {
    pub left: HandRig,
    pub right: HandRig,
}

impl RigPair {
    pub fn from_right(right: HandRig) -> Self {
        Self {
            left: crate::hand_model::mirror_rig(&right),
            right,
        }
    }

    pub fn get(&self, hand: HandType) -> &HandRig {
        match hand {
            HandType::Left => &self.left,
            HandType::Right => &self.right,
        }
    }
}

/// One fitted hand of a scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFit {
    pub detection: Detection,
    /// Scene instance whose labels were used as the observation.
    pub instance: usize,
    pub result: FitResult,
}

/// Fits every `(observation, detection)` pair in parallel; output order
/// follows input order.
pub fn fit_detections(
    jobs: &[(Observation, Detection)],
    rigs: &RigPair,
    cfg: &FitConfig,
) -> Vec<Result<FitResult>> {
    jobs.par_iter()
        .map(|(obs, det)| fit_hand(obs, det, rigs.get(det.hand_type), cfg))
        .collect()
}

#[cfg(test)]
mod tests;
