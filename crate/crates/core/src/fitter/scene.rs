use super::{fit_detections, observation_scale, FitConfig, Observation, RigPair, SceneFit};
use crate::error::Result;
use crate::heatmap::{decode_peaks, CenterMap, Detection};
use crate::losses::BoneTopology;
use crate::scene_synth::{scene_targets, Scene};

/// A decoded hand paired with the observation of the instance it matched.
#[derive(Debug, Clone)]
pub struct SceneJob {
    pub observation: Observation,
    pub detection: Detection,
    /// Index into `scene.instances`.
    pub instance: usize,
}

/// Decodes hands from `map` (or from the scene's own targets). A detection
/// takes the labels of the instance whose center is nearest; its decoded
/// keypoints feed the consistency term. Jobs follow decode order, highest
/// confidence first. Detections whose labels are too occluded to fix a
/// scale are skipped.
pub fn scene_jobs(scene: &Scene, map: Option<&CenterMap>, cfg: &FitConfig) -> Result<Vec<SceneJob>> {
    cfg.validate()?;
    let encoded;
    let map = match map {
        Some(m) => m,
        None => {
            encoded = scene_targets(scene, cfg.center_definition, cfg.min_iou)?;
            &encoded
        }
    };
    let mut jobs = Vec::new();
    for detection in decode_peaks(map, cfg.decode_threshold, cfg.max_hands)? {
        let nearest = scene
            .instances
            .iter()
            .enumerate()
            .min_by(|a, b| {
                let da = (a.1.center - detection.center).norm_squared();
                let db = (b.1.center - detection.center).norm_squared();
                da.total_cmp(&db)
            })
            .map(|(i, _)| i);
        let Some(instance) = nearest else { continue };
        let inst = &scene.instances[instance];
        if observation_scale(&inst.keypoints, &BoneTopology::hand()).is_err() {
            continue;
        }
        let observation = Observation {
            keypoints: inst.keypoints.clone(),
            skin_mask: Some(inst.mask.clone()),
            image: Some(scene.canvas.clone()),
            joints3d: None,
            camera: scene.camera,
            ground_truth: inst.ground_truth(),
        };
        jobs.push(SceneJob {
            observation,
            detection,
            instance,
        });
    }
    Ok(jobs)
}

/// Fits every hand of [`scene_jobs`] under the scene camera, starting each
/// from its detection.
pub fn fit_scene(scene: &Scene, map: Option<&CenterMap>, rigs: &RigPair, cfg: &FitConfig) -> Result<Vec<SceneFit>> {
    let jobs = scene_jobs(scene, map, cfg)?;
    let pairs: Vec<(Observation, Detection)> = jobs.iter().map(|j| (j.observation.clone(), j.detection.clone())).collect();
    let results = fit_detections(&pairs, rigs, cfg);
    jobs.into_iter()
        .zip(results)
        .map(|(job, result)| {
            Ok(SceneFit {
                detection: job.detection,
                instance: job.instance,
                result: result?,
            })
        })
        .collect()
}
