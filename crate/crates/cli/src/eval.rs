use std::path::Path;

use handforge::fitter::evaluate;
use handforge::hand_model::{lbs_joints, HandType};
use handforge::losses::{pck_curve, procrustes_align, MetricReport, PCK_MAX_M, PCK_THRESHOLDS};
use handforge::scene_synth::{read_scene, write_atomic};
use serde::Serialize;

use crate::config::Rigs;
use crate::error::CliError;
use crate::fit::{ResultsIndex, SceneResult, FIT_FILE};
use crate::manifest::{create_dir, write_json, Recorder};
use crate::synth::Dataset;

#[derive(Debug, Clone, Serialize)]
pub struct HandEval {
    pub scene: String,
    pub instance: usize,
    pub hand_type: HandType,
    #[serde(flatten)]
    pub metrics: MetricReport,
}

/// Flat CSV form of [`HandEval`].
#[derive(Serialize)]
struct HandRow<'a> {
    scene: &'a str,
    instance: usize,
    hand_type: HandType,
    mpjpe_cm: f64,
    mpvpe_cm: f64,
    auc_joints: f64,
    auc_vertices: f64,
    f_at_5mm: f64,
    f_at_15mm: f64,
    epe_cm: f64,
    mpjpe_2d_px: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PckSample {
    pub threshold_cm: f64,
    pub fraction: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Aggregate {
    pub hands: usize,
    /// Field-wise mean of the per-hand rows.
    pub mean: Option<MetricReport>,
    /// Procrustes-aligned joint PCK pooled over every hand.
    pub pck_joints: Vec<PckSample>,
}

pub fn run(rigs: &Rigs, results_dir: &Path, dataset_dir: &Path, out: &Path, rec: &mut Recorder) -> Result<(), CliError> {
    let dataset = Dataset::load(dataset_dir)?;
    let index = ResultsIndex::load(results_dir)?;
    if index.scenes.len() != dataset.scenes.len() {
        return Err(CliError::Usage(format!(
            "results hold {} scenes but the dataset has {}",
            index.scenes.len(),
            dataset.scenes.len()
        )));
    }
    let mut rows = Vec::new();
    let mut errors_m = Vec::new();
    for entry in &dataset.scenes {
        let path = results_dir.join(&entry.id).join(FIT_FILE);
        if !index.scenes.contains(&entry.id) || !path.is_file() {
            return Err(CliError::Usage(format!("missing results for scene {}", entry.id)));
        }
        let result = SceneResult::load(&path)?;
        let scene = read_scene(&dataset_dir.join(&entry.id))?;
        for hand in &result.hands {
            let inst = scene.instances.get(hand.instance).ok_or_else(|| {
                CliError::Usage(format!("{}: instance {} is not in the scene", entry.id, hand.instance))
            })?;
            let Some(gt) = inst.ground_truth() else { continue };
            let rig = rigs.pair.get(inst.hand_type);
            let metrics = evaluate(rig, &hand.params, &scene.camera, &gt)?;
            let pred = lbs_joints(rig, &hand.params)?;
            let truth = lbs_joints(rig, &gt.params)?;
            let aligned = procrustes_align(&pred, &truth)?.apply_all(&pred);
            errors_m.extend(aligned.iter().zip(&truth).map(|(a, b)| (a - b).norm()));
            rows.push(HandEval {
                scene: entry.id.clone(),
                instance: hand.instance,
                hand_type: inst.hand_type,
                metrics,
            });
        }
    }
    create_dir(out)?;
    let reports: Vec<MetricReport> = rows.iter().map(|r| r.metrics.clone()).collect();
    let pck_joints = pck_curve(&errors_m)
        .into_iter()
        .enumerate()
        .map(|(i, fraction)| PckSample {
            threshold_cm: 100.0 * PCK_MAX_M * (i + 1) as f64 / PCK_THRESHOLDS as f64,
            fraction,
        })
        .collect();
    let aggregate = Aggregate {
        hands: rows.len(),
        mean: MetricReport::mean(&reports),
        pck_joints,
    };

    let mut per_hand = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        let m = &r.metrics;
        per_hand.serialize(HandRow {
            scene: &r.scene,
            instance: r.instance,
            hand_type: r.hand_type,
            mpjpe_cm: m.mpjpe_cm,
            mpvpe_cm: m.mpvpe_cm,
            auc_joints: m.auc_joints,
            auc_vertices: m.auc_vertices,
            f_at_5mm: m.f_at_5mm,
            f_at_15mm: m.f_at_15mm,
            epe_cm: m.epe_cm,
            mpjpe_2d_px: m.mpjpe_2d_px,
        })?;
    }
    let per_hand = per_hand.into_inner().map_err(|e| CliError::Failed(e.to_string()))?;
    let mut agg = csv::Writer::from_writer(Vec::new());
    agg.write_record(["metric", "value"])?;
    if let Some(m) = &aggregate.mean {
        let fields = [
            ("mpjpe_cm", Some(m.mpjpe_cm)),
            ("mpvpe_cm", Some(m.mpvpe_cm)),
            ("auc_joints", Some(m.auc_joints)),
            ("auc_vertices", Some(m.auc_vertices)),
            ("f_at_5mm", Some(m.f_at_5mm)),
            ("f_at_15mm", Some(m.f_at_15mm)),
            ("epe_cm", Some(m.epe_cm)),
            ("mpjpe_2d_px", m.mpjpe_2d_px),
        ];
        for (name, v) in fields {
            agg.write_record([name.to_string(), v.map_or(String::new(), |v| v.to_string())])?;
        }
    }
    for s in &aggregate.pck_joints {
        agg.write_record([format!("pck_joints@{:.2}cm", s.threshold_cm), s.fraction.to_string()])?;
    }
    let agg = agg.into_inner().map_err(|e| CliError::Failed(e.to_string()))?;

    write_atomic(&out.join("per_hand.csv"), &per_hand)?;
    write_json(&out.join("per_hand.json"), &rows)?;
    write_atomic(&out.join("aggregate.csv"), &agg)?;
    write_json(&out.join("aggregate.json"), &aggregate)?;
    rec.manifest.inputs.extend([results_dir.to_path_buf(), dataset_dir.to_path_buf()]);
    rec.manifest.outputs.extend(["per_hand.csv", "per_hand.json", "aggregate.csv", "aggregate.json"].map(|f| out.join(f)));
    match &aggregate.mean {
        Some(m) => println!("{} hands: MPJPE {:.3} cm, AUC {:.3}", rows.len(), m.mpjpe_cm, m.auc_joints),
        None => println!("no hands to evaluate"),
    }
    Ok(())
}
