use std::path::Path;

use handforge::fitter::{fit_scene, FitConfig};
use handforge::hand_model::{HandParams, HandType};
use handforge::losses::MetricReport;
use handforge::renderer::{Lighting, Texture};
use handforge::scene_synth::{read_scene, write_atomic};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Resolved, Rigs};
use crate::error::CliError;
use crate::manifest::{create_dir, read_json, write_json, Recorder};
use crate::synth::Dataset;

pub const RESULTS_FILE: &str = "results.json";
pub const FIT_FILE: &str = "fit.json";
pub const METRICS_FILE: &str = "metrics.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandResult {
    /// Index of the matched instance in the scene document.
    pub instance: usize,
    pub hand_type: HandType,
    pub center: [f64; 2],
    pub confidence: f64,
    pub params: HandParams,
    pub texture: Texture,
    pub lighting: Lighting,
    pub metrics: Option<MetricReport>,
    pub stage1_loss: f64,
    pub stage2_loss: Option<f64>,
    pub converged: bool,
    pub diverged: bool,
    pub trace: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneResult {
    pub scene: String,
    pub hands: Vec<HandResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsIndex {
    pub config_hash: String,
    pub seed: u64,
    pub scenes: Vec<String>,
    pub hands: usize,
    pub diverged: usize,
}

impl ResultsIndex {
    pub fn load(dir: &Path) -> Result<Self, CliError> {
        read_json(&dir.join(RESULTS_FILE))
    }
}

impl SceneResult {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        read_json(path)
    }
}

#[derive(Serialize)]
struct MetricsRow<'a> {
    scene: &'a str,
    instance: usize,
    hand_type: HandType,
    converged: bool,
    diverged: bool,
    stage1_loss: f64,
    stage2_loss: Option<f64>,
    mpjpe_2d_px: Option<f64>,
    mpjpe_cm: Option<f64>,
    mpvpe_cm: Option<f64>,
    auc_joints: Option<f64>,
    auc_vertices: Option<f64>,
    f_at_5mm: Option<f64>,
    f_at_15mm: Option<f64>,
    epe_cm: Option<f64>,
}

fn fit_one(dataset: &Path, id: &str, rigs: &Rigs, cfg: &FitConfig, out: &Path) -> Result<SceneResult, CliError> {
    let scene = read_scene(&dataset.join(id))?;
    let dir = out.join(id);
    create_dir(&dir)?;
    let mut hands = Vec::new();
    for f in fit_scene(&scene, None, &rigs.pair, cfg)? {
        let trace = format!("trace_{}.csv", f.instance);
        write_atomic(&dir.join(&trace), f.result.trace_csv()?.as_bytes())?;
        let r = f.result;
        hands.push(HandResult {
            instance: f.instance,
            hand_type: f.detection.hand_type,
            center: [f.detection.center.x, f.detection.center.y],
            confidence: f.detection.confidence,
            params: r.params,
            texture: r.texture,
            lighting: r.lighting,
            metrics: r.metrics,
            stage1_loss: r.stage1_loss,
            stage2_loss: r.stage2_loss,
            converged: r.converged,
            diverged: r.diverged,
            trace,
        });
    }
    let result = SceneResult {
        scene: id.to_string(),
        hands,
    };
    write_json(&dir.join(FIT_FILE), &result)?;
    Ok(result)
}

pub fn run(resolved: &Resolved, rigs: &Rigs, dataset_dir: &Path, out: &Path, rec: &mut Recorder) -> Result<(), CliError> {
    let dataset = Dataset::load(dataset_dir)?;
    create_dir(out)?;
    let cfg = &resolved.config.fit;
    let outcomes: Vec<Result<SceneResult, CliError>> = dataset
        .scenes
        .par_iter()
        .map(|e| fit_one(dataset_dir, &e.id, rigs, cfg, out))
        .collect();

    let mut csv = csv::Writer::from_writer(Vec::new());
    let mut failed = Vec::new();
    let mut scenes = Vec::new();
    let (mut hands, mut diverged) = (0, 0);
    for (entry, outcome) in dataset.scenes.iter().zip(&outcomes) {
        let result = match outcome {
            Ok(r) => r,
            Err(e) => {
                eprintln!("{}: {e}", entry.id);
                failed.push(entry.id.clone());
                continue;
            }
        };
        scenes.push(entry.id.clone());
        for h in &result.hands {
            hands += 1;
            diverged += h.diverged as usize;
            let m = h.metrics.as_ref();
            csv.serialize(MetricsRow {
                scene: &entry.id,
                instance: h.instance,
                hand_type: h.hand_type,
                converged: h.converged,
                diverged: h.diverged,
                stage1_loss: h.stage1_loss,
                stage2_loss: h.stage2_loss,
                mpjpe_2d_px: m.and_then(|m| m.mpjpe_2d_px),
                mpjpe_cm: m.map(|m| m.mpjpe_cm),
                mpvpe_cm: m.map(|m| m.mpvpe_cm),
                auc_joints: m.map(|m| m.auc_joints),
                auc_vertices: m.map(|m| m.auc_vertices),
                f_at_5mm: m.map(|m| m.f_at_5mm),
                f_at_15mm: m.map(|m| m.f_at_15mm),
                epe_cm: m.map(|m| m.epe_cm),
            })?;
        }
    }
    let bytes = csv.into_inner().map_err(|e| CliError::Failed(e.to_string()))?;
    write_atomic(&out.join(METRICS_FILE), &bytes)?;
    write_json(
        &out.join(RESULTS_FILE),
        &ResultsIndex {
            config_hash: resolved.config.hash(),
            seed: resolved.seed,
            scenes,
            hands,
            diverged,
        },
    )?;
    rec.manifest.inputs.push(dataset_dir.to_path_buf());
    rec.manifest.outputs.push(out.join(RESULTS_FILE));
    rec.manifest.outputs.push(out.join(METRICS_FILE));
    println!("fitted {hands} hands in {} scenes ({diverged} diverged)", dataset.scenes.len() - failed.len());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!("scenes not processed: {}", failed.join(", "))))
    }
}
