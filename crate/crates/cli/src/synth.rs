use std::path::Path;

use handforge::scene_synth::{synthesize_scene, write_scene, Scene, SCENE_FILE};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{Resolved, Rigs};
use crate::error::CliError;
use crate::manifest::{create_dir, read_json, write_json, Recorder};

pub const DATASET_FILE: &str = "dataset.json";

/// Index of a synthesized dataset. Holds no timestamps, so a rerun with the
/// same seed and config writes the same bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dataset {
    pub seed: u64,
    pub count: usize,
    pub config_hash: String,
    pub scenes: Vec<SceneEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneEntry {
    pub id: String,
    pub hands: usize,
    /// SHA-256 of the scene document.
    pub sha256: String,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self, CliError> {
        read_json(&dir.join(DATASET_FILE))
    }
}

pub fn scene_id(i: usize) -> String {
    format!("scene_{i:04}")
}

/// Scene `i` draws from its own stream of the seeded generator, so scenes do
/// not depend on each other or on thread scheduling.
fn scene(rigs: &Rigs, resolved: &Resolved, i: usize) -> Result<Scene, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(resolved.seed);
    rng.set_stream(i as u64);
    Ok(synthesize_scene(&rigs.pair, &mut rng, &resolved.config.synth)?)
}

pub fn run(resolved: &Resolved, rigs: &Rigs, out: &Path, count: usize, rec: &mut Recorder) -> Result<(), CliError> {
    create_dir(out)?;
    let entries: Vec<SceneEntry> = (0..count)
        .into_par_iter()
        .map(|i| {
            let id = scene_id(i);
            let s = scene(rigs, resolved, i)?;
            let dir = out.join(&id);
            write_scene(&dir, &s)?;
            let doc = std::fs::read(dir.join(SCENE_FILE))?;
            Ok(SceneEntry {
                id,
                hands: s.instances.len(),
                sha256: hex::encode(Sha256::digest(&doc)),
            })
        })
        .collect::<Result<_, CliError>>()?;
    let dataset = Dataset {
        seed: resolved.seed,
        count,
        config_hash: resolved.config.hash(),
        scenes: entries,
    };
    write_json(&out.join(DATASET_FILE), &dataset)?;
    rec.manifest.outputs.push(out.join(DATASET_FILE));
    rec.manifest.outputs.extend(dataset.scenes.iter().map(|e| out.join(&e.id)));
    println!("wrote {count} scenes to {}", out.display());
    Ok(())
}
