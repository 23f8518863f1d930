use std::path::Path;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use super::{Affine2, Instance, SampleSource, Scene};
use crate::camera::CameraIntrinsics;
use crate::error::{invalid, io_err, Result};
use crate::hand_model::HandType;
use crate::imaging::{Mask, RgbImage};
use crate::keypoints::Keypoints2D;

/// Name of the JSON document inside a scene directory.
pub const SCENE_FILE: &str = "scene.json";
const CANVAS_FILE: &str = "canvas.png";
const MASK_FILE: &str = "mask.png";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    width: u32,
    height: u32,
    camera: CameraIntrinsics,
    requested: usize,
    canvas: String,
    mask: String,
    instances: Vec<InstanceFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceFile {
    center: [f64; 2],
    hand_type: HandType,
    keypoints: Keypoints2D,
    bbox: [f64; 4],
    mask: String,
    affine: Affine2,
    source: Option<SampleSource>,
    source_id: String,
}

/// Writes `bytes` to a sibling temporary file, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| invalid("path", format!("{} has no file name", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.{}.tmp", name.to_string_lossy(), std::process::id()));
    std::fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

/// Writes the scene document and its PNG assets into `dir`.
pub fn write_scene(dir: &Path, scene: &Scene) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_atomic(&dir.join(CANVAS_FILE), &scene.canvas.encode_png()?)?;
    write_atomic(&dir.join(MASK_FILE), &scene.mask.encode_png()?)?;
    let mut instances = Vec::with_capacity(scene.instances.len());
    for (i, inst) in scene.instances.iter().enumerate() {
        let mask = format!("mask_{i}.png");
        write_atomic(&dir.join(&mask), &inst.mask.encode_png()?)?;
        instances.push(InstanceFile {
            center: [inst.center.x, inst.center.y],
            hand_type: inst.hand_type,
            keypoints: inst.keypoints.clone(),
            bbox: inst.bbox,
            mask,
            affine: inst.affine,
            source: inst.source.clone(),
            source_id: inst.source_id.clone(),
        });
    }
    let file = SceneFile {
        width: scene.width(),
        height: scene.height(),
        camera: scene.camera,
        requested: scene.requested,
        canvas: CANVAS_FILE.into(),
        mask: MASK_FILE.into(),
        instances,
    };
    write_atomic(&dir.join(SCENE_FILE), serde_json::to_string_pretty(&file)?.as_bytes())
}

fn asset(dir: &Path, name: &str) -> Result<std::path::PathBuf> {
    let p = dir.join(name);
    if Path::new(name).components().count() != 1 {
        return Err(invalid("scene", format!("asset `{name}` must be a plain file name")));
    }
    if !p.is_file() {
        return Err(invalid("scene", format!("missing asset {}", p.display())));
    }
    Ok(p)
}

/// Reads a scene directory written by [`write_scene`]. The canvas comes back
/// quantized to 8 bits.
pub fn read_scene(dir: &Path) -> Result<Scene> {
    let path = dir.join(SCENE_FILE);
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    let file: SceneFile = serde_json::from_str(&text)?;
    let canvas = RgbImage::load_png(&asset(dir, &file.canvas)?)?;
    let mask = Mask::load_png(&asset(dir, &file.mask)?)?;
    let dims = (file.width, file.height);
    if canvas.dims() != dims || mask.dims() != dims {
        return Err(invalid("scene", "asset sizes disagree with the scene document"));
    }
    let mut instances = Vec::with_capacity(file.instances.len());
    for inst in file.instances {
        let m = Mask::load_png(&asset(dir, &inst.mask)?)?;
        if m.dims() != dims {
            return Err(invalid("scene", format!("{} has the wrong size", inst.mask)));
        }
        instances.push(Instance {
            center: Vector2::new(inst.center[0], inst.center[1]),
            hand_type: inst.hand_type,
            keypoints: inst.keypoints,
            bbox: inst.bbox,
            mask: m,
            affine: inst.affine,
            source: inst.source,
            source_id: inst.source_id,
        });
    }
    Ok(Scene {
        canvas,
        mask,
        camera: file.camera,
        instances,
        requested: file.requested,
    })
}
