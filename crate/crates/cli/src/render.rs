use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use handforge::camera::{CameraIntrinsics, DEFAULT_FOCAL};
use handforge::fitter::FitConfig;
use handforge::hand_model::lbs_forward;
use handforge::heatmap::{CENTER_CHANNEL, TYPE_CHANNEL};
use handforge::imaging::RgbImage;
use handforge::renderer::render_mesh;
use handforge::scene_synth::{read_scene, scene_targets, write_atomic};
use nalgebra::{Rotation3, Vector3};

use crate::config::Rigs;
use crate::error::CliError;
use crate::fit::SceneResult;
use crate::manifest::{create_dir, Recorder};

const VIEW_SIZE: u32 = 256;

/// Rotation of a named viewpoint, or of a yaw given in degrees.
pub fn view_rotation(name: &str) -> Result<Rotation3<f64>, CliError> {
    let yaw = |deg: f64| Rotation3::from_axis_angle(&Vector3::y_axis(), deg * PI / 180.0);
    let pitch = |deg: f64| Rotation3::from_axis_angle(&Vector3::x_axis(), deg * PI / 180.0);
    Ok(match name {
        "front" => Rotation3::identity(),
        "right" => yaw(90.0),
        "back" => yaw(180.0),
        "left" => yaw(-90.0),
        "top" => pitch(90.0),
        "bottom" => pitch(-90.0),
        other => yaw(other
            .parse::<f64>()
            .map_err(|_| CliError::Usage(format!("unknown view `{other}`; use front, back, left, right, top, bottom or a yaw in degrees")))?),
    })
}

/// Mesh turned about its centroid and pushed back until it spans most of a
/// square view.
fn view_render(vertices: &[Vector3<f64>], rot: &Rotation3<f64>, faces: &[[usize; 3]], hand: &crate::fit::HandResult) -> Result<RgbImage, CliError> {
    let c = vertices.iter().sum::<Vector3<f64>>() / vertices.len() as f64;
    let turned: Vec<Vector3<f64>> = vertices.iter().map(|v| rot * (v - c)).collect();
    let extent = turned.iter().map(|v| v.x.abs().max(v.y.abs())).fold(0.0, f64::max);
    let depth_extent = turned.iter().map(|v| v.z.abs()).fold(0.0, f64::max);
    let z = DEFAULT_FOCAL * 2.0 * extent / (0.8 * VIEW_SIZE as f64) + depth_extent;
    let placed: Vec<Vector3<f64>> = turned.iter().map(|v| v + Vector3::new(0.0, 0.0, z)).collect();
    let k = CameraIntrinsics::centered(VIEW_SIZE, VIEW_SIZE);
    Ok(render_mesh(&placed, faces, &hand.texture, &hand.lighting, &k)?.rgb)
}

fn save(path: PathBuf, bytes: &[u8], rec: &mut Recorder) -> Result<(), CliError> {
    write_atomic(&path, bytes)?;
    rec.manifest.outputs.push(path);
    Ok(())
}

pub fn run(
    rigs: &Rigs,
    fit_path: &Path,
    scene_dir: &Path,
    out: &Path,
    maps: bool,
    views: &[String],
    rec: &mut Recorder,
) -> Result<(), CliError> {
    let result = SceneResult::load(fit_path)?;
    let scene = read_scene(scene_dir)?;
    let rotations = views.iter().map(|v| view_rotation(v)).collect::<Result<Vec<_>, _>>()?;
    create_dir(out)?;
    rec.manifest.inputs.extend([fit_path.to_path_buf(), scene_dir.to_path_buf()]);

    let mut overlay = scene.canvas.clone();
    let mut zbuf = vec![f64::INFINITY; overlay.data.len()];
    for (n, hand) in result.hands.iter().enumerate() {
        let rig = rigs.pair.get(hand.hand_type);
        let mesh = lbs_forward(rig, &hand.params)?;
        let drawn = render_mesh(&mesh.vertices, rig.faces(), &hand.texture, &hand.lighting, &scene.camera)?;
        for (i, covered) in drawn.silhouette.data.iter().enumerate() {
            if *covered && drawn.depth[i] < zbuf[i] {
                zbuf[i] = drawn.depth[i];
                overlay.data[i] = drawn.rgb.data[i];
            }
        }
        for (name, rot) in views.iter().zip(&rotations) {
            let img = view_render(&mesh.vertices, rot, rig.faces(), hand)?;
            save(out.join(format!("view_{name}_hand{n}.png")), &img.encode_png()?, rec)?;
        }
    }
    save(out.join("overlay.png"), &overlay.encode_png()?, rec)?;

    if maps {
        let cfg = FitConfig::default();
        let map = scene_targets(&scene, cfg.center_definition, cfg.min_iou)?;
        for (name, c) in [("center", CENTER_CHANNEL), ("left", TYPE_CHANNEL), ("right", TYPE_CHANNEL + 1)] {
            save(out.join(format!("map_{name}.png")), &map.channel_png(c)?, rec)?;
        }
    }
    println!("rendered {} hands into {}", result.hands.len(), out.display());
    Ok(())
}
