pub mod camera;
pub mod error;
pub mod fitter;
pub mod hand_model;
pub mod heatmap;
pub mod imaging;
pub mod keypoints;
pub mod losses;
pub mod renderer;
pub mod rotation;
pub mod scene_synth;
pub mod verify;

pub use error::{Error, Result};
