//! Scene, camera, image and dataset files.

mod camera_file;
mod dataset;
mod image_file;
mod ply;

pub use camera_file::{
    cameras_to_json, load_cameras, parse_cameras, save_cameras, CameraFile, DEFAULT_FOV_MAX_DEG, ORTHONORMAL_REJECT,
    ORTHONORMAL_TOLERANCE,
};
pub use dataset::{load_dataset, save_dataset, DATASET_FILE};
pub use image_file::{read_image, to_byte, to_rgb8, write_image, write_png_with_alpha};
pub use ply::{expected_properties, load_ply, read_ply, save_ply, write_ply, PlyScene};

use crate::cameras::CameraError;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Path {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Format(String),
    #[error("unexpected vertex properties\n  expected: {}\n  found:    {}", expected.join(" "), found.join(" "))]
    Layout { expected: Vec<String>, found: Vec<String> },
    #[error("payload truncated at byte {offset} (expected {expected} bytes)")]
    Truncated { offset: usize, expected: usize },
    #[error("unknown image extension `{0}` (expected png or ppm)")]
    UnknownExtension(String),
    #[error("image codec: {0}")]
    Image(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Camera(#[from] CameraError),
}

impl IoError {
    pub(crate) fn path(path: &Path, source: std::io::Error) -> Self {
        IoError::Path {
            path: path.to_path_buf(),
            source,
        }
    }
}
