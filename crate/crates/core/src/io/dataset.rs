//! Dataset directories: `dataset.json` plus one image per view.
//!
//! ```json
//! { "background": [0, 0, 0],
//!   "views": [ { "image": "images/000.png", "camera": { "model": "pinhole", ... } } ] }
//! ```
//!
//! An RGBA PNG carries the target's coverage in its alpha channel.

use super::camera_file::CameraFile;
use super::image_file::{read_image, write_image, write_png_with_alpha};
use super::IoError;
use crate::optimize::{Dataset, View};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const DATASET_FILE: &str = "dataset.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ViewEntry {
    image: String,
    camera: CameraFile,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DatasetFile {
    #[serde(default)]
    background: [f64; 3],
    views: Vec<ViewEntry>,
}

pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<(), IoError> {
    let images = dir.join("images");
    std::fs::create_dir_all(&images).map_err(|e| IoError::path(&images, e))?;
    let mut entries = Vec::with_capacity(dataset.views.len());
    for (i, v) in dataset.views.iter().enumerate() {
        let rel = format!("images/{i:03}.png");
        let path = dir.join(&rel);
        match &v.alpha {
            Some(a) => write_png_with_alpha(&v.image, a, &path)?,
            None => write_image(&v.image, &path)?,
        }
        entries.push(ViewEntry {
            image: rel,
            camera: CameraFile::from(&v.camera),
        });
    }
    let file = DatasetFile {
        background: dataset.background,
        views: entries,
    };
    let path = dir.join(DATASET_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&file)?).map_err(|e| IoError::path(&path, e))
}

pub fn load_dataset(dir: &Path) -> Result<Dataset, IoError> {
    let path = dir.join(DATASET_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| IoError::path(&path, e))?;
    let file: DatasetFile = serde_json::from_str(&text)?;
    let mut views = Vec::with_capacity(file.views.len());
    for (i, entry) in file.views.iter().enumerate() {
        let (camera, warning) = entry.camera.to_camera()?;
        if let Some(w) = warning {
            log::warn!("{} view {i}: {w}", path.display());
        }
        let (image, alpha) = read_image(&dir.join(&entry.image))?;
        if image.width != camera.width as usize || image.height != camera.height as usize {
            return Err(IoError::Format(format!(
                "view {i}: image is {}x{} but camera is {}x{}",
                image.width, image.height, camera.width, camera.height
            )));
        }
        views.push(View { camera, image, alpha });
    }
    if views.is_empty() {
        return Err(IoError::Format("dataset has no views".into()));
    }
    Ok(Dataset {
        views,
        background: file.background,
    })
}
