//! JSON camera descriptions.

use super::IoError;
use crate::cameras::{Camera, CameraModel};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Deviation of `WᵀW` from identity tolerated without re-orthonormalizing.
pub const ORTHONORMAL_TOLERANCE: f64 = 1e-4;
/// Deviation beyond which a rotation is rejected outright.
pub const ORTHONORMAL_REJECT: f64 = 0.1;
/// Fisheye half-angle used when `fov_max_deg` is omitted.
pub const DEFAULT_FOV_MAX_DEG: f64 = 90.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraFile {
    pub model: CameraModel,
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub fx: f64,
    #[serde(default)]
    pub fy: f64,
    #[serde(default)]
    pub cx: f64,
    #[serde(default)]
    pub cy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fov_max_deg: Option<f64>,
    /// World→camera rotation, row-major.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

#[derive(Deserialize)]
#[serde(untagged)]
enum CameraList {
    Many(Vec<CameraFile>),
    Wrapped { cameras: Vec<CameraFile> },
    One(CameraFile),
}

impl From<&Camera> for CameraFile {
    fn from(c: &Camera) -> Self {
        let r = &c.rotation_wc;
        Self {
            model: c.model,
            width: c.width,
            height: c.height,
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            fov_max_deg: (c.model == CameraModel::FisheyeEquidistant).then(|| exact_degrees(c.fov_max)),
            rotation: [r[(0, 0)], r[(0, 1)], r[(0, 2)], r[(1, 0)], r[(1, 1)], r[(1, 2)], r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            translation: [c.translation_wc.x, c.translation_wc.y, c.translation_wc.z],
        }
    }
}

/// Degrees that convert back to exactly `rad`, when such a value is within a few ulps.
fn exact_degrees(rad: f64) -> f64 {
    let d = rad.to_degrees();
    let (mut up, mut down) = (d, d);
    for _ in 0..8 {
        if up.to_radians() == rad {
            return up;
        }
        if down.to_radians() == rad {
            return down;
        }
        up = up.next_up();
        down = down.next_down();
    }
    d
}

/// Nearest rotation in the Frobenius sense.
fn orthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    u * vt
}

impl CameraFile {
    /// Converts to a camera, re-orthonormalizing a slightly-off rotation.
    /// The returned string describes any correction.
    pub fn to_camera(&self) -> Result<(Camera, Option<String>), IoError> {
        let mut rotation = Matrix3::from_row_slice(&self.rotation);
        let err = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if !err.is_finite() || err > ORTHONORMAL_REJECT || rotation.determinant() <= 0.0 {
            return Err(IoError::Format(format!("rotation is not a proper rotation (orthonormality error {err:e})")));
        }
        let mut warning = None;
        if err > ORTHONORMAL_TOLERANCE {
            rotation = orthonormalize(&rotation);
            warning = Some(format!("rotation re-orthonormalized (error {err:e})"));
        }
        let mut cam = match self.model {
            CameraModel::Panorama => Camera::panorama(self.width, self.height),
            CameraModel::Pinhole => Camera::pinhole(self.width, self.height, self.fx, self.fy, self.cx, self.cy),
            CameraModel::FisheyeEquidistant => Camera::fisheye(
                self.width,
                self.height,
                self.fx,
                self.fy,
                self.cx,
                self.cy,
                self.fov_max_deg.unwrap_or(DEFAULT_FOV_MAX_DEG).to_radians(),
            ),
        };
        if self.model == CameraModel::Panorama && self.fx > 0.0 {
            (cam.fx, cam.fy, cam.cx, cam.cy) = (self.fx, self.fy, self.cx, self.cy);
        }
        if let Some(deg) = self.fov_max_deg {
            cam.fov_max = deg.to_radians();
        }
        let cam = cam.with_pose(rotation, Vector3::from(self.translation));
        cam.validate()?;
        Ok((cam, warning))
    }
}

pub fn parse_cameras(text: &str) -> Result<(Vec<Camera>, Vec<String>), IoError> {
    let files = match serde_json::from_str::<CameraList>(text)? {
        CameraList::Many(v) | CameraList::Wrapped { cameras: v } => v,
        CameraList::One(c) => vec![c],
    };
    let mut warnings = Vec::new();
    let mut cams = Vec::with_capacity(files.len());
    for (i, f) in files.iter().enumerate() {
        let (cam, w) = f.to_camera()?;
        if let Some(w) = w {
            warnings.push(format!("camera {i}: {w}"));
        }
        cams.push(cam);
    }
    Ok((cams, warnings))
}

pub fn cameras_to_json(cameras: &[Camera]) -> String {
    let files: Vec<CameraFile> = cameras.iter().map(CameraFile::from).collect();
    serde_json::to_string_pretty(&files).expect("camera files serialize")
}

pub fn load_cameras(path: &Path) -> Result<Vec<Camera>, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| IoError::path(path, e))?;
    let (cams, warnings) = parse_cameras(&text)?;
    for w in warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(cams)
}

pub fn save_cameras(cameras: &[Camera], path: &Path) -> Result<(), IoError> {
    std::fs::write(path, cameras_to_json(cameras)).map_err(|e| IoError::path(path, e))
}
