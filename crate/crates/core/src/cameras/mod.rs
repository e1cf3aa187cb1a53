//! Camera models and the differentiable projection stage.
//!
//! Every model provides the pixel projection `φ`, its Jacobian `∂φ/∂p` and
//! the derivative of that Jacobian with respect to the camera-space point.
//! The rest of the pipeline only ever sees these three quantities, which is
//! what makes the binning and rasterizing stages model-agnostic.

mod fisheye;
mod panorama;
mod pinhole;

use nalgebra::{Matrix2x3, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Near clipping plane for the pinhole model, in camera-space units.
pub const NEAR_CLIP: f64 = 0.2;

/// Extra half-angle beyond `fov_max` before a fisheye point is culled.
pub const FOV_CULL_MARGIN: f64 = 10.0 * std::f64::consts::PI / 180.0;

/// Points closer than this to the camera centre have no projection.
pub const MIN_POINT_NORM: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CameraError {
    #[error("pixel ({0}, {1}) maps to an incidence angle beyond 180 degrees")]
    BeyondHemisphere(f64, f64),
    #[error("invalid camera: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraModel {
    Pinhole,
    FisheyeEquidistant,
    Panorama,
}

impl CameraModel {
    pub const ALL: [CameraModel; 3] = [
        CameraModel::Pinhole,
        CameraModel::FisheyeEquidistant,
        CameraModel::Panorama,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CameraModel::Pinhole => "pinhole",
            CameraModel::FisheyeEquidistant => "fisheye_equidistant",
            CameraModel::Panorama => "panorama",
        }
    }

    /// Whether depth ordering uses the radial distance instead of `z_c`.
    pub fn uses_radial_depth(self) -> bool {
        !matches!(self, CameraModel::Pinhole)
    }
}

impl std::str::FromStr for CameraModel {
    type Err = CameraError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pinhole" => Ok(CameraModel::Pinhole),
            "fisheye_equidistant" | "fisheye" => Ok(CameraModel::FisheyeEquidistant),
            "panorama" | "equirectangular" => Ok(CameraModel::Panorama),
            other => Err(CameraError::Invalid(format!("unknown camera model `{other}`"))),
        }
    }
}

impl std::fmt::Display for CameraModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Intrinsics plus a world→camera pose `p_c = W·p + b`.
///
/// Camera space is x right, y down, z forward.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub model: CameraModel,
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation_wc: Matrix3<f64>,
    pub translation_wc: Vector3<f64>,
    /// Half-angle of the usable field of view (fisheye culling only).
    pub fov_max: f64,
}

/// A point in camera space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CamPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl CamPoint {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn norm(self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    /// Distance to the optical axis.
    pub fn axis_distance(self) -> f64 {
        (self.x * self.x + self.y * self.y).sqrt()
    }

    /// Angle of incidence, `atan2(l_z, z_c)`; valid for points behind the camera too.
    pub fn incidence_angle(self) -> f64 {
        self.axis_distance().atan2(self.z)
    }
}

impl From<Vector3<f64>> for CamPoint {
    fn from(v: Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionResult {
    pub pixel: Vector2<f64>,
    /// `∂pixel/∂(x_c, y_c, z_c)`.
    pub jacobian: Matrix2x3<f64>,
    pub visible: bool,
}

/// `∂J/∂x_c`, `∂J/∂y_c`, `∂J/∂z_c`.
pub type JacobianGrad = [Matrix2x3<f64>; 3];

impl Camera {
    fn with_intrinsics(model: CameraModel, width: u32, height: u32, fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        Self {
            model,
            width,
            height,
            fx,
            fy,
            cx,
            cy,
            rotation_wc: Matrix3::identity(),
            translation_wc: Vector3::zeros(),
            fov_max: std::f64::consts::FRAC_PI_2,
        }
    }

    pub fn pinhole(width: u32, height: u32, fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        Self::with_intrinsics(CameraModel::Pinhole, width, height, fx, fy, cx, cy)
    }

    pub fn fisheye(width: u32, height: u32, fx: f64, fy: f64, cx: f64, cy: f64, fov_max: f64) -> Self {
        let mut cam = Self::with_intrinsics(CameraModel::FisheyeEquidistant, width, height, fx, fy, cx, cy);
        cam.fov_max = fov_max;
        cam
    }

    pub fn panorama(width: u32, height: u32) -> Self {
        let (w, h) = (width as f64, height as f64);
        Self::with_intrinsics(CameraModel::Panorama, width, height, 1.0, 1.0, w / 2.0, h / 2.0)
    }

    /// Camera for a given model whose image circle / field of view spans the
    /// image. `fov_deg` is the full field of view (ignored by the panorama).
    pub fn for_fov(model: CameraModel, width: u32, height: u32, fov_deg: f64) -> Self {
        let (w, h) = (width as f64, height as f64);
        let half = fov_deg.to_radians() / 2.0;
        match model {
            CameraModel::Pinhole => {
                let f = (w / 2.0) / half.tan();
                Self::pinhole(width, height, f, f, w / 2.0, h / 2.0)
            }
            CameraModel::FisheyeEquidistant => {
                let f = (w.min(h) / 2.0) / half;
                Self::fisheye(width, height, f, f, w / 2.0, h / 2.0, half)
            }
            CameraModel::Panorama => Self::panorama(width, height),
        }
    }

    pub fn with_pose(mut self, rotation_wc: Matrix3<f64>, translation_wc: Vector3<f64>) -> Self {
        self.rotation_wc = rotation_wc;
        self.translation_wc = translation_wc;
        self
    }

    /// Places the camera at `eye` looking at `target`; `up` is the world up direction.
    pub fn looking_at(self, eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Self {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        self.with_pose(rotation, translation)
    }

    /// Same camera with a different projection model; intrinsics and pose are kept.
    pub fn with_model(&self, model: CameraModel) -> Self {
        let mut cam = self.clone();
        cam.model = model;
        cam
    }

    /// Camera centre in world coordinates, `-Wᵀb`.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation_wc.transpose() * self.translation_wc)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        if self.width < 16 || self.height < 16 {
            return Err(CameraError::Invalid(format!(
                "image must be at least 16x16, got {}x{}",
                self.width, self.height
            )));
        }
        if self.model != CameraModel::Panorama && !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(CameraError::Invalid("focal lengths must be positive".into()));
        }
        let err = (self.rotation_wc.transpose() * self.rotation_wc - Matrix3::identity()).abs().max();
        if err > 1e-6 {
            return Err(CameraError::Invalid(format!("rotation is not orthonormal (error {err:e})")));
        }
        if !(self.fov_max > 0.0) {
            return Err(CameraError::Invalid("fov_max must be positive".into()));
        }
        Ok(())
    }

    pub fn world_to_camera(&self, mean_world: &Vector3<f64>) -> CamPoint {
        world_to_camera(mean_world, self)
    }

    pub fn project(&self, point: CamPoint) -> Option<ProjectionResult> {
        project(point, self)
    }
}

pub fn world_to_camera(mean_world: &Vector3<f64>, camera: &Camera) -> CamPoint {
    CamPoint::from(camera.rotation_wc * mean_world + camera.translation_wc)
}

fn is_visible(point: CamPoint, camera: &Camera) -> bool {
    match camera.model {
        CameraModel::Pinhole => point.z > NEAR_CLIP,
        CameraModel::FisheyeEquidistant => {
            fisheye::is_regular(point) && point.incidence_angle() <= camera.fov_max + FOV_CULL_MARGIN
        }
        CameraModel::Panorama => true,
    }
}

/// Pixel position of a camera-space point. Returns `None` when the point
/// has no projection at all (camera centre, or the pinhole focal plane).
pub fn project(point: CamPoint, camera: &Camera) -> Option<ProjectionResult> {
    if point.norm() < MIN_POINT_NORM {
        return None;
    }
    let pixel = match camera.model {
        CameraModel::Pinhole => {
            if point.z.abs() < MIN_POINT_NORM {
                return None;
            }
            pinhole::project(point, camera)
        }
        CameraModel::FisheyeEquidistant => fisheye::project(point, camera)?,
        CameraModel::Panorama => panorama::project(point, camera),
    };
    let visible = is_visible(point, camera);
    let jacobian = projection_jacobian(point, camera);
    Some(ProjectionResult {
        pixel,
        jacobian,
        visible: visible && jacobian.iter().all(|v| v.is_finite()),
    })
}

/// `∂(x_p, y_p)/∂(x_c, y_c, z_c)`.
pub fn projection_jacobian(point: CamPoint, camera: &Camera) -> Matrix2x3<f64> {
    match camera.model {
        CameraModel::Pinhole => pinhole::jacobian(point, camera),
        CameraModel::FisheyeEquidistant => fisheye::jacobian(point, camera),
        CameraModel::Panorama => panorama::jacobian(point, camera),
    }
}

/// Derivatives of the projection Jacobian with respect to each camera-space coordinate.
pub fn projection_jacobian_grad(point: CamPoint, camera: &Camera) -> JacobianGrad {
    match camera.model {
        CameraModel::Pinhole => pinhole::jacobian_grad(point, camera),
        CameraModel::FisheyeEquidistant => fisheye::jacobian_grad(point, camera),
        CameraModel::Panorama => panorama::jacobian_grad(point, camera),
    }
}

/// Unit camera-space direction whose projection is `pixel`.
pub fn unproject_direction(pixel: Vector2<f64>, camera: &Camera) -> Result<Vector3<f64>, CameraError> {
    match camera.model {
        CameraModel::Pinhole => Ok(pinhole::unproject(pixel, camera)),
        CameraModel::FisheyeEquidistant => fisheye::unproject(pixel, camera),
        CameraModel::Panorama => Ok(panorama::unproject(pixel, camera)),
    }
}
