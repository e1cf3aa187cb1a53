use super::{Dataset, OptimizeError, View};
use crate::cameras::{Camera, CameraModel};
use crate::model::{Gaussian3D, Scene};
use crate::oracle::{bruteforce_render_limited, DEFAULT_MAX_GAUSSIANS};
use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Parameters of a generated scene and its camera ring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_gaussians: usize,
    /// Radius of the ball holding the Gaussian means.
    pub extent: f64,
    pub seed: u64,
    pub model: CameraModel,
    pub n_views: usize,
    /// Full field of view in degrees (ignored by the panorama).
    pub fov_deg: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_gaussians: 50,
            extent: 1.0,
            seed: 0,
            model: CameraModel::FisheyeEquidistant,
            n_views: 8,
            fov_deg: 120.0,
            width: 128,
            height: 128,
        }
    }
}

/// Radius of the camera ring relative to the scene extent.
pub const RING_RADIUS: f64 = 1.5;
/// Incidence angle of each view's wide-angle Gaussian, relative to the half field of view.
pub const ANCHOR_ANGLE: f64 = 0.8;
/// Minimum distance of any Gaussian to any camera, relative to the extent.
pub const CAMERA_CLEARANCE: f64 = 0.4;

fn random_gaussian(rng: &mut ChaCha8Rng, mean: Vector3<f64>, extent: f64) -> Gaussian3D {
    let mut g = Gaussian3D::isotropic(
        mean,
        1.0,
        rng.random_range(0.5..0.95),
        [rng.random_range(0.05..0.95), rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)],
    );
    let q = UnitQuaternion::from_euler_angles(
        rng.random_range(-3.1..3.1),
        rng.random_range(-1.5..1.5),
        rng.random_range(-3.1..3.1),
    );
    g.rotation = [q.w, q.i, q.j, q.k];
    g.log_scale = Vector3::from_fn(|_, _| (extent * rng.random_range(0.04..0.12f64)).ln());
    g
}

/// Seeded ground-truth scene plus one target image per camera on a ring
/// around it. Each view gets an extra Gaussian at a wide incidence angle.
/// Targets come from the reference renderer over a black background and
/// carry their alpha.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<(Scene, Dataset), OptimizeError> {
    if spec.n_views < 2 {
        return Err(OptimizeError::InvalidConfig("at least two views are required".into()));
    }
    if !(spec.extent > 0.0) || !(spec.fov_deg > 0.0) {
        return Err(OptimizeError::InvalidConfig("extent and fov must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let e = spec.extent;
    let up = Vector3::new(0.0, 1.0, 0.0);
    let cameras: Vec<Camera> = (0..spec.n_views)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / spec.n_views as f64;
            let eye = Vector3::new(a.sin(), 0.0, a.cos()) * (RING_RADIUS * e);
            Camera::for_fov(spec.model, spec.width, spec.height, spec.fov_deg).looking_at(eye, Vector3::zeros(), up)
        })
        .collect();
    let clear = |p: &Vector3<f64>| cameras.iter().all(|c| (p - c.center()).norm() >= CAMERA_CLEARANCE * e);

    let n_anchors = spec.n_views.min(spec.n_gaussians);
    let mut gaussians = Vec::with_capacity(spec.n_gaussians);
    for cam in cameras.iter().take(n_anchors) {
        let theta = ANCHOR_ANGLE * (spec.fov_deg / 2.0).to_radians().min(std::f64::consts::PI);
        let mean = loop {
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            let dist = rng.random_range(0.5..1.0) * e;
            let dir_cam = Vector3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos());
            let p = cam.center() + cam.rotation_wc.transpose() * dir_cam * dist;
            if clear(&p) {
                break p;
            }
        };
        gaussians.push(random_gaussian(&mut rng, mean, e));
    }
    while gaussians.len() < spec.n_gaussians {
        let p = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * e;
        if p.norm() <= e && clear(&p) {
            gaussians.push(random_gaussian(&mut rng, p, e));
        }
    }
    let scene = Scene::new(gaussians, [0.0; 3]);

    let mut views = Vec::with_capacity(cameras.len());
    for cam in cameras {
        let r = bruteforce_render_limited(&scene, &cam, DEFAULT_MAX_GAUSSIANS)?;
        views.push(View {
            camera: cam,
            image: r.image,
            alpha: Some(r.transmittance.iter().map(|t| 1.0 - t).collect()),
        });
    }
    Ok((
        scene.clone(),
        Dataset {
            views,
            background: scene.background,
        },
    ))
}
