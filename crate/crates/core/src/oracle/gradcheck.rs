use super::bruteforce::{bruteforce_render_limited, DEFAULT_MAX_GAUSSIANS};
use super::fd::{relative_error, FDConfig};
use super::OracleError;
use crate::cameras::{Camera, CameraModel};
use crate::gradients::{backward_with, BackwardOptions, GaussianGrad, JacobianFault};
use crate::model::{Gaussian3D, ImageBuffer, Scene};
use crate::splatting::render;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

/// Scalar loss on a rendered image.
#[derive(Debug, Clone, PartialEq)]
pub enum LossSpec {
    /// `Σ pixel²` over all channels.
    SquaredSum,
    /// `Σ weight·pixel`.
    Weighted(ImageBuffer),
}

impl LossSpec {
    pub fn value(&self, img: &ImageBuffer) -> f64 {
        match self {
            LossSpec::SquaredSum => img.pixels.iter().map(|v| v * v).sum(),
            LossSpec::Weighted(w) => img.pixels.iter().zip(&w.pixels).map(|(a, b)| a * b).sum(),
        }
    }

    pub fn image_gradient(&self, img: &ImageBuffer) -> ImageBuffer {
        match self {
            LossSpec::SquaredSum => ImageBuffer {
                width: img.width,
                height: img.height,
                pixels: img.pixels.iter().map(|v| 2.0 * v).collect(),
            },
            LossSpec::Weighted(w) => w.clone(),
        }
    }
}

/// Parameter groups in report order.
pub const GROUPS: [&str; 5] = ["mean", "rotation", "log_scale", "opacity", "sh_dc"];
const GROUP_SIZES: [usize; 5] = [3, 4, 3, 1, 3];

fn param_mut(g: &mut Gaussian3D, group: usize, k: usize) -> &mut f64 {
    match group {
        0 => &mut g.mean[k],
        1 => &mut g.rotation[k],
        2 => &mut g.log_scale[k],
        3 => &mut g.opacity_logit,
        _ => &mut g.sh_coeffs[0][k],
    }
}

fn grad_entry(g: &GaussianGrad, group: usize, k: usize) -> f64 {
    match group {
        0 => g.d_mean[k],
        1 => g.d_rotation[k],
        2 => g.d_log_scale[k],
        3 => g.d_opacity_logit,
        _ => g.d_sh_dc[k],
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckConfig {
    pub fd: FDConfig,
    /// How often the step is quartered when the two sides of a difference
    /// cross a blending discontinuity.
    pub max_refinements: u32,
    /// A group fails when more than this fraction of coordinates had to be skipped.
    pub max_skip_fraction: f64,
    pub max_gaussians: usize,
    /// Deliberate corruption of the analytic gradient.
    pub fault: Option<JacobianFault>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            fd: FDConfig::END_TO_END,
            max_refinements: 3,
            max_skip_fraction: 0.5,
            max_gaussians: DEFAULT_MAX_GAUSSIANS,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupReport {
    pub group: String,
    pub max_rel_err: f64,
    /// Gaussian holding the largest error.
    pub worst_index: Option<usize>,
    pub checked: usize,
    pub skipped: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub model: CameraModel,
    pub tolerance: f64,
    pub groups: Vec<GroupReport>,
}

impl GradcheckReport {
    pub fn pass(&self) -> bool {
        self.groups.iter().all(|g| g.pass)
    }

    pub fn group(&self, name: &str) -> Option<&GroupReport> {
        self.groups.iter().find(|g| g.group == name)
    }

    /// One JSON object per parameter group.
    pub fn to_json_lines(&self) -> String {
        #[derive(Serialize)]
        struct Line<'a> {
            model: CameraModel,
            tolerance: f64,
            #[serde(flatten)]
            group: &'a GroupReport,
        }
        let mut out = String::new();
        for g in &self.groups {
            let line = Line {
                model: self.model,
                tolerance: self.tolerance,
                group: g,
            };
            out.push_str(&serde_json::to_string(&line).expect("report serializes"));
            out.push('\n');
        }
        out
    }
}

enum Outcome {
    Checked { index: usize, analytic: f64, numeric: f64 },
    Skipped,
}

/// Compares the analytic backward pass with central differences of the
/// reference renderer, one scalar parameter at a time.
pub fn gradcheck(scene: &Scene, camera: &Camera, loss: &LossSpec, config: &GradcheckConfig) -> Result<GradcheckReport, OracleError> {
    if scene.len() > config.max_gaussians {
        return Err(OracleError::TooManyGaussians {
            count: scene.len(),
            limit: config.max_gaussians,
        });
    }
    let rendered = render::<f64>(scene, camera)?;
    let d_image = loss.image_gradient(&rendered.image);
    let options = BackwardOptions {
        fault: config.fault,
        ..BackwardOptions::default()
    };
    let analytic = backward_with(scene, camera, &rendered.context, &d_image, &options)?;
    let base = bruteforce_render_limited(scene, camera, config.max_gaussians)?;

    let coords: Vec<(usize, usize, usize)> = (0..scene.len())
        .flat_map(|i| (0..GROUPS.len()).flat_map(move |g| (0..GROUP_SIZES[g]).map(move |k| (i, g, k))))
        .collect();
    let outcomes: Vec<(usize, Outcome)> = coords
        .par_iter()
        .map(|&(i, group, k)| -> Result<(usize, Outcome), OracleError> {
            let mut h = config.fd.step;
            for _ in 0..=config.max_refinements {
                let eval = |delta: f64| {
                    let mut s = scene.clone();
                    *param_mut(&mut s.gaussians[i], group, k) += delta;
                    bruteforce_render_limited(&s, camera, config.max_gaussians)
                };
                let up = eval(h)?;
                let down = eval(-h)?;
                if up.signature == base.signature && down.signature == base.signature {
                    let numeric = (loss.value(&up.image) - loss.value(&down.image)) / (2.0 * h);
                    if !numeric.is_finite() {
                        return Err(OracleError::NonFinite { coordinate: i });
                    }
                    return Ok((
                        group,
                        Outcome::Checked {
                            index: i,
                            analytic: grad_entry(&analytic.grads[i], group, k),
                            numeric,
                        },
                    ));
                }
                h /= 4.0;
            }
            Ok((group, Outcome::Skipped))
        })
        .collect::<Result<_, _>>()?;

    let tol = config.fd.tolerance;
    let mut groups: Vec<GroupReport> = GROUPS
        .iter()
        .map(|name| GroupReport {
            group: name.to_string(),
            max_rel_err: 0.0,
            worst_index: None,
            checked: 0,
            skipped: 0,
            pass: true,
        })
        .collect();
    for (group, outcome) in outcomes {
        let r = &mut groups[group];
        match outcome {
            Outcome::Skipped => r.skipped += 1,
            Outcome::Checked { index, analytic, numeric } => {
                r.checked += 1;
                let e = relative_error(analytic, numeric);
                if e > r.max_rel_err || r.worst_index.is_none() {
                    r.max_rel_err = r.max_rel_err.max(e);
                    r.worst_index = Some(index);
                }
            }
        }
    }
    for r in &mut groups {
        let total = r.checked + r.skipped;
        let skip_ok = total == 0 || (r.skipped as f64) <= config.max_skip_fraction * total as f64;
        r.pass = r.max_rel_err < tol && skip_ok;
    }
    Ok(GradcheckReport {
        model: camera.model,
        tolerance: tol,
        groups,
    })
}

/// Camera used for gradient checks: 32×32, 180° for the wide models and 100° for pinhole.
pub fn gradcheck_camera(model: CameraModel, size: u32) -> Camera {
    let fov = if model == CameraModel::Pinhole { 100.0 } else { 180.0 };
    Camera::for_fov(model, size, size, fov)
}

/// Seeded scene of `n` anisotropic Gaussians in front of a camera at the
/// origin. Fisheye scenes always contain one Gaussian at 85° incidence.
pub fn gradcheck_scene(model: CameraModel, n: usize, seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta_max: f64 = match model {
        CameraModel::Pinhole => 0.55,
        CameraModel::FisheyeEquidistant => 1.5,
        CameraModel::Panorama => 2.6,
    };
    let gaussians = (0..n)
        .map(|i| {
            let dir = loop {
                let theta = if model == CameraModel::FisheyeEquidistant && i == 0 {
                    85f64.to_radians()
                } else {
                    rng.random_range(0.0..theta_max)
                };
                let phi = rng.random_range(0.0..std::f64::consts::TAU);
                let d = Vector3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos());
                // panorama: stay clear of the poles and of the seam behind the camera
                let near_seam = d.z < 0.0 && d.x.abs() < 0.4;
                if model != CameraModel::Panorama || (d.y.abs() < 0.8 && !near_seam) {
                    break d;
                }
            };
            let dist = rng.random_range(3.0..5.0);
            let mut g = Gaussian3D::isotropic(
                dir.normalize() * dist,
                1.0,
                rng.random_range(0.4..0.9),
                [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)],
            );
            g.rotation = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ];
            g.log_scale = Vector3::from_fn(|_, _| rng.random_range(-1.2..-0.4));
            g
        })
        .collect();
    Scene::new(gaussians, [0.2, 0.3, 0.4])
}
