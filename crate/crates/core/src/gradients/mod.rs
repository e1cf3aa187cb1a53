//! Analytic backward pass from image gradients to Gaussian parameters.
//!
//! Only degree-0 spherical-harmonic coefficients receive gradients. Colors
//! are treated as view independent, which is exact for degree-0 scenes.

mod raster_backward;

pub use raster_backward::{rasterize_backward, SplatGradients};

use crate::cameras::{projection_jacobian, projection_jacobian_grad, CamPoint, Camera};
use crate::model::{build_covariance_backward, ImageBuffer, Scene, SH_C0};
use crate::splatting::{ForwardContext, Real, RenderError};
use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

/// Gradient of the loss with respect to one Gaussian's parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianGrad {
    pub d_mean: Vector3<f64>,
    pub d_rotation: [f64; 4],
    pub d_log_scale: Vector3<f64>,
    pub d_opacity_logit: f64,
    pub d_sh_dc: [f64; 3],
}

impl Default for GaussianGrad {
    fn default() -> Self {
        Self {
            d_mean: Vector3::zeros(),
            d_rotation: [0.0; 4],
            d_log_scale: Vector3::zeros(),
            d_opacity_logit: 0.0,
            d_sh_dc: [0.0; 3],
        }
    }
}

impl GaussianGrad {
    pub fn is_finite(&self) -> bool {
        self.d_mean.iter().all(|v| v.is_finite())
            && self.d_rotation.iter().all(|v| v.is_finite())
            && self.d_log_scale.iter().all(|v| v.is_finite())
            && self.d_opacity_logit.is_finite()
            && self.d_sh_dc.iter().all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        *self == Self::default()
    }
}

/// One [`GaussianGrad`] per Gaussian of the scene, in scene order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradientBuffer {
    pub grads: Vec<GaussianGrad>,
}

impl GradientBuffer {
    pub fn zeros(n: usize) -> Self {
        Self {
            grads: vec![GaussianGrad::default(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().all(GaussianGrad::is_finite)
    }
}

/// Scales one of `∂J/∂x_c`, `∂J/∂y_c`, `∂J/∂z_c` before it is used.
/// Only meant for checking that gradient tests detect a wrong derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JacobianFault {
    pub axis: usize,
    pub factor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackwardOptions {
    /// Propagate the mean gradient through the projected mean.
    pub direct_mean_path: bool,
    /// Propagate the mean gradient through the Jacobian inside the projected covariance.
    pub covariance_mean_path: bool,
    pub fault: Option<JacobianFault>,
}

impl Default for BackwardOptions {
    fn default() -> Self {
        Self {
            direct_mean_path: true,
            covariance_mean_path: true,
            fault: None,
        }
    }
}

/// `Jᵀ·dL/dμ_p`: camera-space mean gradient through the projected mean.
pub fn mean_backward(point: CamPoint, camera: &Camera, d_mean_px: Vector2<f64>) -> Vector3<f64> {
    projection_jacobian(point, camera).transpose() * d_mean_px
}

/// Backward pass of `Σ_p = (J·W)·Σ·(J·W)ᵀ`.
///
/// Returns `dL/dΣ` and the extra camera-space mean gradient that arises
/// because `J` depends on the mean.
pub fn covariance_projection_backward(
    point: CamPoint,
    camera: &Camera,
    w: &Matrix3<f64>,
    sigma: &Matrix3<f64>,
    d_sigma_p: &Matrix2<f64>,
) -> (Matrix3<f64>, Vector3<f64>) {
    covariance_projection_backward_with(point, camera, w, sigma, d_sigma_p, None)
}

fn covariance_projection_backward_with(
    point: CamPoint,
    camera: &Camera,
    w: &Matrix3<f64>,
    sigma: &Matrix3<f64>,
    d_sigma_p: &Matrix2<f64>,
    fault: Option<JacobianFault>,
) -> (Matrix3<f64>, Vector3<f64>) {
    let j = projection_jacobian(point, camera);
    let t = j * w;
    let m = 0.5 * (d_sigma_p + d_sigma_p.transpose());
    let d_sigma = t.transpose() * m * t;
    let d_t: Matrix2x3<f64> = 2.0 * m * t * sigma;
    let d_j = d_t * w.transpose();
    let mut dj_dmu = projection_jacobian_grad(point, camera);
    if let Some(f) = fault {
        dj_dmu[f.axis] *= f.factor;
    }
    let extra = Vector3::new(d_j.dot(&dj_dmu[0]), d_j.dot(&dj_dmu[1]), d_j.dot(&dj_dmu[2]));
    (d_sigma, extra)
}

fn check_context<R: Real>(scene: &Scene, camera: &Camera, ctx: &ForwardContext<R>) -> Result<(), RenderError> {
    if ctx.model != camera.model
        || ctx.width != camera.width as usize
        || ctx.height != camera.height as usize
        || ctx.num_gaussians != scene.len()
        || ctx.background != scene.background
    {
        return Err(RenderError::ContextMismatch(
            "forward context was produced for a different scene or camera".into(),
        ));
    }
    if ctx.pre.source.iter().any(|&i| i >= scene.len()) || ctx.pre.source.len() != ctx.pre.splats.len() {
        return Err(RenderError::ContextMismatch("splat sources are inconsistent".into()));
    }
    Ok(())
}

/// Full backward pass for a loss whose image gradient is `d_image`.
pub fn backward<R: Real>(
    scene: &Scene,
    camera: &Camera,
    ctx: &ForwardContext<R>,
    d_image: &ImageBuffer,
) -> Result<GradientBuffer, RenderError> {
    backward_with(scene, camera, ctx, d_image, &BackwardOptions::default())
}

pub fn backward_with<R: Real>(
    scene: &Scene,
    camera: &Camera,
    ctx: &ForwardContext<R>,
    d_image: &ImageBuffer,
    options: &BackwardOptions,
) -> Result<GradientBuffer, RenderError> {
    check_context(scene, camera, ctx)?;
    let splat_grads = rasterize_backward(
        &ctx.binned,
        &ctx.pre.splats,
        ctx.background,
        ctx.width,
        ctx.height,
        &ctx.final_transmittance,
        &ctx.n_contrib,
        d_image,
    )?;
    splat_to_gaussian_grads(scene, camera, ctx, &splat_grads, options)
}

/// Chains per-splat gradients back to the parameters of their source Gaussians.
pub fn splat_to_gaussian_grads<R: Real>(
    scene: &Scene,
    camera: &Camera,
    ctx: &ForwardContext<R>,
    sg: &SplatGradients,
    options: &BackwardOptions,
) -> Result<GradientBuffer, RenderError> {
    if sg.len() != ctx.pre.splats.len() {
        return Err(RenderError::ContextMismatch("splat gradient count differs from splat count".into()));
    }
    let w = camera.rotation_wc;
    let per_splat: Vec<(usize, GaussianGrad)> = (0..sg.len())
        .into_par_iter()
        .map(|i| -> Result<(usize, GaussianGrad), RenderError> {
            let index = ctx.pre.source[i];
            let g = &scene.gaussians[index];
            let geo = &ctx.pre.geometry[i];

            // conic = Σ_p⁻¹, so dΣ_p = −C·G·C with G the symmetric conic gradient
            let cov2d = geo.cov2d;
            let det = cov2d[(0, 0)] * cov2d[(1, 1)] - cov2d[(0, 1)] * cov2d[(0, 1)];
            let conic = Matrix2::new(cov2d[(1, 1)], -cov2d[(0, 1)], -cov2d[(0, 1)], cov2d[(0, 0)]) / det;
            let [ga, gb, gc] = sg.d_conic[i];
            let gm = Matrix2::new(ga, 0.5 * gb, 0.5 * gb, gc);
            let d_cov2d = -(conic * gm * conic);

            let (d_sigma, extra) =
                covariance_projection_backward_with(geo.cam_point, camera, &w, &geo.cov3d, &d_cov2d, options.fault);
            let direct = mean_backward(geo.cam_point, camera, Vector2::from(sg.d_mean_px[i]));
            let mut d_mean_c = Vector3::zeros();
            if options.direct_mean_path {
                d_mean_c += direct;
            }
            if options.covariance_mean_path {
                d_mean_c += extra;
            }

            let (d_rotation, d_log_scale) = build_covariance_backward(&g.rotation, &g.log_scale, &d_sigma)
                .map_err(|source| RenderError::Gaussian { index, source })?;
            let s = g.opacity();
            let mut d_sh_dc = [0.0; 3];
            for c in 0..3 {
                if !geo.color_clamped[c] {
                    d_sh_dc[c] = SH_C0 * sg.d_color[i][c];
                }
            }
            Ok((
                index,
                GaussianGrad {
                    d_mean: w.transpose() * d_mean_c,
                    d_rotation,
                    d_log_scale,
                    d_opacity_logit: sg.d_alpha_max[i] * s * (1.0 - s),
                    d_sh_dc,
                },
            ))
        })
        .collect::<Result<_, _>>()?;

    let mut buf = GradientBuffer::zeros(scene.len());
    for (index, g) in per_splat {
        buf.grads[index] = g;
    }
    Ok(buf)
}
