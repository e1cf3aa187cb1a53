use super::{binning, Real, RenderError, Splat2D, TILE_SIZE};
use crate::cameras::{self, CamPoint, Camera, CameraModel};
use crate::model::{eval_sh_unclamped, Scene};
use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector3};
use rayon::prelude::*;

/// Added to both diagonal entries of the projected covariance (px²).
pub const COVARIANCE_DILATION: f64 = 0.3;

/// Double-precision geometry of one visible splat, kept for the backward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplatGeometry {
    pub cam_point: CamPoint,
    pub jacobian: Matrix2x3<f64>,
    /// World-space 3D covariance.
    pub cov3d: Matrix3<f64>,
    /// Projected covariance including the dilation.
    pub cov2d: Matrix2<f64>,
    /// Per channel: whether the color was clamped at zero.
    pub color_clamped: [bool; 3],
}

#[derive(Debug, Clone)]
pub struct Preprocessed<R> {
    pub splats: Vec<Splat2D<R>>,
    /// Index of the source Gaussian for each splat.
    pub source: Vec<usize>,
    pub geometry: Vec<SplatGeometry>,
    pub num_culled: usize,
    pub num_degenerate: usize,
}

enum Outcome<R> {
    Visible(Splat2D<R>, SplatGeometry),
    Culled,
    Degenerate,
}

/// Projects every Gaussian; culled ones are dropped and counted.
pub fn preprocess<R: Real>(scene: &Scene, camera: &Camera) -> Result<Preprocessed<R>, RenderError> {
    let width = camera.width as usize;
    let height = camera.height as usize;
    let tiles_x = width.div_ceil(TILE_SIZE);
    let tiles_y = height.div_ceil(TILE_SIZE);
    let cam_center = camera.center();

    let outcomes: Vec<Outcome<R>> = scene
        .gaussians
        .par_iter()
        .enumerate()
        .map(|(index, g)| -> Result<Outcome<R>, RenderError> {
            let cov3d = g.covariance().map_err(|source| RenderError::Gaussian { index, source })?;
            let p = cameras::world_to_camera(&g.mean, camera);
            let Some(proj) = cameras::project(p, camera) else {
                return Ok(Outcome::Culled);
            };
            if !proj.visible {
                return Ok(Outcome::Culled);
            }
            let t = proj.jacobian * camera.rotation_wc;
            let mut cov2d = t * cov3d * t.transpose();
            let off = 0.5 * (cov2d[(0, 1)] + cov2d[(1, 0)]);
            cov2d[(0, 1)] = off;
            cov2d[(1, 0)] = off;
            cov2d[(0, 0)] += COVARIANCE_DILATION;
            cov2d[(1, 1)] += COVARIANCE_DILATION;
            let det = cov2d[(0, 0)] * cov2d[(1, 1)] - off * off;
            if !(det > 0.0) || !det.is_finite() {
                return Ok(Outcome::Degenerate);
            }
            let conic = [cov2d[(1, 1)] / det, -off / det, cov2d[(0, 0)] / det];
            let mid = 0.5 * (cov2d[(0, 0)] + cov2d[(1, 1)]);
            let half_diff = 0.5 * (cov2d[(0, 0)] - cov2d[(1, 1)]);
            let lambda_max = mid + (half_diff * half_diff + off * off).sqrt();
            let radius = (3.0 * lambda_max.sqrt()).ceil();
            if !radius.is_finite() || radius > u32::MAX as f64 {
                return Ok(Outcome::Culled);
            }
            let radius_px = radius as u32;
            let mean_px = [proj.pixel.x, proj.pixel.y];
            let (x0, y0, x1, y1) = binning::tile_rect(mean_px, radius_px, tiles_x, tiles_y);
            if x0 >= x1 || y0 >= y1 {
                return Ok(Outcome::Culled);
            }

            let view_dir = (g.mean - cam_center)
                .try_normalize(0.0)
                .unwrap_or_else(|| Vector3::new(0.0, 0.0, 1.0));
            let raw = eval_sh_unclamped(&g.sh_coeffs, &view_dir, scene.sh_degree);
            let color_clamped = raw.map(|v| v < 0.0);
            let color = raw.map(|v| R::from_f64(v.max(0.0)));

            let depth = match camera.model {
                CameraModel::Pinhole => p.z,
                CameraModel::FisheyeEquidistant | CameraModel::Panorama => p.norm(),
            };
            let splat = Splat2D {
                mean_px: mean_px.map(R::from_f64),
                conic: conic.map(R::from_f64),
                depth,
                radius_px,
                color,
                alpha_max: R::from_f64(g.opacity()),
            };
            let geometry = SplatGeometry {
                cam_point: p,
                jacobian: proj.jacobian,
                cov3d,
                cov2d,
                color_clamped,
            };
            Ok(Outcome::Visible(splat, geometry))
        })
        .collect::<Result<_, _>>()?;

    let mut pre = Preprocessed {
        splats: Vec::new(),
        source: Vec::new(),
        geometry: Vec::new(),
        num_culled: 0,
        num_degenerate: 0,
    };
    for (index, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Outcome::Visible(s, g) => {
                pre.splats.push(s);
                pre.source.push(index);
                pre.geometry.push(g);
            }
            Outcome::Culled => pre.num_culled += 1,
            Outcome::Degenerate => pre.num_degenerate += 1,
        }
    }
    Ok(pre)
}
