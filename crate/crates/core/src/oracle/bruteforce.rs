//! Reference renderer: every splat is tested against every pixel.

use super::dual::Dual3;
use super::OracleError;
use crate::cameras::{Camera, CameraModel, FOV_CULL_MARGIN, MIN_POINT_NORM, NEAR_CLIP};
use crate::model::{eval_sh_unclamped, Gaussian3D, ImageBuffer, Scene};
use crate::splatting::{ALPHA_CLAMP, ALPHA_SKIP, COVARIANCE_DILATION, POWER_CUTOFF, TILE_SIZE, TRANSMITTANCE_STOP};
use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector3};
use std::cmp::Ordering;
use std::f64::consts::PI;
use std::hash::{DefaultHasher, Hash, Hasher};

pub const DEFAULT_MAX_GAUSSIANS: usize = 2000;

/// A projected Gaussian as seen by the reference renderer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleSplat {
    pub index: usize,
    pub depth: f64,
    pub mean_px: [f64; 2],
    pub cov2d: Matrix2<f64>,
    pub inv_cov2d: Matrix2<f64>,
    pub radius_px: f64,
    pub color: [f64; 3],
    pub alpha_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleRender {
    pub image: ImageBuffer,
    /// Hash of every discrete decision taken while blending: which splats
    /// were used at each pixel, which were clamped and where blending stopped.
    pub signature: u64,
    /// Final transmittance per pixel.
    pub transmittance: Vec<f64>,
    pub splats: Vec<OracleSplat>,
}

fn rotation_of(q: &[f64; 4]) -> Option<Matrix3<f64>> {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return None;
    }
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    // columns are the images of the basis vectors under q·v·q*
    let rotate = |v: Vector3<f64>| {
        let u = Vector3::new(x, y, z);
        v + 2.0 * u.cross(&(u.cross(&v) + w * v))
    };
    Some(Matrix3::from_columns(&[rotate(Vector3::x()), rotate(Vector3::y()), rotate(Vector3::z())]))
}

fn covariance_of(g: &Gaussian3D) -> Option<Matrix3<f64>> {
    let r = rotation_of(&g.rotation)?;
    let s2 = Matrix3::from_diagonal(&g.log_scale.map(|v| (2.0 * v).exp()));
    Some(r * s2 * r.transpose())
}

/// Pixel position and its Jacobian, computed with dual numbers.
fn project_dual(p: Vector3<f64>, cam: &Camera) -> (f64, f64, Matrix2x3<f64>) {
    let x = Dual3::variable(p.x, 0);
    let y = Dual3::variable(p.y, 1);
    let z = Dual3::variable(p.z, 2);
    let (u, v) = match cam.model {
        CameraModel::Pinhole => ((x / z).scale(cam.fx).offset(cam.cx), (y / z).scale(cam.fy).offset(cam.cy)),
        CameraModel::FisheyeEquidistant => {
            let rho2 = x * x + y * y;
            let ratio = if rho2.v < 1e-2 * p.z * p.z && p.z > 0.0 {
                // θ/ρ as a power series in ρ²/z²
                let q = rho2 / (z * z);
                let mut sum = Dual3::constant(0.0);
                let mut qm = Dual3::constant(1.0);
                for m in 0..14 {
                    let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                    sum = sum + qm.scale(sign / (2 * m + 1) as f64);
                    qm = qm * q;
                }
                sum / z
            } else {
                let rho = rho2.sqrt();
                rho.atan2(z) / rho
            };
            ((x * ratio).scale(cam.fx).offset(cam.cx), (y * ratio).scale(cam.fy).offset(cam.cy))
        }
        CameraModel::Panorama => {
            let (w, h) = (cam.width as f64, cam.height as f64);
            let lon = x.atan2(z);
            let lat = y.atan2((x * x + z * z).sqrt());
            (lon.offset(PI).scale(w / (2.0 * PI)), lat.offset(PI / 2.0).scale(h / PI))
        }
    };
    let mut u_val = u.v;
    if cam.model == CameraModel::Panorama && u_val >= cam.width as f64 {
        u_val -= cam.width as f64;
    }
    let j = Matrix2x3::new(u.d[0], u.d[1], u.d[2], v.d[0], v.d[1], v.d[2]);
    (u_val, v.v, j)
}

fn in_view(p: Vector3<f64>, cam: &Camera) -> bool {
    if p.norm() < MIN_POINT_NORM {
        return false;
    }
    match cam.model {
        CameraModel::Pinhole => p.z > NEAR_CLIP,
        CameraModel::FisheyeEquidistant => {
            let on_back_axis = p.x == 0.0 && p.y == 0.0 && p.z <= 0.0;
            !on_back_axis && (p.x.hypot(p.y)).atan2(p.z) <= cam.fov_max + FOV_CULL_MARGIN
        }
        CameraModel::Panorama => true,
    }
}

/// Projects every Gaussian independently of the tiled pipeline. Culled
/// Gaussians are omitted; the result is in scene order.
pub fn project_scene(scene: &Scene, cam: &Camera) -> Result<Vec<OracleSplat>, OracleError> {
    let w = cam.rotation_wc;
    let eye = -(w.transpose() * cam.translation_wc);
    let mut out = Vec::new();
    for (index, g) in scene.gaussians.iter().enumerate() {
        let sigma = covariance_of(g).ok_or(OracleError::DegenerateGaussian(index))?;
        let p = w * g.mean + cam.translation_wc;
        if !in_view(p, cam) {
            continue;
        }
        let (u, v, j) = project_dual(p, cam);
        if !j.iter().all(|e| e.is_finite()) {
            continue;
        }
        let t = j * w;
        let mut cov = t * sigma * t.transpose();
        cov[(0, 1)] = 0.5 * (cov[(0, 1)] + cov[(1, 0)]);
        cov[(1, 0)] = cov[(0, 1)];
        cov += Matrix2::identity() * COVARIANCE_DILATION;
        let det = cov.determinant();
        if !(det > 0.0) || !det.is_finite() {
            continue;
        }
        let Some(inv) = cov.try_inverse() else {
            continue;
        };
        let lambda_max = cov.symmetric_eigenvalues().max();
        let radius_px = (3.0 * lambda_max.sqrt()).ceil();
        let dir = (g.mean - eye).try_normalize(0.0).unwrap_or_else(Vector3::z);
        let color = eval_sh_unclamped(&g.sh_coeffs, &dir, scene.sh_degree).map(|c| c.max(0.0));
        let depth = if cam.model == CameraModel::Pinhole { p.z } else { p.norm() };
        out.push(OracleSplat {
            index,
            depth,
            mean_px: [u, v],
            cov2d: cov,
            inv_cov2d: inv,
            radius_px,
            color,
            alpha_max: 1.0 / (1.0 + (-g.opacity_logit).exp()),
        });
    }
    Ok(out)
}

/// Number of (splat, 16×16 tile) pairs whose bounding box and tile overlap,
/// found by testing every tile.
pub fn count_tile_overlaps(splats: &[OracleSplat], width: usize, height: usize) -> usize {
    let mut n = 0;
    for s in splats {
        let r = s.radius_px;
        for ty in 0..height.div_ceil(TILE_SIZE) {
            for tx in 0..width.div_ceil(TILE_SIZE) {
                let (x0, y0) = ((tx * TILE_SIZE) as f64, (ty * TILE_SIZE) as f64);
                let x1 = x0 + TILE_SIZE as f64;
                let y1 = y0 + TILE_SIZE as f64;
                if s.mean_px[0] - r < x1 && s.mean_px[0] + r >= x0 && s.mean_px[1] - r < y1 && s.mean_px[1] + r >= y0 {
                    n += 1;
                }
            }
        }
    }
    n
}

pub fn bruteforce_render(scene: &Scene, cam: &Camera) -> Result<ImageBuffer, OracleError> {
    bruteforce_render_limited(scene, cam, DEFAULT_MAX_GAUSSIANS).map(|r| r.image)
}

/// Reference render with an explicit scene-size limit.
pub fn bruteforce_render_limited(scene: &Scene, cam: &Camera, max_gaussians: usize) -> Result<OracleRender, OracleError> {
    if scene.len() > max_gaussians {
        return Err(OracleError::TooManyGaussians {
            count: scene.len(),
            limit: max_gaussians,
        });
    }
    let mut splats = project_scene(scene, cam)?;
    splats.sort_by(|a, b| a.depth.partial_cmp(&b.depth).unwrap_or(Ordering::Equal).then(a.index.cmp(&b.index)));

    let (width, height) = (cam.width as usize, cam.height as usize);
    let mut image = ImageBuffer::new(width, height);
    let mut transmittance = vec![1.0; width * height];
    let mut hasher = DefaultHasher::new();
    for y in 0..height {
        for x in 0..width {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut t = 1.0;
            let mut rgb = [0.0; 3];
            let mut stopped_at = usize::MAX;
            for s in &splats {
                let d = nalgebra::Vector2::new(px - s.mean_px[0], py - s.mean_px[1]);
                let power = (d.transpose() * s.inv_cov2d * d)[(0, 0)];
                if power > POWER_CUTOFF {
                    continue;
                }
                let raw = s.alpha_max * (-0.5 * power).exp();
                let clamped = raw > ALPHA_CLAMP;
                let alpha = raw.min(ALPHA_CLAMP);
                if alpha < ALPHA_SKIP {
                    continue;
                }
                if t * (1.0 - alpha) < TRANSMITTANCE_STOP {
                    stopped_at = s.index;
                    break;
                }
                (s.index, clamped).hash(&mut hasher);
                for c in 0..3 {
                    rgb[c] += s.color[c] * alpha * t;
                }
                t *= 1.0 - alpha;
            }
            stopped_at.hash(&mut hasher);
            for c in 0..3 {
                rgb[c] += t * scene.background[c];
            }
            image.set_pixel(x, y, rgb);
            transmittance[y * width + x] = t;
        }
    }
    Ok(OracleRender {
        image,
        signature: hasher.finish(),
        transmittance,
        splats,
    })
}
