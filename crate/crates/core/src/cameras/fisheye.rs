//! Equidistant fisheye: `r = f·θ`.
//!
//! Writing the projection as `x_p = c_x + f_x·x·g(ρ, z)` with `ρ = √(x²+y²)`
//! and `g = θ/ρ`, everything reduces to `g` and two auxiliary functions
//!
//! * `h = (∂g/∂ρ)/ρ = (zρ/l₂ − θ)/ρ³`
//! * `k = (∂h/∂ρ)/ρ = (−2z/l₂² − 3h)/ρ²`
//!
//! together with `∂g/∂z = −1/l₂` and `∂h/∂z = 2/l₂²`. Near the optical axis
//! `g`, `h` and `k` are evaluated from their power series in `q = ρ²/z²`,
//! which removes both the `0/0` at the axis and the cancellation in `h`, `k`.

use super::{CamPoint, Camera, CameraError, JacobianGrad};
use nalgebra::{Matrix2x3, Vector2, Vector3};

/// Below `ρ < ON_AXIS_RATIO·z`, `θ/ρ` is taken from its series.
const ON_AXIS_RATIO: f64 = 1e-6;
/// Below `ρ < SERIES_RATIO·z`, `h` and `k` are taken from their series.
const SERIES_RATIO: f64 = 0.1;
const SERIES_TERMS: usize = 12;

/// The direction straight behind the camera has no defined azimuth.
pub(super) fn is_regular(p: CamPoint) -> bool {
    p.z > 0.0 || p.x != 0.0 || p.y != 0.0
}

#[derive(Debug, Clone, Copy)]
struct Radial {
    g: f64,
    h: f64,
    k: f64,
    l2: f64,
}

/// `θ/ρ` from `1/z · Σ (−1)^m q^m / (2m+1)`.
fn g_series(q: f64, z: f64) -> f64 {
    let mut acc = 0.0;
    let mut qm = 1.0;
    for m in 0..SERIES_TERMS {
        let sign = if m.is_multiple_of(2) { 1.0 } else { -1.0 };
        acc += sign * qm / (2 * m + 1) as f64;
        qm *= q;
    }
    acc / z
}

/// `a_m = (−1)^{m+1} (2m+2)/(2m+3)`.
fn series_coeff(m: usize) -> f64 {
    let sign = if m.is_multiple_of(2) { -1.0 } else { 1.0 };
    sign * (2 * m + 2) as f64 / (2 * m + 3) as f64
}

fn h_series(q: f64, z: f64) -> f64 {
    let mut acc = 0.0;
    let mut qm = 1.0;
    for m in 0..SERIES_TERMS {
        acc += series_coeff(m) * qm;
        qm *= q;
    }
    acc / (z * z * z)
}

fn k_series(q: f64, z: f64) -> f64 {
    let mut acc = 0.0;
    let mut qm = 1.0;
    for m in 1..SERIES_TERMS {
        acc += m as f64 * series_coeff(m) * qm;
        qm *= q;
    }
    2.0 * acc / z.powi(5)
}

fn radial(p: CamPoint) -> Radial {
    let s = p.x * p.x + p.y * p.y;
    let rho = s.sqrt();
    let z = p.z;
    let l2 = s + z * z;
    let q = if z != 0.0 { s / (z * z) } else { f64::INFINITY };
    let g = if z > 0.0 && rho < ON_AXIS_RATIO * z {
        g_series(q, z)
    } else {
        rho.atan2(z) / rho
    };
    let (h, k) = if z > 0.0 && rho < SERIES_RATIO * z {
        (h_series(q, z), k_series(q, z))
    } else {
        let theta = rho.atan2(z);
        let h = (z * rho / l2 - theta) / (rho * s);
        let k = (-2.0 * z / (l2 * l2) - 3.0 * h) / s;
        (h, k)
    };
    Radial { g, h, k, l2 }
}

pub(super) fn project(p: CamPoint, cam: &Camera) -> Option<Vector2<f64>> {
    if !is_regular(p) {
        return None;
    }
    let r = radial(p);
    Some(Vector2::new(cam.cx + cam.fx * r.g * p.x, cam.cy + cam.fy * r.g * p.y))
}

pub(super) fn jacobian(p: CamPoint, cam: &Camera) -> Matrix2x3<f64> {
    let Radial { g, h, l2, .. } = radial(p);
    let (x, y) = (p.x, p.y);
    let (fx, fy) = (cam.fx, cam.fy);
    Matrix2x3::new(
        fx * (g + x * x * h),
        fx * x * y * h,
        -fx * x / l2,
        fy * x * y * h,
        fy * (g + y * y * h),
        -fy * y / l2,
    )
}

pub(super) fn jacobian_grad(p: CamPoint, cam: &Camera) -> JacobianGrad {
    let Radial { h, k, l2, .. } = radial(p);
    let (x, y, z) = (p.x, p.y, p.z);
    let (fx, fy) = (cam.fx, cam.fy);
    let l22 = l2 * l2;
    let s5 = x * x - y * y - z * z;
    let s6 = y * y - x * x - z * z;
    let dx = Matrix2x3::new(
        fx * (3.0 * x * h + x * x * x * k),
        fx * y * (h + x * x * k),
        fx * s5 / l22,
        fy * y * (h + x * x * k),
        fy * x * (h + y * y * k),
        2.0 * fy * x * y / l22,
    );
    let dy = Matrix2x3::new(
        fx * y * (h + x * x * k),
        fx * x * (h + y * y * k),
        2.0 * fx * x * y / l22,
        fy * x * (h + y * y * k),
        fy * (3.0 * y * h + y * y * y * k),
        fy * s6 / l22,
    );
    let dz = Matrix2x3::new(
        fx * s5 / l22,
        2.0 * fx * x * y / l22,
        2.0 * fx * x * z / l22,
        2.0 * fy * x * y / l22,
        fy * s6 / l22,
        2.0 * fy * y * z / l22,
    );
    [dx, dy, dz]
}

pub(super) fn unproject(pixel: Vector2<f64>, cam: &Camera) -> Result<Vector3<f64>, CameraError> {
    let u = (pixel.x - cam.cx) / cam.fx;
    let v = (pixel.y - cam.cy) / cam.fy;
    let theta = (u * u + v * v).sqrt();
    if theta > std::f64::consts::PI {
        return Err(CameraError::BeyondHemisphere(pixel.x, pixel.y));
    }
    if theta == 0.0 {
        return Ok(Vector3::new(0.0, 0.0, 1.0));
    }
    let sin_over = theta.sin() / theta;
    Ok(Vector3::new(u * sin_over, v * sin_over, theta.cos()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn general(p: CamPoint) -> Radial {
        let s = p.x * p.x + p.y * p.y;
        let rho = s.sqrt();
        let l2 = s + p.z * p.z;
        let theta = rho.atan2(p.z);
        let h = (p.z * rho / l2 - theta) / (rho * s);
        Radial {
            g: theta / rho,
            h,
            k: (-2.0 * p.z / (l2 * l2) - 3.0 * h) / s,
            l2,
        }
    }

    #[test]
    fn series_and_closed_form_agree_near_axis() {
        let cam = Camera::fisheye(64, 64, 100.0, 100.0, 32.0, 32.0, 1.5);
        for &(x, y) in &[(1e-5, 0.0), (0.6e-5, 0.8e-5), (0.0, 1e-5)] {
            let p = CamPoint::new(x, y, 1.0);
            let s = x * x + y * y;
            let q = s;
            let g_s = g_series(q, 1.0);
            let gen = general(p);
            assert!((g_s - gen.g).abs() < 1e-8 * gen.g.abs());
            let j_series = {
                let h = h_series(q, 1.0);
                Matrix2x3::new(
                    100.0 * (g_s + x * x * h),
                    100.0 * x * y * h,
                    -100.0 * x / gen.l2,
                    100.0 * x * y * h,
                    100.0 * (g_s + y * y * h),
                    -100.0 * y / gen.l2,
                )
            };
            let j_general = Matrix2x3::new(
                100.0 * (gen.g + x * x * gen.h),
                100.0 * x * y * gen.h,
                -100.0 * x / gen.l2,
                100.0 * x * y * gen.h,
                100.0 * (gen.g + y * y * gen.h),
                -100.0 * y / gen.l2,
            );
            assert!((j_series - j_general).abs().max() < 1e-8 * j_general.abs().max());
            assert!((jacobian(p, &cam) - j_general).abs().max() < 1e-8 * j_general.abs().max());
        }
    }

    #[test]
    fn series_switch_is_continuous_for_h_and_k() {
        // straddle the series threshold on both sides
        for &t in &[SERIES_RATIO * (1.0 - 1e-9), SERIES_RATIO * (1.0 + 1e-9)] {
            let z = 2.0;
            let p = CamPoint::new(t * z, 0.0, z);
            let r = radial(p);
            let gen = general(p);
            let q = t * t;
            assert!((r.h - h_series(q, z)).abs() < 1e-12 * r.h.abs());
            assert!((r.k - k_series(q, z)).abs() < 1e-9 * r.k.abs());
            assert!((gen.h - h_series(q, z)).abs() < 1e-12 * gen.h.abs());
        }
    }

    #[test]
    fn axis_limit_is_pinhole() {
        let cam = Camera::fisheye(64, 64, 100.0, 80.0, 32.0, 32.0, 1.5);
        let j = jacobian(CamPoint::new(0.0, 0.0, 2.0), &cam);
        assert_eq!(j, Matrix2x3::new(50.0, 0.0, 0.0, 0.0, 40.0, 0.0));
    }
}
