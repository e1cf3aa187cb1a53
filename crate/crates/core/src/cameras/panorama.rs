//! Equirectangular panorama: azimuth maps linearly to x, elevation to y.
//! Intrinsics other than the image size are ignored.

use super::{CamPoint, Camera, JacobianGrad};
use nalgebra::{Matrix2x3, Vector2, Vector3};
use std::f64::consts::PI;

pub(super) fn project(p: CamPoint, cam: &Camera) -> Vector2<f64> {
    let (w, h) = (cam.width as f64, cam.height as f64);
    let r = (p.x * p.x + p.z * p.z).sqrt();
    let mut xp = w * (p.x.atan2(p.z) + PI) / (2.0 * PI);
    // atan2 reaches +π on the seam; wrap so x_p stays in [0, w)
    if xp >= w {
        xp -= w;
    }
    let yp = h * (p.y.atan2(r) + PI / 2.0) / PI;
    Vector2::new(xp, yp)
}

pub(super) fn jacobian(p: CamPoint, cam: &Camera) -> Matrix2x3<f64> {
    let (w, h) = (cam.width as f64, cam.height as f64);
    let (x, y, z) = (p.x, p.y, p.z);
    let r2 = x * x + z * z;
    let r = r2.sqrt();
    let l2 = r2 + y * y;
    let a = w / (2.0 * PI);
    let b = h / PI;
    Matrix2x3::new(
        a * z / r2,
        0.0,
        -a * x / r2,
        -b * x * y / (r * l2),
        b * r / l2,
        -b * y * z / (r * l2),
    )
}

pub(super) fn jacobian_grad(p: CamPoint, cam: &Camera) -> JacobianGrad {
    let (w, h) = (cam.width as f64, cam.height as f64);
    let (x, y, z) = (p.x, p.y, p.z);
    let r2 = x * x + z * z;
    let r = r2.sqrt();
    let r3 = r2 * r;
    let r4 = r2 * r2;
    let l2 = r2 + y * y;
    let l22 = l2 * l2;
    let a = w / (2.0 * PI);
    let b = h / PI;

    // row 0: (z/r², 0, −x/r²)
    let d0x = [-2.0 * x * z / r4, 0.0, (x * x - z * z) / r4];
    let d0z = [(x * x - z * z) / r4, 0.0, 2.0 * x * z / r4];

    // row 1: (P, Q, R) = (−xy/(r·l₂), r/l₂, −yz/(r·l₂))
    let inv_rl = 1.0 / (r * l2);
    let p_x = -y * (inv_rl - x * x / (r3 * l2) - 2.0 * x * x / (r * l22));
    let p_y = -x * (inv_rl - 2.0 * y * y / (r * l22));
    let p_z = x * y * z * (1.0 / (r3 * l2) + 2.0 / (r * l22));
    let q_x = x * inv_rl - 2.0 * x * r / l22;
    let q_y = -2.0 * y * r / l22;
    let q_z = z * inv_rl - 2.0 * z * r / l22;
    let r_x = x * y * z * (1.0 / (r3 * l2) + 2.0 / (r * l22));
    let r_y = -z * (inv_rl - 2.0 * y * y / (r * l22));
    let r_z = -y * (inv_rl - z * z / (r3 * l2) - 2.0 * z * z / (r * l22));

    [
        Matrix2x3::new(a * d0x[0], a * d0x[1], a * d0x[2], b * p_x, b * q_x, b * r_x),
        Matrix2x3::new(0.0, 0.0, 0.0, b * p_y, b * q_y, b * r_y),
        Matrix2x3::new(a * d0z[0], a * d0z[1], a * d0z[2], b * p_z, b * q_z, b * r_z),
    ]
}

pub(super) fn unproject(pixel: Vector2<f64>, cam: &Camera) -> Vector3<f64> {
    let (w, h) = (cam.width as f64, cam.height as f64);
    let lon = pixel.x * 2.0 * PI / w - PI;
    let lat = pixel.y * PI / h - PI / 2.0;
    Vector3::new(lat.cos() * lon.sin(), lat.sin(), lat.cos() * lon.cos())
}
