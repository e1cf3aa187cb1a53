use super::{CamPoint, Camera, JacobianGrad};
use nalgebra::{Matrix2x3, Vector2, Vector3};

pub(super) fn project(p: CamPoint, cam: &Camera) -> Vector2<f64> {
    Vector2::new(cam.cx + cam.fx * p.x / p.z, cam.cy + cam.fy * p.y / p.z)
}

pub(super) fn jacobian(p: CamPoint, cam: &Camera) -> Matrix2x3<f64> {
    let iz = 1.0 / p.z;
    let iz2 = iz * iz;
    Matrix2x3::new(
        cam.fx * iz,
        0.0,
        -cam.fx * p.x * iz2,
        0.0,
        cam.fy * iz,
        -cam.fy * p.y * iz2,
    )
}

pub(super) fn jacobian_grad(p: CamPoint, cam: &Camera) -> JacobianGrad {
    let iz = 1.0 / p.z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let (fx, fy) = (cam.fx, cam.fy);
    [
        Matrix2x3::new(0.0, 0.0, -fx * iz2, 0.0, 0.0, 0.0),
        Matrix2x3::new(0.0, 0.0, 0.0, 0.0, 0.0, -fy * iz2),
        Matrix2x3::new(
            -fx * iz2,
            0.0,
            2.0 * fx * p.x * iz3,
            0.0,
            -fy * iz2,
            2.0 * fy * p.y * iz3,
        ),
    ]
}

pub(super) fn unproject(pixel: Vector2<f64>, cam: &Camera) -> Vector3<f64> {
    Vector3::new((pixel.x - cam.cx) / cam.fx, (pixel.y - cam.cy) / cam.fy, 1.0).normalize()
}
