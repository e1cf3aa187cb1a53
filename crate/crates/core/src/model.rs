//! Gaussian primitives, scenes and image buffers.
//!
//! Parameters are stored in their unconstrained form: log-scales, an
//! opacity logit and an unnormalized `(w, x, y, z)` quaternion. Activations
//! happen at the point of use.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

/// Number of spherical-harmonic coefficients per channel at degree 3.
pub const SH_COEFFS: usize = 16;

/// Highest supported spherical-harmonic degree.
pub const MAX_SH_DEGREE: usize = 3;

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("degenerate rotation: quaternion has zero norm")]
    DegenerateRotation,
}

/// One anisotropic Gaussian primitive.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian3D {
    pub mean: Vector3<f64>,
    /// Unnormalized quaternion, `(w, x, y, z)`.
    pub rotation: [f64; 4],
    pub log_scale: Vector3<f64>,
    pub opacity_logit: f64,
    /// `sh_coeffs[k][channel]`, k = 0 is the DC term.
    pub sh_coeffs: [[f64; 3]; SH_COEFFS],
}

impl Gaussian3D {
    /// Isotropic Gaussian with a DC-only color chosen so that `eval_sh` returns `rgb`.
    pub fn isotropic(mean: Vector3<f64>, sigma: f64, opacity: f64, rgb: [f64; 3]) -> Self {
        let mut sh_coeffs = [[0.0; 3]; SH_COEFFS];
        for c in 0..3 {
            sh_coeffs[0][c] = (rgb[c] - 0.5) / SH_C0;
        }
        Self {
            mean,
            rotation: [1.0, 0.0, 0.0, 0.0],
            log_scale: Vector3::repeat(sigma.ln()),
            opacity_logit: logit(opacity),
            sh_coeffs,
        }
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn scale(&self) -> Vector3<f64> {
        self.log_scale.map(f64::exp)
    }

    pub fn covariance(&self) -> Result<Matrix3<f64>, ModelError> {
        build_covariance(&self.rotation, &self.log_scale)
    }
}

/// An ordered set of Gaussians plus the background color.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub gaussians: Vec<Gaussian3D>,
    pub background: [f64; 3],
    /// Active spherical-harmonic degree used when evaluating colors.
    pub sh_degree: usize,
}

impl Scene {
    pub fn new(gaussians: Vec<Gaussian3D>, background: [f64; 3]) -> Self {
        Self {
            gaussians,
            background,
            sh_degree: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    /// Radius of the bounding sphere of all means around their centroid.
    pub fn extent(&self) -> f64 {
        if self.gaussians.is_empty() {
            return 1.0;
        }
        let n = self.gaussians.len() as f64;
        let centroid = self
            .gaussians
            .iter()
            .fold(Vector3::zeros(), |acc, g| acc + g.mean)
            / n;
        self.gaussians
            .iter()
            .map(|g| (g.mean - centroid).norm())
            .fold(0.0, f64::max)
            .max(1e-6)
    }
}

/// Row-major RGB image with values nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![0.0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut pixels = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            pixels.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn same_shape(&self, other: &ImageBuffer) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn is_finite(&self) -> bool {
        self.pixels.iter().all(|v| v.is_finite())
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Normalizes a `(w, x, y, z)` quaternion.
pub fn normalize_quat(q: &[f64; 4]) -> Result<([f64; 4], f64), ModelError> {
    let norm = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(ModelError::DegenerateRotation);
    }
    Ok(([q[0] / norm, q[1] / norm, q[2] / norm, q[3] / norm], norm))
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn quat_to_matrix(q: &[f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = *q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// `Σ = R·diag(exp(2·log_scale))·Rᵀ`, exactly symmetric.
pub fn build_covariance(
    rotation: &[f64; 4],
    log_scale: &Vector3<f64>,
) -> Result<Matrix3<f64>, ModelError> {
    let (q, _) = normalize_quat(rotation)?;
    let r = quat_to_matrix(&q);
    let s = log_scale.map(f64::exp);
    // M = R·S, Σ = M·Mᵀ
    let mut m = r;
    for j in 0..3 {
        for i in 0..3 {
            m[(i, j)] *= s[j];
        }
    }
    let mut sigma = Matrix3::zeros();
    for i in 0..3 {
        for j in i..3 {
            let v = m[(i, 0)] * m[(j, 0)] + m[(i, 1)] * m[(j, 1)] + m[(i, 2)] * m[(j, 2)];
            sigma[(i, j)] = v;
            sigma[(j, i)] = v;
        }
    }
    Ok(sigma)
}

/// Gradients of a scalar loss with respect to the stored quaternion and
/// log-scales, given `dL/dΣ` (symmetric).
pub fn build_covariance_backward(
    rotation: &[f64; 4],
    log_scale: &Vector3<f64>,
    dl_dsigma: &Matrix3<f64>,
) -> Result<([f64; 4], Vector3<f64>), ModelError> {
    let (q, norm) = normalize_quat(rotation)?;
    let r = quat_to_matrix(&q);
    let s = log_scale.map(f64::exp);
    let mut m = r;
    for j in 0..3 {
        for i in 0..3 {
            m[(i, j)] *= s[j];
        }
    }
    let g = 0.5 * (dl_dsigma + dl_dsigma.transpose());
    let dl_dm = 2.0 * g * m;

    let mut dl_dr = dl_dm;
    let mut dl_dlog_scale = Vector3::zeros();
    for j in 0..3 {
        let mut ds = 0.0;
        for i in 0..3 {
            ds += dl_dm[(i, j)] * r[(i, j)];
            dl_dr[(i, j)] *= s[j];
        }
        dl_dlog_scale[j] = ds * s[j];
    }

    let [w, x, y, z] = q;
    let d = |i: usize, j: usize| dl_dr[(i, j)];
    let dw = 2.0 * (-z * d(0, 1) + y * d(0, 2) + z * d(1, 0) - x * d(1, 2) - y * d(2, 0) + x * d(2, 1));
    let dx = 2.0
        * (y * d(0, 1) + z * d(0, 2) + y * d(1, 0) - 2.0 * x * d(1, 1) - w * d(1, 2) + z * d(2, 0)
            + w * d(2, 1)
            - 2.0 * x * d(2, 2));
    let dy = 2.0
        * (-2.0 * y * d(0, 0) + x * d(0, 1) + w * d(0, 2) + x * d(1, 0) + z * d(1, 2) - w * d(2, 0)
            + z * d(2, 1)
            - 2.0 * y * d(2, 2));
    let dz = 2.0
        * (-2.0 * z * d(0, 0) - w * d(0, 1) + x * d(0, 2) + w * d(1, 0) - 2.0 * z * d(1, 1)
            + y * d(1, 2)
            + x * d(2, 0)
            + y * d(2, 1));
    let dq_unit = [dw, dx, dy, dz];

    // through q̂ = q/‖q‖
    let dot: f64 = (0..4).map(|k| q[k] * dq_unit[k]).sum();
    let mut dq = [0.0; 4];
    for k in 0..4 {
        dq[k] = (dq_unit[k] - q[k] * dot) / norm;
    }
    Ok((dq, dl_dlog_scale))
}

/// Real spherical-harmonic basis up to `degree`, in the 3DGS sign convention.
pub fn sh_basis(dir: &Vector3<f64>, degree: usize) -> [f64; SH_COEFFS] {
    let mut b = [0.0; SH_COEFFS];
    b[0] = SH_C0;
    if degree == 0 {
        return b;
    }
    let (x, y, z) = (dir.x, dir.y, dir.z);
    b[1] = -SH_C1 * y;
    b[2] = SH_C1 * z;
    b[3] = -SH_C1 * x;
    if degree == 1 {
        return b;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let (xy, yz, xz) = (x * y, y * z, x * z);
    b[4] = SH_C2[0] * xy;
    b[5] = SH_C2[1] * yz;
    b[6] = SH_C2[2] * (2.0 * zz - xx - yy);
    b[7] = SH_C2[3] * xz;
    b[8] = SH_C2[4] * (xx - yy);
    if degree == 2 {
        return b;
    }
    b[9] = SH_C3[0] * y * (3.0 * xx - yy);
    b[10] = SH_C3[1] * xy * z;
    b[11] = SH_C3[2] * y * (4.0 * zz - xx - yy);
    b[12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
    b[13] = SH_C3[4] * x * (4.0 * zz - xx - yy);
    b[14] = SH_C3[5] * z * (xx - yy);
    b[15] = SH_C3[6] * x * (xx - 3.0 * yy);
    b
}

/// Evaluates view-dependent color, offset by +0.5 and clamped at zero.
pub fn eval_sh(sh_coeffs: &[[f64; 3]; SH_COEFFS], view_dir: &Vector3<f64>, degree: usize) -> [f64; 3] {
    eval_sh_unclamped(sh_coeffs, view_dir, degree).map(|v| v.max(0.0))
}

/// Same as [`eval_sh`] without the final clamp (the clamp mask is needed by backward).
pub fn eval_sh_unclamped(
    sh_coeffs: &[[f64; 3]; SH_COEFFS],
    view_dir: &Vector3<f64>,
    degree: usize,
) -> [f64; 3] {
    let degree = degree.min(MAX_SH_DEGREE);
    let basis = sh_basis(view_dir, degree);
    let n = (degree + 1) * (degree + 1);
    let mut rgb = [0.5; 3];
    for k in 0..n {
        for c in 0..3 {
            rgb[c] += basis[k] * sh_coeffs[k][c];
        }
    }
    rgb
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_quat(rng: &mut ChaCha8Rng) -> [f64; 4] {
        [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ]
    }

    // explicit Rodrigues-free conversion then two products
    fn covariance_oracle(q: &[f64; 4], s: &Vector3<f64>) -> Matrix3<f64> {
        let n = (q.iter().map(|v| v * v).sum::<f64>()).sqrt();
        let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
        let r = Matrix3::new(
            w * w + x * x - y * y - z * z,
            2.0 * x * y - 2.0 * w * z,
            2.0 * x * z + 2.0 * w * y,
            2.0 * x * y + 2.0 * w * z,
            w * w - x * x + y * y - z * z,
            2.0 * y * z - 2.0 * w * x,
            2.0 * x * z - 2.0 * w * y,
            2.0 * y * z + 2.0 * w * x,
            w * w - x * x - y * y + z * z,
        );
        let sm = Matrix3::from_diagonal(&s.map(f64::exp));
        let rs = r * sm;
        rs * rs.transpose()
    }

    #[test]
    fn covariance_identity_and_diagonal() {
        let id = build_covariance(&[1.0, 0.0, 0.0, 0.0], &Vector3::zeros()).unwrap();
        assert_eq!(id, Matrix3::identity());
        let d = build_covariance(&[1.0, 0.0, 0.0, 0.0], &Vector3::new(2f64.ln(), 0.0, 0.0)).unwrap();
        assert_relative_eq!(d, Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0)), epsilon = 1e-14);
    }

    #[test]
    fn covariance_matches_matrix_product_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let q = random_quat(&mut rng);
            let s = Vector3::new(
                rng.random_range(-2.0..1.0),
                rng.random_range(-2.0..1.0),
                rng.random_range(-2.0..1.0),
            );
            let got = build_covariance(&q, &s).unwrap();
            let want = covariance_oracle(&q, &s);
            assert!((got - want).abs().max() < 1e-12);
            assert_eq!(got, got.transpose());
        }
    }

    #[test]
    fn zero_quaternion_is_degenerate() {
        assert_eq!(
            build_covariance(&[0.0; 4], &Vector3::zeros()),
            Err(ModelError::DegenerateRotation)
        );
        assert!(build_covariance_backward(&[0.0; 4], &Vector3::zeros(), &Matrix3::identity()).is_err());
    }

    #[test]
    fn backward_zero_cotangent_and_trace() {
        let q = [0.3, -0.2, 0.9, 0.1];
        let s = Vector3::new(0.1, -0.4, 0.2);
        let (dq, ds) = build_covariance_backward(&q, &s, &Matrix3::zeros()).unwrap();
        assert_eq!(dq, [0.0; 4]);
        assert_eq!(ds, Vector3::zeros());

        let (dq, ds) =
            build_covariance_backward(&[1.0, 0.0, 0.0, 0.0], &Vector3::zeros(), &Matrix3::identity()).unwrap();
        assert_relative_eq!(ds, Vector3::new(2.0, 2.0, 2.0), epsilon = 1e-14);
        // tr(Σ) is rotation invariant
        for v in dq {
            assert!(v.abs() < 1e-14);
        }
    }

    fn frob(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
        a.component_mul(b).sum()
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-5;
        for _ in 0..100 {
            let q = random_quat(&mut rng);
            let s = Vector3::new(
                rng.random_range(-1.0..0.5),
                rng.random_range(-1.0..0.5),
                rng.random_range(-1.0..0.5),
            );
            let mut g = Matrix3::zeros();
            for i in 0..3 {
                for j in i..3 {
                    let v = rng.random_range(-1.0..1.0);
                    g[(i, j)] = v;
                    g[(j, i)] = v;
                }
            }
            let loss = |q: &[f64; 4], s: &Vector3<f64>| frob(&g, &covariance_oracle(q, s));
            let (dq, ds) = build_covariance_backward(&q, &s, &g).unwrap();
            for k in 0..4 {
                let mut qp = q;
                let mut qm = q;
                qp[k] += h;
                qm[k] -= h;
                let fd = (loss(&qp, &s) - loss(&qm, &s)) / (2.0 * h);
                let rel = (fd - dq[k]).abs() / fd.abs().max(dq[k].abs()).max(1e-8);
                assert!(rel < 1e-6, "dq[{k}] analytic {} fd {fd}", dq[k]);
            }
            for k in 0..3 {
                let mut sp = s;
                let mut sm = s;
                sp[k] += h;
                sm[k] -= h;
                let fd = (loss(&q, &sp) - loss(&q, &sm)) / (2.0 * h);
                let rel = (fd - ds[k]).abs() / fd.abs().max(ds[k].abs()).max(1e-8);
                assert!(rel < 1e-6, "ds[{k}] analytic {} fd {fd}", ds[k]);
            }
        }
    }

    #[test]
    fn sh_degree_zero() {
        let mut sh = [[0.0; 3]; SH_COEFFS];
        let dir = Vector3::new(0.0, 0.6, 0.8);
        assert_eq!(eval_sh(&sh, &dir, 0), [0.5, 0.5, 0.5]);
        sh[0] = [1.0, -2.0, 0.5];
        let rgb = eval_sh(&sh, &dir, 0);
        assert_relative_eq!(rgb[0], 0.282_094_79 + 0.5, epsilon = 1e-8);
        assert_relative_eq!(rgb[1], 0.0); // clamped from below
        assert_relative_eq!(rgb[2], 0.282_094_79 * 0.5 + 0.5, epsilon = 1e-8);
    }

    /// Real SH table with the Condon-Shortley phase, written from the
    /// closed forms `sqrt(k/π)` rather than the tabulated constants.
    fn sh_table(d: &Vector3<f64>) -> [f64; 16] {
        let pi = std::f64::consts::PI;
        let (x, y, z) = (d.x, d.y, d.z);
        let cs = |m: i32| if m % 2 == 0 { 1.0 } else { -1.0 };
        [
            0.5 * (1.0 / pi).sqrt(),
            cs(1) * (3.0 / (4.0 * pi)).sqrt() * y,
            (3.0 / (4.0 * pi)).sqrt() * z,
            cs(1) * (3.0 / (4.0 * pi)).sqrt() * x,
            0.5 * (15.0 / pi).sqrt() * x * y,
            cs(1) * 0.5 * (15.0 / pi).sqrt() * y * z,
            0.25 * (5.0 / pi).sqrt() * (3.0 * z * z - 1.0),
            cs(1) * 0.5 * (15.0 / pi).sqrt() * x * z,
            0.25 * (15.0 / pi).sqrt() * (x * x - y * y),
            cs(3) * 0.25 * (35.0 / (2.0 * pi)).sqrt() * y * (3.0 * x * x - y * y),
            0.5 * (105.0 / pi).sqrt() * x * y * z,
            cs(1) * 0.25 * (21.0 / (2.0 * pi)).sqrt() * y * (5.0 * z * z - 1.0),
            0.25 * (7.0 / pi).sqrt() * (5.0 * z * z * z - 3.0 * z),
            cs(1) * 0.25 * (21.0 / (2.0 * pi)).sqrt() * x * (5.0 * z * z - 1.0),
            0.25 * (105.0 / pi).sqrt() * (x * x - y * y) * z,
            cs(3) * 0.25 * (35.0 / (2.0 * pi)).sqrt() * x * (x * x - 3.0 * y * y),
        ]
    }

    #[test]
    fn sh_degree_three_matches_basis_table() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut dirs = vec![Vector3::new(0.0, 0.0, 1.0)];
        for _ in 0..20 {
            let v = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            dirs.push(v.normalize());
        }
        for dir in dirs {
            let mut sh = [[0.0; 3]; SH_COEFFS];
            for k in 0..SH_COEFFS {
                for c in 0..3 {
                    sh[k][c] = rng.random_range(-0.3..0.3);
                }
            }
            let table = sh_table(&dir);
            let got = eval_sh_unclamped(&sh, &dir, 3);
            for c in 0..3 {
                let want: f64 = 0.5 + (0..16).map(|k| table[k] * sh[k][c]).sum::<f64>();
                assert_relative_eq!(got[c], want, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn negated_quaternion_gives_identical_covariance() {
        let q = [0.4, -0.1, 0.7, 0.2];
        let nq = q.map(|v| -v);
        let s = Vector3::new(0.3, -0.7, 0.1);
        assert_eq!(build_covariance(&q, &s).unwrap(), build_covariance(&nq, &s).unwrap());
    }

    proptest::proptest! {
        #[test]
        fn covariance_psd_and_monotone(
            w in -1.0f64..1.0, x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0,
            s0 in -3.0f64..1.0, s1 in -3.0f64..1.0, s2 in -3.0f64..1.0, bump in 0.0f64..0.5, axis in 0usize..3,
        ) {
            let q = [w, x, y, z];
            proptest::prop_assume!(q.iter().map(|v| v * v).sum::<f64>() > 1e-6);
            let s = Vector3::new(s0, s1, s2);
            let sigma = build_covariance(&q, &s).unwrap();
            proptest::prop_assert_eq!(sigma, sigma.transpose());
            let eig = sigma.symmetric_eigenvalues();
            let scale = s.map(|v| (2.0 * v).exp()).max();
            for e in eig.iter() {
                proptest::prop_assert!(*e >= -1e-12 * scale.max(1.0));
            }
            let mut sorted_eig: Vec<f64> = eig.iter().copied().collect();
            sorted_eig.sort_by(f64::total_cmp);
            let mut want: Vec<f64> = s.iter().map(|v| (2.0 * v).exp()).collect();
            want.sort_by(f64::total_cmp);
            for (a, b) in sorted_eig.iter().zip(&want) {
                proptest::prop_assert!((a - b).abs() < 1e-12 * scale.max(1.0));
            }
            let mut s_big = s;
            s_big[axis] += bump;
            let bigger = build_covariance(&q, &s_big).unwrap();
            proptest::prop_assert!(bigger.trace() >= sigma.trace() - 1e-12);
        }
    }
}
