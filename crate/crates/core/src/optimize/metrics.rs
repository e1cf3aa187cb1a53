//! Image losses and quality metrics on `[0, 1]` RGB images.

use super::OptimizeError;
use crate::model::ImageBuffer;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
pub const PSNR_CAP: f64 = 100.0;

fn check_shapes(a: &ImageBuffer, b: &ImageBuffer) -> Result<(), OptimizeError> {
    if !a.same_shape(b) || a.pixels.len() != b.pixels.len() {
        return Err(OptimizeError::ShapeMismatch {
            left: (a.width, a.height),
            right: (b.width, b.height),
        });
    }
    Ok(())
}

/// Normalized 1D Gaussian taps.
pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = w.iter().sum();
    w.map(|v| v / sum)
}

/// One channel as a plane of `width × height` values.
struct Plane {
    w: usize,
    h: usize,
    v: Vec<f64>,
}

impl Plane {
    fn channel(img: &ImageBuffer, c: usize) -> Self {
        Self {
            w: img.width,
            h: img.height,
            v: img.pixels.iter().skip(c).step_by(3).copied().collect(),
        }
    }

    fn map2(&self, o: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        Plane {
            w: self.w,
            h: self.h,
            v: self.v.iter().zip(&o.v).map(|(a, b)| f(*a, *b)).collect(),
        }
    }

    /// Same-size separable filtering with zero padding. The window is
    /// symmetric, so this operator is its own adjoint.
    fn blur(&self, k: &[f64; SSIM_WINDOW]) -> Plane {
        let r = (SSIM_WINDOW / 2) as isize;
        let (w, h) = (self.w as isize, self.h as isize);
        let mut tmp = vec![0.0; self.v.len()];
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                for (i, kv) in k.iter().enumerate() {
                    let xx = x + i as isize - r;
                    if xx >= 0 && xx < w {
                        s += kv * self.v[(y * w + xx) as usize];
                    }
                }
                tmp[(y * w + x) as usize] = s;
            }
        }
        let mut out = vec![0.0; self.v.len()];
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                for (i, kv) in k.iter().enumerate() {
                    let yy = y + i as isize - r;
                    if yy >= 0 && yy < h {
                        s += kv * tmp[(yy * w + x) as usize];
                    }
                }
                out[(y * w + x) as usize] = s;
            }
        }
        Plane { w: self.w, h: self.h, v: out }
    }
}

/// Local statistics of one channel pair.
struct SsimTerms {
    mu_x: Plane,
    mu_y: Plane,
    a1: Vec<f64>,
    a2: Vec<f64>,
    b1: Vec<f64>,
    b2: Vec<f64>,
    map: Vec<f64>,
}

fn ssim_terms(x: &Plane, y: &Plane, k: &[f64; SSIM_WINDOW]) -> SsimTerms {
    let mu_x = x.blur(k);
    let mu_y = y.blur(k);
    let exx = x.map2(x, |a, b| a * b).blur(k);
    let eyy = y.map2(y, |a, b| a * b).blur(k);
    let exy = x.map2(y, |a, b| a * b).blur(k);
    let n = x.v.len();
    let (mut a1, mut a2, mut b1, mut b2, mut map) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for i in 0..n {
        let (mx, my) = (mu_x.v[i], mu_y.v[i]);
        let sxx = exx.v[i] - mx * mx;
        let syy = eyy.v[i] - my * my;
        let sxy = exy.v[i] - mx * my;
        a1[i] = 2.0 * mx * my + SSIM_C1;
        a2[i] = 2.0 * sxy + SSIM_C2;
        b1[i] = mx * mx + my * my + SSIM_C1;
        b2[i] = sxx + syy + SSIM_C2;
        map[i] = (a1[i] / b1[i]) * (a2[i] / b2[i]);
    }
    SsimTerms {
        mu_x,
        mu_y,
        a1,
        a2,
        b1,
        b2,
        map,
    }
}

/// Mean SSIM over all pixels and channels.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64, OptimizeError> {
    check_shapes(a, b)?;
    let k = gaussian_window();
    let mut total = 0.0;
    for c in 0..3 {
        let t = ssim_terms(&Plane::channel(a, c), &Plane::channel(b, c), &k);
        total += t.map.iter().sum::<f64>();
    }
    Ok(total / a.pixels.len() as f64)
}

/// SSIM and its gradient with respect to `x`.
pub fn ssim_with_grad(x: &ImageBuffer, y: &ImageBuffer) -> Result<(f64, ImageBuffer), OptimizeError> {
    check_shapes(x, y)?;
    let k = gaussian_window();
    let n = x.pixels.len() as f64;
    let mut grad = ImageBuffer::new(x.width, x.height);
    let mut total = 0.0;
    for c in 0..3 {
        let px = Plane::channel(x, c);
        let py = Plane::channel(y, c);
        let t = ssim_terms(&px, &py, &k);
        total += t.map.iter().sum::<f64>();
        let len = px.v.len();
        let (mut d_mu, mut d_exx, mut d_exy) = (vec![0.0; len], vec![0.0; len], vec![0.0; len]);
        for i in 0..len {
            let (mx, my) = (t.mu_x.v[i], t.mu_y.v[i]);
            let s = t.map[i];
            let denom = t.b1[i] * t.b2[i];
            // both differences vanish exactly for identical inputs
            d_mu[i] = 2.0 * (my * (t.a2[i] - t.a1[i]) - mx * s * (t.b2[i] - t.b1[i])) / denom / n;
            d_exx[i] = -s / t.b2[i] / n;
            d_exy[i] = 2.0 * (t.a1[i] / t.b1[i]) / t.b2[i] / n;
        }
        let plane = |v: Vec<f64>| Plane { w: px.w, h: px.h, v };
        let g_mu = plane(d_mu).blur(&k);
        let g_exx = plane(d_exx).blur(&k);
        let g_exy = plane(d_exy).blur(&k);
        for i in 0..len {
            grad.pixels[i * 3 + c] = g_mu.v[i] + 2.0 * px.v[i] * g_exx.v[i] + py.v[i] * g_exy.v[i];
        }
    }
    Ok((total / n, grad))
}

/// `10·log₁₀(1/MSE)`, capped at [`PSNR_CAP`].
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64, OptimizeError> {
    check_shapes(a, b)?;
    let mse = a.pixels.iter().zip(&b.pixels).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.pixels.len() as f64;
    if mse < 1e-10 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// `(1 − λ)·L1 + λ·(1 − SSIM)` and its gradient with respect to `rendered`.
/// L1 is the mean absolute difference over all pixel channels.
pub fn loss(rendered: &ImageBuffer, target: &ImageBuffer, lambda: f64) -> Result<(f64, ImageBuffer), OptimizeError> {
    check_shapes(rendered, target)?;
    let n = rendered.pixels.len() as f64;
    let (s, ssim_grad) = ssim_with_grad(rendered, target)?;
    let mut l1 = 0.0;
    let mut grad = ImageBuffer::new(rendered.width, rendered.height);
    for (i, (r, t)) in rendered.pixels.iter().zip(&target.pixels).enumerate() {
        let d = r - t;
        l1 += d.abs();
        let sign = if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        };
        grad.pixels[i] = (1.0 - lambda) * sign / n - lambda * ssim_grad.pixels[i];
    }
    Ok(((1.0 - lambda) * l1 / n + lambda * (1.0 - s), grad))
}
