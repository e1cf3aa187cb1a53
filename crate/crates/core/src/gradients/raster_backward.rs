use crate::model::ImageBuffer;
use crate::splatting::{blend_weight, BinnedSplats, BlendWeight, Real, RenderError, Splat2D, TILE_SIZE, TRANSMITTANCE_STOP};
use rayon::prelude::*;

/// Loss gradients with respect to the fields of each visible splat.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SplatGradients {
    pub d_mean_px: Vec<[f64; 2]>,
    /// With respect to the conic entries `(a, b, c)`, `b` counted once.
    pub d_conic: Vec<[f64; 3]>,
    pub d_color: Vec<[f64; 3]>,
    pub d_alpha_max: Vec<f64>,
}

impl SplatGradients {
    pub fn zeros(n: usize) -> Self {
        Self {
            d_mean_px: vec![[0.0; 2]; n],
            d_conic: vec![[0.0; 3]; n],
            d_color: vec![[0.0; 3]; n],
            d_alpha_max: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.d_alpha_max.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d_alpha_max.is_empty()
    }
}

#[derive(Clone, Copy, Default)]
struct Scratch<R> {
    mean: [R; 2],
    conic: [R; 3],
    color: [R; 3],
    alpha_max: R,
}

struct Contribution<R> {
    k: usize,
    w: BlendWeight<R>,
    t: R,
}

/// Backpropagates `d_image` through the alpha blending of a finished forward pass.
///
/// Each pixel's contribution list is rebuilt front to back and checked
/// against the stored transmittance and contributor count before being
/// walked in reverse.
#[allow(clippy::too_many_arguments)]
pub fn rasterize_backward<R: Real>(
    binned: &BinnedSplats,
    splats: &[Splat2D<R>],
    background: [f64; 3],
    width: usize,
    height: usize,
    final_transmittance: &[R],
    n_contrib: &[u32],
    d_image: &ImageBuffer,
) -> Result<SplatGradients, RenderError> {
    if d_image.width != width || d_image.height != height {
        return Err(RenderError::ContextMismatch(format!(
            "image gradient is {}x{}, forward pass was {}x{}",
            d_image.width, d_image.height, width, height
        )));
    }
    if final_transmittance.len() != width * height || n_contrib.len() != width * height {
        return Err(RenderError::ContextMismatch("per-pixel buffers have the wrong length".into()));
    }
    let tiles_x = binned.index.tiles_x;
    let num_tiles = tiles_x * binned.index.tiles_y;
    if tiles_x != width.div_ceil(TILE_SIZE) || num_tiles != binned.index.ranges.len() {
        return Err(RenderError::ContextMismatch("tile grid does not match image size".into()));
    }
    if binned.refs.iter().any(|&r| r as usize >= splats.len()) {
        return Err(RenderError::ContextMismatch("tile list references a missing splat".into()));
    }
    let bg = background.map(R::from_f64);
    let t_stop = R::from_f64(TRANSMITTANCE_STOP);
    let half = R::from_f64(0.5);

    let tiles: Vec<Vec<Scratch<R>>> = (0..num_tiles)
        .into_par_iter()
        .map(|tile| -> Result<Vec<Scratch<R>>, RenderError> {
            let refs = binned.tile_refs(tile);
            let mut acc = vec![Scratch::<R>::default(); refs.len()];
            if refs.is_empty() {
                return Ok(acc);
            }
            let x0 = (tile % tiles_x) * TILE_SIZE;
            let y0 = (tile / tiles_x) * TILE_SIZE;
            let mut list: Vec<Contribution<R>> = Vec::new();
            for y in y0..(y0 + TILE_SIZE).min(height) {
                for x in x0..(x0 + TILE_SIZE).min(width) {
                    let pix = y * width + x;
                    let px = R::from_f64(x as f64) + half;
                    let py = R::from_f64(y as f64) + half;
                    list.clear();
                    let mut t = R::one();
                    let mut last = 0u32;
                    for (k, &si) in refs.iter().enumerate() {
                        let Some(w) = blend_weight(&splats[si as usize], px, py) else {
                            continue;
                        };
                        let next_t = t * (R::one() - w.alpha);
                        if next_t < t_stop {
                            break;
                        }
                        list.push(Contribution { k, w, t });
                        t = next_t;
                        last = k as u32 + 1;
                    }
                    if t != final_transmittance[pix] || last != n_contrib[pix] {
                        return Err(RenderError::ContextMismatch(format!(
                            "pixel ({x}, {y}) does not reproduce the stored blending state"
                        )));
                    }
                    let g = d_image.pixel(x, y).map(R::from_f64);
                    if g.iter().all(|v| *v == R::zero()) {
                        continue;
                    }
                    // colour accumulated behind the current splat, background included
                    let mut after = [t * bg[0], t * bg[1], t * bg[2]];
                    for c in list.iter().rev() {
                        let s = &splats[refs[c.k] as usize];
                        let a = &mut acc[c.k];
                        let weight = c.w.alpha * c.t;
                        let one_minus = R::one() - c.w.alpha;
                        let mut d_alpha = R::zero();
                        for ch in 0..3 {
                            a.color[ch] = a.color[ch] + g[ch] * weight;
                            d_alpha = d_alpha + g[ch] * (s.color[ch] * c.t - after[ch] / one_minus);
                            after[ch] = after[ch] + s.color[ch] * weight;
                        }
                        if c.w.clamped {
                            continue;
                        }
                        a.alpha_max = a.alpha_max + d_alpha * c.w.falloff;
                        // gradient of the exponent's argument
                        let d_power = d_alpha * s.alpha_max * c.w.falloff;
                        let [ca, cb, cc] = s.conic;
                        let (dx, dy) = (c.w.dx, c.w.dy);
                        a.mean[0] = a.mean[0] + d_power * (ca * dx + cb * dy);
                        a.mean[1] = a.mean[1] + d_power * (cb * dx + cc * dy);
                        a.conic[0] = a.conic[0] - half * dx * dx * d_power;
                        a.conic[1] = a.conic[1] - dx * dy * d_power;
                        a.conic[2] = a.conic[2] - half * dy * dy * d_power;
                    }
                }
            }
            Ok(acc)
        })
        .collect::<Result<_, _>>()?;

    let mut out = SplatGradients::zeros(splats.len());
    for (tile, acc) in tiles.into_iter().enumerate() {
        for (&si, a) in binned.tile_refs(tile).iter().zip(acc) {
            let si = si as usize;
            for i in 0..2 {
                out.d_mean_px[si][i] += a.mean[i].to_f64();
            }
            for i in 0..3 {
                out.d_conic[si][i] += a.conic[i].to_f64();
                out.d_color[si][i] += a.color[i].to_f64();
            }
            out.d_alpha_max[si] += a.alpha_max.to_f64();
        }
    }
    Ok(out)
}
