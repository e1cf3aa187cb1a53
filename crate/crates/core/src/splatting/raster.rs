use super::{BinnedSplats, Real, Splat2D, TILE_SIZE};
use crate::model::ImageBuffer;
use rayon::prelude::*;

/// Upper bound on a single splat's opacity at a pixel.
pub const ALPHA_CLAMP: f64 = 0.99;
/// Contributions below this opacity are skipped.
pub const ALPHA_SKIP: f64 = 1.0 / 255.0;
/// Blending stops once transmittance would fall below this value.
pub const TRANSMITTANCE_STOP: f64 = 1e-4;
/// Contributions with `dᵀ·conic·d` above this (outside the 3σ ellipse) are
/// skipped, which keeps every contribution inside the splat's tile box.
pub const POWER_CUTOFF: f64 = 9.0;

/// Opacity of one splat at one pixel, before the skip test.
#[derive(Debug, Clone, Copy)]
pub struct BlendWeight<R> {
    pub alpha: R,
    /// `exp(−½ dᵀ·conic·d)`
    pub falloff: R,
    pub dx: R,
    pub dy: R,
    pub clamped: bool,
}

/// Evaluates a splat at pixel centre `(px, py)`; `None` when it contributes nothing.
#[inline]
pub fn blend_weight<R: Real>(s: &Splat2D<R>, px: R, py: R) -> Option<BlendWeight<R>> {
    let dx = px - s.mean_px[0];
    let dy = py - s.mean_px[1];
    let [a, b, c] = s.conic;
    let quad = a * dx * dx + c * dy * dy + (b + b) * dx * dy;
    if quad > R::from_f64(POWER_CUTOFF) {
        return None;
    }
    let falloff = (R::from_f64(-0.5) * quad).exp();
    let raw = s.alpha_max * falloff;
    let clamp = R::from_f64(ALPHA_CLAMP);
    let (alpha, clamped) = if raw > clamp { (clamp, true) } else { (raw, false) };
    if alpha < R::from_f64(ALPHA_SKIP) {
        return None;
    }
    Some(BlendWeight {
        alpha,
        falloff,
        dx,
        dy,
        clamped,
    })
}

#[derive(Debug, Clone)]
pub struct RasterOutput<R> {
    pub image: ImageBuffer,
    pub final_transmittance: Vec<R>,
    /// Per pixel: one past the span position of the last blended splat.
    pub n_contrib: Vec<u32>,
}

struct TileResult<R> {
    rgb: Vec<[R; 3]>,
    t: Vec<R>,
    n: Vec<u32>,
}

/// Front-to-back alpha blending, one parallel task per tile.
pub fn rasterize<R: Real>(
    binned: &BinnedSplats,
    splats: &[Splat2D<R>],
    background: [f64; 3],
    width: usize,
    height: usize,
) -> RasterOutput<R> {
    let tiles_x = binned.index.tiles_x;
    let num_tiles = binned.index.tiles_x * binned.index.tiles_y;
    let bg = background.map(R::from_f64);
    let t_stop = R::from_f64(TRANSMITTANCE_STOP);

    let tiles: Vec<TileResult<R>> = (0..num_tiles)
        .into_par_iter()
        .map(|tile| {
            let refs = binned.tile_refs(tile);
            let x0 = (tile % tiles_x) * TILE_SIZE;
            let y0 = (tile / tiles_x) * TILE_SIZE;
            let x1 = (x0 + TILE_SIZE).min(width);
            let y1 = (y0 + TILE_SIZE).min(height);
            let npx = (x1 - x0) * (y1 - y0);
            let mut out = TileResult {
                rgb: Vec::with_capacity(npx),
                t: Vec::with_capacity(npx),
                n: Vec::with_capacity(npx),
            };
            let half = R::from_f64(0.5);
            for y in y0..y1 {
                for x in x0..x1 {
                    let px = R::from_f64(x as f64) + half;
                    let py = R::from_f64(y as f64) + half;
                    let mut t = R::one();
                    let mut c = [R::zero(); 3];
                    let mut last = 0u32;
                    for (k, &si) in refs.iter().enumerate() {
                        let s = &splats[si as usize];
                        let Some(w) = blend_weight(s, px, py) else {
                            continue;
                        };
                        let next_t = t * (R::one() - w.alpha);
                        if next_t < t_stop {
                            break;
                        }
                        let weight = w.alpha * t;
                        for ch in 0..3 {
                            c[ch] = c[ch] + s.color[ch] * weight;
                        }
                        t = next_t;
                        last = k as u32 + 1;
                    }
                    for ch in 0..3 {
                        c[ch] = c[ch] + t * bg[ch];
                    }
                    out.rgb.push(c);
                    out.t.push(t);
                    out.n.push(last);
                }
            }
            out
        })
        .collect();

    let mut image = ImageBuffer::new(width, height);
    let mut final_transmittance = vec![R::one(); width * height];
    let mut n_contrib = vec![0u32; width * height];
    for (tile, res) in tiles.into_iter().enumerate() {
        let x0 = (tile % tiles_x) * TILE_SIZE;
        let y0 = (tile / tiles_x) * TILE_SIZE;
        let x1 = (x0 + TILE_SIZE).min(width);
        let mut i = 0;
        for y in y0..(y0 + TILE_SIZE).min(height) {
            for x in x0..x1 {
                let c = res.rgb[i];
                image.set_pixel(x, y, [c[0].to_f64(), c[1].to_f64(), c[2].to_f64()]);
                final_transmittance[y * width + x] = res.t[i];
                n_contrib[y * width + x] = res.n[i];
                i += 1;
            }
        }
    }
    RasterOutput {
        image,
        final_transmittance,
        n_contrib,
    }
}
