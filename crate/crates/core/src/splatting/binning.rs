use super::{Real, Splat2D};
use rayon::prelude::*;
use std::time::Instant;

pub const TILE_SIZE: usize = 16;

/// Per-tile spans into the sorted reference list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileIndex {
    pub tiles_x: usize,
    pub tiles_y: usize,
    /// `[start, end)` for each tile, row-major.
    pub ranges: Vec<(u32, u32)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinnedSplats {
    pub index: TileIndex,
    /// Splat indices sorted by `(tile, depth)`, ties by splat order.
    pub refs: Vec<u32>,
    pub num_intersections: usize,
}

impl BinnedSplats {
    pub fn tile_refs(&self, tile: usize) -> &[u32] {
        let (s, e) = self.index.ranges[tile];
        &self.refs[s as usize..e as usize]
    }
}

/// Tiles `[x0, x1) × [y0, y1)` overlapped by the box `mean ± radius`.
pub fn tile_rect(mean_px: [f64; 2], radius: u32, tiles_x: usize, tiles_y: usize) -> (usize, usize, usize, usize) {
    let r = radius as f64;
    let ts = TILE_SIZE as f64;
    let lo = |v: f64, max: usize| ((v / ts).floor().max(0.0) as usize).min(max);
    let hi = |v: f64, max: usize| (((v / ts).floor() + 1.0).max(0.0) as usize).min(max);
    (
        lo(mean_px[0] - r, tiles_x),
        lo(mean_px[1] - r, tiles_y),
        hi(mean_px[0] + r, tiles_x),
        hi(mean_px[1] + r, tiles_y),
    )
}

/// Stable LSD radix sort of `(key, value)` pairs, 8 bits per pass. Passes
/// over digits that are identical for every key are skipped.
pub fn radix_sort_pairs(keys: &mut Vec<u128>, values: &mut Vec<u32>) {
    assert_eq!(keys.len(), values.len());
    let n = keys.len();
    if n < 2 {
        return;
    }
    let varying = keys.iter().fold(0u128, |acc, k| acc | (k ^ keys[0]));
    let mut key_buf = vec![0u128; n];
    let mut val_buf = vec![0u32; n];
    for pass in 0..16 {
        let shift = pass * 8;
        if (varying >> shift) & 0xff == 0 {
            continue;
        }
        let mut offsets = [0usize; 256];
        for k in keys.iter() {
            offsets[((k >> shift) & 0xff) as usize] += 1;
        }
        let mut sum = 0;
        for o in offsets.iter_mut() {
            let c = *o;
            *o = sum;
            sum += c;
        }
        for (k, v) in keys.iter().zip(values.iter()) {
            let d = ((k >> shift) & 0xff) as usize;
            key_buf[offsets[d]] = *k;
            val_buf[offsets[d]] = *v;
            offsets[d] += 1;
        }
        std::mem::swap(keys, &mut key_buf);
        std::mem::swap(values, &mut val_buf);
    }
}

/// Duplicates each splat once per overlapped tile and sorts by `(tile, depth)`.
pub fn bin_and_sort<R: Real>(splats: &[Splat2D<R>], width: usize, height: usize) -> BinnedSplats {
    bin_and_sort_timed(splats, width, height).0
}

pub(super) fn bin_and_sort_timed<R: Real>(splats: &[Splat2D<R>], width: usize, height: usize) -> (BinnedSplats, f64, f64) {
    let t0 = Instant::now();
    let tiles_x = width.div_ceil(TILE_SIZE);
    let tiles_y = height.div_ceil(TILE_SIZE);
    let rects: Vec<_> = splats
        .par_iter()
        .map(|s| tile_rect([s.mean_px[0].to_f64(), s.mean_px[1].to_f64()], s.radius_px, tiles_x, tiles_y))
        .collect();
    let mut offsets = Vec::with_capacity(splats.len() + 1);
    let mut total = 0usize;
    offsets.push(0);
    for &(x0, y0, x1, y1) in &rects {
        total += x1.saturating_sub(x0) * y1.saturating_sub(y0);
        offsets.push(total);
    }
    let mut keys = vec![0u128; total];
    let mut values = vec![0u32; total];
    {
        // each splat writes into its own disjoint slice
        let mut key_chunks = Vec::with_capacity(splats.len());
        let mut val_chunks = Vec::with_capacity(splats.len());
        let (mut krest, mut vrest) = (keys.as_mut_slice(), values.as_mut_slice());
        for i in 0..splats.len() {
            let len = offsets[i + 1] - offsets[i];
            let (k, kr) = krest.split_at_mut(len);
            let (v, vr) = vrest.split_at_mut(len);
            key_chunks.push(k);
            val_chunks.push(v);
            krest = kr;
            vrest = vr;
        }
        key_chunks
            .into_par_iter()
            .zip(val_chunks)
            .enumerate()
            .for_each(|(i, (kc, vc))| {
                let (x0, y0, x1, y1) = rects[i];
                let depth_bits = splats[i].depth.to_bits() as u128;
                let mut j = 0;
                for ty in y0..y1 {
                    for tx in x0..x1 {
                        let tile = (ty * tiles_x + tx) as u128;
                        kc[j] = (tile << 64) | depth_bits;
                        vc[j] = i as u32;
                        j += 1;
                    }
                }
            });
    }
    let binning_ms = t0.elapsed().as_secs_f64() * 1e3;

    let t0 = Instant::now();
    radix_sort_pairs(&mut keys, &mut values);
    let mut ranges = vec![(0u32, 0u32); tiles_x * tiles_y];
    let mut start = 0usize;
    while start < keys.len() {
        let tile = (keys[start] >> 64) as usize;
        let mut end = start + 1;
        while end < keys.len() && (keys[end] >> 64) as usize == tile {
            end += 1;
        }
        ranges[tile] = (start as u32, end as u32);
        start = end;
    }
    let sort_ms = t0.elapsed().as_secs_f64() * 1e3;

    (
        BinnedSplats {
            index: TileIndex {
                tiles_x,
                tiles_y,
                ranges,
            },
            refs: values,
            num_intersections: total,
        },
        binning_ms,
        sort_ms,
    )
}
