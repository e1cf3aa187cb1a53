//! Forward rendering: geometry preprocessing, tile binning, sorting and
//! alpha-blended rasterization.
//!
//! Only [`preprocess`] knows about cameras. [`bin_and_sort`] and
//! [`rasterize`] consume [`Splat2D`]s and image dimensions and are shared
//! verbatim by every camera model.

mod binning;
mod preprocess;
mod raster;

pub use binning::{bin_and_sort, radix_sort_pairs, tile_rect, BinnedSplats, TileIndex, TILE_SIZE};
pub use preprocess::{preprocess, Preprocessed, SplatGeometry, COVARIANCE_DILATION};
pub use raster::{
    blend_weight, rasterize, BlendWeight, RasterOutput, ALPHA_CLAMP, ALPHA_SKIP, POWER_CUTOFF, TRANSMITTANCE_STOP,
};

use crate::cameras::{Camera, CameraError, CameraModel};
use crate::model::{ImageBuffer, ModelError, Scene};
use serde::{Deserialize, Serialize};
use std::fmt::Debug;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error("gaussian {index}: {source}")]
    Gaussian { index: usize, source: ModelError },
    #[error("forward context does not match: {0}")]
    ContextMismatch(String),
}

/// Scalar type of the rasterization stages.
pub trait Real: num_traits::Float + Send + Sync + Debug + Default + 'static {
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}

/// Precision of the rasterization and its backward pass. Projection and
/// the parameter chain rule always run in double precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    Single,
    Double,
}

/// A Gaussian projected to the image plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat2D<R> {
    pub mean_px: [R; 2],
    /// Upper triangle `(a, b, c)` of the inverse 2D covariance.
    pub conic: [R; 3],
    /// Sort key: `z_c` for pinhole, `‖μ_c‖` for the other models.
    pub depth: f64,
    pub radius_px: u32,
    pub color: [R; 3],
    pub alpha_max: R,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RenderStats {
    pub num_gaussians: usize,
    pub num_visible: usize,
    pub num_culled: usize,
    /// Splats dropped because the projected covariance was not invertible.
    pub num_degenerate: usize,
    pub num_intersections: usize,
    pub preprocess_ms: f64,
    pub binning_ms: f64,
    pub sort_ms: f64,
    pub raster_ms: f64,
    pub peak_aux_bytes: usize,
}

impl RenderStats {
    pub fn total_ms(&self) -> f64 {
        self.preprocess_ms + self.binning_ms + self.sort_ms + self.raster_ms
    }
}

/// Everything the backward pass needs from a forward render.
#[derive(Debug, Clone)]
pub struct ForwardContext<R> {
    pub model: CameraModel,
    pub num_gaussians: usize,
    pub width: usize,
    pub height: usize,
    pub background: [f64; 3],
    pub pre: Preprocessed<R>,
    pub binned: BinnedSplats,
    pub final_transmittance: Vec<R>,
    pub n_contrib: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct Rendered<R> {
    pub image: ImageBuffer,
    pub stats: RenderStats,
    pub context: ForwardContext<R>,
}

fn elapsed_ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Renders `scene` through `camera`. Deterministic regardless of thread count.
pub fn render<R: Real>(scene: &Scene, camera: &Camera) -> Result<Rendered<R>, RenderError> {
    camera.validate()?;
    let (width, height) = (camera.width as usize, camera.height as usize);

    let t0 = Instant::now();
    let pre = preprocess::<R>(scene, camera)?;
    let preprocess_ms = elapsed_ms(t0);

    let (binned, binning_ms, sort_ms) = binning::bin_and_sort_timed(&pre.splats, width, height);

    let t0 = Instant::now();
    let raster = rasterize(&binned, &pre.splats, scene.background, width, height);
    let raster_ms = elapsed_ms(t0);

    let peak_aux_bytes = pre.splats.len() * std::mem::size_of::<Splat2D<R>>()
        + pre.geometry.len() * std::mem::size_of::<SplatGeometry>()
        + binned.num_intersections * (std::mem::size_of::<u128>() + std::mem::size_of::<u32>()) * 2
        + binned.index.ranges.len() * std::mem::size_of::<(u32, u32)>()
        + width * height * (std::mem::size_of::<R>() + std::mem::size_of::<u32>());

    let stats = RenderStats {
        num_gaussians: scene.len(),
        num_visible: pre.splats.len(),
        num_culled: pre.num_culled,
        num_degenerate: pre.num_degenerate,
        num_intersections: binned.num_intersections,
        preprocess_ms,
        binning_ms,
        sort_ms,
        raster_ms,
        peak_aux_bytes,
    };
    Ok(Rendered {
        image: raster.image,
        stats,
        context: ForwardContext {
            model: camera.model,
            num_gaussians: scene.len(),
            width,
            height,
            background: scene.background,
            pre,
            binned,
            final_transmittance: raster.final_transmittance,
            n_contrib: raster.n_contrib,
        },
    })
}

/// Renders with the requested precision and returns only image and stats.
pub fn render_image(scene: &Scene, camera: &Camera, precision: Precision) -> Result<(ImageBuffer, RenderStats), RenderError> {
    match precision {
        Precision::Single => render::<f32>(scene, camera).map(|r| (r.image, r.stats)),
        Precision::Double => render::<f64>(scene, camera).map(|r| (r.image, r.stats)),
    }
}
