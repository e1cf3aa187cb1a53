//! Fitting Gaussians to posed images: loss, metrics, Adam and the training loop.
//!
//! The camera model only enters through [`render`]; every other line of the
//! loop is shared by all models.

mod adam;
mod metrics;
mod synthetic;

pub use adam::{adam_step, AdamState, LearningRates, ADAM_BETA1, ADAM_BETA2, ADAM_EPS, PARAMS_PER_GAUSSIAN};
pub use metrics::{gaussian_window, loss, psnr, ssim, ssim_with_grad, PSNR_CAP, SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW};
pub use synthetic::{make_synthetic, SyntheticSpec, ANCHOR_ANGLE, CAMERA_CLEARANCE, RING_RADIUS};

use crate::cameras::Camera;
use crate::gradients::{backward, GradientBuffer};
use crate::model::{ImageBuffer, Scene};
use crate::oracle::OracleError;
use crate::splatting::{render, Precision, Real, RenderError};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error("image sizes differ: {left:?} vs {right:?}")]
    ShapeMismatch { left: (usize, usize), right: (usize, usize) },
    #[error("non-finite gradient for gaussian {index}")]
    NonFiniteGradient { index: usize },
    #[error("loss diverged at iteration {iteration}")]
    Diverged { iteration: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// Every `HOLDOUT_STRIDE`-th view, starting with the first, is held out for testing.
pub const HOLDOUT_STRIDE: usize = 8;

/// One posed target image.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub camera: Camera,
    pub image: ImageBuffer,
    /// Per-pixel coverage of the target, when known.
    pub alpha: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub views: Vec<View>,
    /// Background the target images were composited over.
    pub background: [f64; 3],
}

impl Dataset {
    pub fn is_test(index: usize) -> bool {
        index.is_multiple_of(HOLDOUT_STRIDE)
    }

    pub fn train_indices(&self) -> Vec<usize> {
        let train: Vec<usize> = (0..self.views.len()).filter(|&i| !Self::is_test(i)).collect();
        // a single view is used for both training and testing
        if train.is_empty() {
            (0..self.views.len()).collect()
        } else {
            train
        }
    }

    pub fn test_indices(&self) -> Vec<usize> {
        (0..self.views.len()).filter(|&i| Self::is_test(i)).collect()
    }

    /// 1.1 × the largest distance of a camera centre from the mean centre.
    pub fn camera_extent(&self) -> f64 {
        if self.views.is_empty() {
            return 1.0;
        }
        let centres: Vec<_> = self.views.iter().map(|v| v.camera.center()).collect();
        let mean = centres.iter().fold(nalgebra::Vector3::zeros(), |a, c| a + c) / centres.len() as f64;
        let r = centres.iter().map(|c| (c - mean).norm()).fold(0.0, f64::max);
        if r > 0.0 {
            1.1 * r
        } else {
            1.0
        }
    }

    fn validate(&self) -> Result<(), OptimizeError> {
        if self.views.is_empty() {
            return Err(OptimizeError::InvalidConfig("dataset has no views".into()));
        }
        for (i, v) in self.views.iter().enumerate() {
            let (w, h) = (v.camera.width as usize, v.camera.height as usize);
            if v.image.width != w || v.image.height != h || v.image.pixels.len() != w * h * 3 {
                return Err(OptimizeError::InvalidConfig(format!("view {i}: image size differs from camera")));
            }
            if v.alpha.as_ref().is_some_and(|a| a.len() != w * h) {
                return Err(OptimizeError::InvalidConfig(format!("view {i}: alpha size differs from camera")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    /// Initial mean learning rate per unit of camera extent.
    pub mean_lr_init: f64,
    /// Final mean learning rate per unit of camera extent.
    pub mean_lr_final: f64,
    /// Iteration at which the exponential mean decay reaches `mean_lr_final`.
    pub mean_lr_max_steps: usize,
    pub rotation_lr: f64,
    pub log_scale_lr: f64,
    pub opacity_lr: f64,
    pub sh_dc_lr: f64,
    /// Weight of the D-SSIM term.
    pub loss_lambda: f64,
    pub random_background: bool,
    pub seed: u64,
    pub precision: Precision,
    /// Test PSNR is recorded every this many iterations.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            mean_lr_init: 1.6e-4,
            mean_lr_final: 1.6e-6,
            mean_lr_max_steps: 30_000,
            rotation_lr: 1e-3,
            log_scale_lr: 5e-3,
            opacity_lr: 5e-2,
            sh_dc_lr: 2.5e-3,
            loss_lambda: 0.2,
            random_background: false,
            seed: 0,
            precision: Precision::Single,
            eval_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), OptimizeError> {
        if self.iterations == 0 {
            return Err(OptimizeError::InvalidConfig("iterations must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.loss_lambda) {
            return Err(OptimizeError::InvalidConfig("loss_lambda must lie in [0, 1]".into()));
        }
        if self.eval_every == 0 || self.mean_lr_max_steps == 0 {
            return Err(OptimizeError::InvalidConfig("eval_every and mean_lr_max_steps must be positive".into()));
        }
        Ok(())
    }

    /// Learning rates at `iteration` (0-based) for a scene of the given extent.
    pub fn learning_rates(&self, iteration: usize, extent: f64) -> LearningRates {
        let t = (iteration as f64 / self.mean_lr_max_steps as f64).min(1.0);
        let mean = (self.mean_lr_init.ln() * (1.0 - t) + self.mean_lr_final.ln() * t).exp();
        LearningRates {
            mean: mean * extent,
            rotation: self.rotation_lr,
            log_scale: self.log_scale_lr,
            opacity: self.opacity_lr,
            sh_dc: self.sh_dc_lr,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub loss: f64,
    pub test_psnr: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TestMetrics {
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub scene: Scene,
    pub trace: Vec<TraceRecord>,
    pub test: TestMetrics,
}

/// Loss trace as CSV: `iteration,loss,test_psnr` with an empty last field
/// on iterations without evaluation.
pub fn trace_to_csv(trace: &[TraceRecord]) -> String {
    let mut out = String::from("iteration,loss,test_psnr\n");
    for r in trace {
        match r.test_psnr {
            Some(p) => out.push_str(&format!("{},{},{}\n", r.iteration, r.loss, p)),
            None => out.push_str(&format!("{},{},\n", r.iteration, r.loss)),
        }
    }
    out
}

/// Loss of one render against `target` and the parameter gradients.
fn render_and_backward<R: Real>(
    scene: &Scene,
    camera: &Camera,
    target: &ImageBuffer,
    lambda: f64,
) -> Result<(f64, GradientBuffer), OptimizeError> {
    let r = render::<R>(scene, camera)?;
    let (l, d_image) = loss(&r.image, target, lambda)?;
    let grads = backward(scene, camera, &r.context, &d_image)?;
    Ok((l, grads))
}

fn render_with(scene: &Scene, camera: &Camera, precision: Precision) -> Result<ImageBuffer, OptimizeError> {
    Ok(crate::splatting::render_image(scene, camera, precision)?.0)
}

/// Mean PSNR and SSIM over the held-out views, rendered over the dataset background.
pub fn evaluate(scene: &Scene, dataset: &Dataset, precision: Precision) -> Result<TestMetrics, OptimizeError> {
    let mut s = scene.clone();
    s.background = dataset.background;
    let idx = dataset.test_indices();
    let idx = if idx.is_empty() { dataset.train_indices() } else { idx };
    let (mut p, mut q) = (0.0, 0.0);
    for &i in &idx {
        let v = &dataset.views[i];
        let img = render_with(&s, &v.camera, precision)?;
        p += psnr(&img, &v.image)?;
        q += ssim(&img, &v.image)?;
    }
    let n = idx.len() as f64;
    Ok(TestMetrics { psnr: p / n, ssim: q / n })
}

/// Target of `view` composited over `bg` instead of the dataset background.
fn recomposite(view: &View, dataset_bg: [f64; 3], bg: [f64; 3]) -> ImageBuffer {
    let Some(alpha) = &view.alpha else {
        return view.image.clone();
    };
    let mut img = view.image.clone();
    for (i, a) in alpha.iter().enumerate() {
        let t = 1.0 - a;
        for c in 0..3 {
            img.pixels[i * 3 + c] += t * (bg[c] - dataset_bg[c]);
        }
    }
    img
}

/// Optimizes `initial` against the training views of `dataset` with Adam.
pub fn train(initial: &Scene, dataset: &Dataset, config: &TrainConfig) -> Result<TrainResult, OptimizeError> {
    train_with_callback(initial, dataset, config, |_| {})
}

/// As [`train`], calling `on_record` for every trace record as it is produced.
pub fn train_with_callback(
    initial: &Scene,
    dataset: &Dataset,
    config: &TrainConfig,
    mut on_record: impl FnMut(&TraceRecord),
) -> Result<TrainResult, OptimizeError> {
    config.validate()?;
    dataset.validate()?;
    let mut scene = initial.clone();
    scene.background = dataset.background;
    let extent = dataset.camera_extent();
    let mut state = AdamState::new(scene.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let train_idx = dataset.train_indices();
    let mut order: Vec<usize> = Vec::new();
    let mut trace = Vec::with_capacity(config.iterations);

    for it in 0..config.iterations {
        if order.is_empty() {
            order = train_idx.clone();
            order.shuffle(&mut rng);
            order.reverse();
        }
        let view = &dataset.views[order.pop().expect("non-empty epoch")];
        let target = if config.random_background {
            let bg = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
            scene.background = bg;
            recomposite(view, dataset.background, bg)
        } else {
            view.image.clone()
        };
        let (l, grads) = match config.precision {
            Precision::Single => render_and_backward::<f32>(&scene, &view.camera, &target, config.loss_lambda)?,
            Precision::Double => render_and_backward::<f64>(&scene, &view.camera, &target, config.loss_lambda)?,
        };
        if !l.is_finite() {
            return Err(OptimizeError::Diverged { iteration: it });
        }
        let lr = config.learning_rates(it, extent);
        adam_step(&mut scene, &grads, &mut state, &lr)?;
        scene.background = dataset.background;

        let done = it + 1;
        let test_psnr = if done % config.eval_every == 0 || done == config.iterations {
            Some(evaluate(&scene, dataset, config.precision)?.psnr)
        } else {
            None
        };
        let record = TraceRecord {
            iteration: done,
            loss: l,
            test_psnr,
        };
        on_record(&record);
        trace.push(record);
    }
    let test = evaluate(&scene, dataset, config.precision)?;
    Ok(TrainResult { scene, trace, test })
}
