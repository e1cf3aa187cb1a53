//! Command-line front end.
//!
//! Exit status is 0 on success, 1 on operational failure (including a failed
//! gradient check) and 2 on bad usage. Records go to stdout as JSON lines;
//! diagnostics go to stderr.

use crate::cameras::{Camera, CameraModel};
use crate::gradients::JacobianFault;
use crate::io::{load_cameras, load_dataset, load_ply, save_cameras, save_dataset, save_ply, write_image};
use crate::optimize::{make_synthetic, trace_to_csv, train_with_callback, SyntheticSpec, TrainConfig};
use crate::oracle::{gradcheck, gradcheck_camera, gradcheck_scene, FDConfig, GradcheckConfig, LossSpec};
use crate::splatting::{render_image, Precision};
use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "OMNISPLAT_THREADS";
/// Ground-truth scene written next to a synthetic dataset.
pub const GROUND_TRUTH_FILE: &str = "ground_truth.ply";

#[derive(Debug, Parser)]
#[command(name = "omnisplat", version, about = "Differentiable Gaussian splatting for pinhole, fisheye and panorama cameras")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModelArg {
    Pinhole,
    #[value(name = "fisheye_equidistant", alias = "fisheye")]
    FisheyeEquidistant,
    #[value(alias = "equirectangular")]
    Panorama,
}

impl From<ModelArg> for CameraModel {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Pinhole => CameraModel::Pinhole,
            ModelArg::FisheyeEquidistant => CameraModel::FisheyeEquidistant,
            ModelArg::Panorama => CameraModel::Panorama,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PrecisionArg {
    Single,
    Double,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::Single => Precision::Single,
            PrecisionArg::Double => Precision::Double,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    /// Ground truth from `synth`, perturbed by `init_noise`.
    Synthetic,
    /// The scene given by `--init-scene`.
    Ply,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a scene through every camera of a camera file.
    Render {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        cameras: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Replace every camera's projection model.
        #[arg(long, value_enum)]
        model_override: Option<ModelArg>,
        /// Background colour `r,g,b` in [0, 1].
        #[arg(long, value_parser = parse_rgb)]
        bg: Option<Rgb>,
        #[arg(long, value_enum, default_value = "single")]
        precision: PrecisionArg,
        /// Image extension, png or ppm.
        #[arg(long, default_value = "png")]
        format: String,
    },
    /// Optimize a scene against a dataset directory.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum)]
        init: InitArg,
        #[arg(long)]
        init_scene: Option<PathBuf>,
        /// JSON training configuration; missing fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Loss trace CSV (defaults to the output path with a `.csv` extension).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Compare analytic gradients against finite differences.
    Gradcheck {
        /// Check a single model instead of all three.
        #[arg(long, value_enum)]
        model: Option<ModelArg>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        scene_size: usize,
        /// Image width and height.
        #[arg(long, default_value_t = 32)]
        size: u32,
        #[arg(long, default_value_t = FDConfig::END_TO_END.tolerance)]
        tolerance: f64,
        /// Scale ∂J/∂(x, y, z)_c[axis] by `fault_factor` in the backward pass.
        #[arg(long, hide = true)]
        fault_axis: Option<usize>,
        #[arg(long, hide = true, default_value_t = 1.1)]
        fault_factor: f64,
    },
    /// Time repeated renders and report per-frame counters.
    Bench {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        cameras: PathBuf,
        #[arg(long, default_value_t = 10)]
        repeat: usize,
        #[arg(long, value_enum)]
        model_override: Option<ModelArg>,
        #[arg(long, value_enum, default_value = "single")]
        precision: PrecisionArg,
    },
    /// Write a synthetic dataset and its ground-truth scene.
    Synth {
        /// JSON scene specification; missing fields take defaults.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy)]
pub struct Rgb(pub [f64; 3]);

fn parse_rgb(s: &str) -> Result<Rgb, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}")))
        .collect::<Result<_, _>>()?;
    match v.as_slice() {
        [r, g, b] => Ok(Rgb([*r, *g, *b])),
        _ => Err("expected three comma-separated values".into()),
    }
}

type CliResult<T> = Result<T, Box<dyn std::error::Error>>;

/// Training configuration file: [`TrainConfig`] plus initialization noise.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainFile {
    #[serde(flatten)]
    pub train: TrainConfig,
    /// Standard deviation of the noise added to synthetic-init means, relative to the scene extent.
    #[serde(default = "default_init_noise")]
    pub init_noise: f64,
}

fn default_init_noise() -> f64 {
    0.05
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?)
}

/// Writes one stdout line; a closed pipe is not an error.
fn emit_line(line: &str) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout().lock(), "{line}");
}

fn emit<T: Serialize>(record: &T) {
    emit_line(&serde_json::to_string(record).expect("records serialize"));
}

#[derive(Serialize)]
struct FrameRecord<'a> {
    command: &'a str,
    frame: usize,
    model: CameraModel,
    image: String,
    #[serde(flatten)]
    stats: crate::splatting::RenderStats,
}

fn cameras_with_override(path: &Path, model: Option<ModelArg>) -> CliResult<Vec<Camera>> {
    let cams = load_cameras(path)?;
    Ok(match model {
        Some(m) => cams.iter().map(|c| c.with_model(m.into())).collect(),
        None => cams,
    })
}

fn cmd_render(
    scene: &Path,
    cameras: &Path,
    out: &Path,
    model: Option<ModelArg>,
    bg: Option<Rgb>,
    precision: Precision,
    format: &str,
) -> CliResult<()> {
    let mut scene = load_ply(scene)?;
    if let Some(Rgb(bg)) = bg {
        scene.background = bg;
    }
    let cams = cameras_with_override(cameras, model)?;
    std::fs::create_dir_all(out).map_err(|e| format!("{}: {e}", out.display()))?;
    for (i, cam) in cams.iter().enumerate() {
        let (img, stats) = render_image(&scene, cam, precision)?;
        let path = out.join(format!("frame_{i:03}.{format}"));
        write_image(&img, &path)?;
        emit(&FrameRecord {
            command: "render",
            frame: i,
            model: cam.model,
            image: path.display().to_string(),
            stats,
        });
    }
    Ok(())
}

fn perturb(scene: &mut crate::model::Scene, sigma: f64, seed: u64) -> CliResult<()> {
    if sigma == 0.0 {
        return Ok(());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| format!("init_noise: {e}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for g in &mut scene.gaussians {
        for k in 0..3 {
            g.mean[k] += normal.sample(&mut rng);
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    command: &'static str,
    iterations: usize,
    final_loss: f64,
    test_psnr: f64,
    test_ssim: f64,
    seconds: f64,
}

fn cmd_train(
    dataset_dir: &Path,
    init: InitArg,
    init_scene: Option<&Path>,
    config: Option<&Path>,
    out: &Path,
    trace: Option<&Path>,
) -> CliResult<()> {
    let file: TrainFile = match config {
        Some(p) => read_json(p)?,
        None => TrainFile {
            train: TrainConfig::default(),
            init_noise: default_init_noise(),
        },
    };
    let dataset = load_dataset(dataset_dir)?;
    let initial = match (init, init_scene) {
        (InitArg::Ply, Some(p)) => load_ply(p)?,
        (InitArg::Ply, None) => return Err("--init ply requires --init-scene".into()),
        (InitArg::Synthetic, _) => {
            let gt = dataset_dir.join(GROUND_TRUTH_FILE);
            if !gt.exists() {
                return Err(format!("--init synthetic requires {} (written by `synth`)", gt.display()).into());
            }
            let mut scene = load_ply(&gt)?;
            let sigma = file.init_noise * scene.extent();
            perturb(&mut scene, sigma, file.train.seed)?;
            scene
        }
    };
    let t0 = Instant::now();
    let result = train_with_callback(&initial, &dataset, &file.train, |r| {
        if let Some(p) = r.test_psnr {
            log::info!("iteration {}: loss {:.6}, test PSNR {:.2} dB", r.iteration, r.loss, p);
        }
    })?;
    save_ply(&result.scene, out)?;
    let trace_path = trace.map(Path::to_path_buf).unwrap_or_else(|| out.with_extension("csv"));
    std::fs::write(&trace_path, trace_to_csv(&result.trace)).map_err(|e| format!("{}: {e}", trace_path.display()))?;
    emit(&TrainSummary {
        command: "train",
        iterations: result.trace.len(),
        final_loss: result.trace.last().map_or(f64::NAN, |r| r.loss),
        test_psnr: result.test.psnr,
        test_ssim: result.test.ssim,
        seconds: t0.elapsed().as_secs_f64(),
    });
    Ok(())
}

/// Returns whether every group of every model passed.
fn cmd_gradcheck(
    model: Option<ModelArg>,
    seed: u64,
    scene_size: usize,
    size: u32,
    tolerance: f64,
    fault: Option<JacobianFault>,
) -> CliResult<bool> {
    let models: Vec<CameraModel> = match model {
        Some(m) => vec![m.into()],
        None => CameraModel::ALL.to_vec(),
    };
    let config = GradcheckConfig {
        fd: FDConfig::new(FDConfig::END_TO_END.step, tolerance)?,
        fault,
        ..Default::default()
    };
    let mut all = true;
    for m in models {
        let scene = gradcheck_scene(m, scene_size, seed);
        let report = gradcheck(&scene, &gradcheck_camera(m, size), &LossSpec::SquaredSum, &config)?;
        report.to_json_lines().lines().for_each(emit_line);
        all &= report.pass();
    }
    Ok(all)
}

#[derive(Serialize)]
struct BenchRecord {
    command: &'static str,
    frame: usize,
    model: CameraModel,
    repeat: usize,
    fps: f64,
    mean_frame_ms: f64,
    max_frame_ms: f64,
    num_visible: usize,
    num_intersections: usize,
    peak_aux_bytes: usize,
}

fn cmd_bench(scene: &Path, cameras: &Path, repeat: usize, model: Option<ModelArg>, precision: Precision) -> CliResult<()> {
    if repeat == 0 {
        return Err("--repeat must be positive".into());
    }
    let scene = load_ply(scene)?;
    let cams = cameras_with_override(cameras, model)?;
    for (i, cam) in cams.iter().enumerate() {
        let mut times = Vec::with_capacity(repeat);
        let mut last = None;
        for _ in 0..repeat {
            let t0 = Instant::now();
            let (_, stats) = render_image(&scene, cam, precision)?;
            times.push(t0.elapsed().as_secs_f64() * 1e3);
            if let Some(prev) = &last {
                let prev: &crate::splatting::RenderStats = prev;
                if prev.num_intersections != stats.num_intersections {
                    return Err(format!("frame {i}: intersection count changed between repeats").into());
                }
            }
            last = Some(stats);
        }
        let stats = last.expect("repeat > 0");
        let mean = times.iter().sum::<f64>() / repeat as f64;
        emit(&BenchRecord {
            command: "bench",
            frame: i,
            model: cam.model,
            repeat,
            fps: 1e3 / mean,
            mean_frame_ms: mean,
            max_frame_ms: times.iter().copied().fold(0.0, f64::max),
            num_visible: stats.num_visible,
            num_intersections: stats.num_intersections,
            peak_aux_bytes: stats.peak_aux_bytes,
        });
    }
    Ok(())
}

#[derive(Serialize)]
struct SynthRecord {
    command: &'static str,
    out: String,
    n_gaussians: usize,
    n_views: usize,
    n_test_views: usize,
}

fn cmd_synth(spec: Option<&Path>, out: &Path) -> CliResult<()> {
    let spec: SyntheticSpec = match spec {
        Some(p) => read_json(p)?,
        None => SyntheticSpec::default(),
    };
    let (scene, dataset) = make_synthetic(&spec)?;
    save_dataset(&dataset, out)?;
    save_ply(&scene, &out.join(GROUND_TRUTH_FILE))?;
    let cams: Vec<Camera> = dataset.views.iter().map(|v| v.camera.clone()).collect();
    save_cameras(&cams, &out.join("cameras.json"))?;
    emit(&SynthRecord {
        command: "synth",
        out: out.display().to_string(),
        n_gaussians: scene.len(),
        n_views: dataset.views.len(),
        n_test_views: dataset.test_indices().len(),
    });
    Ok(())
}

fn configure_threads() {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return;
    };
    match v.trim().parse::<usize>() {
        Ok(n) if n > 0 => {
            if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
                log::warn!("{THREADS_ENV}: thread pool already initialized");
            }
        }
        _ => log::warn!("{THREADS_ENV}: ignoring invalid value `{v}`"),
    }
}

fn execute(cli: Cli) -> CliResult<bool> {
    match cli.command {
        Command::Render {
            scene,
            cameras,
            out,
            model_override,
            bg,
            precision,
            format,
        } => cmd_render(&scene, &cameras, &out, model_override, bg, precision.into(), &format).map(|_| true),
        Command::Train {
            dataset,
            init,
            init_scene,
            config,
            out,
            trace,
        } => cmd_train(&dataset, init, init_scene.as_deref(), config.as_deref(), &out, trace.as_deref()).map(|_| true),
        Command::Gradcheck {
            model,
            seed,
            scene_size,
            size,
            tolerance,
            fault_axis,
            fault_factor,
        } => {
            let fault = match fault_axis {
                Some(axis) if axis < 3 => Some(JacobianFault { axis, factor: fault_factor }),
                Some(axis) => return Err(format!("--fault-axis must be 0, 1 or 2, got {axis}").into()),
                None => None,
            };
            cmd_gradcheck(model, seed, scene_size, size, tolerance, fault)
        }
        Command::Bench {
            scene,
            cameras,
            repeat,
            model_override,
            precision,
        } => cmd_bench(&scene, &cameras, repeat, model_override, precision.into()).map(|_| true),
        Command::Synth { spec, out } => cmd_synth(spec.as_deref(), &out).map(|_| true),
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    configure_threads();
    match execute(cli) {
        Ok(true) => 0,
        Ok(false) => {
            eprintln!("error: gradient check failed");
            1
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
