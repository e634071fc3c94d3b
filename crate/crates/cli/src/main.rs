//! `asap`: fit, render and verify textured 2D Gaussian splat scenes.
//!
//! Exit codes: 0 success, 1 validation or tolerance failure, 2 I/O error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use asap_core::geometry::Camera;
use asap_core::grad::{finite_difference_check, LinearLoss, ParamFilter};
use asap_core::io::{self, CameraEntry, Checkpoint, SceneFile};
use asap_core::loss::{psnr, ssim};
use asap_core::render::render;
use asap_core::texture::{verify_warp_density, Channels, WarpMode};
use asap_core::toy::{self, ToyKind};
use asap_core::train::{train, TrainConfig, View};
use asap_core::Error;

/// KS tolerance for `verify-warp`.
const KS_TOL: f64 = 0.01;
/// Relative-error tolerance for `check-grad`.
const GRAD_TOL: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "asap", version, about = "Textured 2D Gaussian splatting with CDF-warped, adaptively grown textures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a scene against its target images.
    Fit {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Skip writing rendered PNGs at evaluation steps.
        #[arg(long)]
        no_images: bool,
    },
    /// Render one camera of a checkpoint to a PNG.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        view: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Report PSNR/SSIM per view and model size.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Scene file providing cameras and targets.
        #[arg(long)]
        scene: PathBuf,
    },
    /// Compare analytic gradients with central differences.
    CheckGrad {
        #[arg(long)]
        scene: PathBuf,
        /// Defaults to the scene's warp mode.
        #[arg(long)]
        mode: Option<WarpMode>,
        #[arg(long, default_value_t = 1e-5)]
        h: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        view: usize,
    },
    /// Kolmogorov-Smirnov check that a warp maps Gaussian samples to uniform.
    VerifyWarp {
        #[arg(long)]
        mode: WarpMode,
        #[arg(long, default_value_t = 100_000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write synthetic targets and a matching initial scene.
    MakeToy {
        #[arg(long)]
        kind: ToyKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 128)]
        size: usize,
        #[arg(long, default_value_t = 200)]
        splats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Give every splat a neutral texture of this size, e.g. `4x4`.
        #[arg(long, value_parser = parse_dims)]
        texture: Option<(usize, usize)>,
        #[arg(long, default_value = "rgb")]
        channels: Channels,
        /// For `photo`: crop the target from this PNG instead of generating it.
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long, default_value = "axis")]
        warp_mode: WarpMode,
    },
}

fn parse_dims(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once('x').ok_or_else(|| format!("expected TUxTV, got `{s}`"))?;
    Ok((a.parse().map_err(|e| format!("{e}"))?, b.parse().map_err(|e| format!("{e}"))?))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(1);
    }
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let io = e.chain().any(|c| {
                c.downcast_ref::<std::io::Error>().is_some() || c.downcast_ref::<Error>().is_some_and(Error::is_io)
            });
            ExitCode::from(if io { 2 } else { 1 })
        }
    }
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("ASAP_THREADS") {
        let n: usize = v.parse().with_context(|| format!("ASAP_THREADS={v:?} is not a positive integer"))?;
        if n == 0 {
            bail!("ASAP_THREADS must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn pass(ok: bool) -> ExitCode {
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Fit { scene, config, out, no_images } => fit(&scene, config.as_deref(), &out, no_images),
        Command::Render { checkpoint, view, out } => {
            let ck = io::load_checkpoint(&checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
            let cam = camera_at(&ck.scene, view)?;
            let img = render(&ck.scene.scene()?, &cam, ck.scene.warp_mode, [0.0; 3], false).image;
            io::write_png(&out, &img)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval { checkpoint, scene } => {
            let ck = io::load_checkpoint(&checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
            let file = io::load_scene_file(&scene).with_context(|| format!("loading {}", scene.display()))?;
            let views = file.views(base_dir(&scene))?;
            let model = ck.scene.scene()?;
            for (k, v) in views.iter().enumerate() {
                let img = render(&model, &v.camera, ck.scene.warp_mode, [0.0; 3], false).image;
                println!("view {k}: psnr={} ssim={}", psnr(&img, &v.target)?, ssim(&img, &v.target)?);
            }
            let params = model.parameter_count();
            println!("splats={}", model.len());
            println!("active_textures={}", model.active_textures());
            println!("texels={}", model.texel_count());
            println!("parameters={params}");
            println!("memory_mb={}", 4.0 * params as f64 / (1024.0 * 1024.0));
            Ok(ExitCode::SUCCESS)
        }
        Command::CheckGrad { scene, mode, h, seed, view } => {
            if !(1e-6..=1e-3).contains(&h) {
                bail!("h must lie in [1e-6, 1e-3]");
            }
            let file = io::load_scene_file(&scene).with_context(|| format!("loading {}", scene.display()))?;
            let mode = mode.unwrap_or(file.warp_mode);
            let cam = camera_at(&file, view)?;
            let loss = LinearLoss::random(cam.width, cam.height, seed);
            let report = finite_difference_check(&file.scene()?, &cam, mode, [0.1, 0.2, 0.3], &loss, h, ParamFilter::All)?;
            println!("max_relative_error={}", report.max_relative_error);
            println!("checked={} skipped={}", report.checked, report.skipped);
            if let Some(w) = report.worst {
                println!("worst: splat {} param {} analytic {} numeric {}", w.splat, w.param, w.analytic, w.numeric);
            }
            Ok(pass(report.max_relative_error < GRAD_TOL))
        }
        Command::VerifyWarp { mode, n, seed } => {
            let ks = verify_warp_density(mode, n, seed)?;
            println!("ks={ks}");
            Ok(pass(ks < KS_TOL))
        }
        Command::MakeToy { kind, out, size, splats, seed, texture, channels, image, warp_mode } => {
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let views = match (kind, image) {
                (ToyKind::Photo, Some(path)) => {
                    let target = crop(&io::read_png(&path)?, size)?;
                    vec![View { camera: Camera::planar(size, size), target }]
                }
                (_, Some(_)) => bail!("--image only applies to --kind photo"),
                (k, None) => toy::toy_views(k, size, size, seed),
            };
            let scene = toy::init_scene(&views[0].target, splats, seed, texture.map(|d| (d, channels)))?;
            let mut cams = Vec::with_capacity(views.len());
            for (k, v) in views.iter().enumerate() {
                let name = if views.len() == 1 { "target.png".to_string() } else { format!("target_{k}.png") };
                io::write_png(&out.join(&name), &v.target)?;
                cams.push(CameraEntry::from_camera(&v.camera, Some(name)));
            }
            io::save_json(&out.join("scene.json"), &SceneFile::from_scene(&scene, &cams, warp_mode))?;
            println!("wrote {} ({} splats, {} views, {kind})", out.join("scene.json").display(), scene.len(), cams.len());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn base_dir(path: &Path) -> &Path {
    path.parent().unwrap_or(Path::new("."))
}

fn camera_at(file: &SceneFile, view: usize) -> anyhow::Result<Camera> {
    let entry = file.cameras.get(view).with_context(|| format!("view {view} out of range ({} cameras)", file.cameras.len()))?;
    Ok(entry.camera()?)
}

/// Centered `size x size` crop.
fn crop(img: &asap_core::Image, size: usize) -> anyhow::Result<asap_core::Image> {
    if img.width < size || img.height < size {
        bail!("image is {}x{}, smaller than the {size}x{size} crop", img.width, img.height);
    }
    let (x0, y0) = ((img.width - size) / 2, (img.height - size) / 2);
    Ok(asap_core::Image::from_fn(size, size, |x, y| img.pixel(x0 + x, y0 + y)))
}

fn fit(scene_path: &Path, config_path: Option<&Path>, out: &Path, no_images: bool) -> anyhow::Result<ExitCode> {
    let file = io::load_scene_file(scene_path).with_context(|| format!("loading {}", scene_path.display()))?;
    let config: TrainConfig = match config_path {
        Some(p) => serde_json::from_reader(std::fs::File::open(p).with_context(|| format!("opening {}", p.display()))?)
            .map_err(Error::from)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => TrainConfig::default(),
    };
    if config.warp_mode != file.warp_mode {
        log::warn!("config warp mode {} overrides scene warp mode {}", config.warp_mode, file.warp_mode);
    }
    let views = file.views(base_dir(scene_path))?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    io::save_json(&out.join("config.json"), &config)?;

    let cameras = file.cameras.clone();
    let mut rows = Vec::new();
    let outcome = train(file.scene()?, &views, &config, |state, row| {
        rows.push(*row);
        io::write_atomic(&out.join("metrics.csv"), io::metrics_csv(&rows).as_bytes())?;
        let ck = Checkpoint {
            scene: SceneFile::from_scene(&state.scene, &cameras, config.warp_mode),
            step: state.step,
            seed: config.seed,
            optimizer: state.optimizer.clone(),
            ledger: state.ledger.clone(),
        };
        io::save_json(&out.join("checkpoint.json"), &ck)?;
        if !no_images {
            for (k, v) in views.iter().enumerate() {
                let img = render(&state.scene, &v.camera, config.warp_mode, config.background, false).image;
                io::write_png(&out.join(format!("render_step{:06}_view{k}.png", state.step)), &img)?;
            }
        }
        Ok(())
    })?;
    io::write_growth_events(&out.join("growth_events.csv"), &outcome.events)?;
    let last = outcome.metrics.last().expect("at least one metrics row");
    println!(
        "step={} loss={} psnr={} texels={} active_textures={} growth_events={}",
        last.step, last.loss, last.psnr, last.texel_count, last.active_textures, last.growth_events
    );
    Ok(ExitCode::SUCCESS)
}
