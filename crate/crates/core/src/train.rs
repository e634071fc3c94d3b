//! Training loop: render, loss, backward, Adam, then growth bookkeeping.
//!
//! Steps are numbered from 1. Steps up to `pretrain_steps` only optimize.
//! After that the growth ledger accumulates, and every `n_tex_interval`
//! steps (counted from the end of pretraining) up to `growth_stop_step`
//! the controller may activate or grow textures.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Camera;
use crate::grad::backward;
use crate::growth::{GrowthConfig, GrowthEvent, GrowthLedger};
use crate::loss::{photometric_loss, psnr, ssim};
use crate::optim::{LrTable, SceneOptimizer};
use crate::render::render;
use crate::scene::{Image, Scene};
use crate::texture::{Channels, WarpMode, DEFAULT_T_MAX};

/// Reference threshold values; desk-scale runs multiply them by
/// `threshold_scale`.
pub const TAU_BASE: f64 = 4e-6;
pub const TAU_TEX: f64 = 2e-7;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewOrder {
    #[default]
    RoundRobin,
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda_ssim: f64,
    pub total_steps: u64,
    /// Steps before activation and growth are enabled; defaults to half.
    pub pretrain_steps: Option<u64>,
    pub lr: LrTable,
    pub tau_base: f64,
    pub tau_tex: f64,
    pub threshold_scale: f64,
    pub growth_enabled: bool,
    pub n_tex_interval: u64,
    /// Last growth check, counted from the end of pretraining; defaults to
    /// a quarter of `total_steps`.
    pub growth_stop_step: Option<u64>,
    pub n_max: u32,
    pub t_max: usize,
    pub warp_mode: WarpMode,
    pub channels: Channels,
    pub seed: u64,
    pub eval_every: u64,
    pub view_order: ViewOrder,
    pub background: [f64; 3],
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_ssim: 0.2,
            total_steps: 2000,
            pretrain_steps: None,
            lr: LrTable::default(),
            tau_base: TAU_BASE,
            tau_tex: TAU_TEX,
            threshold_scale: 1.0,
            growth_enabled: true,
            n_tex_interval: 100,
            growth_stop_step: None,
            n_max: 6,
            t_max: DEFAULT_T_MAX,
            warp_mode: WarpMode::Axis,
            channels: Channels::Rgb,
            seed: 0,
            eval_every: 100,
            view_order: ViewOrder::RoundRobin,
            background: [0.0; 3],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(0.0..=1.0).contains(&self.lambda_ssim) {
            return bad("lambda_ssim must lie in [0, 1]");
        }
        if !(self.tau_base > 0.0 && self.tau_tex > 0.0 && self.threshold_scale > 0.0) {
            return bad("thresholds must be positive");
        }
        if self.t_max < 1 || self.n_tex_interval < 1 || self.eval_every < 1 {
            return bad("t_max and intervals must be at least 1");
        }
        if self.pretrain_steps() > self.total_steps {
            return bad("pretrain_steps exceeds total_steps");
        }
        Ok(())
    }

    pub fn pretrain_steps(&self) -> u64 {
        self.pretrain_steps.unwrap_or(self.total_steps / 2)
    }

    pub fn growth_stop_step(&self) -> u64 {
        self.growth_stop_step.unwrap_or(self.total_steps / 4)
    }

    pub fn growth(&self) -> GrowthConfig {
        GrowthConfig {
            tau_base: self.tau_base * self.threshold_scale,
            tau_tex: self.tau_tex * self.threshold_scale,
            n_max: self.n_max,
            t_max: self.t_max,
            channels: self.channels,
        }
    }

    /// Whether a growth check runs after `step`.
    pub fn is_growth_check(&self, step: u64) -> bool {
        let pre = self.pretrain_steps();
        if !self.growth_enabled || step <= pre {
            return false;
        }
        let rel = step - pre;
        rel.is_multiple_of(self.n_tex_interval) && rel <= self.growth_stop_step()
    }
}

#[derive(Clone, Debug)]
pub struct View {
    pub camera: Camera,
    pub target: Image,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub loss: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub texel_count: usize,
    pub active_textures: usize,
    /// Cumulative growth events so far.
    pub growth_events: usize,
}

pub const METRICS_HEADER: &str = "step,loss,psnr,ssim,texel_count,active_textures,growth_events";

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.step, self.loss, self.psnr, self.ssim, self.texel_count, self.active_textures, self.growth_events
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub step: u64,
    pub scene: Scene,
    pub optimizer: SceneOptimizer,
    pub ledger: GrowthLedger,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub metrics: Vec<MetricsRow>,
    pub events: Vec<GrowthEvent>,
}

/// Mean loss, PSNR and SSIM over every view.
pub fn evaluate(scene: &Scene, views: &[View], config: &TrainConfig) -> Result<(f64, f64, f64)> {
    let (mut l, mut p, mut s) = (0.0, 0.0, 0.0);
    for v in views {
        let img = render(scene, &v.camera, config.warp_mode, config.background, false).image;
        l += photometric_loss(&img, &v.target, config.lambda_ssim)?.0;
        p += psnr(&img, &v.target)?;
        s += ssim(&img, &v.target)?;
    }
    let n = views.len() as f64;
    Ok((l / n, p / n, s / n))
}

/// Train `scene` on `views`. `on_eval` sees the state after every metrics
/// row, including the final one.
pub fn train(
    scene: Scene,
    views: &[View],
    config: &TrainConfig,
    mut on_eval: impl FnMut(&TrainState, &MetricsRow) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if views.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for v in views {
        if v.target.width != v.camera.width || v.target.height != v.camera.height {
            return Err(Error::ShapeMismatch(format!(
                "target {}x{} for a {}x{} camera",
                v.target.width, v.target.height, v.camera.width, v.camera.height
            )));
        }
    }
    let growth = config.growth();
    let mut state = TrainState {
        step: 0,
        optimizer: SceneOptimizer::new(&scene),
        ledger: GrowthLedger::new(&scene),
        scene,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut metrics = Vec::new();
    let mut events = Vec::new();

    for step in 1..=config.total_steps {
        state.step = step;
        let view = match config.view_order {
            ViewOrder::RoundRobin => &views[((step - 1) % views.len() as u64) as usize],
            ViewOrder::Random => &views[rng.random_range(0..views.len())],
        };
        let out = render(&state.scene, &view.camera, config.warp_mode, config.background, true);
        let (_, dl) = photometric_loss(&out.image, &view.target, config.lambda_ssim)?;
        let grads = backward(&state.scene, &view.camera, config.warp_mode, &out, &dl).map_err(|e| match e {
            Error::NonFiniteGradient { splat } => Error::NonFiniteGradientAtStep { step, splat },
            other => other,
        })?;
        state.optimizer.step(&mut state.scene, &grads, &config.lr)?;
        if config.growth_enabled && step > config.pretrain_steps() {
            let visible: Vec<bool> = (0..state.scene.len()).map(|k| grads.visible(k)).collect();
            state.ledger.accumulate(&state.scene, &grads, &visible)?;
        }
        if config.is_growth_check(step) {
            let decisions = state.ledger.decide(&growth);
            let applied = state.ledger.apply(&mut state.scene, &decisions, &growth, step)?;
            state.optimizer.on_growth(&state.scene, &applied);
            for e in &applied {
                log::debug!("step {step}: splat {} {} {:?} -> {:?}", e.splat, e.action, e.old_dims, e.new_dims);
            }
            events.extend(applied);
        }
        if step % config.eval_every == 0 || step == config.total_steps {
            let (loss, p, s) = evaluate(&state.scene, views, config)?;
            let row = MetricsRow {
                step,
                loss,
                psnr: p,
                ssim: s,
                texel_count: state.scene.texel_count(),
                active_textures: state.scene.active_textures(),
                growth_events: events.len(),
            };
            log::info!("step {step}: loss {loss:.6} psnr {p:.3} texels {}", row.texel_count);
            on_eval(&state, &row)?;
            metrics.push(row);
        }
    }
    Ok(TrainOutcome { state, metrics, events })
}
