//! Adam with per-group learning rates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{param, BASE_PARAMS};
use crate::grad::GradientSet;
use crate::growth::{GrowthAction, GrowthEvent};
use crate::scene::Scene;
use crate::texture::resample_values;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-15;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrTable {
    pub position: f64,
    pub rotation: f64,
    pub log_scale: f64,
    pub opacity: f64,
    pub color: f64,
    pub texels: f64,
}

impl Default for LrTable {
    fn default() -> Self {
        Self { position: 1.6e-4, rotation: 1e-3, log_scale: 5e-3, opacity: 5e-2, color: 2.5e-3, texels: 2.5e-3 }
    }
}

impl LrTable {
    /// Learning rate for each slot of the base encoding.
    pub fn base_rates(&self) -> [f64; BASE_PARAMS] {
        let mut r = [0.0; BASE_PARAMS];
        r[param::MEAN].fill(self.position);
        r[param::ROTATION].fill(self.rotation);
        r[param::LOG_SCALE].fill(self.log_scale);
        r[param::OPACITY] = self.opacity;
        r[param::COLOR].fill(self.color);
        r
    }
}

/// First and second moments plus the step count used for bias correction.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn zeros(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }
}

/// One Adam update. `lr(k)` gives the rate for element `k`.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: impl Fn(usize) -> f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len() {
        return Err(Error::ShapeMismatch(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let bc1 = 1.0 - BETA1.powi(state.t as i32);
    let bc2 = 1.0 - BETA2.powi(state.t as i32);
    for k in 0..params.len() {
        let g = grads[k];
        state.m[k] = BETA1 * state.m[k] + (1.0 - BETA1) * g;
        state.v[k] = BETA2 * state.v[k] + (1.0 - BETA2) * g * g;
        let m_hat = state.m[k] / bc1;
        let v_hat = state.v[k] / bc2;
        params[k] -= lr(k) * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
    Ok(())
}

/// Optimizer state for a whole scene. Base attributes share one step count;
/// each texture has its own, starting from zero moments at activation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneOptimizer {
    pub base: AdamState,
    pub textures: Vec<Option<AdamState>>,
}

impl SceneOptimizer {
    pub fn new(scene: &Scene) -> Self {
        Self {
            base: AdamState::zeros(scene.len() * BASE_PARAMS),
            textures: scene.splats().iter().map(|s| s.texture.as_ref().map(|t| AdamState::zeros(t.texels().len()))).collect(),
        }
    }

    pub fn step(&mut self, scene: &mut Scene, grads: &GradientSet, lr: &LrTable) -> Result<()> {
        if grads.splats.len() != scene.len() || self.textures.len() != scene.len() {
            return Err(Error::ShapeMismatch("optimizer, scene and gradients disagree on splat count".into()));
        }
        let rates = lr.base_rates();
        let mut params: Vec<f64> = scene.splats().iter().flat_map(|s| s.geometry.params()).collect();
        let flat: Vec<f64> = grads.splats.iter().flat_map(|g| g.base).collect();
        adam_step(&mut params, &flat, &mut self.base, |k| rates[k % BASE_PARAMS])?;
        for ((splat, chunk), (state, g)) in scene
            .splats_mut()
            .iter_mut()
            .zip(params.chunks_exact(BASE_PARAMS))
            .zip(self.textures.iter_mut().zip(&grads.splats))
        {
            splat.geometry.set_params(chunk.try_into().expect("chunk of BASE_PARAMS"));
            splat.geometry.normalize_rotation();
            if let (Some(t), Some(state)) = (splat.texture.as_mut(), state.as_mut()) {
                adam_step(t.texels_mut(), &g.texels, state, |_| lr.texels)?;
            }
        }
        Ok(())
    }

    /// Bring texture moments in line with applied growth events.
    pub fn on_growth(&mut self, scene: &Scene, events: &[GrowthEvent]) {
        for e in events {
            let t = scene.splats()[e.splat].texture.as_ref().expect("grown splat has a texture");
            let c = t.channels().count();
            let slot = &mut self.textures[e.splat];
            match (e.action, slot.as_mut()) {
                (GrowthAction::Activate, _) | (_, None) => *slot = Some(AdamState::zeros(t.texels().len())),
                (_, Some(s)) => {
                    s.m = resample_values(&s.m, e.old_dims, c, e.new_dims);
                    s.v = resample_values(&s.v, e.old_dims, c, e.new_dims);
                }
            }
        }
    }
}
