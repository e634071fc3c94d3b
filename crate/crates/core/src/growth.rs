//! Error-driven texture activation and per-axis resolution growth.
//!
//! Each splat accumulates, over a window of steps, the absolute texel
//! gradients summed into rows (`g_u`, length `T_u`) and columns (`g_v`,
//! length `T_v`), and the number of views in which it was visible. The
//! normalized pressures are
//!
//! ```text
//! p_u = sum(g_u) / (n_g T_v)        p_v = sum(g_v) / (n_g T_u)
//! ```
//!
//! Splats without a texture instead accumulate the L1 norm of their base
//! color and opacity gradients, and are activated once that mean exceeds
//! `tau_base`. Every window is cleared after each check.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::GradientSet;
use crate::scene::Scene;
use crate::texture::{init_texture, resample_texture, Channels};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GrowthConfig {
    pub tau_base: f64,
    pub tau_tex: f64,
    pub n_max: u32,
    pub t_max: usize,
    pub channels: Channels,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowthAction {
    None,
    Activate,
    GrowU,
    GrowV,
    GrowBoth,
}

impl GrowthAction {
    pub fn as_str(self) -> &'static str {
        match self {
            GrowthAction::None => "none",
            GrowthAction::Activate => "activate",
            GrowthAction::GrowU => "grow_u",
            GrowthAction::GrowV => "grow_v",
            GrowthAction::GrowBoth => "grow_both",
        }
    }

    fn axes(self) -> (bool, bool) {
        match self {
            GrowthAction::GrowU => (true, false),
            GrowthAction::GrowV => (false, true),
            GrowthAction::GrowBoth => (true, true),
            _ => (false, false),
        }
    }
}

impl fmt::Display for GrowthAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GrowthAction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => GrowthAction::None,
            "activate" => GrowthAction::Activate,
            "grow_u" => GrowthAction::GrowU,
            "grow_v" => GrowthAction::GrowV,
            "grow_both" => GrowthAction::GrowBoth,
            other => return Err(Error::InvalidConfig(format!("unknown growth action {other:?}"))),
        })
    }
}

/// Growth statistics for one splat over the current window.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplatLedger {
    pub g_u: Vec<f64>,
    pub g_v: Vec<f64>,
    pub n_g: u64,
    pub base_pressure: f64,
    pub activated: bool,
    pub growth_steps: u32,
}

impl SplatLedger {
    pub fn dims(&self) -> (usize, usize) {
        (self.g_u.len(), self.g_v.len())
    }

    /// Normalized per-axis pressures; `(0, 0)` before any visible view.
    pub fn pressures(&self) -> (f64, f64) {
        pressures(&self.g_u, &self.g_v, self.n_g)
    }

    /// Mean base-appearance gradient per visible view.
    pub fn activation_pressure(&self) -> f64 {
        if self.n_g == 0 {
            0.0
        } else {
            self.base_pressure / self.n_g as f64
        }
    }

    pub fn decide(&self, config: &GrowthConfig) -> GrowthAction {
        if !self.activated {
            return if self.activation_pressure() > config.tau_base { GrowthAction::Activate } else { GrowthAction::None };
        }
        if self.growth_steps >= config.n_max {
            return GrowthAction::None;
        }
        let (pu, pv) = self.pressures();
        let (tu, tv) = self.dims();
        match (pu > config.tau_tex && tu < config.t_max, pv > config.tau_tex && tv < config.t_max) {
            (true, true) => GrowthAction::GrowBoth,
            (true, false) => GrowthAction::GrowU,
            (false, true) => GrowthAction::GrowV,
            (false, false) => GrowthAction::None,
        }
    }

    fn reset_window(&mut self) {
        self.g_u.iter_mut().for_each(|g| *g = 0.0);
        self.g_v.iter_mut().for_each(|g| *g = 0.0);
        self.n_g = 0;
        self.base_pressure = 0.0;
    }
}

/// `p_u = sum(g_u) / (n_g T_v)`, `p_v = sum(g_v) / (n_g T_u)`.
pub fn pressures(g_u: &[f64], g_v: &[f64], n_g: u64) -> (f64, f64) {
    if n_g == 0 || g_u.is_empty() || g_v.is_empty() {
        return (0.0, 0.0);
    }
    let n = n_g as f64;
    (g_u.iter().sum::<f64>() / (n * g_v.len() as f64), g_v.iter().sum::<f64>() / (n * g_u.len() as f64))
}

/// One decision taken at a growth check, with the statistics that drove it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decision {
    pub splat: usize,
    pub action: GrowthAction,
    /// Per-axis pressures, or the activation pressure on both axes for
    /// untextured splats.
    pub pressure: (f64, f64),
}

/// A texture change applied to the scene.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GrowthEvent {
    pub step: u64,
    pub splat: usize,
    pub action: GrowthAction,
    pub old_dims: (usize, usize),
    pub new_dims: (usize, usize),
    pub pressure: (f64, f64),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrowthLedger {
    pub splats: Vec<SplatLedger>,
}

impl GrowthLedger {
    pub fn new(scene: &Scene) -> Self {
        let splats = scene
            .splats()
            .iter()
            .map(|s| {
                let (tu, tv) = s.texture.as_ref().map_or((0, 0), |t| t.dims());
                SplatLedger {
                    g_u: vec![0.0; tu],
                    g_v: vec![0.0; tv],
                    activated: s.texture.is_some(),
                    growth_steps: s.texture.as_ref().map_or(0, |t| t.growth_steps),
                    ..Default::default()
                }
            })
            .collect();
        Self { splats }
    }

    /// Add one view's gradients. `visible[k]` marks splats that reached a
    /// blend weight above the visibility threshold; only those are counted.
    pub fn accumulate(&mut self, scene: &Scene, grads: &GradientSet, visible: &[bool]) -> Result<()> {
        let n = self.splats.len();
        if scene.len() != n || grads.splats.len() != n || visible.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "ledger has {n} splats, scene {}, gradients {}, visibility {}",
                scene.len(),
                grads.splats.len(),
                visible.len()
            )));
        }
        for (k, entry) in self.splats.iter_mut().enumerate() {
            if !visible[k] {
                continue;
            }
            entry.n_g += 1;
            let g = &grads.splats[k];
            match (&scene.splats()[k].texture, entry.activated) {
                (Some(t), true) => {
                    let (tu, tv) = t.dims();
                    let c = t.channels().count();
                    if entry.dims() != (tu, tv) || g.texels.len() != tu * tv * c {
                        return Err(Error::ShapeMismatch(format!(
                            "splat {k}: ledger dims {:?}, texture {tu}x{tv}, {} texel gradients",
                            entry.dims(),
                            g.texels.len()
                        )));
                    }
                    for i in 0..tu {
                        for j in 0..tv {
                            let off = (i * tv + j) * c;
                            let mass: f64 = g.texels[off..off + c].iter().map(|x| x.abs()).sum();
                            entry.g_u[i] += mass;
                            entry.g_v[j] += mass;
                        }
                    }
                }
                (None, false) => entry.base_pressure += g.base_appearance_norm(),
                _ => return Err(Error::ShapeMismatch(format!("splat {k}: activation state disagrees with texture presence"))),
            }
        }
        Ok(())
    }

    /// Decide every splat's action and clear all windows.
    pub fn decide(&mut self, config: &GrowthConfig) -> Vec<Decision> {
        let out = self
            .splats
            .iter()
            .enumerate()
            .map(|(splat, e)| {
                let pressure = if e.activated {
                    e.pressures()
                } else {
                    let p = e.activation_pressure();
                    (p, p)
                };
                Decision { splat, action: e.decide(config), pressure }
            })
            .collect();
        self.splats.iter_mut().for_each(SplatLedger::reset_window);
        out
    }

    /// Apply decisions to the scene. Actions that change nothing (already at
    /// the cap) produce no event and do not count as a growth step.
    pub fn apply(&mut self, scene: &mut Scene, decisions: &[Decision], config: &GrowthConfig, step: u64) -> Result<Vec<GrowthEvent>> {
        let mut events = Vec::new();
        for d in decisions.iter().filter(|d| d.action != GrowthAction::None) {
            let entry = &mut self.splats[d.splat];
            let splat = &mut scene.splats_mut()[d.splat];
            let (old_dims, new_dims) = match (d.action, splat.texture.as_mut()) {
                (GrowthAction::Activate, None) => {
                    let t = init_texture(&splat.geometry, config.channels);
                    let dims = t.dims();
                    splat.texture = Some(t);
                    entry.activated = true;
                    ((0, 0), dims)
                }
                (GrowthAction::Activate, Some(_)) => continue,
                (action, Some(t)) => {
                    let old = t.dims();
                    let (gu, gv) = action.axes();
                    let new = (
                        if gu { (2 * old.0).min(config.t_max) } else { old.0 },
                        if gv { (2 * old.1).min(config.t_max) } else { old.1 },
                    );
                    if new == old {
                        continue;
                    }
                    let mut grown = resample_texture(t, new, config.t_max)?;
                    grown.growth_steps = t.growth_steps + 1;
                    *t = grown;
                    entry.growth_steps += 1;
                    (old, new)
                }
                (_, None) => continue,
            };
            entry.g_u = vec![0.0; new_dims.0];
            entry.g_v = vec![0.0; new_dims.1];
            events.push(GrowthEvent { step, splat: d.splat, action: d.action, old_dims, new_dims, pressure: d.pressure });
        }
        Ok(events)
    }
}
