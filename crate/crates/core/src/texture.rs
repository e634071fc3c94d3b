//! Per-splat texel grids and the canonical-to-texture warps.
//!
//! Texture space is `[0, 1]^2`. Warping maps canonical coordinates through
//! the Gaussian's CDF (per axis, or radially through the Rayleigh CDF) so that
//! evenly spaced texels land with density proportional to splat mass.

use nalgebra::{Matrix2, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{SplatGeometry, R_CUT};
use crate::stats::ks_uniform;

/// Largest texture side length used when no config overrides it.
pub const DEFAULT_T_MAX: usize = 8;

/// Gap between a freshly initialized texel alpha and 1.
pub const ALPHA_EPS: f64 = 1e-13;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Alpha logit whose sigmoid is `1 - ALPHA_EPS`.
pub fn neutral_alpha_logit() -> f64 {
    ((1.0 - ALPHA_EPS) / ALPHA_EPS).ln()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WarpMode {
    /// Canonical box `[-R_CUT, R_CUT]^2` mapped affinely onto texture space.
    #[default]
    None,
    Axis,
    Radial,
}

impl std::str::FromStr for WarpMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "none" => Ok(Self::None),
            "axis" => Ok(Self::Axis),
            "radial" => Ok(Self::Radial),
            _ => Err(format!("unknown warp mode `{s}` (expected none|axis|radial)")),
        }
    }
}

impl std::fmt::Display for WarpMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::Axis => "axis",
            Self::Radial => "radial",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channels {
    #[default]
    Rgb,
    Rgba,
}

impl Channels {
    pub const fn count(self) -> usize {
        match self {
            Self::Rgb => 3,
            Self::Rgba => 4,
        }
    }
}

impl std::str::FromStr for Channels {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "rgb" => Ok(Self::Rgb),
            "rgba" => Ok(Self::Rgba),
            _ => Err(format!("unknown channel layout `{s}` (expected rgb|rgba)")),
        }
    }
}

/// Dense `T_u x T_v x channels` texel grid, row-major in `(i, j, channel)`.
///
/// RGB channels are additive offsets on the splat's base color. The optional
/// fourth channel is an alpha logit multiplied onto `o * G`.
#[derive(Clone, Debug, PartialEq)]
pub struct TexelGrid {
    tu: usize,
    tv: usize,
    channels: Channels,
    texels: Vec<f64>,
    pub growth_steps: u32,
}

impl TexelGrid {
    pub fn new(dims: (usize, usize), channels: Channels, texels: Vec<f64>, t_max: usize) -> Result<Self> {
        check_dims(dims, t_max)?;
        let expected = dims.0 * dims.1 * channels.count();
        if texels.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "texture {}x{}x{} needs {expected} texels, got {}",
                dims.0,
                dims.1,
                channels.count(),
                texels.len()
            )));
        }
        Ok(Self { tu: dims.0, tv: dims.1, channels, texels, growth_steps: 0 })
    }

    /// Zero color offsets and neutral alpha.
    pub fn neutral(dims: (usize, usize), channels: Channels, t_max: usize) -> Result<Self> {
        check_dims(dims, t_max)?;
        let c = channels.count();
        let mut texels = vec![0.0; dims.0 * dims.1 * c];
        if channels == Channels::Rgba {
            let a = neutral_alpha_logit();
            texels.chunks_exact_mut(c).for_each(|t| t[3] = a);
        }
        Ok(Self { tu: dims.0, tv: dims.1, channels, texels, growth_steps: 0 })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.tu, self.tv)
    }

    pub fn channels(&self) -> Channels {
        self.channels
    }

    pub fn texel_count(&self) -> usize {
        self.tu * self.tv
    }

    pub fn texels(&self) -> &[f64] {
        &self.texels
    }

    pub fn texels_mut(&mut self) -> &mut [f64] {
        &mut self.texels
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        (i * self.tv + j) * self.channels.count()
    }

    pub fn texel(&self, i: usize, j: usize) -> &[f64] {
        let k = self.index(i, j);
        &self.texels[k..k + self.channels.count()]
    }

    /// Bilinear lookup of all channels at `tc`; unused lanes are zero.
    #[inline]
    pub fn sample(&self, tc: &Vector2<f64>) -> [f64; 4] {
        Bilinear::at(self.dims(), tc).sample(&self.texels, self.tv, self.channels.count())
    }
}

fn check_dims(dims: (usize, usize), t_max: usize) -> Result<()> {
    if dims.0 < 1 || dims.1 < 1 || dims.0 > t_max || dims.1 > t_max {
        return Err(Error::InvalidDims { tu: dims.0, tv: dims.1, max: t_max });
    }
    Ok(())
}

/// Clamp-to-edge bilinear stencil with texel centers at `(i + 0.5) / T`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bilinear {
    pub i0: usize,
    pub i1: usize,
    pub j0: usize,
    pub j1: usize,
    pub fx: f64,
    pub fy: f64,
    dims: (usize, usize),
}

impl Bilinear {
    #[inline]
    pub fn at(dims: (usize, usize), tc: &Vector2<f64>) -> Self {
        let x = tc.x * dims.0 as f64 - 0.5;
        let y = tc.y * dims.1 as f64 - 0.5;
        let (xf, yf) = (x.floor(), y.floor());
        Self::from_parts(dims, xf as isize, x - xf, yf as isize, y - yf)
    }

    #[inline]
    fn from_parts(dims: (usize, usize), i: isize, fx: f64, j: isize, fy: f64) -> Self {
        let clamp = |k: isize, n: usize| k.clamp(0, n as isize - 1) as usize;
        Self {
            i0: clamp(i, dims.0),
            i1: clamp(i + 1, dims.0),
            j0: clamp(j, dims.1),
            j1: clamp(j + 1, dims.1),
            fx,
            fy,
            dims,
        }
    }

    /// Stencil at the center of texel `(i, j)` of a `new_dims` grid, computed
    /// in exact integer arithmetic so equal dims give a zero-fraction stencil.
    fn at_center_of(dims: (usize, usize), new_dims: (usize, usize), i: usize, j: usize) -> Self {
        let split = |k: usize, old: usize, new: usize| {
            let num = (2 * k + 1) as isize * old as isize - new as isize;
            let den = 2 * new as isize;
            (num.div_euclid(den), num.rem_euclid(den) as f64 / den as f64)
        };
        let (i0, fx) = split(i, dims.0, new_dims.0);
        let (j0, fy) = split(j, dims.1, new_dims.1);
        Self::from_parts(dims, i0, fx, j0, fy)
    }

    /// Grid cell the lookup falls in; changes only across texel centers.
    pub fn cell(&self) -> (usize, usize, usize, usize) {
        (self.i0, self.i1, self.j0, self.j1)
    }

    #[inline]
    pub fn sample(&self, data: &[f64], tv: usize, c: usize) -> [f64; 4] {
        let k00 = (self.i0 * tv + self.j0) * c;
        let k10 = (self.i1 * tv + self.j0) * c;
        let k01 = (self.i0 * tv + self.j1) * c;
        let k11 = (self.i1 * tv + self.j1) * c;
        let mut out = [0.0; 4];
        for ch in 0..c {
            // Nested lerps reproduce constant fields exactly.
            let a = lerp(data[k00 + ch], data[k10 + ch], self.fx);
            let b = lerp(data[k01 + ch], data[k11 + ch], self.fx);
            out[ch] = lerp(a, b, self.fy);
        }
        out
    }

    /// Texel offsets (into a channel-interleaved array) and bilinear weights.
    #[inline]
    pub fn taps(&self, tv: usize, c: usize) -> [(usize, f64); 4] {
        let (fx, fy) = (self.fx, self.fy);
        [
            ((self.i0 * tv + self.j0) * c, (1.0 - fx) * (1.0 - fy)),
            ((self.i1 * tv + self.j0) * c, fx * (1.0 - fy)),
            ((self.i0 * tv + self.j1) * c, (1.0 - fx) * fy),
            ((self.i1 * tv + self.j1) * c, fx * fy),
        ]
    }

    /// Derivative of channel `ch` with respect to the texture coordinate.
    #[inline]
    pub fn gradient(&self, data: &[f64], tv: usize, c: usize, ch: usize) -> Vector2<f64> {
        let f = |i: usize, j: usize| data[(i * tv + j) * c + ch];
        let (f00, f10, f01, f11) = (f(self.i0, self.j0), f(self.i1, self.j0), f(self.i0, self.j1), f(self.i1, self.j1));
        let du = (1.0 - self.fy) * (f10 - f00) + self.fy * (f11 - f01);
        let dv = (1.0 - self.fx) * (f01 - f00) + self.fx * (f11 - f10);
        Vector2::new(du * self.dims.0 as f64, dv * self.dims.1 as f64)
    }
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

/// Standard normal CDF `(1 + erf(a / sqrt 2)) / 2`.
#[inline]
pub fn warp_axis(a: f64) -> f64 {
    // erfc form keeps full relative accuracy in the lower tail.
    0.5 * libm::erfc(-a * std::f64::consts::FRAC_1_SQRT_2)
}

/// `d warp_axis / da`, the standard normal pdf.
#[inline]
pub fn warp_axis_derivative(a: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * a * a).exp()
}

/// Rayleigh-CDF radial warp: rescales `u` to norm `1 - exp(-|u|^2 / 2)`.
#[inline]
pub fn warp_radial(u: &Vector2<f64>) -> Vector2<f64> {
    let r = u.norm();
    if r == 0.0 {
        return Vector2::zeros();
    }
    u * (radial_cdf(r) / r)
}

#[inline]
fn radial_cdf(r: f64) -> f64 {
    -(-0.5 * r * r).exp_m1()
}

/// Jacobian of [`warp_radial`].
pub fn warp_radial_jacobian(u: &Vector2<f64>) -> Matrix2<f64> {
    let r = u.norm();
    if r < 1e-150 {
        return Matrix2::zeros();
    }
    let s = radial_cdf(r) / r;
    let ds = (-0.5 * r * r).exp() - s / r;
    let dir = u / r;
    Matrix2::identity() * s + dir * dir.transpose() * (ds * r)
}

/// Map canonical coordinates into texture space.
#[inline]
pub fn canonical_to_texcoord(u: &Vector2<f64>, mode: WarpMode) -> Vector2<f64> {
    match mode {
        WarpMode::None => (u / (2.0 * R_CUT)).add_scalar(0.5).map(|x| x.clamp(0.0, 1.0)),
        WarpMode::Axis => Vector2::new(warp_axis(u.x), warp_axis(u.y)),
        WarpMode::Radial => (warp_radial(u).add_scalar(1.0)) * 0.5,
    }
}

/// Jacobian `d texcoord / d u`.
#[inline]
pub fn texcoord_jacobian(u: &Vector2<f64>, mode: WarpMode) -> Matrix2<f64> {
    match mode {
        WarpMode::None => {
            let inside = |x: f64| {
                let t = x / (2.0 * R_CUT) + 0.5;
                if (0.0..=1.0).contains(&t) {
                    1.0 / (2.0 * R_CUT)
                } else {
                    0.0
                }
            };
            Matrix2::new(inside(u.x), 0.0, 0.0, inside(u.y))
        }
        WarpMode::Axis => Matrix2::new(warp_axis_derivative(u.x), 0.0, 0.0, warp_axis_derivative(u.y)),
        WarpMode::Radial => warp_radial_jacobian(u) * 0.5,
    }
}

/// Bilinear lookup of raw stored values (alpha is still a logit).
pub fn sample_texture(t: &TexelGrid, tc: &Vector2<f64>) -> [f64; 4] {
    t.sample(tc)
}

/// Resample an interleaved `dims x channels` array onto `new_dims` by
/// bilinear lookup at the new texel centers.
pub fn resample_values(data: &[f64], dims: (usize, usize), channels: usize, new_dims: (usize, usize)) -> Vec<f64> {
    let mut out = Vec::with_capacity(new_dims.0 * new_dims.1 * channels);
    for i in 0..new_dims.0 {
        for j in 0..new_dims.1 {
            let s = Bilinear::at_center_of(dims, new_dims, i, j).sample(data, dims.1, channels);
            out.extend_from_slice(&s[..channels]);
        }
    }
    out
}

pub fn resample_texture(t: &TexelGrid, new_dims: (usize, usize), t_max: usize) -> Result<TexelGrid> {
    check_dims(new_dims, t_max)?;
    let texels = resample_values(&t.texels, t.dims(), t.channels.count(), new_dims);
    Ok(TexelGrid { tu: new_dims.0, tv: new_dims.1, channels: t.channels, texels, growth_steps: t.growth_steps })
}

/// Initial texture at activation: `2x1` along the longer axis (ties go to u),
/// zero color offsets and neutral alpha.
pub fn init_texture(g: &SplatGeometry, channels: Channels) -> TexelGrid {
    let dims = if g.log_scale.x >= g.log_scale.y { (2, 1) } else { (1, 2) };
    TexelGrid::neutral(dims, channels, 2).expect("2x1 is always valid")
}

/// KS distance to `Uniform(0, 1)` of warped standard-normal samples.
///
/// Axis mode warps 1-D normal draws; radial mode takes the warped radius of
/// 2-D normal draws. Both should be uniform under their own CDF.
pub fn verify_warp_density(mode: WarpMode, n_samples: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<f64> = match mode {
        WarpMode::None => return Err(Error::InvalidConfig("density check needs a warp mode".into())),
        WarpMode::Axis => (0..n_samples).map(|_| warp_axis(StandardNormal.sample(&mut rng))).collect(),
        WarpMode::Radial => (0..n_samples)
            .map(|_| {
                let u = Vector2::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
                warp_radial(&u).norm()
            })
            .collect(),
    };
    Ok(ks_uniform(&samples))
}

/// Same statistic with an arbitrary 1-D warp; used for negative controls.
pub fn warp_density_ks_with(warp: impl Fn(f64) -> f64, n_samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<f64> = (0..n_samples).map(|_| warp(StandardNormal.sample(&mut rng))).collect();
    ks_uniform(&samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{Vector3, Vector4};
    use proptest::prelude::*;
    use rand::Rng;

    /// Reference bilinear: explicit weights, no shared code with [`Bilinear`].
    fn oracle_bilinear(t: &TexelGrid, tc: &Vector2<f64>) -> Vec<f64> {
        let (tu, tv) = t.dims();
        let c = t.channels().count();
        let x = tc.x * tu as f64 - 0.5;
        let y = tc.y * tv as f64 - 0.5;
        let mut out = vec![0.0; c];
        let x0 = x.floor();
        let y0 = y.floor();
        for (dx, wx) in [(0.0, 1.0 - (x - x0)), (1.0, x - x0)] {
            for (dy, wy) in [(0.0, 1.0 - (y - y0)), (1.0, y - y0)] {
                let i = ((x0 + dx).max(0.0) as usize).min(tu - 1);
                let j = ((y0 + dy).max(0.0) as usize).min(tv - 1);
                for ch in 0..c {
                    out[ch] += wx * wy * t.texel(i, j)[ch];
                }
            }
        }
        out
    }

    fn random_grid(rng: &mut impl Rng, dims: (usize, usize), channels: Channels) -> TexelGrid {
        let n = dims.0 * dims.1 * channels.count();
        TexelGrid::new(dims, channels, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(), 8).unwrap()
    }

    #[test]
    fn warp_axis_values() {
        assert_eq!(warp_axis(0.0), 0.5);
        assert_eq!(warp_axis(f64::INFINITY), 1.0);
        assert_eq!(warp_axis(f64::NEG_INFINITY), 0.0);
        assert_relative_eq!(warp_axis(1.0), 0.841345, epsilon = 1e-6);
    }

    #[test]
    fn warp_radial_values() {
        assert_eq!(warp_radial(&Vector2::zeros()), Vector2::zeros());
        let r = (2.0 * 2f64.ln()).sqrt();
        assert_relative_eq!(r, 1.17741, epsilon = 1e-5);
        assert_relative_eq!(warp_radial(&Vector2::new(r, 0.0)).norm(), 0.5, epsilon = 1e-15);
        let w = warp_radial(&Vector2::new(1.2, 1.6));
        assert_relative_eq!(w.norm(), 0.864665, epsilon = 1e-6);
        assert_relative_eq!(w.normalize(), Vector2::new(0.6, 0.8), epsilon = 1e-15);
    }

    #[test]
    fn texcoord_examples() {
        for mode in [WarpMode::None, WarpMode::Axis, WarpMode::Radial] {
            assert_eq!(canonical_to_texcoord(&Vector2::zeros(), mode), Vector2::new(0.5, 0.5));
        }
        let tc = canonical_to_texcoord(&Vector2::new(1.0, -1.0), WarpMode::Axis);
        assert_relative_eq!(tc, Vector2::new(0.841345, 0.158655), epsilon = 1e-6);
        assert_relative_eq!(tc.x + tc.y, 1.0, epsilon = 1e-15);
        assert_eq!(canonical_to_texcoord(&Vector2::new(3.0, 0.0), WarpMode::None), Vector2::new(1.0, 0.5));
    }

    #[test]
    fn constant_grid_samples_constant() {
        let t = TexelGrid::new((1, 1), Channels::Rgb, vec![0.2, 0.3, 0.4], 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let tc = Vector2::new(rng.random(), rng.random());
            assert_eq!(&sample_texture(&t, &tc)[..3], &[0.2, 0.3, 0.4]);
        }
    }

    #[test]
    fn midpoint_of_two_texels() {
        let t = TexelGrid::new((2, 1), Channels::Rgb, vec![0.0, 1.0, 2.0, 1.0, 3.0, 4.0], 8).unwrap();
        let s = sample_texture(&t, &Vector2::new(0.5, 0.3));
        assert_relative_eq!(s[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(s[1], 2.0, epsilon = 1e-15);
        assert_relative_eq!(s[2], 3.0, epsilon = 1e-15);
    }

    #[test]
    fn bilinear_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = random_grid(&mut rng, (4, 4), Channels::Rgba);
        for _ in 0..1000 {
            let tc = Vector2::new(rng.random(), rng.random());
            let s = sample_texture(&t, &tc);
            let o = oracle_bilinear(&t, &tc);
            for ch in 0..4 {
                assert_relative_eq!(s[ch], o[ch], epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn bilinear_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random_grid(&mut rng, (3, 5), Channels::Rgb);
        let h = 1e-7;
        for _ in 0..200 {
            let tc = Vector2::new(rng.random_range(0.01..0.99), rng.random_range(0.01..0.99));
            let b = Bilinear::at(t.dims(), &tc);
            for ch in 0..3 {
                let g = b.gradient(t.texels(), 5, 3, ch);
                for axis in 0..2 {
                    let mut p = tc;
                    let mut m = tc;
                    p[axis] += h;
                    m[axis] -= h;
                    if Bilinear::at(t.dims(), &p).cell() != Bilinear::at(t.dims(), &m).cell() {
                        continue;
                    }
                    let fd = (sample_texture(&t, &p)[ch] - sample_texture(&t, &m)[ch]) / (2.0 * h);
                    assert_relative_eq!(g[axis], fd, epsilon = 1e-6);
                }
            }
        }
    }

    #[test]
    fn bilinear_weights_partition_unity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let b = Bilinear::at((rng.random_range(1..9), rng.random_range(1..9)), &Vector2::new(rng.random(), rng.random()));
            let sum: f64 = b.taps(8, 3).iter().map(|t| t.1).sum();
            assert_relative_eq!(sum, 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn resample_same_dims_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for dims in [(1, 1), (2, 1), (3, 3), (5, 7), (8, 8)] {
            let t = random_grid(&mut rng, dims, Channels::Rgba);
            assert_eq!(resample_texture(&t, dims, 8).unwrap().texels(), t.texels());
        }
    }

    #[test]
    fn resample_constant_up() {
        let t = TexelGrid::new((1, 1), Channels::Rgb, vec![0.1, -0.2, 0.3], 8).unwrap();
        let r = resample_texture(&t, (2, 2), 8).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(r.texel(i, j), &[0.1, -0.2, 0.3]);
            }
        }
    }

    #[test]
    fn resample_matches_oracle_at_new_centers() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let t = random_grid(&mut rng, (2, 2), Channels::Rgb);
        let r = resample_texture(&t, (4, 4), 8).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let tc = Vector2::new((i as f64 + 0.5) / 4.0, (j as f64 + 0.5) / 4.0);
                let o = oracle_bilinear(&t, &tc);
                for ch in 0..3 {
                    assert_relative_eq!(r.texel(i, j)[ch], o[ch], epsilon = 1e-15);
                }
            }
        }
    }

    #[test]
    fn resample_rejects_bad_dims() {
        let t = TexelGrid::neutral((2, 2), Channels::Rgb, 8).unwrap();
        assert!(matches!(resample_texture(&t, (0, 2), 8), Err(Error::InvalidDims { .. })));
        assert!(matches!(resample_texture(&t, (2, 9), 8), Err(Error::InvalidDims { .. })));
    }

    #[test]
    fn init_texture_follows_axis_scales() {
        let g = |su: f64, sv: f64| {
            SplatGeometry::new(Vector3::zeros(), Vector4::new(1.0, 0.0, 0.0, 0.0), Vector2::new(su, sv), 0.5, Vector3::zeros())
        };
        assert_eq!(init_texture(&g(2.0, 0.5), Channels::Rgb).dims(), (2, 1));
        assert_eq!(init_texture(&g(1.0, 1.0), Channels::Rgb).dims(), (2, 1));
        assert_eq!(init_texture(&g(0.5, 2.0), Channels::Rgb).dims(), (1, 2));
        let t = init_texture(&g(1.0, 1.0), Channels::Rgba);
        assert_eq!(t.growth_steps, 0);
        for i in 0..2 {
            let texel = t.texel(i, 0);
            assert_eq!(&texel[..3], &[0.0, 0.0, 0.0]);
            assert_relative_eq!(crate::geometry::sigmoid(texel[3]), 1.0 - ALPHA_EPS, epsilon = 1e-16);
        }
    }

    #[test]
    fn density_checks() {
        assert!(verify_warp_density(WarpMode::Axis, 100_000, 1).unwrap() < 0.01);
        assert!(verify_warp_density(WarpMode::Radial, 100_000, 1).unwrap() < 0.01);
        assert!(warp_density_ks_with(|a| a, 100_000, 1) > 0.1);
        assert!(verify_warp_density(WarpMode::None, 10_000, 1).is_err());
    }

    #[test]
    fn radial_jacobian_at_center_is_zero() {
        assert_eq!(warp_radial_jacobian(&Vector2::zeros()), Matrix2::zeros());
    }

    proptest! {
        #[test]
        fn axis_warp_strictly_increasing(a in -6.0f64..6.0, d in 1e-3f64..1.0) {
            prop_assert!(warp_axis(a + d) > warp_axis(a));
        }

        #[test]
        fn radial_warp_preserves_direction_and_orders_radius(x in -3.0f64..3.0, y in -3.0f64..3.0, k in 1.01f64..2.0) {
            let u = Vector2::new(x, y);
            prop_assume!(u.norm() > 1e-6);
            let w = warp_radial(&u);
            prop_assert!((w.normalize() - u.normalize()).norm() < 1e-12);
            prop_assert!((w.norm() - (1.0 - (-0.5 * u.norm_squared()).exp())).abs() < 1e-15);
            prop_assert!(warp_radial(&(u * k)).norm() > w.norm());
        }

        #[test]
        fn axis_derivative_matches_central_difference(a in -4.0f64..4.0) {
            let h = 1e-5;
            let fd = (warp_axis(a + h) - warp_axis(a - h)) / (2.0 * h);
            let exact = warp_axis_derivative(a);
            prop_assert!(((fd - exact) / exact).abs() < 1e-6);
        }

        #[test]
        fn texcoord_jacobian_matches_central_difference(x in -2.9f64..2.9, y in -2.9f64..2.9, mode in 0usize..3) {
            let mode = [WarpMode::None, WarpMode::Axis, WarpMode::Radial][mode];
            let u = Vector2::new(x, y);
            prop_assume!(u.norm() <= R_CUT - 0.05 && u.norm() > 1e-3);
            let j = texcoord_jacobian(&u, mode);
            let h = 1e-6;
            for axis in 0..2 {
                let mut p = u;
                let mut m = u;
                p[axis] += h;
                m[axis] -= h;
                let fd = (canonical_to_texcoord(&p, mode) - canonical_to_texcoord(&m, mode)) / (2.0 * h);
                prop_assert!((fd - j.column(axis)).norm() < 1e-8);
            }
        }

        #[test]
        fn texcoords_stay_in_unit_square(x in -3.0f64..3.0, y in -3.0f64..3.0, mode in 0usize..3) {
            let mode = [WarpMode::None, WarpMode::Axis, WarpMode::Radial][mode];
            let u = Vector2::new(x, y);
            prop_assume!(u.norm() <= R_CUT);
            let tc = canonical_to_texcoord(&u, mode);
            prop_assert!((0.0..=1.0).contains(&tc.x) && (0.0..=1.0).contains(&tc.y));
        }

        #[test]
        fn constant_round_trip_through_bigger_grid(v in -1.0f64..1.0, tu in 1usize..5, tv in 1usize..5, bu in 1usize..9, bv in 1usize..9) {
            let t = TexelGrid::new((tu, tv), Channels::Rgb, vec![v; tu * tv * 3], 8).unwrap();
            let big = resample_texture(&t, (bu, bv), 8).unwrap();
            let back = resample_texture(&big, (tu, tv), 8).unwrap();
            prop_assert_eq!(back.texels(), t.texels());
        }
    }
}
