//! Reverse-mode gradients of a per-pixel image loss through blending,
//! texture sampling, warping and the ray-splat intersection.
//!
//! Per pixel, the tape is replayed back to front with the running
//! "color behind" term `B_i = c_i a_i + (1 - a_i) B_{i+1}` (`B_N` is the
//! background), which gives `dC/da_i = T_i (c_i - B_{i+1})` without division.
//!
//! Canonical-coordinate gradients pull back through the intersection solve
//! `K (u, v, z) = rhs` with `K = [a | b | -d]`: for `lambda = K^-T (g_u, g_v, 0)`,
//! `dL/d center = -lambda`, `dL/da = -lambda u`, `dL/db = -lambda v`.
//!
//! Tiles accumulate into private buffers that are merged in tile order, so the
//! result is bitwise independent of the worker count.

use nalgebra::{Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{param, quat_frame_adjoint, sigmoid, Camera, CameraMode, BASE_PARAMS, R_CUT};
use crate::render::{project_scene, render, RenderOutput, TapeRecord, FLAG_ALPHA_CAPPED};
use crate::scene::{Image, Scene};
use crate::texture::{canonical_to_texcoord, texcoord_jacobian, Bilinear, Channels, WarpMode};

/// Blend weight above which a splat counts as visible in a view.
pub const EPS_VIS: f64 = 1e-4;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SplatGrad {
    /// Gradient of the flat base encoding (see [`crate::geometry::param`]).
    pub base: [f64; BASE_PARAMS],
    /// Gradient per stored texel channel, same layout as the texture.
    pub texels: Vec<f64>,
}

impl SplatGrad {
    /// L1 norm over base color and opacity-logit gradients.
    pub fn base_appearance_norm(&self) -> f64 {
        self.base[param::COLOR].iter().map(|g| g.abs()).sum::<f64>() + self.base[param::OPACITY].abs()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    pub splats: Vec<SplatGrad>,
    /// Largest blend weight each splat reached in the view.
    pub max_weight: Vec<f64>,
}

impl GradientSet {
    pub fn visible(&self, splat: usize) -> bool {
        self.max_weight[splat] > EPS_VIS
    }
}

/// Camera-space accumulators for one splat:
/// `[d center (3), d a (3), d b (3), d opacity_logit, d base_color (3)]`.
type CamAcc = [f64; 13];

struct TileGrads {
    bin: Vec<u32>,
    acc: Vec<CamAcc>,
    texels: Vec<Vec<f64>>,
    max_weight: Vec<f64>,
}

pub fn backward(scene: &Scene, camera: &Camera, mode: WarpMode, forward: &RenderOutput, dl_dimage: &Image) -> Result<GradientSet> {
    if forward.scene_version != scene.version() {
        return Err(Error::StaleTape { tape: forward.scene_version, scene: scene.version() });
    }
    let tape = forward
        .tape
        .as_ref()
        .ok_or_else(|| Error::ShapeMismatch("render output carries no tape".into()))?;
    if !dl_dimage.same_shape(&forward.image) {
        return Err(Error::ShapeMismatch(format!(
            "dL/dimage is {}x{}, render is {}x{}",
            dl_dimage.width, dl_dimage.height, forward.image.width, forward.image.height
        )));
    }
    let projected = project_scene(scene, camera);
    let splats = scene.splats();
    let bg = forward.background;
    let opacity: Vec<f64> = splats.iter().map(|s| s.geometry.opacity()).collect();

    let tiles: Vec<TileGrads> = tape
        .tiles
        .par_iter()
        .enumerate()
        .map(|(t, tile)| {
            let (x0, y0, x1, y1) = forward.tile_rect(t);
            let n = tile.bin.len();
            let mut out = TileGrads {
                bin: tile.bin.clone(),
                acc: vec![[0.0; 13]; n],
                texels: tile
                    .bin
                    .iter()
                    .map(|&id| splats[id as usize].texture.as_ref().map_or_else(Vec::new, |tx| vec![0.0; tx.texels().len()]))
                    .collect(),
                max_weight: vec![0.0; n],
            };
            let tw = x1 - x0;
            for py in y0..y1 {
                for px in x0..x1 {
                    let p = (py - y0) * tw + (px - x0);
                    let recs = &tile.records[tile.offsets[p] as usize..tile.offsets[p + 1] as usize];
                    if recs.is_empty() {
                        continue;
                    }
                    let g = dl_dimage.pixel(px, py);
                    let mut behind = bg;
                    for rec in recs.iter().rev() {
                        let local = tile.bin.binary_search(&rec.splat).expect("recorded splat is binned");
                        let w = rec.weight();
                        if w > out.max_weight[local] {
                            out.max_weight[local] = w;
                        }
                        let dl_dc = [g[0] * w, g[1] * w, g[2] * w];
                        let dl_da = rec.transmittance
                            * (0..3).map(|c| g[c] * (rec.color[c] - behind[c])).sum::<f64>();
                        for c in 0..3 {
                            behind[c] = rec.color[c] * rec.alpha + (1.0 - rec.alpha) * behind[c];
                        }
                        let proj = projected[rec.splat as usize].as_ref().expect("recorded splat is projected");
                        splat_backward(
                            splats[rec.splat as usize].texture.as_ref(),
                            opacity[rec.splat as usize],
                            rec,
                            &dl_dc,
                            dl_da,
                            mode,
                            &proj.transform.matrix,
                            camera.mode,
                            &mut out.acc[local],
                            &mut out.texels[local],
                        );
                    }
                }
            }
            out
        })
        .collect();

    // Deterministic merge in tile order.
    let n = splats.len();
    let mut acc = vec![[0.0; 13]; n];
    let mut texels: Vec<Vec<f64>> = splats
        .iter()
        .map(|s| s.texture.as_ref().map_or_else(Vec::new, |t| vec![0.0; t.texels().len()]))
        .collect();
    let mut max_weight = vec![0.0f64; n];
    for tile in tiles {
        for (k, &id) in tile.bin.iter().enumerate() {
            let id = id as usize;
            for (a, b) in acc[id].iter_mut().zip(&tile.acc[k]) {
                *a += b;
            }
            for (a, b) in texels[id].iter_mut().zip(&tile.texels[k]) {
                *a += b;
            }
            max_weight[id] = max_weight[id].max(tile.max_weight[k]);
        }
    }

    let rot_w = camera.rotation();
    let mut out = Vec::with_capacity(n);
    for (id, (a, tex)) in acc.into_iter().zip(texels).enumerate() {
        let geom = &splats[id].geometry;
        let (tu, tv, _) = geom.frame();
        let s = geom.scale();
        let d_center = rot_w.transpose() * Vector3::new(a[0], a[1], a[2]);
        let d_a = rot_w.transpose() * Vector3::new(a[3], a[4], a[5]);
        let d_b = rot_w.transpose() * Vector3::new(a[6], a[7], a[8]);
        let d_q = quat_frame_adjoint(&geom.rotation, &(d_a * s.x), &(d_b * s.y));
        let mut base = [0.0; BASE_PARAMS];
        base[param::MEAN].copy_from_slice(d_center.as_slice());
        base[param::ROTATION].copy_from_slice(d_q.as_slice());
        base[param::LOG_SCALE.start] = s.x * tu.dot(&d_a);
        base[param::LOG_SCALE.start + 1] = s.y * tv.dot(&d_b);
        base[param::OPACITY] = a[9];
        base[param::COLOR].copy_from_slice(&a[10..13]);
        if base.iter().chain(&tex).any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { splat: id });
        }
        out.push(SplatGrad { base, texels: tex });
    }
    Ok(GradientSet { splats: out, max_weight })
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn splat_backward(
    texture: Option<&crate::texture::TexelGrid>,
    opacity: f64,
    rec: &TapeRecord,
    dl_dc: &[f64; 3],
    dl_da: f64,
    mode: WarpMode,
    transform: &Matrix3<f64>,
    camera_mode: CameraMode,
    acc: &mut CamAcc,
    tex_grad: &mut [f64],
) {
    let u = rec.u;
    let mut d_pre = [0.0; 3];
    for c in 0..3 {
        if rec.flags & (1 << (c + 1)) == 0 {
            d_pre[c] = dl_dc[c];
        }
        acc[10 + c] += d_pre[c];
    }
    let d_raw = if rec.flags & FLAG_ALPHA_CAPPED != 0 { 0.0 } else { dl_da };
    // alpha = o G(u) [sigmoid(texel alpha)] when uncapped
    let alpha = rec.alpha;
    acc[9] += d_raw * alpha * (1.0 - opacity);
    let mut d_u = -u * (d_raw * alpha);

    if let Some(t) = texture {
        let tc = canonical_to_texcoord(&u, mode);
        let b = Bilinear::at(t.dims(), &tc);
        let (tv, c) = (t.dims().1, t.channels().count());
        let data = t.texels();
        let taps = b.taps(tv, c);
        let mut d_tc = Vector2::zeros();
        for ch in 0..3 {
            if d_pre[ch] != 0.0 {
                d_tc += b.gradient(data, tv, c, ch) * d_pre[ch];
                for &(off, w) in &taps {
                    tex_grad[off + ch] += w * d_pre[ch];
                }
            }
        }
        if t.channels() == Channels::Rgba && d_raw != 0.0 {
            let logit = b.sample(data, tv, c)[3];
            let d_logit = d_raw * alpha * (1.0 - sigmoid(logit));
            d_tc += b.gradient(data, tv, c, 3) * d_logit;
            for &(off, w) in &taps {
                tex_grad[off + 3] += w * d_logit;
            }
        }
        d_u += texcoord_jacobian(&u, mode).transpose() * d_tc;
    }

    if d_u.x == 0.0 && d_u.y == 0.0 {
        return;
    }
    let lambda = match camera_mode {
        // K^-1 = [[1, 0, -u], [0, 1, -v], [0, 0, -z]] M  for  M = [a | b | center]^-1
        CameraMode::Perspective => transform.transpose() * Vector3::new(d_u.x, d_u.y, -(u.x * d_u.x + u.y * d_u.y)),
        CameraMode::Planar => transform.transpose() * Vector3::new(d_u.x, d_u.y, 0.0),
    };
    for k in 0..3 {
        acc[k] -= lambda[k];
        acc[3 + k] -= lambda[k] * u.x;
        acc[6 + k] -= lambda[k] * u.y;
    }
}

/// A scalar image loss with its gradient.
pub trait ImageLoss: Sync {
    fn eval(&self, image: &Image) -> (f64, Image);
}

impl<F: Fn(&Image) -> (f64, Image) + Sync> ImageLoss for F {
    fn eval(&self, image: &Image) -> (f64, Image) {
        self(image)
    }
}

/// `sum(weights * image) / n`, summed with Neumaier compensation so that
/// central differences are not swamped by summation rounding.
#[derive(Clone, Debug)]
pub struct LinearLoss {
    pub weights: Image,
}

impl LinearLoss {
    pub fn random(width: usize, height: usize, seed: u64) -> Self {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = (width * height * 3) as f64;
        let mut weights = Image::new(width, height);
        weights.data.iter_mut().for_each(|w| *w = rng.random_range(-1.0..1.0) / n);
        Self { weights }
    }

    /// Loss that reads a single channel of a single pixel.
    pub fn pixel(width: usize, height: usize, x: usize, y: usize, channel: usize) -> Self {
        let mut weights = Image::new(width, height);
        weights.data[(y * width + x) * 3 + channel] = 1.0;
        Self { weights }
    }
}

pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

impl ImageLoss for LinearLoss {
    fn eval(&self, image: &Image) -> (f64, Image) {
        let l = compensated_sum(image.data.iter().zip(&self.weights.data).map(|(a, b)| a * b));
        (l, self.weights.clone())
    }
}

/// Which scalar parameters a finite-difference check visits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ParamFilter {
    #[default]
    All,
    BaseColor,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FdEntry {
    pub splat: usize,
    /// Index into the base encoding, or `BASE_PARAMS + k` for texel channel `k`.
    pub param: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl FdEntry {
    pub fn relative_error(&self) -> f64 {
        let scale = self.analytic.abs().max(self.numeric.abs());
        if scale == 0.0 {
            0.0
        } else {
            (self.analytic - self.numeric).abs() / scale
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct FdReport {
    pub max_relative_error: f64,
    pub checked: usize,
    pub skipped: usize,
    pub worst: Option<FdEntry>,
}

/// Splat id, clamp flags and bilinear cell of one tape record.
type RecordSignature = (u32, u8, (usize, usize, usize, usize));

/// Structure of a tape that must match on both sides of a central difference
/// for the loss to be smooth in between: contributing splats and their order,
/// clamp states and the bilinear cell of every texture lookup.
fn tape_signature(scene: &Scene, mode: WarpMode, out: &RenderOutput) -> Vec<RecordSignature> {
    let tape = out.tape.as_ref().expect("signature needs a tape");
    let mut sig = Vec::new();
    for tile in &tape.tiles {
        for w in tile.offsets.windows(2) {
            sig.push((u32::MAX, 0, (0, 0, 0, 0)));
            for r in &tile.records[w[0] as usize..w[1] as usize] {
                let cell = scene.splats()[r.splat as usize]
                    .texture
                    .as_ref()
                    .map_or((0, 0, 0, 0), |t| Bilinear::at(t.dims(), &canonical_to_texcoord(&r.u, mode)).cell());
                sig.push((r.splat, r.flags, cell));
            }
        }
    }
    sig
}

fn perturbed(scene: &Scene, splat: usize, p: usize, delta: f64) -> Scene {
    let mut s = scene.clone();
    let target = &mut s.splats_mut()[splat];
    if p < BASE_PARAMS {
        let mut params = target.geometry.params();
        params[p] += delta;
        target.geometry.set_params(&params);
    } else {
        target.texture.as_mut().expect("texel parameter on untextured splat").texels_mut()[p - BASE_PARAMS] += delta;
    }
    s
}

/// Compare analytic gradients with central differences `(L(p+h) - L(p-h)) / 2h`
/// for every selected scalar parameter.
///
/// Parameters whose perturbation crosses a non-smooth point (cutoff edge,
/// clamp, depth swap, early stop, texel center) are skipped, as are geometric
/// parameters of splats with a hit within `10 h` of the cutoff radius.
pub fn finite_difference_check(
    scene: &Scene,
    camera: &Camera,
    mode: WarpMode,
    background: [f64; 3],
    loss: &dyn ImageLoss,
    h: f64,
    filter: ParamFilter,
) -> Result<FdReport> {
    let base = render(scene, camera, mode, background, true);
    let (_, dl) = loss.eval(&base.image);
    let grads = backward(scene, camera, mode, &base, &dl)?;

    let mut near_cut = vec![false; scene.len()];
    for tile in &base.tape.as_ref().expect("tape").tiles {
        for r in &tile.records {
            if (r.u.norm() - R_CUT).abs() < 10.0 * h {
                near_cut[r.splat as usize] = true;
            }
        }
    }

    let mut jobs = Vec::new();
    for (k, splat) in scene.splats().iter().enumerate() {
        match filter {
            ParamFilter::All => {
                let n = splat.parameter_count();
                jobs.extend((0..n).map(|p| (k, p)));
            }
            ParamFilter::BaseColor => jobs.extend(param::COLOR.map(|p| (k, p))),
        }
    }

    let results: Vec<Option<FdEntry>> = jobs
        .par_iter()
        .map(|&(k, p)| {
            if p < param::OPACITY && near_cut[k] {
                return None;
            }
            let plus = perturbed(scene, k, p, h);
            let minus = perturbed(scene, k, p, -h);
            let rp = render(&plus, camera, mode, background, true);
            let rm = render(&minus, camera, mode, background, true);
            if tape_signature(&plus, mode, &rp) != tape_signature(&minus, mode, &rm) {
                return None;
            }
            let numeric = (loss.eval(&rp.image).0 - loss.eval(&rm.image).0) / (2.0 * h);
            let analytic = if p < BASE_PARAMS { grads.splats[k].base[p] } else { grads.splats[k].texels[p - BASE_PARAMS] };
            Some(FdEntry { splat: k, param: p, analytic, numeric })
        })
        .collect();

    let mut report = FdReport::default();
    for r in results {
        let Some(e) = r else {
            report.skipped += 1;
            continue;
        };
        if e.analytic.abs().max(e.numeric.abs()) <= 1e-8 {
            continue;
        }
        report.checked += 1;
        let err = e.relative_error();
        if err > report.max_relative_error || report.worst.is_none() {
            report.max_relative_error = report.max_relative_error.max(err);
            report.worst = Some(e);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SplatGeometry;
    use crate::render::EPS_T;
    use crate::scene::Splat;
    use crate::texture::TexelGrid;
    use nalgebra::{Matrix4, Vector4};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cam() -> Camera {
        Camera::new(Matrix4::identity(), (20.0, 20.0), (7.5, 7.5), (16, 16), CameraMode::Perspective).unwrap()
    }

    fn fronto(z: f64, scale: f64, opacity: f64, color: [f64; 3]) -> SplatGeometry {
        SplatGeometry::new(Vector3::new(0.0, 0.0, z), Vector4::new(1.0, 0.0, 0.0, 0.0), Vector2::new(scale, scale), opacity, Vector3::from(color))
    }

    pub(crate) fn random_scene(rng: &mut impl Rng, n: usize, channels: Option<Channels>) -> Scene {
        let splats = (0..n)
            .map(|_| {
                let axis = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)).normalize();
                let (s, c) = (0.5 * rng.random_range(-1.0..1.0f64)).sin_cos();
                let g = SplatGeometry::new(
                    Vector3::new(rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4), rng.random_range(2.5..4.0)),
                    Vector4::new(c, axis.x * s, axis.y * s, axis.z * s),
                    Vector2::new(rng.random_range(0.08..0.3), rng.random_range(0.08..0.3)),
                    rng.random_range(0.2..0.85),
                    Vector3::from_fn(|_, _| rng.random_range(0.2..0.8)),
                );
                let texture = channels.map(|ch| {
                    let dims = (rng.random_range(1..5), rng.random_range(1..5));
                    let n = dims.0 * dims.1 * ch.count();
                    let texels = (0..n).map(|k| if k % ch.count() == 3 { rng.random_range(-1.0..3.0) } else { rng.random_range(-0.15..0.15) }).collect();
                    TexelGrid::new(dims, ch, texels, 8).unwrap()
                });
                Splat { geometry: g, texture }
            })
            .collect();
        Scene::new(splats)
    }

    #[test]
    fn base_color_gradient_is_blend_weight() {
        let scene = Scene::new(vec![Splat { geometry: fronto(2.0, 0.2, 0.6, [0.3, 0.4, 0.5]), texture: Some(TexelGrid::neutral((2, 2), Channels::Rgb, 8).unwrap()) }]);
        let out = render(&scene, &cam(), WarpMode::Axis, [0.0; 3], true);
        let loss = LinearLoss::pixel(16, 16, 7, 7, 0);
        let grads = backward(&scene, &cam(), WarpMode::Axis, &out, &loss.eval(&out.image).1).unwrap();
        let w = out.pixel_records(7, 7)[0].weight();
        assert_eq!(&grads.splats[0].base[param::COLOR], &[w, 0.0, 0.0]);
    }

    #[test]
    fn occluded_splat_gets_tiny_gradient() {
        let mut front = fronto(2.0, 0.3, 0.5, [0.2, 0.2, 0.2]);
        front.opacity_logit = 40.0;
        let back = fronto(3.0, 0.3, 0.7, [0.9, 0.1, 0.4]);
        let scene = Scene::new(vec![Splat::untextured(front), Splat::untextured(back)]);
        let out = render(&scene, &cam(), WarpMode::None, [0.0; 3], true);
        let loss = LinearLoss::pixel(16, 16, 7, 7, 1);
        let (_, dl) = loss.eval(&out.image);
        let grads = backward(&scene, &cam(), WarpMode::None, &out, &dl).unwrap();
        let dl_norm = dl.data.iter().map(|g| g * g).sum::<f64>().sqrt();
        let g = &grads.splats[1].base;
        let appearance = g[param::COLOR].iter().chain(std::iter::once(&g[param::OPACITY])).map(|x| x * x).sum::<f64>().sqrt();
        assert!(appearance <= EPS_T * dl_norm * (1.0 + 1e-9), "{appearance}");
        // Front alpha is capped, so its alpha path carries no gradient.
        assert_eq!(grads.splats[0].base[param::OPACITY], 0.0);
    }

    #[test]
    fn stale_tape_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut scene = random_scene(&mut rng, 3, None);
        let out = render(&scene, &cam(), WarpMode::None, [0.0; 3], true);
        scene.splats_mut()[0].geometry.mean.x += 0.01;
        let err = backward(&scene, &cam(), WarpMode::None, &out, &Image::new(16, 16)).unwrap_err();
        assert!(matches!(err, Error::StaleTape { .. }));
    }

    #[test]
    fn invisible_splats_get_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut splats = random_scene(&mut rng, 4, Some(Channels::Rgba)).splats().to_vec();
        let mut far = splats[0].clone();
        far.geometry.mean = Vector3::new(50.0, 0.0, 3.0);
        splats.push(far);
        let scene = Scene::new(splats);
        let out = render(&scene, &cam(), WarpMode::Radial, [0.1; 3], true);
        let loss = LinearLoss::random(16, 16, 3);
        let grads = backward(&scene, &cam(), WarpMode::Radial, &out, &loss.eval(&out.image).1).unwrap();
        let g = &grads.splats[4];
        assert!(g.base.iter().chain(&g.texels).all(|&x| x == 0.0));
        assert!(!grads.visible(4));
        assert_eq!(grads.max_weight[4], 0.0);
    }

    #[test]
    fn texel_gradients_partition_like_a_constant_texture() {
        // Single pixel loss: four bilinear texel gradients sum to the 1x1 one.
        let g = fronto(2.0, 0.3, 0.6, [0.4, 0.5, 0.6]);
        let tex4 = TexelGrid::new((3, 3), Channels::Rgb, vec![0.0; 27], 8).unwrap();
        let tex1 = TexelGrid::new((1, 1), Channels::Rgb, vec![0.0; 3], 8).unwrap();
        let loss = LinearLoss::pixel(16, 16, 8, 6, 2);
        let mut sums = Vec::new();
        for tex in [tex4, tex1] {
            let scene = Scene::new(vec![Splat { geometry: g.clone(), texture: Some(tex) }]);
            let out = render(&scene, &cam(), WarpMode::Axis, [0.0; 3], true);
            let grads = backward(&scene, &cam(), WarpMode::Axis, &out, &loss.eval(&out.image).1).unwrap();
            sums.push(grads.splats[0].texels.iter().skip(2).step_by(3).sum::<f64>());
        }
        assert!((sums[0] - sums[1]).abs() < 1e-15 * sums[1].abs().max(1.0));
        assert!(sums[1] > 0.0);
    }

    #[test]
    fn linear_toy_is_exact() {
        let scene = Scene::new(vec![Splat::untextured(fronto(2.0, 0.3, 0.6, [0.3, 0.6, 0.2]))]);
        let loss = LinearLoss::random(16, 16, 9);
        let r = finite_difference_check(&scene, &cam(), WarpMode::None, [0.0; 3], &loss, 1e-3, ParamFilter::BaseColor).unwrap();
        assert_eq!(r.checked, 3);
        assert!(r.max_relative_error < 1e-9, "{r:?}");
    }

    #[test]
    fn random_scenes_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (mode, channels) in [(WarpMode::Axis, Some(Channels::Rgba)), (WarpMode::Radial, Some(Channels::Rgb)), (WarpMode::None, None)] {
            let scene = random_scene(&mut rng, 5, channels);
            let loss = LinearLoss::random(16, 16, rng.random());
            let r = finite_difference_check(&scene, &cam(), mode, [0.2, 0.1, 0.3], &loss, 1e-5, ParamFilter::All).unwrap();
            assert!(r.checked > 40, "{r:?}");
            assert!(r.max_relative_error < 1e-4, "{mode:?}: {r:?}");
        }
    }

    #[test]
    fn planar_scene_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let splats = (0..6)
            .map(|_| {
                let angle: f64 = rng.random_range(-3.0..3.0);
                let g = SplatGeometry::new(
                    Vector3::new(rng.random_range(3.0..13.0), rng.random_range(3.0..13.0), rng.random_range(1.0..2.0)),
                    Vector4::new((0.5 * angle).cos(), 0.05, -0.03, (0.5 * angle).sin()),
                    Vector2::new(rng.random_range(1.0..3.0), rng.random_range(1.0..3.0)),
                    rng.random_range(0.3..0.8),
                    Vector3::from_fn(|_, _| rng.random_range(0.2..0.8)),
                );
                let texels = (0..12).map(|_| rng.random_range(-0.1..0.1)).collect();
                Splat { geometry: g, texture: Some(TexelGrid::new((2, 2), Channels::Rgb, texels, 8).unwrap()) }
            })
            .collect();
        let scene = Scene::new(splats);
        let loss = LinearLoss::random(16, 16, 6);
        let r = finite_difference_check(&scene, &Camera::planar(16, 16), WarpMode::Axis, [0.0; 3], &loss, 1e-5, ParamFilter::All).unwrap();
        assert!(r.checked > 50, "{r:?}");
        assert!(r.max_relative_error < 1e-4, "{r:?}");
    }

    #[test]
    fn thread_count_does_not_change_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let scene = random_scene(&mut rng, 10, Some(Channels::Rgba));
        let cam = Camera::new(Matrix4::identity(), (40.0, 40.0), (20.0, 17.0), (40, 34), CameraMode::Perspective).unwrap();
        let loss = LinearLoss::random(40, 34, 7);
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                let out = render(&scene, &cam, WarpMode::Axis, [0.0; 3], true);
                backward(&scene, &cam, WarpMode::Axis, &out, &loss.eval(&out.image).1).unwrap()
            })
        };
        let a = run(1);
        assert_eq!(a, run(3));
        assert_eq!(a, run(8));
    }
}
