//! Forward rasterization: per-pixel ray-splat intersection, exact per-pixel
//! depth ordering and front-to-back alpha blending.
//!
//! Work is split into fixed 16x16 tiles. Each tile is processed independently
//! and results are gathered in tile order, so the output does not depend on
//! how many worker threads run the tiles.

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;

use crate::geometry::{gaussian_weight, sigmoid, Camera, CameraMode, CanonicalPoint, RayTransform, SplatGeometry, R_CUT};
use crate::scene::{Image, Scene};
use crate::texture::{canonical_to_texcoord, Bilinear, Channels, TexelGrid, WarpMode};

/// Transmittance early-stop threshold; also caps per-splat alpha at `1 - EPS_T`.
pub const EPS_T: f64 = 1e-4;

pub const TILE: usize = 16;

pub const FLAG_ALPHA_CAPPED: u8 = 1;
/// Bits 1..=3: color channel was clamped into `[0, 1]`.
pub const FLAG_COLOR_CLAMP: u8 = 0b1110;

/// One blended contribution, in front-to-back order within its pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TapeRecord {
    pub splat: u32,
    pub flags: u8,
    pub u: Vector2<f64>,
    pub depth: f64,
    pub alpha: f64,
    /// Transmittance in front of this splat.
    pub transmittance: f64,
    pub color: [f64; 3],
}

impl TapeRecord {
    /// Blend weight `alpha * prod_{j<i} (1 - alpha_j)`.
    #[inline]
    pub fn weight(&self) -> f64 {
        self.alpha * self.transmittance
    }
}

/// Contributions of one tile: `offsets[p]..offsets[p + 1]` index the
/// records of the tile's `p`-th pixel (row-major inside the tile).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TileTape {
    pub offsets: Vec<u32>,
    pub records: Vec<TapeRecord>,
    /// Splat ids whose screen bounds touch the tile, ascending.
    pub bin: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tape {
    pub tiles: Vec<TileTape>,
}

#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub image: Image,
    pub final_transmittance: Vec<f64>,
    pub tape: Option<Tape>,
    pub background: [f64; 3],
    pub scene_version: u64,
    pub tiles_x: usize,
    pub tiles_y: usize,
}

impl RenderOutput {
    /// Pixel rectangle `(x0, y0, x1, y1)` (exclusive end) of tile `t`.
    pub fn tile_rect(&self, t: usize) -> (usize, usize, usize, usize) {
        tile_rect(t, self.tiles_x, self.image.width, self.image.height)
    }

    /// Records of pixel `(x, y)`, front to back.
    pub fn pixel_records(&self, x: usize, y: usize) -> &[TapeRecord] {
        let tape = self.tape.as_ref().expect("render was run without a tape");
        let t = (y / TILE) * self.tiles_x + x / TILE;
        let (x0, y0, x1, _) = self.tile_rect(t);
        let p = (y - y0) * (x1 - x0) + (x - x0);
        let tile = &tape.tiles[t];
        &tile.records[tile.offsets[p] as usize..tile.offsets[p + 1] as usize]
    }
}

fn tile_rect(t: usize, tiles_x: usize, width: usize, height: usize) -> (usize, usize, usize, usize) {
    let (tx, ty) = (t % tiles_x, t / tiles_x);
    let x0 = tx * TILE;
    let y0 = ty * TILE;
    (x0, y0, (x0 + TILE).min(width), (y0 + TILE).min(height))
}

/// Per-view splat data shared by forward and backward passes.
#[derive(Clone, Debug)]
pub struct Projected {
    pub transform: RayTransform,
    /// Inclusive pixel bounds `(x0, y0, x1, y1)`.
    pub bounds: (usize, usize, usize, usize),
}

/// Inclusive pixel bounds covering the splat's `R_CUT` ellipse, or `None` if
/// it falls outside the image.
pub fn screen_bounds(g: &SplatGeometry, camera: &Camera) -> Option<(usize, usize, usize, usize)> {
    let (tu, tv, _) = g.frame();
    let s = g.scale();
    let rot = camera.rotation();
    let center = camera.to_camera(&g.mean);
    let a = rot * tu * (s.x * R_CUT);
    let b = rot * tv * (s.y * R_CUT);
    let full = (0, 0, camera.width - 1, camera.height - 1);
    let mut lo = Vector2::repeat(f64::INFINITY);
    let mut hi = Vector2::repeat(f64::NEG_INFINITY);
    for (su, sv) in [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)] {
        let corner: Vector3<f64> = center + a * su + b * sv;
        if camera.mode == CameraMode::Perspective && corner.z <= 1e-6 {
            // Part of the footprint is behind the eye; fall back to the full frame.
            return Some(full);
        }
        let p = camera.project_camera_point(&corner)?;
        lo = lo.inf(&p);
        hi = hi.sup(&p);
    }
    // Pixel centers sit at k + 0.5; widen slightly so boundary pixels are kept.
    let pad = 1e-7;
    let x0 = (lo.x - 0.5 - pad).ceil().max(0.0);
    let y0 = (lo.y - 0.5 - pad).ceil().max(0.0);
    let x1 = (hi.x - 0.5 + pad).floor().min(camera.width as f64 - 1.0);
    let y1 = (hi.y - 0.5 + pad).floor().min(camera.height as f64 - 1.0);
    if !(x0 <= x1 && y0 <= y1) {
        return None;
    }
    Some((x0 as usize, y0 as usize, x1 as usize, y1 as usize))
}

/// Ray transforms and screen bounds for every splat; `None` marks splats that
/// are singular or off-screen in this view.
pub fn project_scene(scene: &Scene, camera: &Camera) -> Vec<Option<Projected>> {
    scene
        .splats()
        .par_iter()
        .map(|s| {
            let transform = RayTransform::for_splat(&s.geometry, camera).ok()?;
            let bounds = screen_bounds(&s.geometry, camera)?;
            Some(Projected { transform, bounds })
        })
        .collect()
}

/// Splat ids per tile, ascending.
pub fn bin_tiles(projected: &[Option<Projected>], tiles_x: usize, tiles_y: usize) -> Vec<Vec<u32>> {
    let mut bins = vec![Vec::new(); tiles_x * tiles_y];
    for (id, p) in projected.iter().enumerate() {
        let Some(p) = p else { continue };
        let (x0, y0, x1, y1) = p.bounds;
        for ty in y0 / TILE..=y1 / TILE {
            for tx in x0 / TILE..=x1 / TILE {
                bins[ty * tiles_x + tx].push(id as u32);
            }
        }
    }
    bins
}

/// Alpha and color of one splat at one canonical point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Shade {
    pub alpha: f64,
    pub color: [f64; 3],
    pub flags: u8,
}

/// Shade a splat at `u` (assumed inside the cutoff).
#[inline]
pub fn shade(g: &SplatGeometry, texture: Option<&TexelGrid>, u: &Vector2<f64>, mode: WarpMode) -> Shade {
    let mut raw = g.opacity() * gaussian_weight(u);
    let mut pre = [g.base_color.x, g.base_color.y, g.base_color.z];
    if let Some(t) = texture {
        let tc = canonical_to_texcoord(u, mode);
        let s = Bilinear::at(t.dims(), &tc).sample(t.texels(), t.dims().1, t.channels().count());
        for c in 0..3 {
            pre[c] += s[c];
        }
        if t.channels() == Channels::Rgba {
            raw *= sigmoid(s[3]);
        }
    }
    let mut flags = 0;
    let cap = 1.0 - EPS_T;
    let alpha = if raw > cap {
        flags |= FLAG_ALPHA_CAPPED;
        cap
    } else {
        raw.max(0.0)
    };
    let mut color = [0.0; 3];
    for c in 0..3 {
        if !(0.0..=1.0).contains(&pre[c]) {
            flags |= 1 << (c + 1);
        }
        color[c] = pre[c].clamp(0.0, 1.0);
    }
    Shade { alpha, color, flags }
}

/// `o * G(u)` times the sampled texture alpha, capped at `1 - EPS_T`.
pub fn effective_alpha(g: &SplatGeometry, texture: Option<&TexelGrid>, u: &CanonicalPoint, mode: WarpMode) -> f64 {
    shade(g, texture, &u.u, mode).alpha
}

/// `clamp01(base_color + sampled offset)`.
pub fn effective_color(g: &SplatGeometry, texture: Option<&TexelGrid>, u: &CanonicalPoint, mode: WarpMode) -> [f64; 3] {
    shade(g, texture, &u.u, mode).color
}

struct TileResult {
    rgb: Vec<[f64; 3]>,
    transmittance: Vec<f64>,
    tape: TileTape,
}

pub fn render(scene: &Scene, camera: &Camera, mode: WarpMode, background: [f64; 3], keep_tape: bool) -> RenderOutput {
    let (w, h) = (camera.width, camera.height);
    let tiles_x = w.div_ceil(TILE);
    let tiles_y = h.div_ceil(TILE);
    let projected = project_scene(scene, camera);
    let bins = bin_tiles(&projected, tiles_x, tiles_y);
    let splats = scene.splats();

    let results: Vec<TileResult> = bins
        .into_par_iter()
        .enumerate()
        .map(|(t, bin)| {
            let (x0, y0, x1, y1) = tile_rect(t, tiles_x, w, h);
            let npix = (x1 - x0) * (y1 - y0);
            let mut rgb = Vec::with_capacity(npix);
            let mut trans = Vec::with_capacity(npix);
            let mut offsets = Vec::with_capacity(if keep_tape { npix + 1 } else { 0 });
            let mut records = Vec::new();
            let mut hits: Vec<(f64, u32, Vector2<f64>)> = Vec::with_capacity(bin.len());
            let mut pixel_records: Vec<TapeRecord> = Vec::new();
            for py in y0..y1 {
                for px in x0..x1 {
                    hits.clear();
                    let ray = camera.pixel_ray(px, py);
                    for &id in &bin {
                        let p = projected[id as usize].as_ref().expect("binned splats are projected");
                        let (bx0, by0, bx1, by1) = p.bounds;
                        if px < bx0 || px > bx1 || py < by0 || py > by1 {
                            continue;
                        }
                        let Ok(hit) = p.transform.intersect(&ray) else { continue };
                        if hit.radius_sq() > R_CUT * R_CUT {
                            continue;
                        }
                        hits.push((hit.depth, id, hit.u));
                    }
                    hits.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

                    let mut color = [0.0; 3];
                    let mut t_acc = 1.0;
                    pixel_records.clear();
                    for &(depth, id, u) in &hits {
                        let splat = &splats[id as usize];
                        let s = shade(&splat.geometry, splat.texture.as_ref(), &u, mode);
                        let wgt = s.alpha * t_acc;
                        for c in 0..3 {
                            color[c] += s.color[c] * wgt;
                        }
                        if keep_tape {
                            pixel_records.push(TapeRecord {
                                splat: id,
                                flags: s.flags,
                                u,
                                depth,
                                alpha: s.alpha,
                                transmittance: t_acc,
                                color: s.color,
                            });
                        }
                        t_acc *= 1.0 - s.alpha;
                        if t_acc < EPS_T {
                            break;
                        }
                    }
                    for c in 0..3 {
                        color[c] += t_acc * background[c];
                    }
                    rgb.push(color);
                    trans.push(t_acc);
                    if keep_tape {
                        offsets.push(records.len() as u32);
                        records.extend_from_slice(&pixel_records);
                    }
                }
            }
            if keep_tape {
                offsets.push(records.len() as u32);
            }
            TileResult { rgb, transmittance: trans, tape: TileTape { offsets, records, bin } }
        })
        .collect();

    let mut image = Image::new(w, h);
    let mut final_transmittance = vec![0.0; w * h];
    let mut tiles = Vec::with_capacity(if keep_tape { results.len() } else { 0 });
    for (t, r) in results.into_iter().enumerate() {
        let (x0, y0, x1, y1) = tile_rect(t, tiles_x, w, h);
        let mut k = 0;
        for py in y0..y1 {
            for px in x0..x1 {
                image.set_pixel(px, py, r.rgb[k]);
                final_transmittance[py * w + px] = r.transmittance[k];
                k += 1;
            }
        }
        if keep_tape {
            tiles.push(r.tape);
        }
    }
    RenderOutput {
        image,
        final_transmittance,
        tape: keep_tape.then_some(Tape { tiles }),
        background,
        scene_version: scene.version(),
        tiles_x,
        tiles_y,
    }
}
