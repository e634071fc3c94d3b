//! Synthetic targets and matching initial scenes on a planar camera.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Vector2, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{Camera, SplatGeometry};
use crate::io::srgb_to_linear;
use crate::scene::{Image, Scene, Splat};
use crate::texture::{Channels, TexelGrid, DEFAULT_T_MAX};
use crate::train::View;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ToyKind {
    /// Smooth ramp on the left half, fine checkerboard on the right half.
    SplitFrequency,
    Gradient,
    /// Procedural image with smooth regions, edges and fine texture.
    Photo,
}

impl FromStr for ToyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "split-frequency" => Ok(ToyKind::SplitFrequency),
            "gradient" => Ok(ToyKind::Gradient),
            "photo" => Ok(ToyKind::Photo),
            other => Err(Error::InvalidConfig(format!("unknown toy kind {other:?}"))),
        }
    }
}

impl fmt::Display for ToyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ToyKind::SplitFrequency => "split-frequency",
            ToyKind::Gradient => "gradient",
            ToyKind::Photo => "photo",
        })
    }
}

/// Checker cell size on the right half of the split-frequency target.
pub const CHECKER_CELL: f64 = 4.0;
/// Supersampling factor per axis for area-averaged targets.
const SUPERSAMPLE: usize = 4;
/// Sub-pixel offsets of the split-frequency views.
pub const SPLIT_VIEW_OFFSETS: [(f64, f64); 6] = [(0.0, 0.0), (0.5, 0.0), (0.0, 0.5), (0.5, 0.5), (0.25, 0.75), (0.75, 0.25)];

/// Target images are specified in sRGB and stored linear.
fn srgb_pixel(rgb: [f64; 3]) -> [f64; 3] {
    rgb.map(|c| srgb_to_linear(c.clamp(0.0, 1.0)))
}

/// Split-frequency pattern at continuous image coordinates, linear RGB.
fn split_frequency_at(x: f64, y: f64, width: usize, height: usize) -> [f64; 3] {
    let half = (width / 2) as f64;
    if x < half {
        let t = x / half;
        let s = y / height as f64;
        srgb_pixel([0.35 + 0.3 * t, 0.45 + 0.1 * s, 0.6 - 0.2 * t])
    } else if ((x / CHECKER_CELL).floor() as i64 + (y / CHECKER_CELL).floor() as i64) % 2 == 0 {
        srgb_pixel([0.8, 0.35, 0.25])
    } else {
        srgb_pixel([0.25, 0.55, 0.8])
    }
}

/// Box-filtered split-frequency image seen through a planar camera shifted
/// by `offset` pixels.
fn split_frequency(width: usize, height: usize, offset: (f64, f64)) -> Image {
    let n = SUPERSAMPLE as f64;
    Image::from_fn(width, height, |x, y| {
        let mut acc = [0.0; 3];
        for sy in 0..SUPERSAMPLE {
            for sx in 0..SUPERSAMPLE {
                let px = x as f64 + offset.0 + (sx as f64 + 0.5) / n;
                let py = y as f64 + offset.1 + (sy as f64 + 0.5) / n;
                let c = split_frequency_at(px, py, width, height);
                for k in 0..3 {
                    acc[k] += c[k] / (n * n);
                }
            }
        }
        acc
    })
}

pub fn target_image(kind: ToyKind, width: usize, height: usize, seed: u64) -> Image {
    match kind {
        ToyKind::SplitFrequency => split_frequency(width, height, (0.0, 0.0)),
        ToyKind::Gradient => Image::from_fn(width, height, |x, y| {
            let (u, v) = (x as f64 / width as f64, y as f64 / height as f64);
            srgb_pixel([0.2 + 0.6 * u, 0.3 + 0.5 * v, 0.7 - 0.4 * u * v])
        }),
        ToyKind::Photo => photo(width, height, seed),
    }
}

/// Planar cameras and their targets. Split-frequency yields several views
/// jittered by sub-pixel offsets; the other kinds yield one unshifted view.
pub fn toy_views(kind: ToyKind, width: usize, height: usize, seed: u64) -> Vec<View> {
    match kind {
        ToyKind::SplitFrequency => SPLIT_VIEW_OFFSETS
            .iter()
            .map(|&(dx, dy)| View { camera: shifted_camera(width, height, dx, dy), target: split_frequency(width, height, (dx, dy)) })
            .collect(),
        k => vec![View { camera: Camera::planar(width, height), target: target_image(k, width, height, seed) }],
    }
}

/// Planar camera whose pixel (x, y) covers world [x + dx, x + dx + 1) × [y + dy, y + dy + 1).
pub fn shifted_camera(width: usize, height: usize, dx: f64, dy: f64) -> Camera {
    Camera { cx: -dx, cy: -dy, ..Camera::planar(width, height) }
}

fn photo(width: usize, height: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // 1/f noise from random sinusoids.
    let waves: Vec<(f64, f64, f64, f64)> = (0..48)
        .map(|k| {
            let f = 1.0 + k as f64 * 0.6;
            let theta: f64 = rng.random_range(0.0..PI);
            (f * theta.cos(), f * theta.sin(), rng.random_range(0.0..2.0 * PI), 0.25 / f)
        })
        .collect();
    let blobs: Vec<([f64; 2], f64, [f64; 3])> = (0..7)
        .map(|_| {
            (
                [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)],
                rng.random_range(0.06..0.2),
                [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)],
            )
        })
        .collect();
    Image::from_fn(width, height, |x, y| {
        let (u, v) = ((x as f64 + 0.5) / width as f64, (y as f64 + 0.5) / height as f64);
        let horizon = 0.55 + 0.08 * (6.0 * u).sin() + 0.04 * (17.0 * u + 1.0).sin();
        let mut c = if v < horizon { [0.45 + 0.3 * v, 0.6 + 0.2 * v, 0.85] } else { [0.35, 0.45 - 0.2 * (v - horizon), 0.2] };
        for (center, r, col) in &blobs {
            let d = ((u - center[0]).powi(2) + (v - center[1]).powi(2)).sqrt();
            let edge = ((r - d) * width as f64 * 0.7).clamp(0.0, 1.0);
            for k in 0..3 {
                c[k] = c[k] * (1.0 - edge) + col[k] * edge;
            }
        }
        let n: f64 = waves.iter().map(|(a, b, p, amp)| amp * (2.0 * PI * (a * u + b * v) * 8.0 + p).sin()).sum();
        srgb_pixel([c[0] + 0.5 * n, c[1] + 0.45 * n, c[2] + 0.4 * n])
    })
}

/// Untextured splats on a jittered grid over the planar image, colored from
/// the target at their centers.
pub fn init_scene(target: &Image, n_splats: usize, seed: u64, texture: Option<((usize, usize), Channels)>) -> Result<Scene> {
    if n_splats == 0 {
        return Err(Error::InvalidConfig("at least one splat is required".into()));
    }
    let (w, h) = (target.width as f64, target.height as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nx = ((n_splats as f64 * w / h).sqrt().round() as usize).max(1);
    let ny = n_splats.div_ceil(nx);
    let (cw, ch) = (w / nx as f64, h / ny as f64);
    let mut cells: Vec<(usize, usize)> = (0..ny).flat_map(|j| (0..nx).map(move |i| (i, j))).collect();
    // Drop surplus cells at random so coverage stays even.
    while cells.len() > n_splats {
        let k = rng.random_range(0..cells.len());
        cells.remove(k);
    }
    let mut splats = Vec::with_capacity(n_splats);
    for (i, j) in cells {
        let x = (i as f64 + 0.5 + rng.random_range(-0.3..0.3)) * cw;
        let y = (j as f64 + 0.5 + rng.random_range(-0.3..0.3)) * ch;
        let angle: f64 = rng.random_range(0.0..PI);
        let sigma = 0.5 * cw.min(ch);
        let base = target.pixel((x as usize).min(target.width - 1), (y as usize).min(target.height - 1));
        let geometry = SplatGeometry::new(
            Vector3::new(x, y, rng.random_range(1.0..2.0)),
            Vector4::new((0.5 * angle).cos(), 0.0, 0.0, (0.5 * angle).sin()),
            Vector2::new(sigma * rng.random_range(0.8..1.25), sigma * rng.random_range(0.8..1.25)),
            0.6,
            Vector3::from(base),
        );
        let texture = match texture {
            Some((dims, channels)) => Some(TexelGrid::neutral(dims, channels, DEFAULT_T_MAX)?),
            None => None,
        };
        splats.push(Splat { geometry, texture });
    }
    Ok(Scene::new(splats))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_frequency_halves() {
        let img = target_image(ToyKind::SplitFrequency, 32, 32, 0);
        assert_ne!(img.pixel(16, 0), img.pixel(20, 0));
        assert_eq!(img.pixel(16, 0), img.pixel(24, 0));
        let d = (0..3).map(|c| (img.pixel(0, 5)[c] - img.pixel(1, 5)[c]).abs()).fold(0.0, f64::max);
        assert!(d < 0.02);
    }

    #[test]
    fn shifted_views_blend_checker_cells() {
        let views = toy_views(ToyKind::SplitFrequency, 32, 32, 0);
        assert_eq!(views.len(), SPLIT_VIEW_OFFSETS.len());
        // Half-pixel shift straddles two cells at x = 19: the average of both colors.
        let (a, b) = (split_frequency_at(19.5, 0.5, 32, 32), split_frequency_at(20.5, 0.5, 32, 32));
        let p = views[1].target.pixel(19, 0);
        for k in 0..3 {
            assert!((p[k] - 0.5 * (a[k] + b[k])).abs() < 1e-12);
        }
        // The unshifted view matches the point pattern inside cells.
        let (p, q) = (views[0].target.pixel(17, 0), split_frequency_at(17.5, 0.5, 32, 32));
        assert!((0..3).all(|k| (p[k] - q[k]).abs() < 1e-15));
        // A linear ramp is unchanged by box filtering, apart from the sRGB curve.
        let d = views[0].target.pixel(3, 3)[0] - split_frequency_at(3.5, 3.5, 32, 32)[0];
        assert!(d.abs() < 1e-4);
    }

    #[test]
    fn shifted_camera_moves_pixel_centers() {
        let cam = shifted_camera(8, 8, 0.5, 0.25);
        let scene = Scene::new(vec![Splat {
            geometry: SplatGeometry::new(Vector3::new(4.5 + 0.5, 4.5 + 0.25, 1.0), Vector4::new(1.0, 0.0, 0.0, 0.0), Vector2::new(0.6, 0.6), 0.9, Vector3::new(1.0, 1.0, 1.0)),
            texture: None,
        }]);
        let img = crate::render::render(&scene, &cam, crate::texture::WarpMode::None, [0.0; 3], false).image;
        let c = img.pixel(4, 4)[0];
        assert!(c > img.pixel(3, 4)[0] && c > img.pixel(5, 4)[0] && c > img.pixel(4, 3)[0] && c > img.pixel(4, 5)[0]);
        assert!((img.pixel(3, 4)[0] - img.pixel(5, 4)[0]).abs() < 1e-12);
    }

    #[test]
    fn init_scene_has_requested_size_and_is_deterministic() {
        let img = target_image(ToyKind::Photo, 40, 30, 1);
        let a = init_scene(&img, 37, 5, Some(((4, 4), Channels::Rgb))).unwrap();
        let b = init_scene(&img, 37, 5, Some(((4, 4), Channels::Rgb))).unwrap();
        assert_eq!(a.len(), 37);
        assert_eq!(a, b);
        assert_eq!(a.texel_count(), 37 * 16);
        assert!(a.splats().iter().all(|s| (0.0..40.0).contains(&s.geometry.mean.x) && (0.0..30.0).contains(&s.geometry.mean.y)));
    }

    #[test]
    fn photo_values_are_in_range() {
        let img = target_image(ToyKind::Photo, 64, 64, 3);
        assert!(img.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
