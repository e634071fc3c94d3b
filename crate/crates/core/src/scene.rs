use std::sync::atomic::{AtomicU64, Ordering};

use crate::geometry::{SplatGeometry, BASE_PARAMS};
use crate::texture::TexelGrid;

/// Linear RGB image, row-major, three interleaved channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height * 3] }
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut img = Self::new(width, height);
        img.data.chunks_exact_mut(3).for_each(|p| p.copy_from_slice(&rgb));
        img
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let k = (y * self.width + x) * 3;
        [self.data[k], self.data[k + 1], self.data[k + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let k = (y * self.width + x) * 3;
        self.data[k..k + 3].copy_from_slice(&rgb);
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.data.len() == other.data.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splat {
    pub geometry: SplatGeometry,
    pub texture: Option<TexelGrid>,
}

impl Splat {
    pub fn untextured(geometry: SplatGeometry) -> Self {
        Self { geometry, texture: None }
    }

    /// Scalar parameters: 13 base values plus every stored texel channel.
    pub fn parameter_count(&self) -> usize {
        BASE_PARAMS + self.texture.as_ref().map_or(0, |t| t.texels().len())
    }
}

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn fresh_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

/// Splat collection with a version stamp that changes on every mutable
/// access, so render tapes can be matched to the state that produced them.
#[derive(Debug)]
pub struct Scene {
    splats: Vec<Splat>,
    version: u64,
}

impl Clone for Scene {
    fn clone(&self) -> Self {
        // Clones are independent states; they share the version until either
        // side is mutated, which is correct because their content is equal.
        Self { splats: self.splats.clone(), version: self.version }
    }
}

impl PartialEq for Scene {
    fn eq(&self, other: &Self) -> bool {
        self.splats == other.splats
    }
}

impl Default for Scene {
    fn default() -> Self {
        Self::new(Vec::new())
    }
}

impl Scene {
    pub fn new(splats: Vec<Splat>) -> Self {
        Self { splats, version: fresh_version() }
    }

    pub fn splats(&self) -> &[Splat] {
        &self.splats
    }

    pub fn splats_mut(&mut self) -> &mut Vec<Splat> {
        self.version = fresh_version();
        &mut self.splats
    }

    pub fn len(&self) -> usize {
        self.splats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splats.is_empty()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Total scalar parameter count (13 per splat plus texel channels).
    pub fn parameter_count(&self) -> usize {
        self.splats.iter().map(Splat::parameter_count).sum()
    }

    /// Total texels (grid cells) across active textures.
    pub fn texel_count(&self) -> usize {
        self.splats.iter().filter_map(|s| s.texture.as_ref()).map(TexelGrid::texel_count).sum()
    }

    pub fn active_textures(&self) -> usize {
        self.splats.iter().filter(|s| s.texture.is_some()).count()
    }
}
