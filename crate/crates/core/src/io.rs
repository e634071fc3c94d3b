//! Scene, checkpoint, image and metrics files.
//!
//! Scenes and checkpoints are strict JSON: unknown fields are rejected and
//! fixed-size arrays must have exact lengths. Floats use shortest
//! round-trip formatting, so load/save cycles are bitwise stable. Images
//! are 8-bit sRGB PNGs converted to linear RGB on load.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Matrix4, Vector2, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Camera, CameraMode, SplatGeometry};
use crate::growth::{GrowthEvent, GrowthLedger};
use crate::optim::SceneOptimizer;
use crate::scene::{Image, Scene, Splat};
use crate::texture::{Channels, TexelGrid, WarpMode, DEFAULT_T_MAX};
use crate::train::{MetricsRow, View, METRICS_HEADER};

pub const FORMAT_VERSION: u32 = 1;

/// Quaternions further than this from unit length are renormalized on load.
const QUAT_RENORM_TOL: f64 = 1e-12;
const QUAT_WARN_TOL: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraEntry {
    pub mode: CameraMode,
    /// Row-major world-to-camera matrix.
    pub world_to_camera: [f64; 16],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Target image, relative to the scene file's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextureEntry {
    pub dims: [usize; 2],
    pub channels: Channels,
    pub texels: Vec<f64>,
    #[serde(default)]
    pub growth_steps: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplatEntry {
    pub mean: [f64; 3],
    /// `(w, x, y, z)`.
    pub quaternion: [f64; 4],
    pub log_scale: [f64; 2],
    pub opacity_logit: f64,
    pub base_color: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub texture: Option<TextureEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub version: u32,
    pub warp_mode: WarpMode,
    pub cameras: Vec<CameraEntry>,
    pub splats: Vec<SplatEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub scene: SceneFile,
    pub step: u64,
    pub seed: u64,
    pub optimizer: SceneOptimizer,
    pub ledger: GrowthLedger,
}

impl CameraEntry {
    pub fn from_camera(c: &Camera, target: Option<String>) -> Self {
        let mut m = [0.0; 16];
        for r in 0..4 {
            for k in 0..4 {
                m[r * 4 + k] = c.world_to_camera[(r, k)];
            }
        }
        Self { mode: c.mode, world_to_camera: m, fx: c.fx, fy: c.fy, cx: c.cx, cy: c.cy, width: c.width, height: c.height, target }
    }

    pub fn camera(&self) -> Result<Camera> {
        Camera::new(
            Matrix4::from_row_slice(&self.world_to_camera),
            (self.fx, self.fy),
            (self.cx, self.cy),
            (self.width, self.height),
            self.mode,
        )
    }
}

impl SplatEntry {
    pub fn from_splat(s: &Splat) -> Self {
        let g = &s.geometry;
        Self {
            mean: g.mean.into(),
            quaternion: g.rotation.into(),
            log_scale: g.log_scale.into(),
            opacity_logit: g.opacity_logit,
            base_color: g.base_color.into(),
            texture: s.texture.as_ref().map(|t| TextureEntry {
                dims: [t.dims().0, t.dims().1],
                channels: t.channels(),
                texels: t.texels().to_vec(),
                growth_steps: t.growth_steps,
            }),
        }
    }

    pub fn splat(&self, index: usize, t_max: usize) -> Result<Splat> {
        let mut rotation = Vector4::from(self.quaternion);
        let norm = rotation.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::InvalidScene(format!("splat {index}: quaternion has norm {norm}")));
        }
        if (norm - 1.0).abs() > QUAT_WARN_TOL {
            log::warn!("splat {index}: quaternion norm {norm} renormalized");
        }
        if (norm - 1.0).abs() > QUAT_RENORM_TOL {
            rotation /= norm;
        }
        let geometry = SplatGeometry {
            mean: Vector3::from(self.mean),
            rotation,
            log_scale: Vector2::from(self.log_scale),
            opacity_logit: self.opacity_logit,
            base_color: Vector3::from(self.base_color),
        };
        let texture = match &self.texture {
            Some(t) => {
                let mut grid = TexelGrid::new((t.dims[0], t.dims[1]), t.channels, t.texels.clone(), t_max)
                    .map_err(|e| Error::InvalidScene(format!("splat {index}: {e}")))?;
                grid.growth_steps = t.growth_steps;
                Some(grid)
            }
            None => None,
        };
        Ok(Splat { geometry, texture })
    }
}

impl SceneFile {
    pub fn from_scene(scene: &Scene, cameras: &[CameraEntry], warp_mode: WarpMode) -> Self {
        Self {
            version: FORMAT_VERSION,
            warp_mode,
            cameras: cameras.to_vec(),
            splats: scene.splats().iter().map(SplatEntry::from_splat).collect(),
        }
    }

    fn check_version(&self) -> Result<()> {
        if self.version != FORMAT_VERSION {
            return Err(Error::InvalidScene(format!("unsupported version {} (expected {FORMAT_VERSION})", self.version)));
        }
        Ok(())
    }

    pub fn scene(&self) -> Result<Scene> {
        self.check_version()?;
        let splats = self.splats.iter().enumerate().map(|(k, s)| s.splat(k, DEFAULT_T_MAX)).collect::<Result<_>>()?;
        Ok(Scene::new(splats))
    }

    pub fn cameras(&self) -> Result<Vec<Camera>> {
        self.cameras.iter().map(CameraEntry::camera).collect()
    }

    /// Cameras paired with their target images, resolved against `base_dir`.
    pub fn views(&self, base_dir: &Path) -> Result<Vec<View>> {
        self.cameras
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let path = c.target.as_ref().ok_or_else(|| Error::InvalidScene(format!("camera {k} has no target image")))?;
                let target = read_png(&base_dir.join(path))?;
                Ok(View { camera: c.camera()?, target })
            })
            .collect()
    }
}

fn parse_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let file = File::open(path)?;
    let value = serde_json::from_reader(BufReader::new(file))?;
    Ok(value)
}

pub fn load_scene_file(path: &Path) -> Result<SceneFile> {
    parse_json(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let c: Checkpoint = parse_json(path)?;
    c.scene.check_version()?;
    Ok(c)
}

/// Write via a temporary file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

pub fn linear_to_srgb(c: f64) -> f64 {
    let c = c.clamp(0.0, 1.0);
    if c <= 0.0031308 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

/// Read an 8- or 16-bit PNG (gray, gray-alpha, RGB or RGBA) as linear RGB.
/// Alpha is ignored.
pub fn read_png(path: &Path) -> Result<Image> {
    let mut decoder = png::Decoder::new(BufReader::new(File::open(path)?));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info()?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let stride = info.color_type.samples();
    let bytes = &buf[..info.buffer_size()];
    let mut img = Image::new(w, h);
    for p in 0..w * h {
        let px = &bytes[p * stride..(p + 1) * stride];
        let rgb = if stride >= 3 { [px[0], px[1], px[2]] } else { [px[0]; 3] };
        for c in 0..3 {
            img.data[p * 3 + c] = srgb_to_linear(rgb[c] as f64 / 255.0);
        }
    }
    Ok(img)
}

pub fn encode_png(img: &Image) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_source_srgb(png::SrgbRenderingIntent::Perceptual);
        let mut writer = enc.write_header()?;
        let data: Vec<u8> = img.data.iter().map(|&v| (linear_to_srgb(v) * 255.0).round() as u8).collect();
        writer.write_image_data(&data)?;
    }
    Ok(out)
}

pub fn write_png(path: &Path, img: &Image) -> Result<()> {
    write_atomic(path, &encode_png(img)?)
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_line());
        s.push('\n');
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthEventRecord {
    pub step: u64,
    pub splat_id: usize,
    pub action: String,
    pub old_tu: usize,
    pub old_tv: usize,
    pub new_tu: usize,
    pub new_tv: usize,
    pub pressure_u: f64,
    pub pressure_v: f64,
}

impl From<&GrowthEvent> for GrowthEventRecord {
    fn from(e: &GrowthEvent) -> Self {
        Self {
            step: e.step,
            splat_id: e.splat,
            action: e.action.to_string(),
            old_tu: e.old_dims.0,
            old_tv: e.old_dims.1,
            new_tu: e.new_dims.0,
            new_tv: e.new_dims.1,
            pressure_u: e.pressure.0,
            pressure_v: e.pressure.1,
        }
    }
}

pub fn write_growth_events(path: &Path, events: &[GrowthEvent]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if events.is_empty() {
        w.write_record(["step", "splat_id", "action", "old_tu", "old_tv", "new_tu", "new_tv", "pressure_u", "pressure_v"])
            .map_err(csv_err)?;
    }
    for e in events {
        w.serialize(GrowthEventRecord::from(e)).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(path, &bytes)
}

pub fn read_growth_events(path: &Path) -> Result<Vec<GrowthEventRecord>> {
    let mut r = csv::Reader::from_reader(BufReader::new(File::open(path)?));
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidScene(format!("csv: {e}"))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(text.as_bytes())?;
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::render;

    fn sample_file() -> SceneFile {
        let json = r#"{
          "version": 1,
          "warp_mode": "axis",
          "cameras": [{"mode": "perspective", "world_to_camera": [1,0,0,0, 0,1,0,0, 0,0,1,0, 0,0,0,1],
                       "fx": 20, "fy": 20, "cx": 8, "cy": 8, "width": 16, "height": 16}],
          "splats": [
            {"mean": [0.1, -0.05, 3.0], "quaternion": [0.9, 0.1, 0.2, 0.3], "log_scale": [-1.2, -1.6],
             "opacity_logit": 0.3, "base_color": [0.2, 0.5, 0.7],
             "texture": {"dims": [2, 1], "channels": "rgb", "texels": [0.1, 0.0, -0.1, 0.05, 0.02, 0.0]}},
            {"mean": [0.0, 0.1, 2.5], "quaternion": [1, 0, 0, 0], "log_scale": [-1.0, -1.0],
             "opacity_logit": -0.2, "base_color": [0.9, 0.1, 0.3]}
          ]
        }"#;
        serde_json::from_str(json).unwrap()
    }

    #[test]
    fn strict_parsing() {
        let ok = serde_json::to_string(&sample_file()).unwrap();
        let unknown = ok.replacen("\"version\":1", "\"version\":1,\"extra\":true", 1);
        assert!(serde_json::from_str::<SceneFile>(&unknown).is_err());
        let short = ok.replacen("\"log_scale\":[-1.2,-1.6]", "\"log_scale\":[-1.2]", 1);
        assert!(serde_json::from_str::<SceneFile>(&short).is_err());
    }

    #[test]
    fn quaternions_are_renormalized() {
        let scene = sample_file().scene().unwrap();
        assert!((scene.splats()[0].geometry.rotation.norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn round_trip_is_bitwise_stable() {
        let file = sample_file();
        let scene = file.scene().unwrap();
        let cam = file.cameras().unwrap().remove(0);
        let a = serde_json::to_string(&SceneFile::from_scene(&scene, &file.cameras, file.warp_mode)).unwrap();
        let back: SceneFile = serde_json::from_str(&a).unwrap();
        let again = back.scene().unwrap();
        let b = serde_json::to_string(&SceneFile::from_scene(&again, &back.cameras, back.warp_mode)).unwrap();
        assert_eq!(a, b);
        let r1 = render(&scene, &cam, WarpMode::Axis, [0.0; 3], false).image;
        let r2 = render(&again, &cam, WarpMode::Axis, [0.0; 3], false).image;
        assert_eq!(r1.data, r2.data);
    }

    #[test]
    fn bad_texture_shape_is_rejected() {
        let mut f = sample_file();
        f.splats[0].texture.as_mut().unwrap().texels.pop();
        assert!(matches!(f.scene(), Err(Error::InvalidScene(_))));
        let mut f = sample_file();
        f.version = 7;
        assert!(f.scene().is_err());
    }

    #[test]
    fn srgb_round_trip() {
        for k in 0..=255u8 {
            let v = k as f64 / 255.0;
            assert_eq!((linear_to_srgb(srgb_to_linear(v)) * 255.0).round() as u8, k);
        }
    }

    #[test]
    fn png_round_trip_is_exact_on_8bit_values() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::from_fn(5, 3, |x, y| {
            let s = |k: usize| srgb_to_linear(k as f64 / 255.0);
            [s(x * 40), s(y * 100), s((x * y * 17) % 256)]
        });
        let path = dir.path().join("a.png");
        write_png(&path, &img).unwrap();
        assert_eq!(read_png(&path).unwrap(), img);
    }

    #[test]
    fn growth_events_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ev = GrowthEvent {
            step: 100,
            splat: 3,
            action: crate::growth::GrowthAction::GrowBoth,
            old_dims: (2, 1),
            new_dims: (4, 2),
            pressure: (1.5e-7, 3e-7),
        };
        let path = dir.path().join("g.csv");
        write_growth_events(&path, &[ev]).unwrap();
        let rows = read_growth_events(&path).unwrap();
        assert_eq!(rows, vec![GrowthEventRecord::from(&ev)]);
        write_growth_events(&path, &[]).unwrap();
        assert!(read_growth_events(&path).unwrap().is_empty());
    }
}
