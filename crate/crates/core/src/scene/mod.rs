//! Scenes on disk: the `scene.json` manifest, frame images, cloud files,
//! SfM import, registration, preprocessing and the synthetic generator.

pub mod colmap;
pub mod ply;
pub mod preprocess;
pub mod registration;
pub mod synth;

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix4, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::{InitPoint, Modality};

pub const MANIFEST_NAME: &str = "scene.json";

/// Linear mapping between stored 16-bit thermal codes and temperature.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThermalRange {
    /// Temperature (°C) of the coldest representable value.
    pub t_min: f64,
    pub t_max: f64,
    /// Stored code of `t_min`.
    #[serde(default)]
    pub stored_min: u16,
    #[serde(default = "max_code")]
    pub stored_max: u16,
}

fn max_code() -> u16 {
    u16::MAX
}

impl ThermalRange {
    pub fn new(t_min: f64, t_max: f64) -> Result<Self> {
        let r = Self { t_min, t_max, stored_min: 0, stored_max: u16::MAX };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_min < self.t_max) || !self.t_min.is_finite() || !self.t_max.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "thermal range [{}, {}] is empty",
                self.t_min, self.t_max
            )));
        }
        if self.stored_min >= self.stored_max {
            return Err(Error::InvalidParameter("stored thermal codes must increase".into()));
        }
        Ok(())
    }

    /// Stored code → normalized value in [0, 1] (codes outside the range clamp).
    pub fn normalize(&self, code: u16) -> f64 {
        let (lo, hi) = (self.stored_min as f64, self.stored_max as f64);
        ((code as f64 - lo) / (hi - lo)).clamp(0.0, 1.0)
    }

    /// Normalized value → nearest stored code.
    pub fn denormalize(&self, value: f64) -> u16 {
        let (lo, hi) = (self.stored_min as f64, self.stored_max as f64);
        (lo + value.clamp(0.0, 1.0) * (hi - lo)).round() as u16
    }

    pub fn to_celsius(&self, value: f64) -> f64 {
        self.t_min + value * (self.t_max - self.t_min)
    }

    pub fn from_celsius(&self, t: f64) -> f64 {
        (t - self.t_min) / (self.t_max - self.t_min)
    }

    /// Rounds normalized values to the stored code grid.
    pub fn quantize(&self, img: &Image) -> Image {
        img.map(|v| self.normalize(self.denormalize(v)))
    }
}

impl Default for ThermalRange {
    fn default() -> Self {
        Self { t_min: 0.0, t_max: 100.0, stored_min: 0, stored_max: u16::MAX }
    }
}

/// Quantizes an image to 8-bit codes and back.
pub fn quantize_rgb(img: &Image) -> Image {
    img.quantized(256)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraEntry {
    pub id: String,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub camera: String,
    /// Row-major 4×4 camera-to-world transform.
    pub camera_to_world: [f64; 16],
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rgb: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub thermal: Option<String>,
    /// 8-bit mask on the frame grid; zero marks pixels excluded from losses.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mask: Option<String>,
}

/// The `scene.json` document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub cameras: Vec<CameraEntry>,
    pub frames: Vec<FrameEntry>,
    pub thermal_range: ThermalRange,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub initial_points: Option<Vec<InitPoint>>,
}

/// One posed view with its (registered) images.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub name: String,
    pub camera_id: String,
    pub camera: Camera,
    pub rgb: Option<Image>,
    /// Normalized to [0, 1].
    pub thermal: Option<Image>,
    pub mask: Option<Vec<bool>>,
}

impl Frame {
    pub fn image(&self, modality: Modality) -> Option<&Image> {
        match modality {
            Modality::Rgb => self.rgb.as_ref(),
            Modality::Thermal => self.thermal.as_ref(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameSet {
    pub frames: Vec<Frame>,
    pub thermal_range: ThermalRange,
    pub initial_points: Option<Vec<InitPoint>>,
}

impl FrameSet {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Every frame carries an image of this modality.
    pub fn has(&self, modality: Modality) -> bool {
        !self.frames.is_empty() && self.frames.iter().all(|f| f.image(modality).is_some())
    }

    pub fn require(&self, modality: Modality) -> Result<()> {
        if self.has(modality) {
            Ok(())
        } else {
            Err(Error::ModalityMismatch(modality))
        }
    }

    /// `(train, test)` frame indices; every `every`-th frame (starting at 0)
    /// is held out. A single-frame scene trains and tests on that frame.
    pub fn split(&self, every: usize) -> (Vec<usize>, Vec<usize>) {
        let n = self.frames.len();
        if n <= 1 || every == 0 {
            return ((0..n).collect(), (0..n).collect());
        }
        (0..n).partition(|i| i % every != 0)
    }

    /// 1.1 × the largest camera distance from the mean camera center.
    pub fn extent(&self) -> f64 {
        let centers: Vec<Vector3<f64>> = self.frames.iter().map(|f| f.camera.center()).collect();
        if centers.is_empty() {
            return 1.0;
        }
        let mean = centers.iter().sum::<Vector3<f64>>() / centers.len() as f64;
        let r = centers.iter().map(|c| (c - mean).norm()).fold(0.0, f64::max);
        if r > 0.0 {
            1.1 * r
        } else {
            1.0
        }
    }

    /// The manifest's points, or `count` uniform points in the camera
    /// bounding box enlarged ×1.5.
    pub fn initial_points_or_random(&self, count: usize, seed: u64) -> Vec<InitPoint> {
        if let Some(p) = &self.initial_points {
            if !p.is_empty() {
                return p.clone();
            }
        }
        let centers: Vec<Vector3<f64>> = self.frames.iter().map(|f| f.camera.center()).collect();
        let (mut lo, mut hi) = (Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY));
        for c in &centers {
            lo = lo.inf(c);
            hi = hi.sup(c);
        }
        if centers.is_empty() {
            lo = Vector3::repeat(-1.0);
            hi = Vector3::repeat(1.0);
        }
        let mid = (lo + hi) / 2.0;
        let half = ((hi - lo) / 2.0 * 1.5).map(|v| v.max(1e-3));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| InitPoint {
                position: std::array::from_fn(|a| mid[a] + rng.random_range(-1.0..=1.0) * half[a]),
                rgb: std::array::from_fn(|_| rng.random_range(0.0..1.0)),
                thermal: rng.random_range(0.0..1.0),
            })
            .collect()
    }

    pub fn subset(&self, indices: &[usize]) -> FrameSet {
        FrameSet {
            frames: indices.iter().map(|&i| self.frames[i].clone()).collect(),
            thermal_range: self.thermal_range,
            initial_points: self.initial_points.clone(),
        }
    }
}

/// `path` itself when it names a file, else `path/scene.json`.
pub fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_NAME)
    } else {
        path.to_path_buf()
    }
}

pub fn read_manifest(path: &Path) -> Result<SceneManifest> {
    let path = manifest_path(path);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(&path, Some(e.line()), e))
}

pub fn write_manifest(path: &Path, manifest: &SceneManifest) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_rgb_png(path: &Path) -> Result<Image> {
    let img = image::open(path).map_err(|e| Error::Image { path: path.into(), source: e })?.into_rgb8();
    let (w, h) = img.dimensions();
    Image::from_vec(w as usize, h as usize, 3, img.into_raw().into_iter().map(|v| v as f64 / 255.0).collect())
}

pub fn write_rgb_png(path: &Path, img: &Image) -> Result<()> {
    let bytes: Vec<u8> = match img.channels() {
        3 => img.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect(),
        1 => img
            .data()
            .iter()
            .flat_map(|&v| [(v.clamp(0.0, 1.0) * 255.0).round() as u8; 3])
            .collect(),
        c => return Err(Error::shape("1 or 3 channels", c)),
    };
    let buf = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, bytes).expect("buffer size");
    buf.save(path).map_err(|e| Error::Image { path: path.into(), source: e })
}

/// Reads stored 16-bit codes.
pub fn read_u16_png(path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let img = image::open(path).map_err(|e| Error::Image { path: path.into(), source: e })?.into_luma16();
    let (w, h) = img.dimensions();
    Ok((w as usize, h as usize, img.into_raw()))
}

/// Reads a grayscale image normalized by its bit depth (8 or 16 bits).
pub fn read_gray_png(path: &Path) -> Result<Image> {
    let img = image::open(path).map_err(|e| Error::Image { path: path.into(), source: e })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match img {
        image::DynamicImage::ImageLuma16(b) => b.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
        other => other.into_luma8().into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
    };
    Image::from_vec(w, h, 1, data)
}

pub fn write_u16_png(path: &Path, width: usize, height: usize, codes: Vec<u16>) -> Result<()> {
    let buf = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(width as u32, height as u32, codes).expect("buffer size");
    buf.save(path).map_err(|e| Error::Image { path: path.into(), source: e })
}

pub fn read_thermal_png(path: &Path, range: &ThermalRange) -> Result<Image> {
    let (w, h, codes) = read_u16_png(path)?;
    Image::from_vec(w, h, 1, codes.into_iter().map(|c| range.normalize(c)).collect())
}

pub fn write_thermal_png(path: &Path, img: &Image, range: &ThermalRange) -> Result<()> {
    if img.channels() != 1 {
        return Err(Error::shape("1 channel", img.channels()));
    }
    write_u16_png(path, img.width(), img.height(), img.data().iter().map(|&v| range.denormalize(v)).collect())
}

fn read_mask_png(path: &Path) -> Result<(usize, usize, Vec<bool>)> {
    let img = image::open(path).map_err(|e| Error::Image { path: path.into(), source: e })?.into_luma8();
    let (w, h) = img.dimensions();
    Ok((w as usize, h as usize, img.into_raw().into_iter().map(|v| v != 0).collect()))
}

fn write_mask_png(path: &Path, width: usize, height: usize, mask: &[bool]) -> Result<()> {
    let bytes = mask.iter().map(|&v| if v { 255 } else { 0 }).collect();
    let buf = image::GrayImage::from_raw(width as u32, height as u32, bytes).expect("buffer size");
    buf.save(path).map_err(|e| Error::Image { path: path.into(), source: e })
}

fn matrix_from_row_major(m: &[f64; 16]) -> Matrix4<f64> {
    Matrix4::from_row_slice(m)
}

fn row_major(m: &Matrix4<f64>) -> [f64; 16] {
    std::array::from_fn(|i| m[(i / 4, i % 4)])
}

/// Loads a scene from a manifest file or a directory containing one; image
/// paths resolve relative to the manifest.
pub fn load_scene(path: &Path) -> Result<FrameSet> {
    let mpath = manifest_path(path);
    let manifest = read_manifest(&mpath)?;
    let root = mpath.parent().map(Path::to_path_buf).unwrap_or_default();
    let bad = |msg: String| Error::parse(&mpath, None, msg);
    if manifest.frames.is_empty() {
        return Err(Error::EmptyScene);
    }
    manifest.thermal_range.validate().map_err(|e| bad(e.to_string()))?;
    let frames: Vec<Result<Frame>> = manifest
        .frames
        .par_iter()
        .enumerate()
        .map(|(i, f)| {
            let entry = manifest
                .cameras
                .iter()
                .find(|c| c.id == f.camera)
                .ok_or_else(|| bad(format!("frame {i}: unknown camera '{}'", f.camera)))?;
            let camera = Camera::from_camera_to_world(
                entry.fx,
                entry.fy,
                entry.cx,
                entry.cy,
                entry.width,
                entry.height,
                &matrix_from_row_major(&f.camera_to_world),
            )
            .map_err(|e| bad(format!("frame {i}: {e}")))?;
            let check = |kind: &str, w: usize, h: usize| {
                if (w, h) != (entry.width, entry.height) {
                    Err(bad(format!(
                        "frame {i}: {kind} image is {w}x{h} but camera '{}' is {}x{}",
                        entry.id, entry.width, entry.height
                    )))
                } else {
                    Ok(())
                }
            };
            let rgb = match &f.rgb {
                Some(p) => {
                    let img = read_rgb_png(&root.join(p))?;
                    check("rgb", img.width(), img.height())?;
                    Some(img)
                }
                None => None,
            };
            let thermal = match &f.thermal {
                Some(p) => {
                    let img = read_thermal_png(&root.join(p), &manifest.thermal_range)?;
                    check("thermal", img.width(), img.height())?;
                    Some(img)
                }
                None => None,
            };
            let mask = match &f.mask {
                Some(p) => {
                    let (w, h, m) = read_mask_png(&root.join(p))?;
                    check("mask", w, h)?;
                    Some(m)
                }
                None => None,
            };
            let name = f
                .rgb
                .as_deref()
                .or(f.thermal.as_deref())
                .and_then(|p| Path::new(p).file_stem())
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| format!("{i:04}"));
            Ok(Frame { name, camera_id: f.camera.clone(), camera, rgb, thermal, mask })
        })
        .collect();
    Ok(FrameSet {
        frames: frames.into_iter().collect::<Result<_>>()?,
        thermal_range: manifest.thermal_range,
        initial_points: manifest.initial_points,
    })
}

/// Writes images under `dir/rgb`, `dir/thermal`, `dir/mask` and the manifest
/// at `dir/scene.json`. Frames sharing intrinsics share a camera entry.
pub fn write_scene(dir: &Path, scene: &FrameSet) -> Result<()> {
    if scene.frames.is_empty() {
        return Err(Error::EmptyScene);
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut cameras: Vec<CameraEntry> = Vec::new();
    let mut frames = Vec::new();
    for (i, f) in scene.frames.iter().enumerate() {
        let c = &f.camera;
        let id = match cameras.iter().find(|e| {
            (e.fx, e.fy, e.cx, e.cy, e.width, e.height) == (c.fx, c.fy, c.cx, c.cy, c.width, c.height) && e.id == f.camera_id
        }) {
            Some(e) => e.id.clone(),
            None => {
                let id = if cameras.iter().any(|e| e.id == f.camera_id) || f.camera_id.is_empty() {
                    format!("cam{}", cameras.len())
                } else {
                    f.camera_id.clone()
                };
                cameras.push(CameraEntry { id: id.clone(), fx: c.fx, fy: c.fy, cx: c.cx, cy: c.cy, width: c.width, height: c.height });
                id
            }
        };
        let name = if f.name.is_empty() { format!("{i:04}") } else { f.name.clone() };
        let mut entry = FrameEntry {
            camera: id,
            camera_to_world: row_major(&c.camera_to_world()),
            rgb: None,
            thermal: None,
            mask: None,
        };
        if let Some(img) = &f.rgb {
            let rel = format!("rgb/{name}.png");
            fs::create_dir_all(dir.join("rgb")).map_err(|e| Error::io(dir, e))?;
            write_rgb_png(&dir.join(&rel), img)?;
            entry.rgb = Some(rel);
        }
        if let Some(img) = &f.thermal {
            let rel = format!("thermal/{name}.png");
            fs::create_dir_all(dir.join("thermal")).map_err(|e| Error::io(dir, e))?;
            write_thermal_png(&dir.join(&rel), img, &scene.thermal_range)?;
            entry.thermal = Some(rel);
        }
        if let Some(m) = &f.mask {
            let rel = format!("mask/{name}.png");
            fs::create_dir_all(dir.join("mask")).map_err(|e| Error::io(dir, e))?;
            write_mask_png(&dir.join(&rel), c.width, c.height, m)?;
            entry.mask = Some(rel);
        }
        frames.push(entry);
    }
    let manifest = SceneManifest {
        cameras,
        frames,
        thermal_range: scene.thermal_range,
        initial_points: scene.initial_points.clone(),
    };
    write_manifest(&dir.join(MANIFEST_NAME), &manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_scene(n: usize) -> FrameSet {
        let range = ThermalRange::new(-20.0, 550.0).unwrap();
        let frames = (0..n)
            .map(|i| {
                let a = i as f64;
                let camera = Camera::look_at(Vector3::new(a.cos() * 3.0, a.sin() * 3.0, 0.5), Vector3::zeros(), Vector3::z(), 20.0, 6, 5)
                    .unwrap();
                Frame {
                    name: format!("{i:03}"),
                    camera_id: "cam".into(),
                    camera,
                    rgb: Some(quantize_rgb(&Image::from_fn(6, 5, 3, |x, y, c| ((x + 2 * y + c + i) % 7) as f64 / 6.0))),
                    thermal: Some(range.quantize(&Image::from_fn(6, 5, 1, |x, y, _| (x * y) as f64 / 20.0))),
                    mask: None,
                }
            })
            .collect();
        FrameSet { frames, thermal_range: range, initial_points: Some(vec![InitPoint { position: [0.1, 0.2, 0.3], rgb: [0.2, 0.4, 0.6], thermal: 0.7 }]) }
    }

    #[test]
    fn thermal_normalization() {
        let r = ThermalRange::new(-20.0, 550.0).unwrap();
        assert_eq!(r.normalize(u16::MAX), 1.0);
        assert_eq!(r.normalize(0), 0.0);
        assert_eq!(r.to_celsius(1.0), 550.0);
        let r = ThermalRange { stored_min: 1000, stored_max: 61000, ..r };
        assert_eq!(r.normalize(61000), 1.0);
        for code in (1000..=61000u16).step_by(37) {
            assert_eq!(r.denormalize(r.normalize(code)), code);
        }
        assert!(ThermalRange::new(5.0, 5.0).is_err());
    }

    #[test]
    fn gray_reader_handles_both_depths() {
        let dir = tempfile::tempdir().unwrap();
        let deep = dir.path().join("deep.png");
        write_u16_png(&deep, 3, 1, vec![0, 32768, 65535]).unwrap();
        assert_eq!(read_gray_png(&deep).unwrap().data(), &[0.0, 32768.0 / 65535.0, 1.0]);
        let rgb = dir.path().join("rgb.png");
        write_rgb_png(&rgb, &Image::from_vec(1, 1, 3, vec![1.0, 1.0, 1.0]).unwrap()).unwrap();
        assert_eq!(read_gray_png(&rgb).unwrap().data(), &[1.0]);
    }

    #[test]
    fn split_every_eighth() {
        let s = tiny_scene(10);
        let (train, test) = s.split(8);
        assert_eq!(test, vec![0, 8]);
        assert_eq!(train.len(), 8);
        let one = tiny_scene(1);
        assert_eq!(one.split(8), (vec![0], vec![0]));
    }

    #[test]
    fn scene_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = tiny_scene(3);
        write_scene(dir.path(), &s).unwrap();
        let back = load_scene(dir.path()).unwrap();
        assert_eq!(back.frames.len(), 3);
        for (a, b) in s.frames.iter().zip(&back.frames) {
            assert_eq!(a.rgb, b.rgb);
            assert_eq!(a.thermal, b.thermal);
            assert!((a.camera.rotation - b.camera.rotation).abs().max() < 1e-12);
            assert!((a.camera.translation - b.camera.translation).abs().max() < 1e-12);
        }
        assert_eq!(back.initial_points, s.initial_points);
    }

    #[test]
    fn malformed_manifests() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(MANIFEST_NAME);
        fs::write(&p, r#"{"cameras": [], "frames": [], "thermal_range": {"t_min": 0, "t_max": 1}}"#).unwrap();
        assert!(matches!(load_scene(&p), Err(Error::EmptyScene)));
        fs::write(&p, "{\n  \"cameras\": [,\n}").unwrap();
        match load_scene(&p) {
            Err(Error::Parse { line: Some(2), .. }) => {}
            other => panic!("{other:?}"),
        }
        fs::write(
            &p,
            r#"{"cameras": [], "frames": [{"camera": "x", "camera_to_world": [1,0,0,0,0,1,0,0,0,0,1,0,0,0,0,1]}],
               "thermal_range": {"t_min": 0, "t_max": 1}}"#,
        )
        .unwrap();
        let err = load_scene(&p).unwrap_err().to_string();
        assert!(err.contains("unknown camera"), "{err}");
    }

    #[test]
    fn mismatched_grid_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let s = tiny_scene(2);
        write_scene(dir.path(), &s).unwrap();
        write_rgb_png(&dir.path().join("rgb/001.png"), &Image::zeros(4, 4, 3)).unwrap();
        let err = load_scene(dir.path()).unwrap_err().to_string();
        assert!(err.contains("frame 1") && err.contains("4x4"), "{err}");
    }

    #[test]
    fn random_initial_points_fill_the_camera_box() {
        let mut s = tiny_scene(4);
        s.initial_points = None;
        let pts = s.initial_points_or_random(500, 1);
        assert_eq!(pts.len(), 500);
        assert!(pts.iter().all(|p| p.position[0].abs() <= 4.6));
    }
}
