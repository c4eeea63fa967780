//! Importer for the SfM text triplet `cameras.txt`, `images.txt`,
//! `points3D.txt`, producing a scene manifest.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;

use super::{CameraEntry, FrameEntry, SceneManifest, ThermalRange};
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::model::{normalize_quaternion, rotation_matrix, InitPoint};

#[derive(Clone, Debug, PartialEq)]
pub struct ImportOptions {
    /// Directory (relative to the manifest) holding the RGB images.
    pub rgb_dir: String,
    /// Directory holding thermal images named like the RGB ones (with a
    /// `.png` extension); `None` for an RGB-only scene.
    pub thermal_dir: Option<String>,
    pub thermal_range: ThermalRange,
}

impl Default for ImportOptions {
    fn default() -> Self {
        Self { rgb_dir: "images".into(), thermal_dir: None, thermal_range: ThermalRange::default() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Imported {
    pub manifest: SceneManifest,
    /// Camera ids whose lens distortion parameters were dropped.
    pub dropped_distortion: Vec<String>,
}

fn data_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim_start().starts_with('#'))
        .map(|(i, l)| (i + 1, l.to_string()))
        .collect())
}

fn nums(path: &Path, line: usize, toks: &[&str]) -> Result<Vec<f64>> {
    toks.iter()
        .map(|t| t.parse::<f64>().map_err(|_| Error::parse(path, Some(line), format!("expected a number, found '{t}'"))))
        .collect()
}

fn parse_cameras(path: &Path) -> Result<(Vec<CameraEntry>, Vec<String>)> {
    let mut cams = Vec::new();
    let mut dropped = Vec::new();
    for (ln, line) in data_lines(path)? {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        if toks.len() < 4 {
            return Err(Error::parse(path, Some(ln), "expected CAMERA_ID MODEL WIDTH HEIGHT PARAMS"));
        }
        let id = toks[0].to_string();
        let dims = nums(path, ln, &toks[2..4])?;
        let p = nums(path, ln, &toks[4..])?;
        let need = |n: usize| {
            if p.len() == n {
                Ok(())
            } else {
                Err(Error::parse(path, Some(ln), format!("{} expects {n} parameters, found {}", toks[1], p.len())))
            }
        };
        let (fx, fy, cx, cy) = match toks[1] {
            "SIMPLE_PINHOLE" => {
                need(3)?;
                (p[0], p[0], p[1], p[2])
            }
            "PINHOLE" => {
                need(4)?;
                (p[0], p[1], p[2], p[3])
            }
            "SIMPLE_RADIAL" | "RADIAL" => {
                need(if toks[1] == "RADIAL" { 5 } else { 4 })?;
                dropped.push(id.clone());
                (p[0], p[0], p[1], p[2])
            }
            "OPENCV" => {
                need(8)?;
                dropped.push(id.clone());
                (p[0], p[1], p[2], p[3])
            }
            other => return Err(Error::parse(path, Some(ln), format!("unsupported camera model '{other}'"))),
        };
        cams.push(CameraEntry { id, fx, fy, cx, cy, width: dims[0] as usize, height: dims[1] as usize });
    }
    Ok((cams, dropped))
}

struct ImageRecord {
    name: String,
    camera: String,
    q: [f64; 4],
    t: Vector3<f64>,
}

fn parse_images(path: &Path) -> Result<Vec<ImageRecord>> {
    let mut out = Vec::new();
    let mut lines = data_lines(path)?.into_iter();
    while let Some((ln, line)) = lines.next() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        if toks.len() < 10 {
            return Err(Error::parse(path, Some(ln), "expected IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME"));
        }
        let v = nums(path, ln, &toks[1..8])?;
        out.push(ImageRecord {
            name: toks[9..].join(" "),
            camera: toks[8].to_string(),
            q: [v[0], v[1], v[2], v[3]],
            t: Vector3::new(v[4], v[5], v[6]),
        });
        // the 2-D observations line
        lines.next();
    }
    Ok(out)
}

fn parse_points(path: &Path) -> Result<Vec<InitPoint>> {
    let mut out = Vec::new();
    for (ln, line) in data_lines(path)? {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        if toks.len() < 7 {
            return Err(Error::parse(path, Some(ln), "expected POINT3D_ID X Y Z R G B ..."));
        }
        let v = nums(path, ln, &toks[1..7])?;
        out.push(InitPoint {
            position: [v[0], v[1], v[2]],
            rgb: [v[3] / 255.0, v[4] / 255.0, v[5] / 255.0],
            thermal: 0.5,
        });
    }
    Ok(out)
}

/// Reads the triplet from `dir` into a manifest; frames are ordered by image
/// name. A missing `points3D.txt` leaves `initial_points` unset.
pub fn import_text(dir: &Path, opts: &ImportOptions) -> Result<Imported> {
    let (cameras, dropped) = parse_cameras(&dir.join("cameras.txt"))?;
    let images_path = dir.join("images.txt");
    let mut images = parse_images(&images_path)?;
    if images.is_empty() {
        return Err(Error::EmptyScene);
    }
    images.sort_by(|a, b| a.name.cmp(&b.name));
    let mut frames = Vec::new();
    for im in &images {
        let entry = cameras
            .iter()
            .find(|c| c.id == im.camera)
            .ok_or_else(|| Error::parse(&images_path, None, format!("image '{}' references unknown camera {}", im.name, im.camera)))?;
        let cam = Camera {
            fx: entry.fx,
            fy: entry.fy,
            cx: entry.cx,
            cy: entry.cy,
            width: entry.width,
            height: entry.height,
            rotation: rotation_matrix(&normalize_quaternion(im.q)),
            translation: im.t,
        };
        let c2w = cam.camera_to_world();
        let thermal = opts.thermal_dir.as_ref().map(|d| {
            let stem = Path::new(&im.name).with_extension("png");
            join(d, &stem.to_string_lossy())
        });
        frames.push(FrameEntry {
            camera: entry.id.clone(),
            camera_to_world: std::array::from_fn(|i| c2w[(i / 4, i % 4)]),
            rgb: Some(join(&opts.rgb_dir, &im.name)),
            thermal,
            mask: None,
        });
    }
    let points_path: PathBuf = dir.join("points3D.txt");
    let initial_points = if points_path.exists() { Some(parse_points(&points_path)?) } else { None };
    Ok(Imported {
        manifest: SceneManifest { cameras, frames, thermal_range: opts.thermal_range, initial_points },
        dropped_distortion: dropped,
    })
}

fn join(dir: &str, name: &str) -> String {
    if dir.is_empty() {
        name.to_string()
    } else {
        format!("{}/{name}", dir.trim_end_matches('/'))
    }
}
