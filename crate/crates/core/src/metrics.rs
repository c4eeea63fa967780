//! Image quality metrics and held-out view evaluation.

use std::fmt;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::{GaussianCloud, Modality};
use crate::raster::{render, RenderSettings};
use crate::scene::{quantize_rgb, FrameSet};

pub use crate::losses::ssim;

/// A PSNR value; identical images give `+∞`, written as `"inf"` in JSON.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct Decibels(pub f64);

impl Decibels {
    pub fn is_infinite(self) -> bool {
        self.0 == f64::INFINITY
    }
}

impl fmt::Display for Decibels {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_infinite() {
            f.write_str("inf")
        } else {
            write!(f, "{:.3}", self.0)
        }
    }
}

impl Serialize for Decibels {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Decibels {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Decibels(v)),
            Raw::Str(s) if s == "inf" => Ok(Decibels(f64::INFINITY)),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("expected a number or \"inf\", found \"{s}\""))),
        }
    }
}

pub fn mse(rendered: &Image, target: &Image) -> Result<f64> {
    if !rendered.same_shape(target) {
        return Err(Error::shape(target.shape_string(), rendered.shape_string()));
    }
    if rendered.is_empty() {
        return Err(Error::EmptyImage);
    }
    let sum: f64 = rendered.data().iter().zip(target.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / rendered.data().len() as f64)
}

/// `10·log10(1/MSE)` for values on [0, 1].
pub fn psnr(rendered: &Image, target: &Image) -> Result<f64> {
    let m = mse(rendered, target)?;
    Ok(if m == 0.0 { f64::INFINITY } else { -10.0 * m.log10() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub frame: String,
    pub psnr: Decibels,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModalityEval {
    pub views: Vec<ViewMetrics>,
    pub mean_psnr: Decibels,
    pub mean_ssim: f64,
    /// Gaussians in the cloud that rendered this modality.
    pub gaussians: usize,
}

impl ModalityEval {
    fn from_views(views: Vec<ViewMetrics>, gaussians: usize) -> Self {
        let n = views.len().max(1) as f64;
        let mean_psnr = Decibels(views.iter().map(|v| v.psnr.0).sum::<f64>() / n);
        let mean_ssim = views.iter().map(|v| v.ssim).sum::<f64>() / n;
        Self { views, mean_psnr, mean_ssim, gaussians }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub render_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub train_seconds: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rgb: Option<ModalityEval>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub thermal: Option<ModalityEval>,
    /// Distinct Gaussians across the evaluated clouds.
    pub total_gaussians: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub model_bytes: Option<u64>,
    pub timings: Timings,
}

impl EvalReport {
    pub fn modality(&self, m: Modality) -> Option<&ModalityEval> {
        match m {
            Modality::Rgb => self.rgb.as_ref(),
            Modality::Thermal => self.thermal.as_ref(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Parse { path: "<report>".into(), line: Some(e.line()), message: e.to_string() })
    }
}

/// Zeroes pixels outside the mask in every channel.
fn apply_mask(img: &Image, mask: &[bool]) -> Image {
    let c = img.channels();
    let mut out = img.clone();
    for (p, &keep) in mask.iter().enumerate() {
        if !keep {
            out.data_mut()[p * c..(p + 1) * c].fill(0.0);
        }
    }
    out
}

fn evaluate_modality(
    cloud: &GaussianCloud,
    scene: &FrameSet,
    frames: &[usize],
    modality: Modality,
    settings: &RenderSettings,
) -> Result<ModalityEval> {
    scene.require(modality)?;
    let views = frames
        .par_iter()
        .map(|&i| {
            let f = scene.frames.get(i).ok_or_else(|| Error::InvalidParameter(format!("frame index {i} out of range")))?;
            let target = f.image(modality).ok_or(Error::ModalityMismatch(modality))?;
            let out = render(cloud, &f.camera, modality, settings)?;
            let mut img = match modality {
                Modality::Rgb => quantize_rgb(&out.image),
                Modality::Thermal => scene.thermal_range.quantize(&out.image),
            };
            let mut target = target.clone();
            if let Some(m) = &f.mask {
                img = apply_mask(&img, m);
                target = apply_mask(&target, m);
            }
            Ok(ViewMetrics { frame: f.name.clone(), psnr: Decibels(psnr(&img, &target)?), ssim: ssim(&img, &target)? })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ModalityEval::from_views(views, cloud.len()))
}

/// Renders `frames` of `scene` with the supplied clouds and scores them.
/// Renders are quantized like the stored images before comparison. Pass
/// the same cloud twice for a dual-modality model.
pub fn evaluate(
    rgb: Option<&GaussianCloud>,
    thermal: Option<&GaussianCloud>,
    scene: &FrameSet,
    frames: &[usize],
    settings: &RenderSettings,
) -> Result<EvalReport> {
    if rgb.is_none() && thermal.is_none() {
        return Err(Error::Config("nothing to evaluate".into()));
    }
    let start = Instant::now();
    let rgb_eval = rgb.map(|c| evaluate_modality(c, scene, frames, Modality::Rgb, settings)).transpose()?;
    let th_eval = thermal.map(|c| evaluate_modality(c, scene, frames, Modality::Thermal, settings)).transpose()?;
    let total_gaussians = match (rgb, thermal) {
        (Some(a), Some(b)) if std::ptr::eq(a, b) => a.len(),
        (a, b) => a.map_or(0, |c| c.len()) + b.map_or(0, |c| c.len()),
    };
    Ok(EvalReport {
        rgb: rgb_eval,
        thermal: th_eval,
        total_gaussians,
        model_bytes: None,
        timings: Timings { render_seconds: start.elapsed().as_secs_f64(), train_seconds: None },
    })
}

/// Mean absolute difference between 4-neighbours, as a total variation
/// measure of a rendered image.
pub fn total_variation(img: &Image) -> f64 {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let mut sum = 0.0;
    let mut n = 0usize;
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let v = img.get(x, y, ch);
                if x + 1 < w {
                    sum += (img.get(x + 1, y, ch) - v).abs();
                    n += 1;
                }
                if y + 1 < h {
                    sum += (img.get(x, y + 1, ch) - v).abs();
                    n += 1;
                }
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}
