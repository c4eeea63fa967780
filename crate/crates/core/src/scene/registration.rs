//! Thermal → RGB pixel mapping through a calibrated stereo rig, and dense
//! resampling of thermal images onto the RGB grid.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::check_rotation;
use crate::error::{Error, Result};
use crate::image::Image;

/// Intrinsics of both sensors and the rigid transform taking thermal-camera
/// coordinates to RGB-camera coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigCalibration {
    pub k_rgb: Matrix3<f64>,
    pub k_thermal: Matrix3<f64>,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

fn check_intrinsics(k: &Matrix3<f64>, which: &str) -> Result<()> {
    let ok = k[(0, 0)] > 0.0
        && k[(1, 1)] > 0.0
        && k[(1, 0)] == 0.0
        && k[(2, 0)] == 0.0
        && k[(2, 1)] == 0.0
        && k[(2, 2)] == 1.0
        && k[(0, 2)] >= 0.0
        && k[(1, 2)] >= 0.0;
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{which} intrinsics are not a valid pinhole matrix")))
    }
}

impl RigCalibration {
    pub fn identity(k: Matrix3<f64>) -> Self {
        Self { k_rgb: k, k_thermal: k, rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    /// Identical sensors with no relative motion.
    pub fn is_identity(&self) -> bool {
        self.k_rgb == self.k_thermal && self.rotation == Matrix3::identity() && self.translation == Vector3::zeros()
    }

    pub fn validate(&self) -> Result<()> {
        check_intrinsics(&self.k_rgb, "RGB")?;
        check_intrinsics(&self.k_thermal, "thermal")?;
        check_rotation(&self.rotation)
    }

    /// Homography taking thermal pixels to RGB pixels for points on the
    /// fronto-parallel thermal-frame plane `z = depth`.
    pub fn plane_homography(&self, depth: f64) -> Result<Matrix3<f64>> {
        if !(depth > 0.0) {
            return Err(Error::InvalidParameter(format!("depth must be positive, got {depth}")));
        }
        if self.is_identity() {
            return Ok(Matrix3::identity());
        }
        let k_th_inv = self.k_thermal.try_inverse().ok_or_else(|| Error::InvalidParameter("singular thermal intrinsics".into()))?;
        let n = Vector3::new(0.0, 0.0, 1.0);
        Ok(self.k_rgb * (self.rotation + self.translation * n.transpose() / depth) * k_th_inv)
    }
}

/// Maps thermal pixel `(u, v)` observed at `depth` (thermal-camera z) to the
/// RGB image. `None` when the point falls behind the RGB camera.
pub fn map_thermal_pixel(u: f64, v: f64, depth: f64, calib: &RigCalibration) -> Result<Option<[f64; 2]>> {
    if !(depth > 0.0) {
        return Err(Error::InvalidParameter(format!("depth must be positive, got {depth}")));
    }
    if calib.is_identity() {
        return Ok(Some([u, v]));
    }
    let k_th_inv = calib
        .k_thermal
        .try_inverse()
        .ok_or_else(|| Error::InvalidParameter("singular thermal intrinsics".into()))?;
    let x = k_th_inv * Vector3::new(u, v, 1.0) * depth;
    let p = calib.k_rgb * (calib.rotation * x + calib.translation);
    if !(p.z > 0.0) {
        return Ok(None);
    }
    Ok(Some([p.x / p.z, p.y / p.z]))
}

/// How thermal pixels are related to RGB pixels when warping densely.
#[derive(Clone, Debug, PartialEq)]
pub enum RegistrationMode {
    /// Every thermal pixel lies on the plane at this thermal-camera depth.
    Depth(f64),
    /// Per-RGB-pixel depth (RGB-camera z), e.g. from a rendered depth map.
    RgbDepthMap(Image),
    /// Explicit thermal → RGB pixel homography.
    Homography(Matrix3<f64>),
}

/// A thermal image resampled onto the RGB grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Registered {
    pub image: Image,
    /// `false` where no thermal sample maps to the pixel.
    pub mask: Vec<bool>,
}

/// Bilinear sample at continuous pixel coordinates; `None` outside
/// `[0, w−1] × [0, h−1]`.
pub fn sample_bilinear(img: &Image, x: f64, y: f64, out: &mut [f64]) -> bool {
    let (w, h) = (img.width() as f64, img.height() as f64);
    if !(x >= 0.0 && y >= 0.0 && x <= w - 1.0 && y <= h - 1.0) {
        return false;
    }
    let x0 = (x.floor() as usize).min(img.width().saturating_sub(2));
    let y0 = (y.floor() as usize).min(img.height().saturating_sub(2));
    let x1 = (x0 + 1).min(img.width() - 1);
    let y1 = (y0 + 1).min(img.height() - 1);
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    for (c, o) in out.iter_mut().enumerate() {
        let top = img.get(x0, y0, c) * (1.0 - fx) + img.get(x1, y0, c) * fx;
        let bottom = img.get(x0, y1, c) * (1.0 - fx) + img.get(x1, y1, c) * fx;
        *o = top * (1.0 - fy) + bottom * fy;
    }
    true
}

/// Resamples `thermal` onto a `width × height` RGB grid by inverse mapping
/// every RGB pixel into the thermal image.
pub fn register_thermal_image(
    thermal: &Image,
    mode: &RegistrationMode,
    calib: &RigCalibration,
    width: usize,
    height: usize,
) -> Result<Registered> {
    calib.validate()?;
    let ch = thermal.channels();
    let mut image = Image::zeros(width, height, ch);
    let mut mask = vec![false; width * height];
    let inverse_h = match mode {
        RegistrationMode::Depth(d) => Some(calib.plane_homography(*d)?),
        RegistrationMode::Homography(h) => Some(*h),
        RegistrationMode::RgbDepthMap(_) => None,
    }
    .map(|h| h.try_inverse().ok_or_else(|| Error::InvalidParameter("homography is singular".into())))
    .transpose()?;
    if let RegistrationMode::RgbDepthMap(d) = mode {
        if (d.width(), d.height()) != (width, height) {
            return Err(Error::shape(format!("{width}x{height}"), d.shape_string()));
        }
    }
    let k_rgb_inv = calib.k_rgb.try_inverse().ok_or_else(|| Error::InvalidParameter("singular RGB intrinsics".into()))?;
    let mut px = vec![0.0; ch];
    for y in 0..height {
        for x in 0..width {
            let p = Vector3::new(x as f64, y as f64, 1.0);
            let q = match (&inverse_h, mode) {
                (Some(hinv), _) => hinv * p,
                (None, RegistrationMode::RgbDepthMap(depth)) => {
                    let d = depth.get(x, y, 0);
                    if !(d > 0.0) {
                        continue;
                    }
                    let x_rgb = k_rgb_inv * p * d;
                    calib.k_thermal * (calib.rotation.transpose() * (x_rgb - calib.translation))
                }
                _ => unreachable!(),
            };
            if !(q.z > 0.0) {
                continue;
            }
            if sample_bilinear(thermal, q.x / q.z, q.y / q.z, &mut px) {
                for (c, v) in px.iter().enumerate() {
                    image.set(x, y, c, *v);
                }
                mask[y * width + x] = true;
            }
        }
    }
    Ok(Registered { image, mask })
}
