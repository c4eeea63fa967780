//! Photometric losses, the thermal smoothness term and the modality weighting.
//!
//! Every differentiable term comes with a gradient with respect to the
//! rendered image, in the same layout as the image.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::{Modality, ModalityWeights};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Per-pixel validity mask (`true` = pixel takes part in the loss).
pub type Mask = [bool];

fn check_mask(img: &Image, mask: Option<&Mask>) -> Result<usize> {
    match mask {
        None => Ok(img.pixel_count()),
        Some(m) if m.len() != img.pixel_count() => Err(Error::shape(img.pixel_count(), m.len())),
        Some(m) => Ok(m.iter().filter(|&&v| v).count()),
    }
}

fn valid(mask: Option<&Mask>, p: usize) -> bool {
    mask.is_none_or(|m| m[p])
}

/// Mean absolute difference over all pixels and channels.
pub fn l1_loss(rendered: &Image, target: &Image) -> Result<f64> {
    l1_masked(rendered, target, None).map(|(l, _)| l)
}

fn l1_masked(rendered: &Image, target: &Image, mask: Option<&Mask>) -> Result<(f64, Image)> {
    rendered.check_same_shape(target)?;
    let n = check_mask(rendered, mask)? * rendered.channels();
    let mut grad = Image::zeros(rendered.width(), rendered.height(), rendered.channels());
    if n == 0 {
        return Ok((0.0, grad));
    }
    let ch = rendered.channels();
    let mut sum = 0.0;
    for (i, (a, b)) in rendered.data().iter().zip(target.data()).enumerate() {
        if !valid(mask, i / ch) {
            continue;
        }
        let d = a - b;
        sum += d.abs();
        grad.data_mut()[i] = if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        } / n as f64;
    }
    Ok((sum / n as f64, grad))
}

/// Normalized 1-D Gaussian window.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size / 2) as f64;
    let w: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - half;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable "same" convolution of a single-channel plane with zero padding.
fn filter_zero(plane: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let xx = x as isize + i as isize - r;
                if xx >= 0 && (xx as usize) < w {
                    s += kv * plane[y * w + xx as usize];
                }
            }
            tmp[y * w + x] = s;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let yy = y as isize + i as isize - r;
                if yy >= 0 && (yy as usize) < h {
                    s += kv * tmp[yy as usize * w + x];
                }
            }
            out[y * w + x] = s;
        }
    }
    out
}

/// Windowed SSIM and, optionally, its gradient with respect to `x`.
fn ssim_impl(x: &Image, y: &Image, mask: Option<&Mask>, want_grad: bool) -> Result<(f64, Option<Image>)> {
    x.check_same_shape(y)?;
    if x.is_empty() {
        return Err(Error::EmptyImage);
    }
    let valid_px = check_mask(x, mask)?;
    let (w, h, ch) = (x.width(), x.height(), x.channels());
    let n = valid_px * ch;
    let mut grad = want_grad.then(|| Image::zeros(w, h, ch));
    if n == 0 {
        return Ok((1.0, grad));
    }
    let k = gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA);
    let mut total = 0.0;
    for c in 0..ch {
        let xs: Vec<f64> = x.data().iter().skip(c).step_by(ch).copied().collect();
        let ys: Vec<f64> = y.data().iter().skip(c).step_by(ch).copied().collect();
        let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
        let mu_x = filter_zero(&xs, w, h, &k);
        let mu_y = filter_zero(&ys, w, h, &k);
        let e_xx = filter_zero(&prod(&xs, &xs), w, h, &k);
        let e_yy = filter_zero(&prod(&ys, &ys), w, h, &k);
        let e_xy = filter_zero(&prod(&xs, &ys), w, h, &k);
        let mut d_mu = vec![0.0; w * h];
        let mut d_sxx = vec![0.0; w * h];
        let mut d_sxy = vec![0.0; w * h];
        for p in 0..w * h {
            let (mx, my) = (mu_x[p], mu_y[p]);
            let sxx = e_xx[p] - mx * mx;
            let syy = e_yy[p] - my * my;
            let sxy = e_xy[p] - mx * my;
            let a1 = 2.0 * mx * my + SSIM_C1;
            let a2 = 2.0 * sxy + SSIM_C2;
            let b1 = mx * mx + my * my + SSIM_C1;
            let b2 = sxx + syy + SSIM_C2;
            let s = a1 * a2 / (b1 * b2);
            if !valid(mask, p) {
                continue;
            }
            total += s;
            if want_grad {
                let inv = 1.0 / n as f64;
                let ds_dmx = (2.0 * my * a2 / (b1 * b2) - s * 2.0 * mx / b1) * inv;
                let ds_dsxx = -s / b2 * inv;
                let ds_dsxy = 2.0 * a1 / (b1 * b2) * inv;
                d_mu[p] = ds_dmx - 2.0 * mx * ds_dsxx - my * ds_dsxy;
                d_sxx[p] = ds_dsxx;
                d_sxy[p] = ds_dsxy;
            }
        }
        if let Some(g) = grad.as_mut() {
            // adjoint of the (symmetric) window filter
            let a = filter_zero(&d_mu, w, h, &k);
            let b = filter_zero(&d_sxx, w, h, &k);
            let cc = filter_zero(&d_sxy, w, h, &k);
            for p in 0..w * h {
                g.data_mut()[p * ch + c] = a[p] + 2.0 * xs[p] * b[p] + ys[p] * cc[p];
            }
        }
    }
    Ok((total / n as f64, grad))
}

/// Mean SSIM over all pixels and channels (11×11 Gaussian window, σ = 1.5,
/// zero padding).
pub fn ssim(x: &Image, y: &Image) -> Result<f64> {
    ssim_impl(x, y, None, false).map(|(s, _)| s)
}

/// `(1 − SSIM) / 2`.
pub fn dssim_loss(rendered: &Image, target: &Image) -> Result<f64> {
    Ok((1.0 - ssim(rendered, target)?) / 2.0)
}

/// D-SSIM and its gradient with respect to `rendered`.
pub fn dssim_with_gradient(rendered: &Image, target: &Image, mask: Option<&Mask>) -> Result<(f64, Image)> {
    let (s, g) = ssim_impl(rendered, target, mask, true)?;
    Ok(((1.0 - s) / 2.0, g.expect("requested").map(|v| -0.5 * v)))
}

fn smooth_impl(img: &Image, want_grad: bool) -> Result<(f64, Option<Image>)> {
    if img.is_empty() {
        return Err(Error::EmptyImage);
    }
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let scale = 1.0 / (4.0 * (w * h * ch) as f64);
    let mut grad = want_grad.then(|| Image::zeros(w, h, ch));
    let mut sum = 0.0;
    // each in-range pair counts once from each side
    let mut pair = |p: usize, q: usize, sum: &mut f64| {
        let d = img.data()[q] - img.data()[p];
        *sum += 2.0 * d.abs();
        if let Some(g) = grad.as_mut() {
            let s = 2.0 * scale * d.signum() * (d != 0.0) as u8 as f64;
            g.data_mut()[q] += s;
            g.data_mut()[p] -= s;
        }
    };
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let p = (y * w + x) * ch + c;
                if x + 1 < w {
                    pair(p, p + ch, &mut sum);
                }
                if y + 1 < h {
                    pair(p, p + w * ch, &mut sum);
                }
            }
        }
    }
    Ok((sum * scale, grad))
}

/// Four-neighbor mean absolute difference; neighbors outside the image
/// contribute nothing and the denominator stays `4·H·W`.
pub fn smooth_loss(img: &Image) -> Result<f64> {
    smooth_impl(img, false).map(|(s, _)| s)
}

pub fn smooth_with_gradient(img: &Image) -> Result<(f64, Image)> {
    let (s, g) = smooth_impl(img, true)?;
    Ok((s, g.expect("requested")))
}

/// The individual terms of one modality's loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModalityTerms {
    pub l1: f64,
    pub dssim: f64,
    /// Zero for RGB.
    pub smooth: f64,
    pub total: f64,
}

/// RGB: `(1−λ)·L1 + λ·D-SSIM`; thermal adds `λ_smooth · smooth(rendered)`.
pub fn modality_loss(rendered: &Image, target: &Image, weights: &ModalityWeights, modality: Modality) -> Result<f64> {
    weights.validate()?;
    let l1 = l1_loss(rendered, target)?;
    let dssim = dssim_loss(rendered, target)?;
    let mut total = (1.0 - weights.lambda_dssim) * l1 + weights.lambda_dssim * dssim;
    if modality == Modality::Thermal {
        total += weights.lambda_smooth * smooth_loss(rendered)?;
    }
    Ok(total)
}

/// Loss terms and `∂total/∂rendered`; masked-out pixels are excluded from
/// the L1 and D-SSIM terms.
pub fn modality_loss_with_gradient(
    rendered: &Image,
    target: &Image,
    weights: &ModalityWeights,
    modality: Modality,
    mask: Option<&Mask>,
) -> Result<(ModalityTerms, Image)> {
    weights.validate()?;
    if rendered.channels() != modality.channels() {
        return Err(Error::shape(format!("{} channels", modality.channels()), rendered.shape_string()));
    }
    let lam = weights.lambda_dssim;
    let (l1, g_l1) = l1_masked(rendered, target, mask)?;
    let (dssim, g_ssim) = dssim_with_gradient(rendered, target, mask)?;
    let mut grad = Image::from_vec(
        rendered.width(),
        rendered.height(),
        rendered.channels(),
        g_l1.data().iter().zip(g_ssim.data()).map(|(a, b)| (1.0 - lam) * a + lam * b).collect(),
    )?;
    let mut smooth = 0.0;
    if modality == Modality::Thermal && weights.lambda_smooth != 0.0 {
        let (s, g_s) = smooth_with_gradient(rendered)?;
        smooth = s;
        for (g, v) in grad.data_mut().iter_mut().zip(g_s.data()) {
            *g += weights.lambda_smooth * v;
        }
    } else if modality == Modality::Thermal {
        smooth = smooth_loss(rendered)?;
    }
    let total = (1.0 - lam) * l1 + lam * dssim + weights.lambda_smooth * smooth;
    Ok((ModalityTerms { l1, dssim, smooth, total }, grad))
}

/// `n_thermal / (n_thermal + n_rgb)`.
pub fn mr_gamma(n_thermal: usize, n_rgb: usize) -> Result<f64> {
    let total = n_thermal + n_rgb;
    if total == 0 {
        return Err(Error::UndefinedCoefficient);
    }
    Ok(if n_thermal <= n_rgb {
        n_thermal as f64 / total as f64
    } else {
        1.0 - n_rgb as f64 / total as f64
    })
}

/// Sum of both modality losses, or `γ·rgb + (1−γ)·thermal` when weighted.
pub fn joint_loss(loss_rgb: f64, loss_thermal: f64, gamma: Option<f64>) -> f64 {
    match gamma {
        None => loss_rgb + loss_thermal,
        Some(g) => {
            let v = loss_thermal + g * (loss_rgb - loss_thermal);
            v.clamp(loss_rgb.min(loss_thermal), loss_rgb.max(loss_thermal))
        }
    }
}

/// Coefficients `(rgb, thermal)` applied to each modality's loss.
pub fn joint_coefficients(gamma: Option<f64>) -> (f64, f64) {
    match gamma {
        None => (1.0, 1.0),
        Some(g) => (g, 1.0 - g),
    }
}

/// One training iteration's loss record.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub iteration: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub l1_rgb: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dssim_rgb: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub l1_thermal: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dssim_thermal: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub smooth_thermal: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub loss_rgb: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub loss_thermal: Option<f64>,
    pub total: f64,
    /// Present when the joint loss is γ-weighted.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub gamma: Option<f64>,
    pub n_rgb: usize,
    pub n_thermal: usize,
}

impl LossReport {
    pub fn set_terms(&mut self, modality: Modality, t: &ModalityTerms) {
        match modality {
            Modality::Rgb => {
                self.l1_rgb = Some(t.l1);
                self.dssim_rgb = Some(t.dssim);
                self.loss_rgb = Some(t.total);
            }
            Modality::Thermal => {
                self.l1_thermal = Some(t.l1);
                self.dssim_thermal = Some(t.dssim);
                self.smooth_thermal = Some(t.smooth);
                self.loss_thermal = Some(t.total);
            }
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("loss report serializes")
    }
}
