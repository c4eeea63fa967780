//! Image preparation for SfM on multimodal captures: blended RGB/thermal
//! images and MSX-style detail transfer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

pub const MSX_STRENGTH: f64 = 0.7;
pub const MSX_BLUR_SIGMA: f64 = 2.0;

/// How a single-channel thermal image is shown when blended with RGB.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThermalDisplay {
    #[default]
    Grayscale,
    /// Iron-style false color.
    Colormap,
}

/// Rec. 601 luma of an RGB image (single-channel images pass through).
pub fn luminance(rgb: &Image) -> Result<Image> {
    match rgb.channels() {
        1 => Ok(rgb.clone()),
        3 => Ok(Image::from_fn(rgb.width(), rgb.height(), 1, |x, y, _| {
            let p = rgb.pixel(x, y);
            0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
        })),
        c => Err(Error::shape("1 or 3 channels", c)),
    }
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// Separable Gaussian blur of every channel, radius `ceil(3σ)`, with
/// half-sample symmetric boundary extension (`… b a | a b …`). With a
/// symmetric kernel this preserves the image mean exactly.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Result<Image> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!("blur sigma must be non-negative, got {sigma}")));
    }
    if sigma == 0.0 || img.is_empty() {
        return Ok(img.clone());
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let k = crate::losses::gaussian_kernel(2 * radius as usize + 1, sigma);
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let mut tmp = Image::zeros(w, h, ch);
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let s: f64 = k
                    .iter()
                    .enumerate()
                    .map(|(i, kv)| kv * img.get(reflect(x as isize + i as isize - radius, w), y, c))
                    .sum();
                tmp.set(x, y, c, s);
            }
        }
    }
    let mut out = Image::zeros(w, h, ch);
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let s: f64 = k
                    .iter()
                    .enumerate()
                    .map(|(i, kv)| kv * tmp.get(x, reflect(y as isize + i as isize - radius, h), c))
                    .sum();
                out.set(x, y, c, s);
            }
        }
    }
    Ok(out)
}

/// `L − blur(L)` evaluated as `Σ w_ij (L(p) − L(p + (i, j)))` over the
/// same kernel and boundary as [`gaussian_blur`], so flat regions give
/// exactly zero.
pub fn high_pass(img: &Image, sigma: f64) -> Result<Image> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!("blur sigma must be non-negative, got {sigma}")));
    }
    if sigma == 0.0 || img.is_empty() {
        return Ok(img.map(|_| 0.0));
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let k = crate::losses::gaussian_kernel(2 * radius as usize + 1, sigma);
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    Ok(Image::from_fn(w, h, ch, |x, y, c| {
        let centre = img.get(x, y, c);
        let mut s = 0.0;
        for (j, kj) in k.iter().enumerate() {
            let yy = reflect(y as isize + j as isize - radius, h);
            for (i, ki) in k.iter().enumerate() {
                let xx = reflect(x as isize + i as isize - radius, w);
                s += ki * kj * (centre - img.get(xx, yy, c));
            }
        }
        s
    }))
}

const IRON: [(f64, [f64; 3]); 6] = [
    (0.0, [0.0, 0.0, 0.0]),
    (0.2, [0.25, 0.0, 0.5]),
    (0.45, [0.8, 0.0, 0.35]),
    (0.7, [1.0, 0.5, 0.0]),
    (0.9, [1.0, 0.9, 0.2]),
    (1.0, [1.0, 1.0, 1.0]),
];

/// Iron-style false color for a normalized temperature.
pub fn colormap(t: f64) -> [f64; 3] {
    let t = t.clamp(0.0, 1.0);
    for w in IRON.windows(2) {
        let ((t0, c0), (t1, c1)) = (w[0], w[1]);
        if t <= t1 {
            let f = (t - t0) / (t1 - t0);
            return std::array::from_fn(|i| c0[i] + f * (c1[i] - c0[i]));
        }
    }
    IRON[IRON.len() - 1].1
}

fn thermal_as_rgb(thermal: &Image, display: ThermalDisplay) -> Image {
    Image::from_fn(thermal.width(), thermal.height(), 3, |x, y, c| {
        let t = thermal.get(x, y, 0);
        match display {
            ThermalDisplay::Grayscale => t,
            ThermalDisplay::Colormap => colormap(t)[c],
        }
    })
}

/// `β·thermal + (1−β)·rgb` per channel, thermal broadcast to three channels
/// (or false-colored).
pub fn mix_images(rgb: &Image, thermal: &Image, beta: f64, display: ThermalDisplay) -> Result<Image> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidParameter(format!("beta must lie in [0, 1], got {beta}")));
    }
    check_pair(rgb, thermal)?;
    let th = thermal_as_rgb(thermal, display);
    let data = rgb
        .data()
        .iter()
        .zip(th.data())
        .map(|(&r, &t)| if beta == 1.0 { t } else { r + beta * (t - r) })
        .collect();
    Image::from_vec(rgb.width(), rgb.height(), 3, data)
}

fn check_pair(rgb: &Image, thermal: &Image) -> Result<()> {
    if rgb.channels() != 3 {
        return Err(Error::shape("3-channel RGB", rgb.shape_string()));
    }
    if thermal.channels() != 1 || (thermal.width(), thermal.height()) != (rgb.width(), rgb.height()) {
        return Err(Error::shape(format!("{}x{}x1 thermal", rgb.width(), rgb.height()), thermal.shape_string()));
    }
    Ok(())
}

/// High-pass of the RGB luminance added onto the thermal image:
/// `clamp(T + s·(L − blur(L)), 0, 1)`.
pub fn msx_image(rgb: &Image, thermal: &Image, strength: f64, blur_sigma: f64) -> Result<Image> {
    check_pair(rgb, thermal)?;
    if !(strength >= 0.0) || !strength.is_finite() {
        return Err(Error::InvalidParameter(format!("strength must be non-negative, got {strength}")));
    }
    let detail = high_pass(&luminance(rgb)?, blur_sigma)?;
    let data = thermal
        .data()
        .iter()
        .zip(detail.data())
        .map(|(&t, &d)| (t + strength * d).clamp(0.0, 1.0))
        .collect();
    Image::from_vec(thermal.width(), thermal.height(), 1, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(seed: u64, w: usize, h: usize, c: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(w, h, c, |_, _, _| rng.random_range(0.0..1.0))
    }

    #[test]
    fn mix_examples() {
        let rgb = random(1, 6, 4, 3);
        let th = random(2, 6, 4, 1);
        assert_eq!(mix_images(&rgb, &th, 0.0, ThermalDisplay::Grayscale).unwrap(), rgb);
        let one = mix_images(&rgb, &th, 1.0, ThermalDisplay::Grayscale).unwrap();
        assert_eq!(one, Image::from_fn(6, 4, 3, |x, y, _| th.get(x, y, 0)));
        let a = Image::filled(2, 2, 3, 0.2);
        let b = Image::filled(2, 2, 1, 0.6);
        let m = mix_images(&a, &b, 0.5, ThermalDisplay::Grayscale).unwrap();
        assert!(m.data().iter().all(|&v| (v - 0.4).abs() < 1e-15));
        assert!(mix_images(&a, &b, 1.5, ThermalDisplay::Grayscale).is_err());
        let cm = mix_images(&a, &b, 1.0, ThermalDisplay::Colormap).unwrap();
        assert_eq!(cm.pixel(0, 0), &colormap(0.6));
    }

    #[test]
    fn msx_examples() {
        let rgb = random(3, 16, 12, 3);
        let th = random(4, 16, 12, 1).map(|v| 0.25 + 0.5 * v);
        assert_eq!(msx_image(&rgb, &th, 0.0, 2.0).unwrap(), th);
        let flat = Image::filled(16, 12, 3, 0.37);
        assert_eq!(msx_image(&flat, &th, 3.0, 2.0).unwrap(), th);
    }

    #[test]
    fn msx_step_edge_band() {
        let (w, h, sigma, s, edge) = (48, 3, 2.0, 0.5, 24usize);
        let rgb = Image::from_fn(w, h, 3, |x, _, _| if x >= edge { 1.0 } else { 0.0 });
        let th = Image::filled(w, h, 1, 0.5);
        let out = msx_image(&rgb, &th, s, sigma).unwrap();
        // 1-D oracle: H(x) = step(x) − Σ_k g(k) step(x + k), normalized g
        let r = 6i32;
        let g: Vec<f64> = (-r..=r).map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp()).collect();
        let norm: f64 = g.iter().sum();
        for x in r as usize..w - r as usize {
            let step = |i: i32| if i >= edge as i32 { 1.0 } else { 0.0 };
            let blurred: f64 = (-r..=r).map(|k| g[(k + r) as usize] / norm * step(x as i32 + k)).sum();
            let expect = 0.5 + s * (step(x as i32) - blurred);
            assert!((out.get(x, 1, 0) - expect).abs() < 1e-9, "{x}");
            if x + (r as usize) < edge || x > edge + r as usize {
                assert!((out.get(x, 1, 0) - 0.5).abs() < 1e-12);
            }
        }
        assert!(out.get(edge - 1, 1, 0) < 0.5 && out.get(edge, 1, 0) > 0.5);
    }

    #[test]
    fn high_pass_is_identity_minus_blur() {
        let img = random(6, 15, 11, 1);
        let b = gaussian_blur(&img, 1.3).unwrap();
        let hp = high_pass(&img, 1.3).unwrap();
        for i in 0..img.data().len() {
            assert!((hp[i] - (img[i] - b[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn blur_preserves_mean_and_constants() {
        let img = random(5, 13, 9, 2);
        let b = gaussian_blur(&img, 1.7).unwrap();
        assert!((b.mean() - img.mean()).abs() < 1e-12);
        let c = Image::filled(5, 5, 1, 0.3);
        assert!(gaussian_blur(&c, 4.0).unwrap().max_abs_diff(&c) < 1e-15);
    }

    proptest! {
        #[test]
        fn mix_is_affine_in_beta(seed in 0u64..500, beta in 0.0f64..1.0) {
            let rgb = random(seed, 5, 4, 3);
            let th = random(seed + 1, 5, 4, 1);
            let m0 = mix_images(&rgb, &th, 0.0, ThermalDisplay::Grayscale).unwrap();
            let m1 = mix_images(&rgb, &th, 1.0, ThermalDisplay::Grayscale).unwrap();
            let mb = mix_images(&rgb, &th, beta, ThermalDisplay::Grayscale).unwrap();
            for i in 0..mb.data().len() {
                let affine = m0[i] + beta * (m1[i] - m0[i]);
                prop_assert_eq!(mb[i], affine);
            }
        }

        #[test]
        fn msx_preserves_thermal_mean(seed in 0u64..500, strength in 0.0f64..2.0, sigma in 0.5f64..4.0) {
            let rgb = random(seed, 20, 15, 3);
            let th = random(seed + 1, 20, 15, 1).map(|v| 0.3 + 0.4 * v);
            let out = msx_image(&rgb, &th, strength * 0.1, sigma).unwrap();
            prop_assert!((out.mean() - th.mean()).abs() < 1e-6);
        }
    }
}
