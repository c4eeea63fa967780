//! Unoptimized full-frame compositor used as a test oracle and to render
//! synthetic ground truth.
//!
//! Every pixel walks the complete globally sorted splat list with no tiling
//! or bounding-box rejection.

use super::{assemble, prepare_splats, Contribution, PixelRect, RenderOutput, RenderSettings, TileFragment};
use crate::camera::Camera;
use crate::error::Result;
use crate::model::{GaussianCloud, Modality};

/// Renders with the brute-force compositor.
pub fn render_reference(
    cloud: &GaussianCloud,
    cam: &Camera,
    modality: Modality,
    settings: &RenderSettings,
) -> Result<RenderOutput> {
    render_reference_with(cloud, cam, modality, settings, false)
}

/// As [`render_reference`]; with `force_include` Gaussians that the viewport
/// test would cull are composited as well.
pub fn render_reference_with(
    cloud: &GaussianCloud,
    cam: &Camera,
    modality: Modality,
    settings: &RenderSettings,
    force_include: bool,
) -> Result<RenderOutput> {
    let splats = prepare_splats(cloud, cam, modality, settings, !force_include)?;
    let channels = modality.channels();
    let (w, h) = (cam.width, cam.height);
    let r2 = settings.support_sigma * settings.support_sigma;

    let mut values = vec![0.0; w * h * channels];
    let mut final_t = vec![1.0; w * h];
    let mut offsets = vec![0u32];
    let mut contributions = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let pix = y * w + x;
            let mut transmittance = 1.0;
            for (k, s) in splats.iter().enumerate() {
                let dx = x as f64 - s.mean2d.x;
                let dy = y as f64 - s.mean2d.y;
                let q = s.conic[0] * dx * dx + 2.0 * s.conic[1] * dx * dy + s.conic[2] * dy * dy;
                if q > r2 {
                    continue;
                }
                let mut alpha = s.alpha_base * (-0.5 * q).exp();
                let clamped = alpha > settings.max_alpha;
                if clamped {
                    alpha = settings.max_alpha;
                }
                if alpha < settings.min_alpha {
                    continue;
                }
                for c in 0..channels {
                    values[pix * channels + c] += s.values[c] * alpha * transmittance;
                }
                contributions.push(Contribution {
                    slot: k as u32,
                    clamped,
                    alpha,
                    transmittance,
                });
                transmittance *= 1.0 - alpha;
                if transmittance < settings.min_transmittance {
                    break;
                }
            }
            for c in 0..channels {
                values[pix * channels + c] += settings.background * transmittance;
            }
            final_t[pix] = transmittance;
            offsets.push(contributions.len() as u32);
        }
    }
    let fragment = TileFragment {
        rect: PixelRect { x0: 0, y0: 0, x1: w, y1: h },
        list: (0..splats.len() as u32).collect(),
        values,
        final_transmittance: final_t,
        offsets,
        contributions,
    };
    Ok(assemble(cloud, cam, modality, settings, splats, vec![fragment]))
}
