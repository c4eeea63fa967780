//! Tile-based front-to-back alpha compositing of projected Gaussians.
//!
//! Every pixel value is `Σ_k v_k α_k Π_{j<k} (1 − α_j)` over the splats that
//! cover it, in ascending depth (ties broken by source index), composited
//! over a constant background. Per-pixel contribution lists are retained in
//! the [`RenderOutput`] so the backward pass can replay them.

mod project;
pub mod reference;

pub use project::{project_gaussian, Projection, Splat2D};
pub(crate) use project::{active_degree, make_splat, perspective_jacobian, view_vector};

use rayon::prelude::*;

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::{GaussianCloud, Modality};

#[derive(Clone, Debug, PartialEq)]
pub struct RenderSettings {
    pub tile_size: usize,
    /// Camera-space depth at or below which Gaussians are culled.
    pub near: f64,
    /// Added to the diagonal of every screen-space covariance (pixels²).
    pub low_pass: f64,
    /// Mahalanobis radius beyond which a splat contributes nothing.
    pub support_sigma: f64,
    pub max_alpha: f64,
    /// Contributions with smaller alpha are skipped.
    pub min_alpha: f64,
    /// Compositing of a pixel stops once transmittance drops below this.
    pub min_transmittance: f64,
    pub background: f64,
    /// Clamp composited images to [0, 1].
    pub clamp_output: bool,
    /// Cap on the active SH degree (progressive unlock during training).
    pub sh_degree: Option<usize>,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            tile_size: 16,
            near: 0.2,
            low_pass: 0.3,
            support_sigma: 3.0,
            max_alpha: 0.99,
            min_alpha: 1.0 / 255.0,
            min_transmittance: 1e-4,
            background: 0.0,
            clamp_output: true,
            sh_degree: None,
        }
    }
}

/// Inclusive-exclusive pixel rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PixelRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl PixelRect {
    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn len(&self) -> usize {
        self.width() * self.height()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One accepted contribution to a pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Contribution {
    /// Index into the fragment's splat list.
    pub slot: u32,
    pub clamped: bool,
    pub alpha: f64,
    /// Transmittance in front of this splat.
    pub transmittance: f64,
}

/// Composited pixels of one rectangle plus the state needed to replay them.
#[derive(Clone, Debug)]
pub struct TileFragment {
    pub rect: PixelRect,
    /// Indices into the render's splat array, in compositing order.
    pub(crate) list: Vec<u32>,
    /// Pre-clamp values, `rect.len() × channels`.
    pub(crate) values: Vec<f64>,
    pub(crate) final_transmittance: Vec<f64>,
    pub(crate) offsets: Vec<u32>,
    pub(crate) contributions: Vec<Contribution>,
}

impl TileFragment {
    pub fn contributions_at(&self, local_pixel: usize) -> usize {
        (self.offsets[local_pixel + 1] - self.offsets[local_pixel]) as usize
    }
}

#[inline]
pub(crate) fn splat_alpha(s: &Splat2D, x: usize, y: usize, settings: &RenderSettings) -> Option<(f64, bool)> {
    let dx = x as f64 - s.mean2d.x;
    let dy = y as f64 - s.mean2d.y;
    let q = s.conic[0] * dx * dx + 2.0 * s.conic[1] * dx * dy + s.conic[2] * dy * dy;
    if q > settings.support_sigma * settings.support_sigma {
        return None;
    }
    let raw = s.alpha_base * (-0.5 * q).exp();
    let (alpha, clamped) = if raw > settings.max_alpha {
        (settings.max_alpha, true)
    } else {
        (raw, false)
    };
    if alpha < settings.min_alpha {
        return None;
    }
    Some((alpha, clamped))
}

/// Composites `order` (indices into `splats`, ascending depth) over `rect`.
pub(crate) fn composite_region(
    splats: &[Splat2D],
    order: Vec<u32>,
    rect: PixelRect,
    channels: usize,
    settings: &RenderSettings,
) -> TileFragment {
    debug_assert!(
        order.windows(2).all(|w| {
            let (a, b) = (&splats[w[0] as usize], &splats[w[1] as usize]);
            (a.depth, a.source_index) <= (b.depth, b.source_index)
        }),
        "splats must be sorted by depth"
    );
    let n = rect.len();
    let mut values = vec![0.0; n * channels];
    let mut final_transmittance = vec![1.0; n];
    let mut offsets = Vec::with_capacity(n + 1);
    let mut contributions = Vec::new();
    offsets.push(0u32);
    let mut local = 0;
    let mut row: Vec<u32> = Vec::with_capacity(order.len());
    for y in rect.y0..rect.y1 {
        row.clear();
        row.extend((0..order.len() as u32).filter(|&k| {
            let b = &splats[order[k as usize] as usize].bbox;
            y >= b[1] && y <= b[3]
        }));
        for x in rect.x0..rect.x1 {
            let mut t = 1.0;
            let acc = &mut values[local * channels..(local + 1) * channels];
            for &slot in &row {
                let s = &splats[order[slot as usize] as usize];
                if !s.covers(x, y) {
                    continue;
                }
                let Some((alpha, clamped)) = splat_alpha(s, x, y, settings) else {
                    continue;
                };
                for (c, a) in acc.iter_mut().enumerate() {
                    *a += s.values[c] * alpha * t;
                }
                contributions.push(Contribution {
                    slot: slot as u32,
                    clamped,
                    alpha,
                    transmittance: t,
                });
                t *= 1.0 - alpha;
                if t < settings.min_transmittance {
                    break;
                }
            }
            for a in acc.iter_mut() {
                *a += settings.background * t;
            }
            final_transmittance[local] = t;
            offsets.push(contributions.len() as u32);
            local += 1;
        }
    }
    TileFragment {
        rect,
        list: order,
        values,
        final_transmittance,
        offsets,
        contributions,
    }
}

/// Composites an already filtered, depth-sorted splat list over `region`.
pub fn composite_tile(splats: &[Splat2D], region: PixelRect, channels: usize, settings: &RenderSettings) -> TileFragment {
    composite_region(splats, (0..splats.len() as u32).collect(), region, channels, settings)
}

impl TileFragment {
    /// Pre-clamp value of a pixel (rect-local index).
    pub fn value(&self, local_pixel: usize, channel: usize, channels: usize) -> f64 {
        self.values[local_pixel * channels + channel]
    }

    pub fn accumulated_alpha(&self, local_pixel: usize) -> f64 {
        1.0 - self.final_transmittance[local_pixel]
    }
}

/// Everything the backward pass needs from a forward render.
#[derive(Clone, Debug)]
pub(crate) struct Retained {
    pub modality: Modality,
    pub fingerprint: u64,
    pub camera: Camera,
    pub settings: RenderSettings,
    pub splats: Vec<Splat2D>,
    pub fragments: Vec<TileFragment>,
    /// Pre-clamp composited image.
    pub raw: Image,
}

#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub image: Image,
    /// `1 − Π(1 − α_k)` per pixel.
    pub accum_alpha: Image,
    pub contrib_count: Vec<u32>,
    pub(crate) retained: Retained,
}

impl RenderOutput {
    pub fn modality(&self) -> Modality {
        self.retained.modality
    }

    /// Number of Gaussians that survived culling.
    pub fn visible_count(&self) -> usize {
        self.retained.splats.len()
    }

    pub fn splats(&self) -> &[Splat2D] {
        &self.retained.splats
    }

    /// Image before the final [0, 1] clamp.
    pub fn raw_image(&self) -> &Image {
        &self.retained.raw
    }

    /// Source indices of the Gaussians composited into a pixel, front to back.
    pub fn pixel_contributors(&self, x: usize, y: usize) -> Vec<usize> {
        for f in &self.retained.fragments {
            let r = f.rect;
            if x >= r.x0 && x < r.x1 && y >= r.y0 && y < r.y1 {
                let local = (y - r.y0) * r.width() + (x - r.x0);
                let (a, b) = (f.offsets[local] as usize, f.offsets[local + 1] as usize);
                return f.contributions[a..b]
                    .iter()
                    .map(|c| self.retained.splats[f.list[c.slot as usize] as usize].source_index)
                    .collect();
            }
        }
        Vec::new()
    }
}

/// Projects, shades and depth-sorts every Gaussian of the cloud.
pub(crate) fn prepare_splats(
    cloud: &GaussianCloud,
    cam: &Camera,
    modality: Modality,
    settings: &RenderSettings,
    cull_viewport: bool,
) -> Result<Vec<Splat2D>> {
    if !cloud.has(modality) {
        return Err(Error::ModalityMismatch(modality));
    }
    cam.validate()?;
    let degree = cloud.sh_degree(modality);
    let mut splats = cloud
        .gaussians
        .par_iter()
        .enumerate()
        .map(|(i, g)| make_splat(g, i, cam, modality, degree, settings, cull_viewport))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect::<Vec<_>>();
    splats.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.source_index.cmp(&b.source_index)));
    Ok(splats)
}

/// Assembles fragments into full-frame buffers.
pub(crate) fn assemble(
    cloud: &GaussianCloud,
    cam: &Camera,
    modality: Modality,
    settings: &RenderSettings,
    splats: Vec<Splat2D>,
    fragments: Vec<TileFragment>,
) -> RenderOutput {
    let channels = modality.channels();
    let (w, h) = (cam.width, cam.height);
    let mut raw = Image::zeros(w, h, channels);
    let mut accum = Image::zeros(w, h, 1);
    let mut counts = vec![0u32; w * h];
    for f in &fragments {
        let r = f.rect;
        let mut local = 0;
        for y in r.y0..r.y1 {
            for x in r.x0..r.x1 {
                for c in 0..channels {
                    raw.set(x, y, c, f.values[local * channels + c]);
                }
                accum.set(x, y, 0, 1.0 - f.final_transmittance[local]);
                counts[y * w + x] = f.offsets[local + 1] - f.offsets[local];
                local += 1;
            }
        }
    }
    let image = if settings.clamp_output {
        raw.clamped(0.0, 1.0)
    } else {
        raw.clone()
    };
    RenderOutput {
        image,
        accum_alpha: accum,
        contrib_count: counts,
        retained: Retained {
            modality,
            fingerprint: cloud.fingerprint(),
            camera: cam.clone(),
            settings: settings.clone(),
            splats,
            fragments,
            raw,
        },
    }
}

/// Renders one modality of a cloud through the tiled compositor.
pub fn render(
    cloud: &GaussianCloud,
    cam: &Camera,
    modality: Modality,
    settings: &RenderSettings,
) -> Result<RenderOutput> {
    let splats = prepare_splats(cloud, cam, modality, settings, true)?;
    let ts = settings.tile_size.max(1);
    let tiles_x = cam.width.div_ceil(ts);
    let tiles_y = cam.height.div_ceil(ts);
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (i, s) in splats.iter().enumerate() {
        let [x0, y0, x1, y1] = s.bbox;
        if x0 > x1 || y0 > y1 {
            continue;
        }
        for ty in y0 / ts..=y1 / ts {
            for tx in x0 / ts..=x1 / ts {
                bins[ty * tiles_x + tx].push(i as u32);
            }
        }
    }
    let channels = modality.channels();
    let fragments: Vec<TileFragment> = bins
        .into_par_iter()
        .enumerate()
        .map(|(t, order)| {
            let (tx, ty) = (t % tiles_x, t / tiles_x);
            let rect = PixelRect {
                x0: tx * ts,
                y0: ty * ts,
                x1: ((tx + 1) * ts).min(cam.width),
                y1: ((ty + 1) * ts).min(cam.height),
            };
            composite_region(&splats, order, rect, channels, settings)
        })
        .collect();
    Ok(assemble(cloud, cam, modality, settings, splats, fragments))
}
