//! Perspective projection of 3D Gaussians to screen-space splats.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use super::RenderSettings;
use crate::camera::Camera;
use crate::error::Result;
use crate::model::{rotation_matrix, ActivatedGaussian, Gaussian3D, Modality};
use crate::sh;

/// Screen-space footprint of one Gaussian.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub mean2d: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    /// Upper triangle `(a, b, c)` of the inverse of `cov2d`.
    pub conic: [f64; 3],
    pub depth: f64,
    /// Inclusive pixel bounds `[x0, y0, x1, y1]`, clipped to the viewport.
    pub bbox: [usize; 4],
}

/// A projected, shaded Gaussian ready for compositing.
#[derive(Clone, Debug, PartialEq)]
pub struct Splat2D {
    pub mean2d: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    pub conic: [f64; 3],
    pub depth: f64,
    pub bbox: [usize; 4],
    /// Activated opacity, the peak alpha before the kernel falloff.
    pub alpha_base: f64,
    /// Post-SH channel values (only the first `channels` are meaningful).
    pub values: [f64; 3],
    pub source_index: usize,
}

impl Splat2D {
    #[inline]
    pub fn covers(&self, x: usize, y: usize) -> bool {
        x >= self.bbox[0] && x <= self.bbox[2] && y >= self.bbox[1] && y <= self.bbox[3]
    }
}

/// Perspective Jacobian of `(fx·x/z + cx, fy·y/z + cy)` at camera-space `p`.
pub(crate) fn perspective_jacobian(p: &Vector3<f64>, fx: f64, fy: f64) -> Matrix2x3<f64> {
    let inv_z = 1.0 / p.z;
    let inv_z2 = inv_z * inv_z;
    Matrix2x3::new(fx * inv_z, 0.0, -fx * p.x * inv_z2, 0.0, fy * inv_z, -fy * p.y * inv_z2)
}

/// Projects an activated Gaussian; `None` when it lies in front of the near
/// plane or its support misses the viewport entirely.
pub fn project_gaussian(g: &ActivatedGaussian, cam: &Camera, settings: &RenderSettings) -> Option<Projection> {
    project_with(g, cam, settings, true)
}

pub(crate) fn project_with(
    g: &ActivatedGaussian,
    cam: &Camera,
    settings: &RenderSettings,
    cull_viewport: bool,
) -> Option<Projection> {
    let p = cam.to_camera(&g.position);
    if !(p.z > settings.near) {
        return None;
    }
    let mean2d = Vector2::new(cam.fx * p.x / p.z + cam.cx, cam.fy * p.y / p.z + cam.cy);
    let m = rotation_matrix(&g.rotation) * Matrix3::from_diagonal(&g.scale);
    let cov3d = m * m.transpose();
    let j = perspective_jacobian(&p, cam.fx, cam.fy) * cam.rotation;
    let mut cov2d = j * cov3d * j.transpose();
    cov2d[(0, 1)] = 0.5 * (cov2d[(0, 1)] + cov2d[(1, 0)]);
    cov2d[(1, 0)] = cov2d[(0, 1)];
    cov2d[(0, 0)] += settings.low_pass;
    cov2d[(1, 1)] += settings.low_pass;
    let det = cov2d[(0, 0)] * cov2d[(1, 1)] - cov2d[(0, 1)] * cov2d[(0, 1)];
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    let conic = [cov2d[(1, 1)] / det, -cov2d[(0, 1)] / det, cov2d[(0, 0)] / det];

    // bounding box of the support ellipse, padded by one pixel
    let rx = settings.support_sigma * cov2d[(0, 0)].sqrt() + 1.0;
    let ry = settings.support_sigma * cov2d[(1, 1)].sqrt() + 1.0;
    let (w, h) = (cam.width as f64, cam.height as f64);
    let off_screen = mean2d.x + rx < 0.0
        || mean2d.x - rx > w - 1.0
        || mean2d.y + ry < 0.0
        || mean2d.y - ry > h - 1.0;
    if off_screen && cull_viewport {
        return None;
    }
    let bbox = if off_screen {
        // empty box: x0 > x1
        [1, 1, 0, 0]
    } else {
        [
            (mean2d.x - rx).floor().max(0.0) as usize,
            (mean2d.y - ry).floor().max(0.0) as usize,
            (mean2d.x + rx).ceil().min(w - 1.0) as usize,
            (mean2d.y + ry).ceil().min(h - 1.0) as usize,
        ]
    };
    Some(Projection {
        mean2d,
        cov2d,
        conic,
        depth: p.z,
        bbox,
    })
}

/// Direction from the camera center to the Gaussian, unnormalized.
#[inline]
pub(crate) fn view_vector(position: &Vector3<f64>, cam: &Camera) -> Vector3<f64> {
    position - cam.center()
}

/// Active SH degree for a modality under the settings' cap.
pub(crate) fn active_degree(stored: usize, settings: &RenderSettings) -> usize {
    settings.sh_degree.map_or(stored, |cap| cap.min(stored))
}

/// Projects and shades Gaussian `index` of a cloud for one modality.
pub(crate) fn make_splat(
    g: &Gaussian3D,
    index: usize,
    cam: &Camera,
    modality: Modality,
    stored_degree: usize,
    settings: &RenderSettings,
    cull_viewport: bool,
) -> Result<Option<Splat2D>> {
    let act = g.activate();
    let Some(proj) = project_with(&act, cam, settings, cull_viewport) else {
        return Ok(None);
    };
    let coeffs = g.sh(modality).expect("modality checked by caller");
    let dir = view_vector(&g.position, cam).normalize();
    let channels = modality.channels();
    let vals = sh::evaluate(coeffs, channels, stored_degree, active_degree(stored_degree, settings), &dir)?;
    let mut values = [0.0; 3];
    values[..channels].copy_from_slice(&vals);
    Ok(Some(Splat2D {
        mean2d: proj.mean2d,
        cov2d: proj.cov2d,
        conic: proj.conic,
        depth: proj.depth,
        bbox: proj.bbox,
        alpha_base: act.opacity,
        values,
        source_index: index,
    }))
}
