//! Reverse-mode gradients of a rendered image with respect to every
//! learnable Gaussian parameter, plus a central-difference oracle.
//!
//! The backward pass replays the per-pixel contribution lists retained by
//! the forward render back to front, accumulates screen-space gradients per
//! splat (per tile, then reduced in tile order so results are independent of
//! scheduling), and finally chains them through shading, projection and the
//! parameter activations one Gaussian at a time.

use nalgebra::{Matrix2, Matrix3, Vector3};
use rayon::prelude::*;

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::{normalize_quaternion, rotation_matrix, rotation_matrix_vjp, sigmoid, GaussianCloud, Modality, ParamKind, ParamSelector};
use crate::raster::{active_degree, perspective_jacobian, view_vector, RenderOutput, Splat2D, TileFragment};
use crate::sh;

/// Gradients for every parameter of a cloud, laid out to mirror it.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterGradients {
    pub position: Vec<Vector3<f64>>,
    pub log_scale: Vec<Vector3<f64>>,
    pub rotation: Vec<[f64; 4]>,
    pub opacity_logit: Vec<f64>,
    /// `n × sh_rgb_len`, same coefficient-major layout as the cloud.
    pub sh_rgb: Vec<f64>,
    pub sh_thermal: Vec<f64>,
    pub sh_rgb_len: usize,
    pub sh_thermal_len: usize,
    /// Gradient with respect to the projected mean in normalized device
    /// units (pixel gradient × half the viewport size); the densification
    /// statistic is built from its norm.
    pub mean2d: Vec<[f64; 2]>,
    /// Whether the Gaussian survived culling in the pass.
    pub visible: Vec<bool>,
}

impl ParameterGradients {
    pub fn zeros(cloud: &GaussianCloud) -> Self {
        let n = cloud.len();
        let sh_rgb_len = cloud.sh_len(Modality::Rgb);
        let sh_thermal_len = cloud.sh_len(Modality::Thermal);
        Self {
            position: vec![Vector3::zeros(); n],
            log_scale: vec![Vector3::zeros(); n],
            rotation: vec![[0.0; 4]; n],
            opacity_logit: vec![0.0; n],
            sh_rgb: vec![0.0; n * sh_rgb_len],
            sh_thermal: vec![0.0; n * sh_thermal_len],
            sh_rgb_len,
            sh_thermal_len,
            mean2d: vec![[0.0; 2]; n],
            visible: vec![false; n],
        }
    }

    pub fn len(&self) -> usize {
        self.position.len()
    }

    pub fn is_empty(&self) -> bool {
        self.position.is_empty()
    }

    pub fn matches(&self, cloud: &GaussianCloud) -> bool {
        self.len() == cloud.len()
            && self.sh_rgb_len == cloud.sh_len(Modality::Rgb)
            && self.sh_thermal_len == cloud.sh_len(Modality::Thermal)
    }

    /// `self += scale · other`.
    pub fn add_scaled(&mut self, other: &ParameterGradients, scale: f64) -> Result<()> {
        if self.len() != other.len() || self.sh_rgb_len != other.sh_rgb_len || self.sh_thermal_len != other.sh_thermal_len {
            return Err(Error::shape(self.len(), other.len()));
        }
        for (a, b) in self.position.iter_mut().zip(&other.position) {
            *a += b * scale;
        }
        for (a, b) in self.log_scale.iter_mut().zip(&other.log_scale) {
            *a += b * scale;
        }
        for (a, b) in self.rotation.iter_mut().zip(&other.rotation) {
            for k in 0..4 {
                a[k] += b[k] * scale;
            }
        }
        for (a, b) in self.opacity_logit.iter_mut().zip(&other.opacity_logit) {
            *a += b * scale;
        }
        for (a, b) in self.sh_rgb.iter_mut().zip(&other.sh_rgb) {
            *a += b * scale;
        }
        for (a, b) in self.sh_thermal.iter_mut().zip(&other.sh_thermal) {
            *a += b * scale;
        }
        for (a, b) in self.mean2d.iter_mut().zip(&other.mean2d) {
            a[0] += b[0] * scale;
            a[1] += b[1] * scale;
        }
        for (a, b) in self.visible.iter_mut().zip(&other.visible) {
            *a |= *b;
        }
        Ok(())
    }

    pub fn get(&self, sel: ParamSelector) -> Option<f64> {
        let i = sel.gaussian;
        if i >= self.len() {
            return None;
        }
        match sel.kind {
            ParamKind::Position(a) if a < 3 => Some(self.position[i][a]),
            ParamKind::LogScale(a) if a < 3 => Some(self.log_scale[i][a]),
            ParamKind::Rotation(a) if a < 4 => Some(self.rotation[i][a]),
            ParamKind::OpacityLogit => Some(self.opacity_logit[i]),
            ParamKind::ShRgb(k, c) if c < 3 && k * 3 + c < self.sh_rgb_len => {
                Some(self.sh_rgb[i * self.sh_rgb_len + k * 3 + c])
            }
            ParamKind::ShThermal(k) if k < self.sh_thermal_len => Some(self.sh_thermal[i * self.sh_thermal_len + k]),
            _ => None,
        }
    }

    fn scalars(&self) -> impl Iterator<Item = f64> + '_ {
        self.position
            .iter()
            .chain(&self.log_scale)
            .flat_map(|v| v.iter().copied())
            .chain(self.rotation.iter().flatten().copied())
            .chain(self.opacity_logit.iter().copied())
            .chain(self.sh_rgb.iter().copied())
            .chain(self.sh_thermal.iter().copied())
    }

    pub fn all_finite(&self) -> bool {
        self.scalars().all(f64::is_finite)
    }

    pub fn is_zero(&self) -> bool {
        self.scalars().all(|v| v == 0.0)
    }

    /// Gradients of one Gaussian are exactly zero.
    pub fn is_zero_at(&self, i: usize) -> bool {
        self.position[i] == Vector3::zeros()
            && self.log_scale[i] == Vector3::zeros()
            && self.rotation[i] == [0.0; 4]
            && self.opacity_logit[i] == 0.0
            && self.sh_rgb[i * self.sh_rgb_len..(i + 1) * self.sh_rgb_len].iter().all(|&v| v == 0.0)
            && self.sh_thermal[i * self.sh_thermal_len..(i + 1) * self.sh_thermal_len]
                .iter()
                .all(|&v| v == 0.0)
    }
}

/// Screen-space gradient of one splat.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct SplatGrad {
    mean2d: [f64; 2],
    /// With respect to `(a, b, c)` of the conic `a·dx² + 2b·dx·dy + c·dy²`.
    conic: [f64; 3],
    alpha_base: f64,
    values: [f64; 3],
}

impl SplatGrad {
    fn add(&mut self, o: &SplatGrad) {
        for k in 0..2 {
            self.mean2d[k] += o.mean2d[k];
        }
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.values[k] += o.values[k];
        }
        self.alpha_base += o.alpha_base;
    }
}

fn backward_fragment(f: &TileFragment, splats: &[Splat2D], upstream: &Image, raw: &Image, channels: usize, out: &Retained2) -> Vec<SplatGrad> {
    let mut grads = vec![SplatGrad::default(); f.list.len()];
    let r = f.rect;
    let mut local = 0;
    for y in r.y0..r.y1 {
        for x in r.x0..r.x1 {
            let (a, b) = (f.offsets[local] as usize, f.offsets[local + 1] as usize);
            let t_final = f.final_transmittance[local];
            local += 1;
            let mut up = [0.0; 3];
            let mut any = false;
            for c in 0..channels {
                let v = raw.get(x, y, c);
                let clamped = out.clamp_output && !(0.0..=1.0).contains(&v);
                up[c] = if clamped { 0.0 } else { upstream.get(x, y, c) };
                any |= up[c] != 0.0;
            }
            if !any {
                continue;
            }
            let mut acc = [out.background * t_final; 3];
            for contrib in f.contributions[a..b].iter().rev() {
                let slot = contrib.slot as usize;
                let s = &splats[f.list[slot] as usize];
                let (alpha, t) = (contrib.alpha, contrib.transmittance);
                let g = &mut grads[slot];
                let mut d_alpha = 0.0;
                for c in 0..channels {
                    g.values[c] += up[c] * alpha * t;
                    d_alpha += up[c] * (s.values[c] * t - acc[c] / (1.0 - alpha));
                    acc[c] += s.values[c] * alpha * t;
                }
                if contrib.clamped {
                    continue;
                }
                // alpha = alpha_base · exp(-q/2)
                g.alpha_base += d_alpha * alpha / s.alpha_base;
                let dx = x as f64 - s.mean2d.x;
                let dy = y as f64 - s.mean2d.y;
                let d_q = -0.5 * alpha * d_alpha;
                let [ca, cb, cc] = s.conic;
                g.mean2d[0] += d_q * -2.0 * (ca * dx + cb * dy);
                g.mean2d[1] += d_q * -2.0 * (cb * dx + cc * dy);
                g.conic[0] += d_q * dx * dx;
                g.conic[1] += d_q * 2.0 * dx * dy;
                g.conic[2] += d_q * dy * dy;
            }
        }
    }
    grads
}

struct Retained2 {
    clamp_output: bool,
    background: f64,
}

/// Sums each splat's per-fragment partial gradients with a pairwise tree
/// over the fragments that touch it, in fragment order, so the result does
/// not depend on scheduling.
fn reduce_fragments(fragments: &[TileFragment], parts: Vec<Vec<SplatGrad>>, n_splats: usize) -> Vec<SplatGrad> {
    let mut offsets = vec![0usize; n_splats + 1];
    for f in fragments {
        for &s in &f.list {
            offsets[s as usize + 1] += 1;
        }
    }
    for i in 0..n_splats {
        offsets[i + 1] += offsets[i];
    }
    let mut flat = vec![SplatGrad::default(); offsets[n_splats]];
    let mut fill = offsets.clone();
    for (f, part) in fragments.iter().zip(parts) {
        for (&s, g) in f.list.iter().zip(part) {
            flat[fill[s as usize]] = g;
            fill[s as usize] += 1;
        }
    }
    (0..n_splats).map(|i| pairwise_sum(&mut flat[offsets[i]..offsets[i + 1]])).collect()
}

fn pairwise_sum(xs: &mut [SplatGrad]) -> SplatGrad {
    let mut n = xs.len();
    if n == 0 {
        return SplatGrad::default();
    }
    while n > 1 {
        let half = n.div_ceil(2);
        for k in 0..n / 2 {
            let b = xs[2 * k + 1];
            xs[k] = xs[2 * k];
            xs[k].add(&b);
        }
        if n % 2 == 1 {
            xs[half - 1] = xs[n - 1];
        }
        n = half;
    }
    xs[0]
}

/// Gradient of one Gaussian's parameters given its splat's screen-space
/// gradient.
struct GaussianGrad {
    position: Vector3<f64>,
    log_scale: Vector3<f64>,
    rotation: [f64; 4],
    opacity_logit: f64,
    sh: Vec<f64>,
    mean2d_ndc: [f64; 2],
}

fn chain_gaussian(
    cloud: &GaussianCloud,
    splat: &Splat2D,
    grad: &SplatGrad,
    cam: &Camera,
    modality: Modality,
    settings: &crate::raster::RenderSettings,
) -> GaussianGrad {
    let g = &cloud.gaussians[splat.source_index];
    let channels = modality.channels();

    // shading: values = max(0, Σ_k coeff_k Y_k(dir) + 0.5)
    let stored = cloud.sh_degree(modality);
    let degree = active_degree(stored, settings);
    let coeffs = g.sh(modality).expect("modality checked");
    let view = view_vector(&g.position, cam);
    let view_norm = view.norm();
    let dir = view / view_norm;
    let basis = sh::basis(&dir, degree);
    let mut d_sh = vec![0.0; coeffs.len()];
    let mut d_dir = Vector3::zeros();
    let basis_grad = if degree > 0 { Some(sh::basis_gradient(&dir, degree)) } else { None };
    for c in 0..channels {
        let raw: f64 = (0..sh::coeff_count(degree)).map(|k| coeffs[k * channels + c] * basis[k]).sum::<f64>() + sh::SH_OFFSET;
        if raw < 0.0 {
            continue;
        }
        let dv = grad.values[c];
        for k in 0..sh::coeff_count(degree) {
            d_sh[k * channels + c] = dv * basis[k];
        }
        if let Some(bg) = &basis_grad {
            for k in 1..sh::coeff_count(degree) {
                let w = dv * coeffs[k * channels + c];
                d_dir += Vector3::new(bg[k][0], bg[k][1], bg[k][2]) * w;
            }
        }
    }
    let mut d_position = (d_dir - dir * dir.dot(&d_dir)) / view_norm;

    // opacity
    let opacity = sigmoid(g.opacity_logit);
    let d_logit = grad.alpha_base * opacity * (1.0 - opacity);

    // projected mean
    let p = cam.to_camera(&g.position);
    let (fx, fy) = (cam.fx, cam.fy);
    let inv_z = 1.0 / p.z;
    let [gu, gv] = grad.mean2d;
    let mut d_p = Vector3::new(
        gu * fx * inv_z,
        gv * fy * inv_z,
        -(gu * fx * p.x + gv * fy * p.y) * inv_z * inv_z,
    );

    // conic = cov2d⁻¹ → cov2d
    let [ca, cb, cc] = splat.conic;
    let conic = Matrix2::new(ca, cb, cb, cc);
    let d_conic = Matrix2::new(grad.conic[0], 0.5 * grad.conic[1], 0.5 * grad.conic[1], grad.conic[2]);
    let d_cov2d = -(conic * d_conic * conic);

    // cov2d = J W Σ Wᵀ Jᵀ + low_pass·I
    let rot_q = normalize_quaternion(g.rotation);
    let r = rotation_matrix(&rot_q);
    let scale = g.log_scale.map(f64::exp);
    let m = r * Matrix3::from_diagonal(&scale);
    let sigma = m * m.transpose();
    let w = cam.rotation;
    let cov_cam = w * sigma * w.transpose();
    let jac = perspective_jacobian(&p, fx, fy);
    let d_cov_cam = jac.transpose() * d_cov2d * jac;
    let d_jac = 2.0 * d_cov2d * jac * cov_cam;
    let (inv_z2, inv_z3) = (inv_z * inv_z, inv_z * inv_z * inv_z);
    d_p.x += d_jac[(0, 2)] * -fx * inv_z2;
    d_p.y += d_jac[(1, 2)] * -fy * inv_z2;
    d_p.z += d_jac[(0, 0)] * -fx * inv_z2
        + d_jac[(0, 2)] * 2.0 * fx * p.x * inv_z3
        + d_jac[(1, 1)] * -fy * inv_z2
        + d_jac[(1, 2)] * 2.0 * fy * p.y * inv_z3;
    d_position += w.transpose() * d_p;

    // Σ = M Mᵀ with M = R S
    let d_sigma = w.transpose() * d_cov_cam * w;
    let d_sigma = (d_sigma + d_sigma.transpose()) * 0.5;
    let d_m = 2.0 * d_sigma * m;
    let d_r = d_m * Matrix3::from_diagonal(&scale);
    let mut d_log_scale = Vector3::zeros();
    for i in 0..3 {
        let ds: f64 = (0..3).map(|row| d_m[(row, i)] * r[(row, i)]).sum();
        d_log_scale[i] = ds * scale[i];
    }
    let d_qn = rotation_matrix_vjp(&rot_q, &d_r);
    let qnorm = g.rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
    let dot: f64 = (0..4).map(|k| d_qn[k] * rot_q[k]).sum();
    let d_rotation = std::array::from_fn(|k| (d_qn[k] - rot_q[k] * dot) / qnorm);

    GaussianGrad {
        position: d_position,
        log_scale: d_log_scale,
        rotation: d_rotation,
        opacity_logit: d_logit,
        sh: d_sh,
        mean2d_ndc: [gu * 0.5 * cam.width as f64, gv * 0.5 * cam.height as f64],
    }
}

/// Gradients of `Σ_pixels upstream · image` with respect to every cloud
/// parameter, replaying the forward render `forward`.
pub fn backward(
    cloud: &GaussianCloud,
    cam: &Camera,
    modality: Modality,
    forward: &RenderOutput,
    upstream: &Image,
) -> Result<ParameterGradients> {
    let ret = &forward.retained;
    if ret.modality != modality {
        return Err(Error::State(format!(
            "forward buffers were rendered for {}, not {modality}",
            ret.modality
        )));
    }
    if ret.fingerprint != cloud.fingerprint() || &ret.camera != cam {
        return Err(Error::State("forward buffers are stale for this cloud or camera".into()));
    }
    upstream.check_same_shape(&forward.image)?;
    let channels = modality.channels();
    let flags = Retained2 {
        clamp_output: ret.settings.clamp_output,
        background: ret.settings.background,
    };
    let parts: Vec<Vec<SplatGrad>> = ret
        .fragments
        .par_iter()
        .map(|f| backward_fragment(f, &ret.splats, upstream, &ret.raw, channels, &flags))
        .collect();
    let splat_grads = reduce_fragments(&ret.fragments, parts, ret.splats.len());

    let per_gaussian: Vec<GaussianGrad> = ret
        .splats
        .par_iter()
        .zip(&splat_grads)
        .map(|(s, g)| chain_gaussian(cloud, s, g, cam, modality, &ret.settings))
        .collect();

    let mut out = ParameterGradients::zeros(cloud);
    for (s, g) in ret.splats.iter().zip(per_gaussian) {
        let i = s.source_index;
        out.position[i] = g.position;
        out.log_scale[i] = g.log_scale;
        out.rotation[i] = g.rotation;
        out.opacity_logit[i] = g.opacity_logit;
        out.mean2d[i] = g.mean2d_ndc;
        out.visible[i] = true;
        let (len, dst) = match modality {
            Modality::Rgb => (out.sh_rgb_len, &mut out.sh_rgb),
            Modality::Thermal => (out.sh_thermal_len, &mut out.sh_thermal),
        };
        dst[i * len..(i + 1) * len].copy_from_slice(&g.sh);
    }
    Ok(out)
}

/// Central difference `(f(θ+h) − f(θ−h)) / 2h` of `loss_fn` with respect to
/// one scalar parameter.
///
/// The positive probe is evaluated twice; a mismatch means `loss_fn` is not
/// deterministic and the estimate is rejected.
pub fn finite_difference_oracle<F>(loss_fn: F, cloud: &GaussianCloud, selector: ParamSelector, step: f64) -> Result<f64>
where
    F: Fn(&GaussianCloud) -> Result<f64>,
{
    if !(step > 0.0) {
        return Err(Error::InvalidParameter("finite-difference step must be positive".into()));
    }
    let theta = cloud
        .param(selector)
        .ok_or_else(|| Error::InvalidParameter(format!("no parameter {selector:?}")))?;
    let mut probe = cloud.clone();
    let mut eval = |value: f64| -> Result<f64> {
        *probe.param_mut(selector).expect("checked above") = value;
        loss_fn(&probe)
    };
    let plus = eval(theta + step)?;
    let plus_again = eval(theta + step)?;
    if plus.to_bits() != plus_again.to_bits() {
        return Err(Error::OracleInvalid(format!(
            "loss is not deterministic ({plus} vs {plus_again})"
        )));
    }
    let minus = eval(theta - step)?;
    Ok((plus - minus) / (2.0 * step))
}
