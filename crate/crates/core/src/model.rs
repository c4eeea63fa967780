//! The learnable Gaussian scene and its parameter activations.

use std::fmt;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sh;

/// A channel family rendered from the scene.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Rgb,
    Thermal,
}

impl Modality {
    pub const ALL: [Modality; 2] = [Modality::Rgb, Modality::Thermal];

    pub const fn channels(self) -> usize {
        match self {
            Modality::Rgb => 3,
            Modality::Thermal => 1,
        }
    }

    pub const fn other(self) -> Modality {
        match self {
            Modality::Rgb => Modality::Thermal,
            Modality::Thermal => Modality::Rgb,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Rgb => "rgb",
            Modality::Thermal => "thermal",
        })
    }
}

/// One anisotropic Gaussian in its unconstrained (pre-activation) parameters.
///
/// SH coefficients are stored coefficient-major: `sh_rgb[k * 3 + channel]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian3D {
    pub position: Vector3<f64>,
    pub log_scale: Vector3<f64>,
    /// Quaternion as `[w, x, y, z]`.
    pub rotation: [f64; 4],
    pub opacity_logit: f64,
    pub sh_rgb: Option<Vec<f64>>,
    pub sh_thermal: Option<Vec<f64>>,
}

impl Gaussian3D {
    pub fn sh(&self, modality: Modality) -> Option<&[f64]> {
        match modality {
            Modality::Rgb => self.sh_rgb.as_deref(),
            Modality::Thermal => self.sh_thermal.as_deref(),
        }
    }

    pub fn sh_mut(&mut self, modality: Modality) -> Option<&mut Vec<f64>> {
        match modality {
            Modality::Rgb => self.sh_rgb.as_mut(),
            Modality::Thermal => self.sh_thermal.as_mut(),
        }
    }

    pub fn activate(&self) -> ActivatedGaussian {
        activate_parameters(self)
    }
}

/// Constrained view of a [`Gaussian3D`].
#[derive(Clone, Debug, PartialEq)]
pub struct ActivatedGaussian {
    pub position: Vector3<f64>,
    pub scale: Vector3<f64>,
    /// Unit quaternion `[w, x, y, z]`.
    pub rotation: [f64; 4],
    pub opacity: f64,
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn normalize_quaternion(q: [f64; 4]) -> [f64; 4] {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n == 0.0 || !n.is_finite() {
        return [1.0, 0.0, 0.0, 0.0];
    }
    q.map(|v| v / n)
}

pub fn activate_parameters(g: &Gaussian3D) -> ActivatedGaussian {
    ActivatedGaussian {
        position: g.position,
        scale: g.log_scale.map(f64::exp),
        rotation: normalize_quaternion(g.rotation),
        opacity: sigmoid(g.opacity_logit),
    }
}

/// Rotation matrix of a unit quaternion `[w, x, y, z]`.
pub fn rotation_matrix(q: &[f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = *q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Pulls a gradient on the rotation matrix back to the (unit) quaternion that
/// produced it.
pub(crate) fn rotation_matrix_vjp(q: &[f64; 4], d_r: &Matrix3<f64>) -> [f64; 4] {
    let [w, x, y, z] = *q;
    let g = |r: usize, c: usize| d_r[(r, c)];
    let dw = 2.0
        * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    let dx = 2.0
        * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2)
            + z * g(2, 0)
            + w * g(2, 1)
            - 2.0 * x * g(2, 2));
    let dy = 2.0
        * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2)
            - w * g(2, 0)
            + z * g(2, 1)
            - 2.0 * y * g(2, 2));
    let dz = 2.0
        * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1)
            + y * g(1, 2)
            + x * g(2, 0)
            + y * g(2, 1));
    [dw, dx, dy, dz]
}

/// `Σ = R S Sᵀ Rᵀ` with `S = diag(exp(log_scale))`.
pub fn covariance_from_factors(log_scale: &Vector3<f64>, rotation: &[f64; 4]) -> Result<Matrix3<f64>> {
    if !log_scale.iter().chain(rotation.iter()).all(|v| v.is_finite()) {
        return Err(Error::InvalidParameter(
            "covariance factors must be finite".into(),
        ));
    }
    let m = rotation_matrix(&normalize_quaternion(*rotation)) * Matrix3::from_diagonal(&log_scale.map(f64::exp));
    let cov = m * m.transpose();
    // exact symmetry
    Ok((cov + cov.transpose()) * 0.5)
}

/// Unnormalized Gaussian kernel `exp(-½ (x-μ)ᵀ Σ⁻¹ (x-μ))`.
pub fn gaussian_density(x: &Vector3<f64>, mean: &Vector3<f64>, cov: &Matrix3<f64>) -> Result<f64> {
    let det = cov.determinant();
    let scale = cov.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if !(det.abs() > 1e-300 && det.abs() > 1e-14 * scale.powi(3)) {
        return Err(Error::DegenerateCovariance(det));
    }
    let d = x - mean;
    let chol = cov
        .cholesky()
        .ok_or(Error::DegenerateCovariance(det))?;
    let q = d.dot(&chol.solve(&d));
    Ok((-0.5 * q).exp())
}

/// Modality weighting coefficients used by the losses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModalityWeights {
    pub gamma: f64,
    pub lambda_dssim: f64,
    pub lambda_smooth: f64,
}

impl Default for ModalityWeights {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            lambda_dssim: 0.2,
            lambda_smooth: 0.6,
        }
    }
}

impl ModalityWeights {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidParameter(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.lambda_dssim) {
            return Err(Error::InvalidParameter(format!(
                "lambda_dssim {} outside [0, 1]",
                self.lambda_dssim
            )));
        }
        if !(self.lambda_smooth >= 0.0 && self.lambda_smooth.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda_smooth {} must be non-negative",
                self.lambda_smooth
            )));
        }
        Ok(())
    }
}

/// Addresses one scalar learnable parameter of a cloud.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamKind {
    Position(usize),
    LogScale(usize),
    Rotation(usize),
    OpacityLogit,
    /// `(coefficient, channel)`
    ShRgb(usize, usize),
    ShThermal(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamSelector {
    pub gaussian: usize,
    pub kind: ParamKind,
}

/// The learnable scene: a list of Gaussians sharing a channel layout.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianCloud {
    pub gaussians: Vec<Gaussian3D>,
    pub sh_degree_rgb: usize,
    pub sh_degree_thermal: usize,
    has_rgb: bool,
    has_thermal: bool,
}

impl GaussianCloud {
    /// Creates a cloud, checking that every member matches the channel layout.
    pub fn new(
        gaussians: Vec<Gaussian3D>,
        modalities: &[Modality],
        sh_degree_rgb: usize,
        sh_degree_thermal: usize,
    ) -> Result<Self> {
        let cloud = Self {
            gaussians,
            sh_degree_rgb: if modalities.contains(&Modality::Rgb) { sh_degree_rgb } else { 0 },
            sh_degree_thermal: if modalities.contains(&Modality::Thermal) { sh_degree_thermal } else { 0 },
            has_rgb: modalities.contains(&Modality::Rgb),
            has_thermal: modalities.contains(&Modality::Thermal),
        };
        cloud.validate()?;
        Ok(cloud)
    }

    /// An empty cloud with the given layout; used as a builder seed and by
    /// density control (which may prune every member).
    pub fn empty(modalities: &[Modality], sh_degree_rgb: usize, sh_degree_thermal: usize) -> Self {
        Self {
            gaussians: Vec::new(),
            sh_degree_rgb: if modalities.contains(&Modality::Rgb) { sh_degree_rgb } else { 0 },
            sh_degree_thermal: if modalities.contains(&Modality::Thermal) { sh_degree_thermal } else { 0 },
            has_rgb: modalities.contains(&Modality::Rgb),
            has_thermal: modalities.contains(&Modality::Thermal),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.has_rgb && !self.has_thermal {
            return Err(Error::Config("cloud must carry at least one modality".into()));
        }
        if self.sh_degree_rgb > sh::MAX_SH_DEGREE || self.sh_degree_thermal > sh::MAX_SH_DEGREE {
            return Err(Error::Config("SH degree above 3".into()));
        }
        if self.gaussians.is_empty() {
            return Err(Error::Config("cloud must hold at least one Gaussian".into()));
        }
        let n_rgb = sh::coeff_count(self.sh_degree_rgb) * 3;
        let n_th = sh::coeff_count(self.sh_degree_thermal);
        for (i, g) in self.gaussians.iter().enumerate() {
            let rgb_ok = match (&g.sh_rgb, self.has_rgb) {
                (Some(c), true) => c.len() == n_rgb,
                (None, false) => true,
                _ => false,
            };
            let th_ok = match (&g.sh_thermal, self.has_thermal) {
                (Some(c), true) => c.len() == n_th,
                (None, false) => true,
                _ => false,
            };
            if !rgb_ok || !th_ok {
                return Err(Error::Config(format!(
                    "Gaussian {i} does not match the cloud channel layout"
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn has(&self, modality: Modality) -> bool {
        match modality {
            Modality::Rgb => self.has_rgb,
            Modality::Thermal => self.has_thermal,
        }
    }

    pub fn modalities(&self) -> Vec<Modality> {
        Modality::ALL.into_iter().filter(|m| self.has(*m)).collect()
    }

    pub fn sh_degree(&self, modality: Modality) -> usize {
        match modality {
            Modality::Rgb => self.sh_degree_rgb,
            Modality::Thermal => self.sh_degree_thermal,
        }
    }

    /// Per-Gaussian coefficient count (all channels) for a modality, or 0.
    pub fn sh_len(&self, modality: Modality) -> usize {
        if self.has(modality) {
            sh::coeff_count(self.sh_degree(modality)) * modality.channels()
        } else {
            0
        }
    }

    /// Replaces the channel layout: drops coefficients of modalities not in
    /// `modalities` and adds zero-initialized (mid-gray) coefficients for new ones.
    pub fn with_modalities(&self, modalities: &[Modality], sh_degree_rgb: usize, sh_degree_thermal: usize) -> Self {
        let mut out = Self::empty(modalities, sh_degree_rgb, sh_degree_thermal);
        let n_rgb = sh::coeff_count(sh_degree_rgb) * 3;
        let n_th = sh::coeff_count(sh_degree_thermal);
        out.gaussians = self
            .gaussians
            .iter()
            .map(|g| {
                let resize = |src: &Option<Vec<f64>>, n: usize| {
                    let mut v = src.clone().unwrap_or_default();
                    v.resize(n, 0.0);
                    v
                };
                Gaussian3D {
                    sh_rgb: out.has_rgb.then(|| resize(&g.sh_rgb, n_rgb)),
                    sh_thermal: out.has_thermal.then(|| resize(&g.sh_thermal, n_th)),
                    ..g.clone()
                }
            })
            .collect();
        out
    }

    /// Every scalar learnable parameter, in a stable order.
    pub fn param_selectors(&self) -> Vec<ParamSelector> {
        let n_rgb = if self.has_rgb { sh::coeff_count(self.sh_degree_rgb) } else { 0 };
        let n_th = if self.has_thermal { sh::coeff_count(self.sh_degree_thermal) } else { 0 };
        let mut out = Vec::new();
        for gaussian in 0..self.len() {
            let mut push = |kind| out.push(ParamSelector { gaussian, kind });
            (0..3).for_each(|a| push(ParamKind::Position(a)));
            (0..3).for_each(|a| push(ParamKind::LogScale(a)));
            (0..4).for_each(|a| push(ParamKind::Rotation(a)));
            push(ParamKind::OpacityLogit);
            for k in 0..n_rgb {
                (0..3).for_each(|c| push(ParamKind::ShRgb(k, c)));
            }
            (0..n_th).for_each(|k| push(ParamKind::ShThermal(k)));
        }
        out
    }

    pub fn param_mut(&mut self, sel: ParamSelector) -> Option<&mut f64> {
        let g = self.gaussians.get_mut(sel.gaussian)?;
        match sel.kind {
            ParamKind::Position(a) if a < 3 => Some(&mut g.position[a]),
            ParamKind::LogScale(a) if a < 3 => Some(&mut g.log_scale[a]),
            ParamKind::Rotation(a) if a < 4 => Some(&mut g.rotation[a]),
            ParamKind::OpacityLogit => Some(&mut g.opacity_logit),
            ParamKind::ShRgb(k, c) if c < 3 => g.sh_rgb.as_mut()?.get_mut(k * 3 + c),
            ParamKind::ShThermal(k) => g.sh_thermal.as_mut()?.get_mut(k),
            _ => None,
        }
    }

    pub fn param(&self, sel: ParamSelector) -> Option<f64> {
        let g = self.gaussians.get(sel.gaussian)?;
        match sel.kind {
            ParamKind::Position(a) if a < 3 => Some(g.position[a]),
            ParamKind::LogScale(a) if a < 3 => Some(g.log_scale[a]),
            ParamKind::Rotation(a) if a < 4 => Some(g.rotation[a]),
            ParamKind::OpacityLogit => Some(g.opacity_logit),
            ParamKind::ShRgb(k, c) if c < 3 => g.sh_rgb.as_ref()?.get(k * 3 + c).copied(),
            ParamKind::ShThermal(k) => g.sh_thermal.as_ref()?.get(k).copied(),
            _ => None,
        }
    }

    /// Hash over every parameter bit pattern; used to detect stale render
    /// buffers.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |v: u64| {
            h = (h ^ v).wrapping_mul(0x0000_0100_0000_01b3).rotate_left(29);
        };
        mix(self.gaussians.len() as u64);
        mix(((self.sh_degree_rgb as u64) << 32) | ((self.sh_degree_thermal as u64) << 2) | ((self.has_rgb as u64) << 1) | self.has_thermal as u64);
        for g in &self.gaussians {
            for v in g
                .position
                .iter()
                .chain(g.log_scale.iter())
                .chain(g.rotation.iter())
                .chain(std::iter::once(&g.opacity_logit))
                .chain(g.sh_rgb.iter().flatten())
                .chain(g.sh_thermal.iter().flatten())
            {
                mix(v.to_bits());
            }
        }
        h
    }

    /// Renormalizes every quaternion to unit length.
    pub fn normalize_rotations(&mut self) {
        for g in &mut self.gaussians {
            g.rotation = normalize_quaternion(g.rotation);
        }
    }
}

/// A seed point for initialization (from SfM or the synthetic generator).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitPoint {
    pub position: [f64; 3],
    #[serde(default = "mid_gray3")]
    pub rgb: [f64; 3],
    #[serde(default = "mid_gray")]
    pub thermal: f64,
}

fn mid_gray3() -> [f64; 3] {
    [0.5; 3]
}

fn mid_gray() -> f64 {
    0.5
}

/// Initial opacity of freshly seeded Gaussians.
pub const INIT_OPACITY: f64 = 0.1;

impl GaussianCloud {
    /// Seeds one isotropic Gaussian per point, scaled by the RMS distance to
    /// its three nearest neighbours.
    pub fn from_points(
        points: &[InitPoint],
        modalities: &[Modality],
        sh_degree_rgb: usize,
        sh_degree_thermal: usize,
    ) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Config("no initial points".into()));
        }
        let pos: Vec<Vector3<f64>> = points.iter().map(|p| Vector3::from(p.position)).collect();
        let n_rgb = sh::coeff_count(sh_degree_rgb) * 3;
        let n_th = sh::coeff_count(sh_degree_thermal);
        let has_rgb = modalities.contains(&Modality::Rgb);
        let has_th = modalities.contains(&Modality::Thermal);
        let gaussians = points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut nearest = [f64::INFINITY; 3];
                for (j, q) in pos.iter().enumerate() {
                    if i == j {
                        continue;
                    }
                    let d2 = (q - pos[i]).norm_squared();
                    if d2 < nearest[2] {
                        nearest[2] = d2;
                        nearest.sort_by(f64::total_cmp);
                    }
                }
                let finite: Vec<f64> = nearest.into_iter().filter(|d| d.is_finite()).collect();
                let mean_d2 = if finite.is_empty() {
                    1e-2
                } else {
                    finite.iter().sum::<f64>() / finite.len() as f64
                };
                let log_s = mean_d2.max(1e-7).sqrt().ln();
                let sh_rgb = has_rgb.then(|| {
                    let mut c = vec![0.0; n_rgb];
                    for ch in 0..3 {
                        c[ch] = sh::dc_from_value(p.rgb[ch]);
                    }
                    c
                });
                let sh_thermal = has_th.then(|| {
                    let mut c = vec![0.0; n_th];
                    c[0] = sh::dc_from_value(p.thermal);
                    c
                });
                Gaussian3D {
                    position: pos[i],
                    log_scale: Vector3::repeat(log_s),
                    rotation: [1.0, 0.0, 0.0, 0.0],
                    opacity_logit: logit(INIT_OPACITY),
                    sh_rgb,
                    sh_thermal,
                }
            })
            .collect();
        Self::new(gaussians, modalities, sh_degree_rgb, sh_degree_thermal)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_4, LN_2};

    fn rot_z_90() -> [f64; 4] {
        [FRAC_PI_4.cos(), 0.0, 0.0, FRAC_PI_4.sin()]
    }

    #[test]
    fn covariance_identity_rotation() {
        let c = covariance_from_factors(&Vector3::new(LN_2, 0.0, 0.0), &[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!((c - Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0))).abs().max() < 1e-12);
    }

    #[test]
    fn covariance_unit_scale_is_identity() {
        let q = normalize_quaternion([0.3, -0.5, 0.2, 0.7]);
        let c = covariance_from_factors(&Vector3::zeros(), &q).unwrap();
        assert!((c - Matrix3::identity()).abs().max() < 1e-12);
    }

    #[test]
    fn covariance_rotated_about_z() {
        // oracle: explicit R·diag(4,1,1)·Rᵀ with R = [[0,-1,0],[1,0,0],[0,0,1]]
        let r = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        let mut expected = Matrix3::zeros();
        let s2 = [4.0, 1.0, 1.0];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    expected[(i, j)] += r[(i, k)] * s2[k] * r[(j, k)];
                }
            }
        }
        let c = covariance_from_factors(&Vector3::new(LN_2, 0.0, 0.0), &rot_z_90()).unwrap();
        assert!((c - expected).abs().max() < 1e-12);
        assert!((c - Matrix3::from_diagonal(&Vector3::new(1.0, 4.0, 1.0))).abs().max() < 1e-12);
    }

    #[test]
    fn covariance_rejects_non_finite() {
        assert!(matches!(
            covariance_from_factors(&Vector3::new(f64::NAN, 0.0, 0.0), &[1.0, 0.0, 0.0, 0.0]),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn density_examples() {
        let mu = Vector3::new(0.3, -0.1, 2.0);
        assert_eq!(gaussian_density(&mu, &mu, &Matrix3::identity()).unwrap(), 1.0);
        let v = gaussian_density(&(mu + Vector3::x()), &mu, &Matrix3::identity()).unwrap();
        assert!((v - 0.606531).abs() < 1e-6);
        let cov = Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0));
        let v = gaussian_density(&(mu + Vector3::new(2.0, 0.0, 0.0)), &mu, &cov).unwrap();
        assert!((v - (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn density_rejects_singular() {
        let cov = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.0));
        assert!(matches!(
            gaussian_density(&Vector3::zeros(), &Vector3::zeros(), &cov),
            Err(Error::DegenerateCovariance(_))
        ));
    }

    #[test]
    fn activation_examples() {
        let g = Gaussian3D {
            position: Vector3::zeros(),
            log_scale: Vector3::zeros(),
            rotation: [2.0, 0.0, 0.0, 0.0],
            opacity_logit: 0.0,
            sh_rgb: Some(vec![0.0; 3]),
            sh_thermal: None,
        };
        let a = activate_parameters(&g);
        assert_eq!(a.opacity, 0.5);
        assert_eq!(a.scale, Vector3::repeat(1.0));
        assert_eq!(a.rotation, [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn rotation_vjp_matches_finite_differences() {
        let q = [0.4, -0.3, 0.8, 0.2];
        let d_r = Matrix3::new(0.3, -1.2, 0.5, 0.7, 0.1, -0.4, 0.9, 0.2, -0.6);
        let analytic = rotation_matrix_vjp(&q, &d_r);
        let h = 1e-6;
        for i in 0..4 {
            let mut p = q;
            let mut m = q;
            p[i] += h;
            m[i] -= h;
            let fd = (rotation_matrix(&p) - rotation_matrix(&m)).component_mul(&d_r).sum() / (2.0 * h);
            assert!((fd - analytic[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn cloud_layout_is_checked() {
        let g = Gaussian3D {
            position: Vector3::zeros(),
            log_scale: Vector3::zeros(),
            rotation: [1.0, 0.0, 0.0, 0.0],
            opacity_logit: 0.0,
            sh_rgb: Some(vec![0.0; 3]),
            sh_thermal: None,
        };
        assert!(GaussianCloud::new(vec![g.clone()], &[Modality::Rgb], 0, 0).is_ok());
        assert!(GaussianCloud::new(vec![g.clone()], &[Modality::Rgb, Modality::Thermal], 0, 0).is_err());
        assert!(GaussianCloud::new(vec![g], &[Modality::Rgb], 1, 0).is_err());
        assert!(GaussianCloud::new(vec![], &[Modality::Rgb], 0, 0).is_err());
    }

    fn quat() -> impl Strategy<Value = [f64; 4]> {
        prop::array::uniform4(-1.0f64..1.0)
            .prop_filter("non-degenerate", |q| q.iter().map(|v| v * v).sum::<f64>() > 1e-2)
    }

    proptest! {
        #[test]
        fn covariance_sign_flip_invariant(s in prop::array::uniform3(-2.0f64..1.0), q in quat()) {
            let s = Vector3::from(s);
            let neg = q.map(|v| -v);
            prop_assert_eq!(
                covariance_from_factors(&s, &q).unwrap(),
                covariance_from_factors(&s, &neg).unwrap()
            );
        }

        #[test]
        fn covariance_is_spd(s in prop::array::uniform3(-2.0f64..1.0), q in quat()) {
            let c = covariance_from_factors(&Vector3::from(s), &q).unwrap();
            prop_assert!((c - c.transpose()).abs().max() <= 1e-12);
            let eig = c.symmetric_eigenvalues();
            prop_assert!(eig.iter().all(|&e| e > 0.0));
        }

        #[test]
        fn density_rotation_invariant(
            s in prop::array::uniform3(-1.0f64..0.5),
            q in quat(),
            r in quat(),
            d in prop::array::uniform3(-2.0f64..2.0),
        ) {
            let cov = covariance_from_factors(&Vector3::from(s), &q).unwrap();
            let rot = rotation_matrix(&normalize_quaternion(r));
            let d = Vector3::from(d);
            let mu = Vector3::new(0.1, 0.2, 0.3);
            let a = gaussian_density(&(mu + d), &mu, &cov).unwrap();
            let b = gaussian_density(&(mu + rot * d), &mu, &(rot * cov * rot.transpose())).unwrap();
            prop_assert!((a - b).abs() <= 1e-10);
        }
    }
}
