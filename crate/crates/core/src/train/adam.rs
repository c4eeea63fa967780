//! First/second-moment adaptive optimizer over a cloud's parameters.

use crate::autograd::ParameterGradients;
use crate::error::{Error, Result};
use crate::model::{GaussianCloud, Modality};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-15;

/// Step sizes per parameter class for one update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepSizes {
    pub position: f64,
    pub log_scale: f64,
    pub rotation: f64,
    pub opacity: f64,
    /// Degree-0 SH coefficients.
    pub sh_dc: f64,
    /// Higher-degree SH coefficients.
    pub sh_rest: f64,
}

/// Moments stored as one row per Gaussian:
/// `position(3) log_scale(3) rotation(4) opacity(1) sh_rgb(..) sh_thermal(..)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    sh_rgb_len: usize,
    sh_thermal_len: usize,
    step: u64,
}

const GEOMETRY: usize = 11;

impl Adam {
    pub fn new(cloud: &GaussianCloud) -> Self {
        let mut a = Self {
            m: Vec::new(),
            v: Vec::new(),
            sh_rgb_len: cloud.sh_len(Modality::Rgb),
            sh_thermal_len: cloud.sh_len(Modality::Thermal),
            step: 0,
        };
        a.m = vec![0.0; cloud.len() * a.stride()];
        a.v = a.m.clone();
        a
    }

    fn stride(&self) -> usize {
        GEOMETRY + self.sh_rgb_len + self.sh_thermal_len
    }

    /// Number of Gaussians tracked.
    pub fn len(&self) -> usize {
        self.m.len() / self.stride()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn matches(&self, cloud: &GaussianCloud) -> bool {
        self.len() == cloud.len()
            && self.sh_rgb_len == cloud.sh_len(Modality::Rgb)
            && self.sh_thermal_len == cloud.sh_len(Modality::Thermal)
    }

    /// Rebuilds the moment rows: row `i` copies old row `src[i]`, or starts
    /// at zero for `None`.
    pub fn gather(&mut self, src: &[Option<usize>]) {
        let s = self.stride();
        let mut m = vec![0.0; src.len() * s];
        let mut v = vec![0.0; src.len() * s];
        for (i, o) in src.iter().enumerate() {
            if let Some(j) = *o {
                m[i * s..(i + 1) * s].copy_from_slice(&self.m[j * s..(j + 1) * s]);
                v[i * s..(i + 1) * s].copy_from_slice(&self.v[j * s..(j + 1) * s]);
            }
        }
        self.m = m;
        self.v = v;
    }

    /// Applies one bias-corrected update and re-normalizes rotations.
    pub fn step(&mut self, cloud: &mut GaussianCloud, grads: &ParameterGradients, lr: &StepSizes) -> Result<()> {
        if !self.matches(cloud) || !grads.matches(cloud) {
            return Err(Error::State(format!(
                "optimizer tracks {} Gaussians, gradients {}, cloud {}",
                self.len(),
                grads.len(),
                cloud.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - BETA1.powi(t);
        let bc2 = 1.0 - BETA2.powi(t);
        let s = self.stride();
        let (nr, nt) = (self.sh_rgb_len, self.sh_thermal_len);
        for (i, g) in cloud.gaussians.iter_mut().enumerate() {
            let m = &mut self.m[i * s..(i + 1) * s];
            let v = &mut self.v[i * s..(i + 1) * s];
            let mut k = 0;
            let mut upd = |p: &mut f64, grad: f64, rate: f64| {
                update(p, grad, &mut m[k], &mut v[k], rate, bc1, bc2);
                k += 1;
            };
            for a in 0..3 {
                upd(&mut g.position[a], grads.position[i][a], lr.position);
            }
            for a in 0..3 {
                upd(&mut g.log_scale[a], grads.log_scale[i][a], lr.log_scale);
            }
            for a in 0..4 {
                upd(&mut g.rotation[a], grads.rotation[i][a], lr.rotation);
            }
            upd(&mut g.opacity_logit, grads.opacity_logit[i], lr.opacity);
            if let Some(c) = g.sh_rgb.as_mut() {
                for (j, p) in c.iter_mut().enumerate() {
                    upd(p, grads.sh_rgb[i * nr + j], if j < 3 { lr.sh_dc } else { lr.sh_rest });
                }
            }
            if let Some(c) = g.sh_thermal.as_mut() {
                for (j, p) in c.iter_mut().enumerate() {
                    upd(p, grads.sh_thermal[i * nt + j], if j == 0 { lr.sh_dc } else { lr.sh_rest });
                }
            }
        }
        cloud.normalize_rotations();
        Ok(())
    }
}

fn update(p: &mut f64, g: f64, m: &mut f64, v: &mut f64, lr: f64, bc1: f64, bc2: f64) {
    *m = BETA1 * *m + (1.0 - BETA1) * g;
    *v = BETA2 * *v + (1.0 - BETA2) * g * g;
    let m_hat = *m / bc1;
    let v_hat = *v / bc2;
    *p -= lr * m_hat / (v_hat.sqrt() + EPSILON);
}
