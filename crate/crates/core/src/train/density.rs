//! Adaptive density control: clone, split and prune.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;

use super::adam::Adam;
use crate::autograd::ParameterGradients;
use crate::error::{Error, Result};
use crate::model::{rotation_matrix, sigmoid, Gaussian3D, GaussianCloud};

/// Accumulated screen-space positional gradient norms per Gaussian.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DensityStats {
    accum: Vec<f64>,
    count: Vec<u32>,
}

impl DensityStats {
    pub fn new(n: usize) -> Self {
        Self { accum: vec![0.0; n], count: vec![0; n] }
    }

    pub fn len(&self) -> usize {
        self.accum.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accum.is_empty()
    }

    /// Adds `|∂L/∂mean2d|` for every Gaussian visible in the pass.
    pub fn record(&mut self, grads: &ParameterGradients) {
        for (i, (g, &vis)) in grads.mean2d.iter().zip(&grads.visible).enumerate() {
            if vis {
                self.accum[i] += g[0].hypot(g[1]);
                self.count[i] += 1;
            }
        }
    }

    /// Mean gradient norm over the passes where the Gaussian was visible.
    pub fn mean(&self, i: usize) -> f64 {
        if self.count[i] == 0 {
            0.0
        } else {
            self.accum[i] / self.count[i] as f64
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensityParams {
    pub grad_threshold: f64,
    pub prune_opacity: f64,
    /// Gaussians whose largest scale exceeds `percent_dense · extent` are
    /// split rather than cloned.
    pub percent_dense: f64,
    pub extent: f64,
    pub split_factor: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DensifyReport {
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

/// Offset of a child drawn from the parent's distribution, restricted to
/// its 3σ ellipsoid.
fn sample_child(g: &Gaussian3D, rng: &mut impl Rng) -> Vector3<f64> {
    let z = loop {
        let z = Vector3::<f64>::from_fn(|_, _| rng.sample(StandardNormal));
        if z.norm() <= 3.0 {
            break z;
        }
    };
    let s = g.log_scale.map(f64::exp);
    rotation_matrix(&g.rotation) * s.component_mul(&z)
}

/// Clones small and splits large Gaussians whose mean positional gradient
/// reaches the threshold, then removes those below the opacity threshold.
/// Optimizer moments follow the new layout; new Gaussians start at zero.
/// At least one Gaussian (the most opaque) always survives pruning.
pub fn densify_and_prune(
    cloud: &mut GaussianCloud,
    stats: &DensityStats,
    params: &DensityParams,
    optimizer: &mut Adam,
    rng: &mut impl Rng,
) -> Result<DensifyReport> {
    if stats.len() != cloud.len() || !optimizer.matches(cloud) {
        return Err(Error::State(format!(
            "density statistics track {}, optimizer {}, cloud {}",
            stats.len(),
            optimizer.len(),
            cloud.len()
        )));
    }
    let limit = params.percent_dense * params.extent;
    let shrink = params.split_factor.ln();
    let mut report = DensifyReport::default();
    let mut kept: Vec<Gaussian3D> = Vec::with_capacity(cloud.len());
    let mut sources: Vec<Option<usize>> = Vec::with_capacity(cloud.len());
    let mut born: Vec<Gaussian3D> = Vec::new();
    for (i, g) in cloud.gaussians.iter().enumerate() {
        let hot = stats.mean(i) >= params.grad_threshold;
        let large = g.log_scale.max().exp() > limit;
        if hot && large {
            report.split += 1;
            for _ in 0..2 {
                let mut child = g.clone();
                child.position = g.position + sample_child(g, rng);
                child.log_scale = g.log_scale.map(|v| v - shrink);
                born.push(child);
            }
            continue;
        }
        kept.push(g.clone());
        sources.push(Some(i));
        if hot {
            report.cloned += 1;
            born.push(g.clone());
        }
    }
    sources.extend(std::iter::repeat_n(None, born.len()));
    kept.extend(born);

    let mut keep: Vec<bool> = kept.iter().map(|g| sigmoid(g.opacity_logit) >= params.prune_opacity).collect();
    if !keep.iter().any(|&k| k) {
        let best = kept
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.opacity_logit.total_cmp(&b.1.opacity_logit))
            .map(|(i, _)| i)
            .expect("cloud is non-empty");
        keep[best] = true;
    }
    report.pruned = keep.iter().filter(|&&k| !k).count();
    let mut it = keep.iter();
    kept.retain(|_| *it.next().expect("same length"));
    let mut it = keep.iter();
    sources.retain(|_| *it.next().expect("same length"));

    cloud.gaussians = kept;
    optimizer.gather(&sources);
    debug_assert!(optimizer.matches(cloud));
    Ok(report)
}
