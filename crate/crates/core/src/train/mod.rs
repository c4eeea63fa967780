//! Training strategies: single-modality baselines, fine-tuning (MFTG), two
//! single-modal clouds (MSMG) and one dual-channel cloud (OMMG).

pub mod adam;
pub mod density;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{Adam, StepSizes};
pub use density::{densify_and_prune, DensifyReport, DensityParams, DensityStats};

use crate::autograd::{backward, ParameterGradients};
use crate::error::{Error, Result};
use crate::losses::{joint_coefficients, joint_loss, modality_loss_with_gradient, mr_gamma, LossReport};
use crate::model::{GaussianCloud, Modality, ModalityWeights};
use crate::raster::{render, RenderSettings};
use crate::scene::FrameSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Mftg,
    Msmg,
    Ommg,
    SingleRgb,
    SingleThermal,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [Strategy::SingleRgb, Strategy::SingleThermal, Strategy::Mftg, Strategy::Msmg, Strategy::Ommg];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Mftg => "mftg",
            Strategy::Msmg => "msmg",
            Strategy::Ommg => "ommg",
            Strategy::SingleRgb => "single-rgb",
            Strategy::SingleThermal => "single-thermal",
        }
    }

    /// Modalities the scene must provide.
    pub fn required(self) -> &'static [Modality] {
        match self {
            Strategy::SingleRgb => &[Modality::Rgb],
            Strategy::SingleThermal => &[Modality::Thermal],
            _ => &Modality::ALL,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown strategy '{s}' (expected one of mftg, msmg, ommg, single-rgb, single-thermal)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningRates {
    /// Initial position step, multiplied by the scene extent.
    pub position: f64,
    pub position_final: f64,
    pub sh: f64,
    /// Higher-degree SH coefficients use `sh / sh_rest_divisor`.
    pub sh_rest_divisor: f64,
    pub opacity: f64,
    pub scale: f64,
    pub rotation: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            position: 1.6e-4,
            position_final: 1.6e-6,
            sh: 2.5e-3,
            sh_rest_divisor: 20.0,
            opacity: 5e-2,
            scale: 5e-3,
            rotation: 1e-3,
        }
    }
}

impl LearningRates {
    /// Step sizes at `step` of a run of `total` steps; the position rate
    /// decays log-linearly from its initial to its final value.
    pub fn at(&self, step: usize, total: usize, extent: f64) -> StepSizes {
        let t = if total == 0 { 1.0 } else { (step as f64 / total as f64).clamp(0.0, 1.0) };
        let position = (self.position.ln() * (1.0 - t) + self.position_final.ln() * t).exp() * extent;
        StepSizes {
            position,
            log_scale: self.scale,
            rotation: self.rotation,
            opacity: self.opacity,
            sh_dc: self.sh,
            sh_rest: self.sh / self.sh_rest_divisor,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub strategy: Strategy,
    pub iterations: usize,
    /// MFTG fine-tuning iterations; defaults to `iterations`.
    pub stage2_iterations: Option<usize>,
    pub lr: LearningRates,
    pub densify_interval: usize,
    pub densify_start: usize,
    pub densify_end: usize,
    pub densify_grad_threshold: f64,
    pub prune_opacity_threshold: f64,
    pub percent_dense: f64,
    pub split_factor: f64,
    pub use_mr: bool,
    pub fixed_gamma: Option<f64>,
    pub lambda_dssim: f64,
    pub lambda_smooth: f64,
    pub sh_degree_rgb: usize,
    pub sh_degree_thermal: usize,
    /// The active SH degree grows by one every this many iterations.
    pub sh_unlock_interval: usize,
    /// Number of random initial points when the scene provides none.
    pub random_init_points: usize,
    pub checkpoint_interval: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Ommg,
            iterations: 30_000,
            stage2_iterations: None,
            lr: LearningRates::default(),
            densify_interval: 100,
            densify_start: 500,
            densify_end: 15_000,
            densify_grad_threshold: 2e-4,
            prune_opacity_threshold: 0.005,
            percent_dense: 0.01,
            split_factor: 1.6,
            use_mr: false,
            fixed_gamma: None,
            lambda_dssim: 0.2,
            lambda_smooth: 0.6,
            sh_degree_rgb: 3,
            sh_degree_thermal: 0,
            sh_unlock_interval: 1000,
            random_init_points: 10_000,
            checkpoint_interval: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.use_mr && self.strategy != Strategy::Msmg {
            return bad(format!("multimodal regularization applies to msmg only, not {}", self.strategy));
        }
        if self.use_mr && self.fixed_gamma.is_some() {
            return bad("use_mr and fixed_gamma are mutually exclusive".into());
        }
        if let Some(g) = self.fixed_gamma {
            if !(0.0..=1.0).contains(&g) {
                return bad(format!("fixed_gamma {g} outside [0, 1]"));
            }
            if !matches!(self.strategy, Strategy::Msmg | Strategy::Ommg) {
                return bad(format!("fixed_gamma needs a joint strategy, not {}", self.strategy));
            }
        }
        if !(self.densify_grad_threshold > 0.0) || !(self.prune_opacity_threshold > 0.0) || !(self.percent_dense > 0.0) {
            return bad("density thresholds must be positive".into());
        }
        if !(self.split_factor > 1.0) {
            return bad(format!("split factor {} must exceed 1", self.split_factor));
        }
        if self.densify_interval == 0 || self.sh_unlock_interval == 0 {
            return bad("intervals must be positive".into());
        }
        if self.checkpoint_interval == Some(0) {
            return bad("checkpoint interval must be positive".into());
        }
        if self.sh_degree_rgb > crate::sh::MAX_SH_DEGREE || self.sh_degree_thermal > crate::sh::MAX_SH_DEGREE {
            return bad("SH degree above 3".into());
        }
        let lr = &self.lr;
        for (name, v) in [
            ("position", lr.position),
            ("position_final", lr.position_final),
            ("sh", lr.sh),
            ("sh_rest_divisor", lr.sh_rest_divisor),
            ("opacity", lr.opacity),
            ("scale", lr.scale),
            ("rotation", lr.rotation),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("learning rate {name} must be positive"));
            }
        }
        self.weights().validate()
    }

    pub fn weights(&self) -> ModalityWeights {
        ModalityWeights { gamma: self.fixed_gamma.unwrap_or(0.5), lambda_dssim: self.lambda_dssim, lambda_smooth: self.lambda_smooth }
    }

    fn density(&self, extent: f64) -> DensityParams {
        DensityParams {
            grad_threshold: self.densify_grad_threshold,
            prune_opacity: self.prune_opacity_threshold,
            percent_dense: self.percent_dense,
            extent,
            split_factor: self.split_factor,
        }
    }

    /// Densification runs after 1-based step `step` when this holds.
    pub fn densify_due(&self, step: usize) -> bool {
        step > self.densify_start && step < self.densify_end && step % self.densify_interval == 0
    }
}

/// Receives per-iteration records and periodic checkpoints.
pub trait TrainObserver {
    fn on_iteration(&mut self, _report: &LossReport) -> Result<()> {
        Ok(())
    }

    /// `clouds` pairs a role (`rgb`, `thermal` or `joint`) with its cloud.
    fn on_checkpoint(&mut self, _iteration: usize, _clouds: &[(&str, &GaussianCloud)]) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

#[derive(Clone, Debug, PartialEq)]
pub enum TrainedClouds {
    Single(GaussianCloud),
    /// The fine-tuned thermal cloud and the stage-one RGB cloud.
    Mftg { rgb: GaussianCloud, thermal: GaussianCloud },
    Msmg { rgb: GaussianCloud, thermal: GaussianCloud },
    Ommg(GaussianCloud),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutput {
    pub strategy: Strategy,
    pub clouds: TrainedClouds,
    pub log: Vec<LossReport>,
}

impl TrainOutput {
    /// The cloud that renders `m` as the strategy's result; MFTG's RGB
    /// stage is reported as its RGB model.
    pub fn cloud_for(&self, m: Modality) -> Option<&GaussianCloud> {
        let c = match &self.clouds {
            TrainedClouds::Single(c) | TrainedClouds::Ommg(c) => c,
            TrainedClouds::Mftg { rgb, thermal } | TrainedClouds::Msmg { rgb, thermal } => match m {
                Modality::Rgb => rgb,
                Modality::Thermal => thermal,
            },
        };
        c.has(m).then_some(c)
    }

    /// Gaussians stored by the final model(s).
    pub fn total_gaussians(&self) -> usize {
        match &self.clouds {
            TrainedClouds::Single(c) | TrainedClouds::Ommg(c) => c.len(),
            TrainedClouds::Mftg { thermal, .. } => thermal.len(),
            TrainedClouds::Msmg { rgb, thermal } => rgb.len() + thermal.len(),
        }
    }

    /// Named clouds for export.
    pub fn named(&self) -> Vec<(&'static str, &GaussianCloud)> {
        match &self.clouds {
            TrainedClouds::Single(c) => vec![(if c.has(Modality::Rgb) { "rgb" } else { "thermal" }, c)],
            TrainedClouds::Ommg(c) => vec![("joint", c)],
            TrainedClouds::Mftg { rgb, thermal } | TrainedClouds::Msmg { rgb, thermal } => vec![("rgb", rgb), ("thermal", thermal)],
        }
    }
}

/// How the two modality losses combine.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Weighting {
    /// Unweighted sum (or the only term).
    Sum,
    Fixed(f64),
    /// γ from the live Gaussian counts.
    Counts,
}

struct Branch {
    name: &'static str,
    cloud: GaussianCloud,
    modalities: Vec<Modality>,
    optimizer: Adam,
    stats: DensityStats,
}

impl Branch {
    fn new(name: &'static str, cloud: GaussianCloud) -> Self {
        Self {
            name,
            modalities: cloud.modalities(),
            optimizer: Adam::new(&cloud),
            stats: DensityStats::new(cloud.len()),
            cloud,
        }
    }
}

fn count(branches: &[Branch], m: Modality) -> usize {
    branches.iter().filter(|b| b.cloud.has(m)).map(|b| b.cloud.len()).sum()
}

struct Run<'a> {
    scene: &'a FrameSet,
    cfg: &'a TrainConfig,
    rng: ChaCha8Rng,
    extent: f64,
    log: Vec<LossReport>,
    observer: &'a mut dyn TrainObserver,
}

impl Run<'_> {
    fn optimize(&mut self, branches: &mut [Branch], iterations: usize, offset: usize, weighting: Weighting) -> Result<()> {
        let cfg = self.cfg;
        let weights = cfg.weights();
        let density = cfg.density(self.extent);
        let mut settings = RenderSettings::default();
        for it in 0..iterations {
            let frame = &self.scene.frames[self.rng.random_range(0..self.scene.frames.len())];
            settings.sh_degree = Some(it / cfg.sh_unlock_interval);
            let (n_rgb, n_thermal) = (count(branches, Modality::Rgb), count(branches, Modality::Thermal));
            let gamma = match weighting {
                Weighting::Sum => None,
                Weighting::Fixed(g) => Some(g),
                Weighting::Counts => Some(mr_gamma(n_thermal, n_rgb)?),
            };
            let (c_rgb, c_thermal) = joint_coefficients(gamma);
            let mut report = LossReport { iteration: offset + it, gamma, n_rgb, n_thermal, ..Default::default() };
            let lr = cfg.lr.at(it, iterations, self.extent);
            for b in branches.iter_mut() {
                let mut grads: Option<ParameterGradients> = None;
                for &m in &b.modalities {
                    let target = frame.image(m).ok_or(Error::ModalityMismatch(m))?;
                    let out = render(&b.cloud, &frame.camera, m, &settings)?;
                    let (terms, mut upstream) = modality_loss_with_gradient(&out.image, target, &weights, m, frame.mask.as_deref())?;
                    report.set_terms(m, &terms);
                    let coefficient = match m {
                        Modality::Rgb => c_rgb,
                        Modality::Thermal => c_thermal,
                    };
                    if coefficient == 0.0 {
                        continue;
                    }
                    if coefficient != 1.0 {
                        upstream.data_mut().iter_mut().for_each(|v| *v *= coefficient);
                    }
                    let g = backward(&b.cloud, &frame.camera, m, &out, &upstream)?;
                    match grads.as_mut() {
                        None => grads = Some(g),
                        Some(acc) => acc.add_scaled(&g, 1.0)?,
                    }
                }
                let grads = grads.unwrap_or_else(|| ParameterGradients::zeros(&b.cloud));
                b.stats.record(&grads);
                b.optimizer.step(&mut b.cloud, &grads, &lr)?;
                if cfg.densify_due(it + 1) {
                    densify_and_prune(&mut b.cloud, &b.stats, &density, &mut b.optimizer, &mut self.rng)?;
                    b.stats = DensityStats::new(b.cloud.len());
                    if !b.optimizer.matches(&b.cloud) {
                        return Err(Error::State("optimizer out of sync after density control".into()));
                    }
                }
            }
            report.total = match (report.loss_rgb, report.loss_thermal) {
                (Some(r), Some(t)) => joint_loss(r, t, gamma),
                (Some(v), None) | (None, Some(v)) => v,
                (None, None) => 0.0,
            };
            self.observer.on_iteration(&report)?;
            self.log.push(report);
            if let Some(k) = cfg.checkpoint_interval {
                if (offset + it + 1) % k == 0 {
                    let named: Vec<(&str, &GaussianCloud)> = branches.iter().map(|b| (b.name, &b.cloud)).collect();
                    self.observer.on_checkpoint(offset + it + 1, &named)?;
                }
            }
        }
        Ok(())
    }
}

fn start<'a>(scene: &'a FrameSet, cfg: &'a TrainConfig, observer: &'a mut dyn TrainObserver) -> Result<Run<'a>> {
    cfg.validate()?;
    if scene.is_empty() {
        return Err(Error::EmptyScene);
    }
    for &m in cfg.strategy.required() {
        scene.require(m)?;
    }
    Ok(Run { scene, cfg, rng: ChaCha8Rng::seed_from_u64(cfg.seed), extent: scene.extent(), log: Vec::new(), observer })
}

fn initial_cloud(scene: &FrameSet, cfg: &TrainConfig, modalities: &[Modality]) -> Result<GaussianCloud> {
    let points = scene.initial_points_or_random(cfg.random_init_points, cfg.seed);
    GaussianCloud::from_points(&points, modalities, cfg.sh_degree_rgb, cfg.sh_degree_thermal)
}

/// Standard single-modality training.
pub fn train_single(scene: &FrameSet, cfg: &TrainConfig, modality: Modality, observer: &mut dyn TrainObserver) -> Result<TrainOutput> {
    let strategy = match modality {
        Modality::Rgb => Strategy::SingleRgb,
        Modality::Thermal => Strategy::SingleThermal,
    };
    let cfg = TrainConfig { strategy, ..cfg.clone() };
    let mut run = start(scene, &cfg, observer)?;
    let name = if modality == Modality::Rgb { "rgb" } else { "thermal" };
    let mut b = [Branch::new(name, initial_cloud(scene, &cfg, &[modality])?)];
    run.optimize(&mut b, cfg.iterations, 0, Weighting::Sum)?;
    let [b] = b;
    Ok(TrainOutput { strategy, clouds: TrainedClouds::Single(b.cloud), log: run.log })
}

/// Replaces a cloud's channels with thermal coefficients at mid-gray,
/// keeping its geometry.
pub fn thermal_from_rgb(rgb: &GaussianCloud, sh_degree_thermal: usize) -> GaussianCloud {
    rgb.with_modalities(&[Modality::Thermal], 0, sh_degree_thermal)
}

/// Trains RGB, converts the channels to thermal and fine-tunes on thermal.
pub fn train_mftg(scene: &FrameSet, cfg: &TrainConfig, observer: &mut dyn TrainObserver) -> Result<TrainOutput> {
    let cfg = TrainConfig { strategy: Strategy::Mftg, ..cfg.clone() };
    let mut run = start(scene, &cfg, observer)?;
    let mut stage1 = [Branch::new("rgb", initial_cloud(scene, &cfg, &[Modality::Rgb])?)];
    run.optimize(&mut stage1, cfg.iterations, 0, Weighting::Sum)?;
    let [stage1] = stage1;
    let mut stage2 = [Branch::new("thermal", thermal_from_rgb(&stage1.cloud, cfg.sh_degree_thermal))];
    run.optimize(&mut stage2, cfg.stage2_iterations.unwrap_or(cfg.iterations), cfg.iterations, Weighting::Sum)?;
    let [stage2] = stage2;
    Ok(TrainOutput {
        strategy: Strategy::Mftg,
        clouds: TrainedClouds::Mftg { rgb: stage1.cloud, thermal: stage2.cloud },
        log: run.log,
    })
}

/// Two single-modality clouds from the same initial points under one joint
/// objective (optionally count-weighted).
pub fn train_msmg(scene: &FrameSet, cfg: &TrainConfig, observer: &mut dyn TrainObserver) -> Result<TrainOutput> {
    let cfg = TrainConfig { strategy: Strategy::Msmg, ..cfg.clone() };
    let mut run = start(scene, &cfg, observer)?;
    let init = initial_cloud(scene, &cfg, &Modality::ALL)?;
    let mut b = [
        Branch::new("rgb", init.with_modalities(&[Modality::Rgb], cfg.sh_degree_rgb, 0)),
        Branch::new("thermal", init.with_modalities(&[Modality::Thermal], 0, cfg.sh_degree_thermal)),
    ];
    let weighting = match (cfg.use_mr, cfg.fixed_gamma) {
        (true, _) => Weighting::Counts,
        (false, Some(g)) => Weighting::Fixed(g),
        (false, None) => Weighting::Sum,
    };
    run.optimize(&mut b, cfg.iterations, 0, weighting)?;
    let [rgb, thermal] = b;
    Ok(TrainOutput { strategy: Strategy::Msmg, clouds: TrainedClouds::Msmg { rgb: rgb.cloud, thermal: thermal.cloud }, log: run.log })
}

/// One cloud carrying both channel sets over shared geometry.
pub fn train_ommg(scene: &FrameSet, cfg: &TrainConfig, observer: &mut dyn TrainObserver) -> Result<TrainOutput> {
    let cfg = TrainConfig { strategy: Strategy::Ommg, ..cfg.clone() };
    let mut run = start(scene, &cfg, observer)?;
    let mut b = [Branch::new("joint", initial_cloud(scene, &cfg, &Modality::ALL)?)];
    let weighting = cfg.fixed_gamma.map_or(Weighting::Sum, Weighting::Fixed);
    run.optimize(&mut b, cfg.iterations, 0, weighting)?;
    let [b] = b;
    Ok(TrainOutput { strategy: Strategy::Ommg, clouds: TrainedClouds::Ommg(b.cloud), log: run.log })
}

/// Dispatches on `cfg.strategy`.
pub fn train(scene: &FrameSet, cfg: &TrainConfig, observer: &mut dyn TrainObserver) -> Result<TrainOutput> {
    match cfg.strategy {
        Strategy::SingleRgb => train_single(scene, cfg, Modality::Rgb, observer),
        Strategy::SingleThermal => train_single(scene, cfg, Modality::Thermal, observer),
        Strategy::Mftg => train_mftg(scene, cfg, observer),
        Strategy::Msmg => train_msmg(scene, cfg, observer),
        Strategy::Ommg => train_ommg(scene, cfg, observer),
    }
}
