//! Seeded synthetic RGB + thermal scenes with known ground truth.

use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ply::{export_cloud, Precision};
use super::{quantize_rgb, write_scene, Frame, FrameSet, ThermalRange};
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::model::{logit, normalize_quaternion, Gaussian3D, GaussianCloud, InitPoint, Modality};
use crate::raster::reference::render_reference;
use crate::raster::RenderSettings;
use crate::sh;

pub const GROUND_TRUTH_NAME: &str = "ground_truth.ply";

/// Spatial temperature pattern sampled at each Gaussian's center.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThermalField {
    /// Linear ramp along a random direction.
    Linear,
    /// Hot core cooling towards the box faces.
    #[default]
    Radial,
    /// Low-frequency product of sinusoids.
    Waves,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub gaussians: usize,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    /// Focal length in pixels.
    pub focal: f64,
    pub ring_radius: f64,
    /// Amplitude of the camera height variation around the ring.
    pub ring_height: f64,
    /// Half side of the box holding the Gaussian centers.
    pub half_extent: f64,
    /// Range of per-axis standard deviations.
    pub scale_range: (f64, f64),
    pub opacity_range: (f64, f64),
    pub thermal_field: ThermalField,
    /// Split the box at x = 0: one half is uniform in RGB with strong
    /// thermal contrast, the other is textured in RGB over a flat thermal
    /// field.
    pub complementary: bool,
    /// Initial points per ground-truth Gaussian.
    pub init_per_gaussian: usize,
    /// Standard deviation of the initial point jitter.
    pub init_noise: f64,
    pub thermal_range: ThermalRange,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            gaussians: 50,
            frames: 10,
            width: 64,
            height: 64,
            focal: 70.0,
            ring_radius: 3.0,
            ring_height: 1.0,
            half_extent: 0.5,
            scale_range: (0.05, 0.15),
            opacity_range: (0.6, 0.95),
            thermal_field: ThermalField::Radial,
            complementary: false,
            init_per_gaussian: 1,
            init_noise: 0.03,
            thermal_range: ThermalRange { t_min: 10.0, t_max: 60.0, stored_min: 0, stored_max: u16::MAX },
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(format!("synthetic scene: {m}")));
        if self.gaussians == 0 || self.frames == 0 {
            return bad("needs at least one Gaussian and one frame");
        }
        if self.width == 0 || self.height == 0 || !(self.focal > 0.0) {
            return bad("image size and focal length must be positive");
        }
        if !(self.ring_radius > self.half_extent * 3f64.sqrt() + 0.3) {
            return bad("camera ring must lie outside the Gaussian box");
        }
        if !(self.half_extent > 0.0) {
            return bad("box must be non-empty");
        }
        let (s0, s1) = self.scale_range;
        if !(0.0 < s0 && s0 <= s1) {
            return bad("scale range must be positive and ordered");
        }
        let (o0, o1) = self.opacity_range;
        if !(0.0 < o0 && o0 <= o1 && o1 < 1.0) {
            return bad("opacity range must lie in (0, 1)");
        }
        if !(self.init_noise >= 0.0) {
            return bad("initial point noise must be non-negative");
        }
        self.thermal_range.validate()
    }

    /// Camera `i` of the ring, looking at the origin.
    pub fn camera(&self, i: usize) -> Result<Camera> {
        let a = std::f64::consts::TAU * i as f64 / self.frames as f64;
        let z = self.ring_height * (3.0 * a).sin() * 0.5 + 0.3 * self.ring_height;
        let eye = Vector3::new(self.ring_radius * a.cos(), self.ring_radius * a.sin(), z);
        Camera::look_at(eye, Vector3::zeros(), Vector3::z(), self.focal, self.width, self.height)
    }
}

/// Generated scene plus the cloud that produced its images.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthScene {
    pub scene: FrameSet,
    pub ground_truth: GaussianCloud,
}

struct Field {
    kind: ThermalField,
    dir: Vector3<f64>,
    phase: [f64; 3],
    half: f64,
}

impl Field {
    fn eval(&self, p: &Vector3<f64>) -> f64 {
        let u = p / self.half;
        let v = match self.kind {
            ThermalField::Linear => 0.5 + 0.35 * u.dot(&self.dir) / 3f64.sqrt(),
            ThermalField::Radial => 0.85 - 0.55 * (u.norm() / 3f64.sqrt()),
            ThermalField::Waves => {
                0.5 + 0.35 * (1.7 * u.x + self.phase[0]).sin() * (1.3 * u.y + self.phase[1]).cos() * (0.8 + 0.2 * (u.z + self.phase[2]).sin())
            }
        };
        v.clamp(0.05, 0.95)
    }
}

/// Samples a ground-truth cloud and renders every ring camera with the
/// reference compositor; images are quantized as they would be on disk.
pub fn synth_scene(spec: &SynthSpec, seed: u64) -> Result<SynthScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = spec.half_extent;
    let field = Field {
        kind: spec.thermal_field,
        dir: Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)).normalize(),
        phase: std::array::from_fn(|_| rng.random_range(0.0..std::f64::consts::TAU)),
        half: h,
    };
    let flat_rgb: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.35..0.65));
    let flat_thermal = rng.random_range(0.4..0.6);
    let (s0, s1) = spec.scale_range;
    let (o0, o1) = spec.opacity_range;
    let mut gaussians = Vec::with_capacity(spec.gaussians);
    let mut values = Vec::with_capacity(spec.gaussians);
    for _ in 0..spec.gaussians {
        let position = Vector3::from_fn(|_, _| rng.random_range(-h..h));
        let log_scale = Vector3::from_fn(|_, _| rng.random_range(s0.ln()..=s1.ln()));
        let rotation = normalize_quaternion(std::array::from_fn(|_| rng.random_range(-1.0..1.0)));
        let opacity = rng.random_range(o0..=o1);
        let mut rgb: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.05..0.95));
        let mut thermal = field.eval(&position);
        if spec.complementary {
            if position.x < 0.0 {
                rgb = flat_rgb;
                thermal = if rng.random_bool(0.5) { rng.random_range(0.75..0.95) } else { rng.random_range(0.05..0.25) };
            } else {
                thermal = flat_thermal + 0.05 * (thermal - 0.5);
            }
        }
        values.push((rgb, thermal));
        gaussians.push(Gaussian3D {
            position,
            log_scale,
            rotation,
            opacity_logit: logit(opacity),
            sh_rgb: Some(rgb.iter().map(|&v| sh::dc_from_value(v)).collect()),
            sh_thermal: Some(vec![sh::dc_from_value(thermal)]),
        });
    }
    let ground_truth = GaussianCloud::new(gaussians, &[Modality::Rgb, Modality::Thermal], 0, 0)?;

    let noise = Normal::new(0.0, spec.init_noise.max(1e-12)).expect("valid normal");
    let mut initial_points = Vec::new();
    for (g, (rgb, thermal)) in ground_truth.gaussians.iter().zip(&values) {
        for _ in 0..spec.init_per_gaussian {
            let mut jitter = |v: f64, s: f64| if spec.init_noise > 0.0 { v + s * noise.sample(&mut rng) } else { v };
            initial_points.push(InitPoint {
                position: std::array::from_fn(|a| jitter(g.position[a], 1.0)),
                rgb: std::array::from_fn(|c| jitter(rgb[c], 2.0).clamp(0.0, 1.0)),
                thermal: jitter(*thermal, 2.0).clamp(0.0, 1.0),
            });
        }
    }

    let settings = RenderSettings::default();
    let frames = (0..spec.frames)
        .map(|i| {
            let camera = spec.camera(i)?;
            let rgb = render_reference(&ground_truth, &camera, Modality::Rgb, &settings)?.image;
            let thermal = render_reference(&ground_truth, &camera, Modality::Thermal, &settings)?.image;
            Ok(Frame {
                name: format!("{i:04}"),
                camera_id: "cam0".into(),
                camera,
                rgb: Some(quantize_rgb(&rgb)),
                thermal: Some(spec.thermal_range.quantize(&thermal)),
                mask: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SynthScene {
        scene: FrameSet { frames, thermal_range: spec.thermal_range, initial_points: Some(initial_points) },
        ground_truth,
    })
}

/// Writes the scene (manifest and images) and `ground_truth.ply` to `dir`.
pub fn write_synth(dir: &Path, synth: &SynthScene) -> Result<()> {
    write_scene(dir, &synth.scene)?;
    export_cloud(&synth.ground_truth, &dir.join(GROUND_TRUTH_NAME), Precision::Double)
}
