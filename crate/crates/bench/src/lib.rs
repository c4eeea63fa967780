//! Shared fixtures for the benchmarks.

use thermsplat_core::scene::synth::{synth_scene, SynthSpec};
use thermsplat_core::{Camera, FrameSet, GaussianCloud, Image, Modality};

/// A cloud, a camera and matching targets for one view.
pub struct Fixture {
    pub cloud: GaussianCloud,
    pub camera: Camera,
    pub rgb: Image,
    pub thermal: Image,
    pub scene: FrameSet,
}

/// Synthetic scene with `gaussians` ground-truth Gaussians seen at
/// `size × size`; the cloud carries both modalities at RGB degree 3.
pub fn fixture(gaussians: usize, size: usize, seed: u64) -> Fixture {
    let spec = SynthSpec { gaussians, width: size, height: size, focal: 1.1 * size as f64, frames: 4, ..SynthSpec::default() };
    let s = synth_scene(&spec, seed).expect("valid synthetic spec");
    let cloud = s.ground_truth.with_modalities(&[Modality::Rgb, Modality::Thermal], 3, 0);
    let frame = s.scene.frames[0].clone();
    Fixture {
        cloud,
        camera: frame.camera,
        rgb: frame.rgb.expect("synthetic frames carry rgb"),
        thermal: frame.thermal.expect("synthetic frames carry thermal"),
        scene: s.scene,
    }
}
