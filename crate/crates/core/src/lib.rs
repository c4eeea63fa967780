//! Multimodal RGB + thermal 3D Gaussian splatting.

pub mod autograd;
pub mod camera;
pub mod error;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod raster;
pub mod scene;
pub mod sh;
pub mod train;

pub use autograd::{backward, finite_difference_oracle, ParameterGradients};
pub use camera::Camera;
pub use error::{Error, Result};
pub use image::Image;
pub use model::{Gaussian3D, GaussianCloud, InitPoint, Modality, ModalityWeights, ParamKind, ParamSelector};
pub use raster::{render, RenderOutput, RenderSettings, Splat2D};
pub use losses::{joint_loss, modality_loss, mr_gamma, LossReport};
pub use metrics::{evaluate, psnr, Decibels, EvalReport};
pub use scene::{load_scene, write_scene, Frame, FrameSet, ThermalRange};
pub use train::{train, Strategy, TrainConfig, TrainObserver, TrainOutput, TrainedClouds};
