//! `thermsplat`: synthetic scenes, training, rendering, evaluation and
//! multimodal preprocessing from the command line.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{Matrix3, Vector3};
use serde::Deserialize;
use serde_json::json;

use thermsplat_core::scene::colmap::{import_text, ImportOptions};
use thermsplat_core::scene::ply::{attribute_names, export_cloud, import_cloud, Precision};
use thermsplat_core::scene::preprocess::{mix_images, msx_image, ThermalDisplay, MSX_BLUR_SIGMA, MSX_STRENGTH};
use thermsplat_core::scene::registration::{map_thermal_pixel, register_thermal_image, RegistrationMode, RigCalibration};
use thermsplat_core::scene::synth::{synth_scene, write_synth, SynthSpec, ThermalField};
use thermsplat_core::scene::{read_gray_png, read_rgb_png, write_manifest, write_rgb_png, write_thermal_png, FrameSet};
use thermsplat_core::train::TrainObserver;
use thermsplat_core::{
    evaluate, load_scene, render, Camera, Error as CoreError, GaussianCloud, LossReport, Modality, RenderSettings, Strategy,
    ThermalRange, TrainConfig,
};

#[derive(Parser)]
#[command(name = "thermsplat", version, about = "Multimodal RGB + thermal Gaussian splatting")]
struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic RGB + thermal scene with its ground-truth cloud.
    Synth(SynthArgs),
    /// Optimize a model on a scene.
    Train(Box<TrainArgs>),
    /// Render a cloud from scene cameras or an explicit look-at camera.
    Render(RenderArgs),
    /// Score clouds against a scene and print the report as JSON.
    Eval(EvalArgs),
    /// Blend an RGB image with a thermal image.
    Mix(MixArgs),
    /// Overlay RGB high-frequency detail onto a thermal image.
    Msx(MsxArgs),
    /// Map one thermal pixel to the RGB image.
    MapPixel(MapPixelArgs),
    /// Resample a thermal image onto the RGB grid.
    Register(RegisterArgs),
    /// Write a cloud file at the chosen precision.
    Export(ExportArgs),
    /// Read and validate a cloud file, writing it in the canonical layout.
    Import(ImportArgs),
    /// Convert a cameras/images/points3D text triplet into a scene manifest.
    ImportSfm(ImportSfmArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FieldArg {
    Linear,
    Radial,
    Waves,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 50)]
    gaussians: usize,
    #[arg(long, default_value_t = 10)]
    frames: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    /// Focal length in pixels.
    #[arg(long, default_value_t = 70.0)]
    focal: f64,
    #[arg(long, default_value_t = 3.0)]
    ring_radius: f64,
    #[arg(long, value_enum, default_value_t = FieldArg::Radial)]
    field: FieldArg,
    /// Low-texture RGB with thermal contrast on one half of the scene.
    #[arg(long)]
    complementary: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Mftg,
    Msmg,
    Ommg,
    SingleRgb,
    SingleThermal,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Mftg => Strategy::Mftg,
            StrategyArg::Msmg => Strategy::Msmg,
            StrategyArg::Ommg => Strategy::Ommg,
            StrategyArg::SingleRgb => Strategy::SingleRgb,
            StrategyArg::SingleThermal => Strategy::SingleThermal,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Scene directory or manifest.
    #[arg(long)]
    scene: PathBuf,
    /// Output directory for clouds, the loss log and checkpoints.
    #[arg(long)]
    out: PathBuf,
    /// JSON file with training settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    #[arg(long)]
    iterations: Option<usize>,
    /// MFTG fine-tuning iterations.
    #[arg(long)]
    stage2_iterations: Option<usize>,
    /// Hold out every N-th frame for evaluation (0 trains on all frames).
    #[arg(long, default_value_t = 8)]
    holdout: usize,
    /// Weight the joint loss by live Gaussian counts (msmg only).
    #[arg(long)]
    use_mr: bool,
    #[arg(long)]
    fixed_gamma: Option<f64>,
    #[arg(long)]
    lambda_dssim: Option<f64>,
    #[arg(long)]
    lambda_smooth: Option<f64>,
    #[arg(long)]
    densify_interval: Option<usize>,
    #[arg(long)]
    densify_start: Option<usize>,
    #[arg(long)]
    densify_end: Option<usize>,
    #[arg(long)]
    densify_grad_threshold: Option<f64>,
    #[arg(long)]
    prune_opacity_threshold: Option<f64>,
    #[arg(long)]
    percent_dense: Option<f64>,
    #[arg(long)]
    lr_position: Option<f64>,
    #[arg(long)]
    lr_position_final: Option<f64>,
    #[arg(long)]
    lr_sh: Option<f64>,
    #[arg(long)]
    lr_opacity: Option<f64>,
    #[arg(long)]
    lr_scale: Option<f64>,
    #[arg(long)]
    lr_rotation: Option<f64>,
    #[arg(long)]
    sh_degree_rgb: Option<usize>,
    #[arg(long)]
    sh_degree_thermal: Option<usize>,
    #[arg(long)]
    sh_unlock_interval: Option<usize>,
    #[arg(long)]
    random_init_points: Option<usize>,
    /// Write checkpoint clouds every K iterations.
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Write clouds in 32-bit floats.
    #[arg(long)]
    float: bool,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    cloud: PathBuf,
    #[arg(long, value_enum)]
    modality: ModalityArg,
    /// Output PNG, or a directory when rendering several frames.
    #[arg(long)]
    out: PathBuf,
    /// Scene providing the cameras.
    #[arg(long, required_unless_present = "eye")]
    scene: Option<PathBuf>,
    /// Frame name or index; all frames when omitted.
    #[arg(long, requires = "scene")]
    frame: Option<String>,
    /// Camera position `x,y,z` for a look-at camera.
    #[arg(long, value_parser = parse_vec3, conflicts_with = "scene")]
    eye: Option<Vector3<f64>>,
    #[arg(long, value_parser = parse_vec3, default_value = "0,0,0")]
    target: Vector3<f64>,
    #[arg(long, value_parser = parse_vec3, default_value = "0,0,1")]
    up: Vector3<f64>,
    #[arg(long, default_value_t = 70.0)]
    focal: f64,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModalityArg {
    Rgb,
    Thermal,
}

impl From<ModalityArg> for Modality {
    fn from(m: ModalityArg) -> Self {
        match m {
            ModalityArg::Rgb => Modality::Rgb,
            ModalityArg::Thermal => Modality::Thermal,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    All,
    Train,
    Test,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    scene: PathBuf,
    /// A cloud evaluated on every modality it carries.
    #[arg(long, conflicts_with_all = ["rgb", "thermal"], required_unless_present_any = ["rgb", "thermal"])]
    cloud: Option<PathBuf>,
    #[arg(long)]
    rgb: Option<PathBuf>,
    #[arg(long)]
    thermal: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SplitArg::All)]
    split: SplitArg,
    #[arg(long, default_value_t = 8)]
    holdout: usize,
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MixArgs {
    #[arg(long)]
    rgb: PathBuf,
    /// Grayscale thermal image (8 or 16 bit).
    #[arg(long)]
    thermal: PathBuf,
    #[arg(long)]
    beta: f64,
    /// Show thermal through a false-color map instead of gray.
    #[arg(long)]
    colormap: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MsxArgs {
    #[arg(long)]
    rgb: PathBuf,
    #[arg(long)]
    thermal: PathBuf,
    #[arg(long, default_value_t = MSX_STRENGTH)]
    strength: f64,
    #[arg(long, default_value_t = MSX_BLUR_SIGMA)]
    blur_sigma: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MapPixelArgs {
    /// Rig calibration JSON (`k_rgb`, `k_thermal`, `rotation`, `translation`).
    #[arg(long)]
    calib: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    u: f64,
    #[arg(long, allow_negative_numbers = true)]
    v: f64,
    #[arg(long)]
    depth: f64,
}

#[derive(Args)]
struct RegisterArgs {
    #[arg(long)]
    calib: PathBuf,
    #[arg(long)]
    thermal: PathBuf,
    /// Plane depth in the thermal camera frame.
    #[arg(long)]
    depth: f64,
    #[arg(long)]
    width: usize,
    #[arg(long)]
    height: usize,
    #[arg(long)]
    out: PathBuf,
    /// Also write the validity mask.
    #[arg(long)]
    mask_out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    cloud: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    float: bool,
}

#[derive(Args)]
struct ImportArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ImportSfmArgs {
    /// Directory holding cameras.txt, images.txt and optionally points3D.txt.
    #[arg(long)]
    sparse: PathBuf,
    /// Manifest to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "images")]
    rgb_dir: String,
    #[arg(long)]
    thermal_dir: Option<String>,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    t_min: f64,
    #[arg(long, default_value_t = 100.0, allow_negative_numbers = true)]
    t_max: f64,
}

fn parse_vec3(s: &str) -> std::result::Result<Vector3<f64>, String> {
    let v: Vec<f64> = s.split(',').map(|t| t.trim().parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|e| e.to_string())?;
    match v.as_slice() {
        [x, y, z] => Ok(Vector3::new(*x, *y, *z)),
        _ => Err(format!("expected x,y,z, got '{s}'")),
    }
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json"));
}

fn precision(float: bool) -> Precision {
    if float {
        Precision::Float
    } else {
        Precision::Double
    }
}

fn synth(a: &SynthArgs, seed: u64) -> Result<()> {
    let spec = SynthSpec {
        gaussians: a.gaussians,
        frames: a.frames,
        width: a.width,
        height: a.height,
        focal: a.focal,
        ring_radius: a.ring_radius,
        thermal_field: match a.field {
            FieldArg::Linear => ThermalField::Linear,
            FieldArg::Radial => ThermalField::Radial,
            FieldArg::Waves => ThermalField::Waves,
        },
        complementary: a.complementary,
        ..SynthSpec::default()
    };
    let s = synth_scene(&spec, seed)?;
    write_synth(&a.out, &s)?;
    print_json(&json!({ "scene": a.out, "frames": s.scene.len(), "gaussians": s.ground_truth.len() }));
    Ok(())
}

fn train_config(a: &TrainArgs, seed: u64) -> Result<TrainConfig> {
    let mut c = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).map_err(|e| CoreError::Config(format!("{}: {e}", p.display())))?
        }
        None => TrainConfig::default(),
    };
    c.seed = seed;
    macro_rules! set {
        ($($field:ident).+ = $flag:expr) => {
            if let Some(v) = $flag {
                c.$($field).+ = v;
            }
        };
    }
    set!(strategy = a.strategy.map(Strategy::from));
    set!(iterations = a.iterations);
    set!(lambda_dssim = a.lambda_dssim);
    set!(lambda_smooth = a.lambda_smooth);
    set!(densify_interval = a.densify_interval);
    set!(densify_start = a.densify_start);
    set!(densify_end = a.densify_end);
    set!(densify_grad_threshold = a.densify_grad_threshold);
    set!(prune_opacity_threshold = a.prune_opacity_threshold);
    set!(percent_dense = a.percent_dense);
    set!(lr.position = a.lr_position);
    set!(lr.position_final = a.lr_position_final);
    set!(lr.sh = a.lr_sh);
    set!(lr.opacity = a.lr_opacity);
    set!(lr.scale = a.lr_scale);
    set!(lr.rotation = a.lr_rotation);
    set!(sh_degree_rgb = a.sh_degree_rgb);
    set!(sh_degree_thermal = a.sh_degree_thermal);
    set!(sh_unlock_interval = a.sh_unlock_interval);
    set!(random_init_points = a.random_init_points);
    if a.stage2_iterations.is_some() {
        c.stage2_iterations = a.stage2_iterations;
    }
    if a.fixed_gamma.is_some() {
        c.fixed_gamma = a.fixed_gamma;
    }
    if a.checkpoint_every.is_some() {
        c.checkpoint_interval = a.checkpoint_every;
    }
    c.use_mr |= a.use_mr;
    c.validate()?;
    Ok(c)
}

/// Streams loss records to a log and writes checkpoint clouds.
struct FileObserver {
    log: BufWriter<File>,
    checkpoints: PathBuf,
    precision: Precision,
}

impl TrainObserver for FileObserver {
    fn on_iteration(&mut self, report: &LossReport) -> thermsplat_core::Result<()> {
        writeln!(self.log, "{}", report.to_json_line()).map_err(|e| CoreError::io("loss_log.jsonl", e))
    }

    fn on_checkpoint(&mut self, iteration: usize, clouds: &[(&str, &GaussianCloud)]) -> thermsplat_core::Result<()> {
        fs::create_dir_all(&self.checkpoints).map_err(|e| CoreError::io(&self.checkpoints, e))?;
        for (role, c) in clouds {
            export_cloud(c, &self.checkpoints.join(format!("iter_{iteration:06}_{role}.ply")), self.precision)?;
        }
        Ok(())
    }
}

fn train(a: &TrainArgs, seed: u64) -> Result<()> {
    let cfg = train_config(a, seed)?;
    let scene = load_scene(&a.scene)?;
    let (train_idx, test_idx) = if a.holdout == 0 { ((0..scene.len()).collect(), Vec::new()) } else { scene.split(a.holdout) };
    let train_set = scene.subset(&train_idx);
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    fs::write(a.out.join("train_config.json"), serde_json::to_string_pretty(&cfg)? + "\n")?;
    let log_path = a.out.join("loss_log.jsonl");
    let mut observer = FileObserver {
        log: BufWriter::new(File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?),
        checkpoints: a.out.join("checkpoints"),
        precision: precision(a.float),
    };
    let start = Instant::now();
    let out = thermsplat_core::train(&train_set, &cfg, &mut observer)?;
    let seconds = start.elapsed().as_secs_f64();
    observer.log.flush()?;
    let mut files = Vec::new();
    let mut bytes = 0;
    for (role, c) in out.named() {
        let path = a.out.join(format!("{role}.ply"));
        export_cloud(c, &path, precision(a.float))?;
        bytes += fs::metadata(&path)?.len();
        files.push(path);
    }
    let mut summary = json!({
        "strategy": cfg.strategy.name(),
        "iterations": out.log.len(),
        "gaussians": out.total_gaussians(),
        "train_seconds": seconds,
        "clouds": files,
        "loss_log": log_path,
    });
    if !test_idx.is_empty() {
        let rgb = out.cloud_for(Modality::Rgb).filter(|_| scene.has(Modality::Rgb));
        let thermal = out.cloud_for(Modality::Thermal).filter(|_| scene.has(Modality::Thermal));
        let mut report = evaluate(rgb, thermal, &scene, &test_idx, &RenderSettings::default())?;
        report.model_bytes = Some(bytes);
        report.timings.train_seconds = Some(seconds);
        let path = a.out.join("eval.json");
        fs::write(&path, report.to_json() + "\n")?;
        for m in Modality::ALL {
            if let Some(e) = report.modality(m) {
                summary[format!("test_psnr_{m}")] = json!(e.mean_psnr);
            }
        }
    }
    print_json(&summary);
    Ok(())
}

fn frame_indices(scene: &FrameSet, frame: &Option<String>) -> Result<Vec<usize>> {
    match frame {
        None => Ok((0..scene.len()).collect()),
        Some(f) => {
            if let Some(i) = scene.frames.iter().position(|x| &x.name == f) {
                return Ok(vec![i]);
            }
            match f.parse::<usize>() {
                Ok(i) if i < scene.len() => Ok(vec![i]),
                _ => bail!("no frame named or numbered '{f}'"),
            }
        }
    }
}

fn save(img: &thermsplat_core::Image, modality: Modality, range: &ThermalRange, path: &Path) -> Result<()> {
    match modality {
        Modality::Rgb => write_rgb_png(path, img)?,
        Modality::Thermal => write_thermal_png(path, img, range)?,
    }
    Ok(())
}

fn render_cmd(a: &RenderArgs) -> Result<()> {
    let cloud = import_cloud(&a.cloud)?;
    let modality = Modality::from(a.modality);
    let settings = RenderSettings::default();
    let mut written = Vec::new();
    if let Some(eye) = a.eye {
        let cam = Camera::look_at(eye, a.target, a.up, a.focal, a.width, a.height)?;
        let img = render(&cloud, &cam, modality, &settings)?.image;
        save(&img, modality, &ThermalRange::default(), &a.out)?;
        written.push(a.out.clone());
    } else {
        let scene = load_scene(a.scene.as_ref().expect("required by clap"))?;
        let idx = frame_indices(&scene, &a.frame)?;
        let single = a.frame.is_some();
        if !single {
            fs::create_dir_all(&a.out)?;
        }
        for i in idx {
            let f = &scene.frames[i];
            let img = render(&cloud, &f.camera, modality, &settings)?.image;
            let path = if single { a.out.clone() } else { a.out.join(format!("{}.png", f.name)) };
            save(&img, modality, &scene.thermal_range, &path)?;
            written.push(path);
        }
    }
    print_json(&json!({ "written": written }));
    Ok(())
}

fn eval_cmd(a: &EvalArgs) -> Result<()> {
    let scene = load_scene(&a.scene)?;
    let (train_idx, test_idx) = scene.split(a.holdout.max(1));
    let frames: Vec<usize> = match a.split {
        SplitArg::All => (0..scene.len()).collect(),
        SplitArg::Train => train_idx,
        SplitArg::Test => test_idx,
    };
    let load = |p: &Option<PathBuf>| p.as_ref().map(|p| import_cloud(p)).transpose();
    let mut bytes = 0;
    for p in [&a.cloud, &a.rgb, &a.thermal].into_iter().flatten() {
        bytes += fs::metadata(p).with_context(|| format!("reading {}", p.display()))?.len();
    }
    let report = if let Some(joint) = load(&a.cloud)? {
        let rgb = (joint.has(Modality::Rgb) && scene.has(Modality::Rgb)).then_some(&joint);
        let thermal = (joint.has(Modality::Thermal) && scene.has(Modality::Thermal)).then_some(&joint);
        evaluate(rgb, thermal, &scene, &frames, &RenderSettings::default())
    } else {
        let (rgb, thermal) = (load(&a.rgb)?, load(&a.thermal)?);
        evaluate(rgb.as_ref(), thermal.as_ref(), &scene, &frames, &RenderSettings::default())
    };
    let mut report = report?;
    report.model_bytes = Some(bytes);
    let text = report.to_json();
    if let Some(p) = &a.out {
        fs::write(p, text.clone() + "\n")?;
    }
    println!("{text}");
    Ok(())
}

fn mix_cmd(a: &MixArgs) -> Result<()> {
    let rgb = read_rgb_png(&a.rgb)?;
    let thermal = read_gray_png(&a.thermal)?;
    let display = if a.colormap { ThermalDisplay::Colormap } else { ThermalDisplay::Grayscale };
    write_rgb_png(&a.out, &mix_images(&rgb, &thermal, a.beta, display)?)?;
    print_json(&json!({ "written": a.out }));
    Ok(())
}

fn msx_cmd(a: &MsxArgs) -> Result<()> {
    let rgb = read_rgb_png(&a.rgb)?;
    let thermal = read_gray_png(&a.thermal)?;
    let out = msx_image(&rgb, &thermal, a.strength, a.blur_sigma)?;
    write_thermal_png(&a.out, &out, &ThermalRange::new(0.0, 1.0)?)?;
    print_json(&json!({ "written": a.out }));
    Ok(())
}

/// Rig calibration file with row-major matrices.
#[derive(Deserialize)]
struct CalibFile {
    k_rgb: [[f64; 3]; 3],
    k_thermal: [[f64; 3]; 3],
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

fn matrix(rows: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::from_fn(|r, c| rows[r][c])
}

fn read_calib(path: &Path) -> Result<RigCalibration> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let f: CalibFile = serde_json::from_str(&text).map_err(|e| CoreError::parse(path, Some(e.line()), e))?;
    let c = RigCalibration {
        k_rgb: matrix(&f.k_rgb),
        k_thermal: matrix(&f.k_thermal),
        rotation: matrix(&f.rotation),
        translation: Vector3::from(f.translation),
    };
    c.validate()?;
    Ok(c)
}

fn map_pixel_cmd(a: &MapPixelArgs) -> Result<()> {
    let calib = read_calib(&a.calib)?;
    match map_thermal_pixel(a.u, a.v, a.depth, &calib)? {
        Some([u, v]) => print_json(&json!({ "u": u, "v": v })),
        None => print_json(&json!({ "unmappable": true })),
    }
    Ok(())
}

fn register_cmd(a: &RegisterArgs) -> Result<()> {
    let calib = read_calib(&a.calib)?;
    let thermal = read_gray_png(&a.thermal)?;
    let r = register_thermal_image(&thermal, &RegistrationMode::Depth(a.depth), &calib, a.width, a.height)?;
    write_thermal_png(&a.out, &r.image, &ThermalRange::new(0.0, 1.0)?)?;
    if let Some(m) = &a.mask_out {
        let img = thermsplat_core::Image::from_vec(a.width, a.height, 1, r.mask.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect())?;
        write_rgb_png(m, &img)?;
    }
    let valid = r.mask.iter().filter(|&&v| v).count();
    print_json(&json!({ "written": a.out, "valid_pixels": valid }));
    Ok(())
}

fn cloud_summary(c: &GaussianCloud, path: &Path) -> serde_json::Value {
    json!({
        "written": path,
        "gaussians": c.len(),
        "modalities": c.modalities(),
        "sh_degree_rgb": c.sh_degree_rgb,
        "sh_degree_thermal": c.sh_degree_thermal,
        "attributes": attribute_names(c).len(),
    })
}

fn export_cmd(a: &ExportArgs) -> Result<()> {
    let c = import_cloud(&a.cloud)?;
    export_cloud(&c, &a.out, precision(a.float))?;
    print_json(&cloud_summary(&c, &a.out));
    Ok(())
}

fn import_cmd(a: &ImportArgs) -> Result<()> {
    let c = import_cloud(&a.input)?;
    c.validate()?;
    export_cloud(&c, &a.out, Precision::Double)?;
    print_json(&cloud_summary(&c, &a.out));
    Ok(())
}

fn import_sfm_cmd(a: &ImportSfmArgs) -> Result<()> {
    let opts = ImportOptions { rgb_dir: a.rgb_dir.clone(), thermal_dir: a.thermal_dir.clone(), thermal_range: ThermalRange::new(a.t_min, a.t_max)? };
    let imported = import_text(&a.sparse, &opts)?;
    write_manifest(&a.out, &imported.manifest)?;
    for id in &imported.dropped_distortion {
        eprintln!("warning: camera {id}: lens distortion parameters dropped");
    }
    print_json(&json!({
        "written": a.out,
        "frames": imported.manifest.frames.len(),
        "cameras": imported.manifest.cameras.len(),
        "points": imported.manifest.initial_points.as_ref().map_or(0, |p| p.len()),
    }));
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => synth(a, cli.seed),
        Command::Train(a) => train(a, cli.seed),
        Command::Render(a) => render_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Mix(a) => mix_cmd(a),
        Command::Msx(a) => msx_cmd(a),
        Command::MapPixel(a) => map_pixel_cmd(a),
        Command::Register(a) => register_cmd(a),
        Command::Export(a) => export_cmd(a),
        Command::Import(a) => import_cmd(a),
        Command::ImportSfm(a) => import_sfm_cmd(a),
    }
}

/// Invalid settings are usage errors.
fn is_usage_error(e: &anyhow::Error) -> bool {
    matches!(e.downcast_ref::<CoreError>(), Some(CoreError::Config(_) | CoreError::InvalidParameter(_)))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_usage_error(&e) { 2 } else { 1 })
        }
    }
}
