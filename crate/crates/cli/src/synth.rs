//! Synthetic scene generation to disk.

use std::path::Path;

use clap::{Args, ValueEnum};
use nrsfm_core::{
    default_motion, generate, rotation_only_motion, static_motion, CameraSpec, Deformation,
    GroundTruth, SceneSpec, SurfaceKind,
};

use crate::config::{ConfigFlags, RunConfig};
use crate::io;
use crate::{FailContext, Failure, PipelineContext};

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SurfaceArg {
    /// Rigid flat sheet.
    Plane,
    /// Developable roll with a per-frame radius schedule.
    Cylinder,
    /// One-axis stretch; pairs with the generic deformation regime.
    StretchedSheet,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum MotionArg {
    /// Orbit with a slight dolly.
    Default,
    /// Pure rotation about the optical center; degenerate by construction.
    RotationOnly,
    /// Identical pose in every frame.
    Static,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Surface family.
    #[arg(long, value_enum, default_value_t = SurfaceArg::Cylinder)]
    surface: SurfaceArg,
    /// Number of images.
    #[arg(long, default_value_t = 3)]
    frames: usize,
    /// Number of tracked points.
    #[arg(long, default_value_t = 400)]
    points: usize,
    /// Camera motion schedule.
    #[arg(long, value_enum, default_value_t = MotionArg::Default)]
    motion: MotionArg,
    /// First-frame cylinder radius.
    #[arg(long, default_value_t = 3.2)]
    radius: f64,
    /// Per-frame cylinder radius step (the bending schedule).
    #[arg(long, default_value_t = -0.08, allow_hyphen_values = true)]
    radius_delta: f64,
    /// Per-frame conformal scales; selects the conformal regime.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    lambdas: Vec<f64>,
    /// Per-frame stretch factors for the stretched sheet.
    #[arg(long, value_delimiter = ',', num_args = 1.., allow_hyphen_values = true)]
    stretches: Vec<f64>,
    #[command(flatten)]
    config: ConfigFlags,
}

pub fn run(args: SynthArgs) -> Result<(), Failure> {
    let config = args.config.resolve().invalid("resolving configuration")?;
    let spec = scene_spec(&args, &config);
    let gt = generate(&spec).pipeline("generating scene")?;
    write_outputs(&config.out, &spec, &gt).invalid("writing scene")?;
    println!(
        "wrote {} images x {} points to {}",
        gt.n_frames(),
        gt.n_points(),
        config.out.display()
    );
    Ok(())
}

fn scene_spec(args: &SynthArgs, config: &RunConfig) -> SceneSpec {
    let frames = args.frames;
    let surface = match args.surface {
        SurfaceArg::Plane => SurfaceKind::Plane,
        SurfaceArg::Cylinder => SurfaceKind::Cylinder {
            radii: (0..frames)
                .map(|f| args.radius + f as f64 * args.radius_delta)
                .collect(),
        },
        SurfaceArg::StretchedSheet => SurfaceKind::StretchedSheet {
            stretches: if args.stretches.is_empty() {
                (0..frames).map(|f| 1.0 + 0.1 * f as f64).collect()
            } else {
                args.stretches.clone()
            },
        },
    };
    let deformation = if !args.lambdas.is_empty() {
        Deformation::Conformal { lambdas: args.lambdas.clone() }
    } else if matches!(args.surface, SurfaceArg::StretchedSheet) {
        Deformation::Generic
    } else {
        Deformation::Isometric
    };
    let poses = match args.motion {
        MotionArg::Default => default_motion(frames),
        MotionArg::RotationOnly => rotation_only_motion(frames),
        MotionArg::Static => static_motion(frames),
    };
    SceneSpec {
        surface,
        deformation,
        n_points: args.points,
        n_frames: frames,
        camera: CameraSpec::default(),
        poses,
        noise_sigma_px: config.noise_px,
        rng_seed: config.seed,
    }
}

fn write_outputs(dir: &Path, spec: &SceneSpec, gt: &GroundTruth) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut observations = Vec::new();
    let mut normals = Vec::new();
    let mut points = Vec::new();
    for f in 0..gt.n_frames() {
        for j in 0..gt.n_points() {
            let pixel = gt.observed_pixel(f, j);
            observations.push(io::ObservationRow {
                image: f as u32,
                point: j as u32,
                x_px: pixel.u,
                y_px: pixel.v,
            });
            let fp = gt.frame_point(f, j);
            normals.push((f as u32, j as u32, fp.normal.as_vec()));
            points.push((f as u32, j as u32, fp.position));
        }
    }
    io::write_correspondences(&dir.join(io::CORRESPONDENCES_FILE), &observations)?;
    let k = *gt.intrinsics();
    let intrinsics: Vec<_> = (0..gt.n_frames()).map(|f| (f as u32, k)).collect();
    io::write_intrinsics(&dir.join(io::INTRINSICS_FILE), &intrinsics)?;
    io::write_plain_normals(&dir.join(io::GT_NORMALS_FILE), &normals)?;
    io::write_points_csv(&dir.join(io::GT_POINTS_FILE), &points)?;
    io::write_json(&dir.join(io::SCENE_FILE), spec)?;
    Ok(())
}
