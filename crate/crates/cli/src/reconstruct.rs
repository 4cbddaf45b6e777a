//! End-to-end reconstruction from correspondence and intrinsics files.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::time::Instant;

use anyhow::anyhow;
use clap::Args;
use nrsfm_core::{
    bend_surface, build_graph, estimate_normals, fit_warps, CorrespondenceSet,
    Error as CoreError, ImagePoint, NormalField, Vec3,
};
use serde::Serialize;

use crate::config::{ConfigFlags, RunConfig};
use crate::io;
use crate::{FailContext, Failure, PipelineContext};

#[derive(Args, Debug)]
pub struct ReconstructArgs {
    /// Directory holding correspondences.csv and intrinsics.csv.
    #[arg(long, value_name = "DIR", default_value = ".")]
    input: PathBuf,
    /// Count warp fitting inside the reported timing scope.
    #[arg(long)]
    time_include_fitting: bool,
    #[command(flatten)]
    config: ConfigFlags,
}

#[derive(Serialize)]
struct Timing {
    warp_fit_seconds: f64,
    normals_seconds: f64,
    surface_seconds: f64,
    /// The reported scope: normals + surface, plus warp fitting if included.
    timed_seconds: f64,
    includes_warp_fit: bool,
}

#[derive(Serialize)]
struct ImageSummary {
    image: u32,
    observations: usize,
    normals: usize,
    surface_points: usize,
}

#[derive(Serialize)]
struct ConfigEcho {
    tau: f64,
    grid: usize,
    lambda_reg: f64,
    reference: String,
    threads: usize,
}

#[derive(Serialize)]
struct Summary {
    n_images: usize,
    n_points: usize,
    n_cells: usize,
    reconstructed_cells: usize,
    rejected_fraction: f64,
    /// Unreconstructed cell counts keyed by their dominant rejection.
    rejections: BTreeMap<&'static str, usize>,
    images: Vec<ImageSummary>,
    timing: Timing,
    config: ConfigEcho,
}

struct Computed {
    field: NormalField,
    /// Per image: bent positions and the observation count.
    clouds: Vec<(u32, Vec<(u32, Vec3)>, usize)>,
    warp_fit_seconds: f64,
    normals_seconds: f64,
    surface_seconds: f64,
}

pub fn run(args: ReconstructArgs) -> Result<(), Failure> {
    let config = args.config.resolve().invalid("resolving configuration")?;
    let observations = io::read_correspondences(&args.input.join(io::CORRESPONDENCES_FILE))
        .invalid("reading correspondences")?;
    let intrinsics =
        io::read_intrinsics(&args.input.join(io::INTRINSICS_FILE)).invalid("reading intrinsics")?;

    let images: BTreeSet<u32> = observations.iter().map(|r| r.image).collect();
    if images.len() < 2 {
        return Err(Failure::invalid(anyhow!(
            "need at least two images, got {}",
            images.len()
        )));
    }

    // Pixels to retina coordinates through each image's intrinsics.
    let mut rows = Vec::with_capacity(observations.len());
    for r in &observations {
        let k = intrinsics.for_image(r.image).invalid("locating intrinsics")?;
        let retina = k
            .to_retina(r.x_px, r.y_px)
            .pipeline("converting pixels to retina coordinates")?;
        rows.push((r.image, r.point, retina));
    }
    let set = CorrespondenceSet::from_rows(rows).pipeline("building correspondence tracks")?;

    let computed = with_pool(config.threads, || compute(&set, &config))??;

    // Everything below is file output, outside the timed region.
    std::fs::create_dir_all(&config.out).invalid("creating output directory")?;
    let mut normal_rows = Vec::with_capacity(computed.field.len());
    let mut per_image_normals: BTreeMap<u32, usize> = BTreeMap::new();
    let mut rejections: BTreeMap<&'static str, usize> = BTreeMap::new();
    for (image, point, entry) in computed.field.iter() {
        if entry.normal.is_some() {
            *per_image_normals.entry(image).or_default() += 1;
        } else {
            let reason = entry.dominant_rejection.map_or("unknown", |r| r.as_str());
            *rejections.entry(reason).or_default() += 1;
        }
        normal_rows.push(io::NormalRow {
            image,
            point,
            normal: entry.normal.map(|n| n.as_vec()),
            support: entry.support,
            rejected_reason: entry
                .dominant_rejection
                .filter(|_| entry.normal.is_none())
                .map_or("", |r| r.as_str()),
        });
    }
    io::write_normals(&config.out.join(io::NORMALS_FILE), &normal_rows)
        .invalid("writing normals")?;

    let mut image_rows = Vec::new();
    for (image, cloud, observations) in &computed.clouds {
        io::write_ply(&config.out.join(io::ply_file(*image)), cloud)
            .invalid("writing point cloud")?;
        image_rows.push(ImageSummary {
            image: *image,
            observations: *observations,
            normals: per_image_normals.get(image).copied().unwrap_or(0),
            surface_points: cloud.len(),
        });
    }

    let timed_seconds = computed.normals_seconds
        + computed.surface_seconds
        + if args.time_include_fitting { computed.warp_fit_seconds } else { 0.0 };
    let summary = Summary {
        n_images: images.len(),
        n_points: set.point_ids().count(),
        n_cells: computed.field.len(),
        reconstructed_cells: computed.field.reconstructed_count(),
        rejected_fraction: computed.field.rejected_fraction(),
        rejections,
        images: image_rows,
        timing: Timing {
            warp_fit_seconds: computed.warp_fit_seconds,
            normals_seconds: computed.normals_seconds,
            surface_seconds: computed.surface_seconds,
            timed_seconds,
            includes_warp_fit: args.time_include_fitting,
        },
        config: ConfigEcho {
            tau: config.tau,
            grid: config.grid,
            lambda_reg: config.lambda_reg,
            reference: config.reference.to_string(),
            threads: config.threads,
        },
    };
    io::write_json(&config.out.join(io::SUMMARY_FILE), &summary).invalid("writing summary")?;
    println!(
        "reconstructed {}/{} cells across {} images in {:.3}s (rejected fraction {:.3}); outputs in {}",
        summary.reconstructed_cells,
        summary.n_cells,
        summary.n_images,
        timed_seconds,
        summary.rejected_fraction,
        config.out.display()
    );
    Ok(())
}

fn with_pool<T: Send>(
    threads: usize,
    body: impl FnOnce() -> T + Send,
) -> Result<T, Failure> {
    if threads == 0 {
        return Ok(body());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .invalid("building worker pool")?;
    Ok(pool.install(body))
}

fn compute(set: &CorrespondenceSet, config: &RunConfig) -> Result<Computed, Failure> {
    let grid = config.grid_spec().invalid("sizing warp grid")?;
    let gate = config.gate().invalid("building degeneracy gate")?;
    let policy = config.reference.policy();

    let t = Instant::now();
    let warps = fit_warps(set, grid, config.lambda_reg, policy).pipeline("fitting warps")?;
    let warp_fit_seconds = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let field = estimate_normals(set, &warps, &gate, policy).pipeline("estimating normals")?;
    let normals_seconds = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let mut clouds = Vec::new();
    for image in set.images() {
        let pts = set.points_in(image);
        let n_obs = pts.len();
        clouds.push((image, bend_image(&field, image, &pts)?, n_obs));
    }
    let surface_seconds = t.elapsed().as_secs_f64();
    Ok(Computed { field, clouds, warp_fit_seconds, normals_seconds, surface_seconds })
}

/// Bends one image's surface. Images without enough observations or without
/// any reconstructed normal produce an empty cloud rather than failing the
/// run; a fully degenerate reconstruction is still a successful run.
fn bend_image(
    field: &NormalField,
    image: u32,
    pts: &[(u32, ImagePoint)],
) -> Result<Vec<(u32, Vec3)>, Failure> {
    let graph = match build_graph(pts) {
        Ok(graph) => graph,
        Err(CoreError::TooFewPoints { .. }) => return Ok(Vec::new()),
        Err(e) => return Err(e).pipeline("building integration graph"),
    };
    match bend_surface(field, image, &graph) {
        Ok(surface) => Ok(surface.iter().map(|(id, p)| (id, p.position)).collect()),
        Err(CoreError::NoReconstructedPoints) => Ok(Vec::new()),
        Err(e) => Err(e).pipeline("integrating surface"),
    }
}
