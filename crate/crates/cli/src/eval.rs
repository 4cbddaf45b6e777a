//! Score reconstruction outputs against ground-truth files.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use anyhow::{anyhow, bail};
use clap::Args;
use nrsfm_core::{aligned_depth_errors, normal_agreement, EvalReport, FrameEval, Vec3};

use crate::io;
use crate::{FailContext, Failure, PipelineContext};

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Reconstruction directory (normals.csv plus points_<image>.ply).
    #[arg(long, value_name = "DIR")]
    pred: PathBuf,
    /// Ground-truth directory (gt_normals.csv, gt_points.csv).
    #[arg(long, value_name = "DIR")]
    gt: PathBuf,
    /// Write the full report as JSON.
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
}

fn unit(v: Vec3, what: &str) -> anyhow::Result<Vec3> {
    let norm = v.norm();
    if !(norm > 1e-300) {
        bail!("{what} contains a zero normal");
    }
    Ok(v / norm)
}

pub fn run(args: EvalArgs) -> Result<(), Failure> {
    let pred_rows =
        io::read_normals(&args.pred.join(io::NORMALS_FILE)).invalid("reading predicted normals")?;
    let gt_rows = io::read_normals(&args.gt.join(io::GT_NORMALS_FILE))
        .invalid("reading ground-truth normals")?;
    let gt_points = io::read_points_csv(&args.gt.join(io::GT_POINTS_FILE))
        .invalid("reading ground-truth points")?;

    let mut gt_normals = BTreeMap::new();
    for row in &gt_rows {
        if let Some(n) = row.normal {
            gt_normals.insert(
                (row.image, row.point),
                unit(n, "ground truth").invalid("reading ground-truth normals")?,
            );
        }
    }
    let gt_positions: BTreeMap<(u32, u32), Vec3> =
        gt_points.iter().map(|&(i, j, p)| ((i, j), p)).collect();

    let images: BTreeSet<u32> = pred_rows.iter().map(|r| r.image).collect();
    let mut pooled = Vec::new();
    let mut frames = Vec::new();
    for &image in &images {
        let mut normal_pairs = Vec::new();
        for row in pred_rows.iter().filter(|r| r.image == image) {
            if let (Some(pred), Some(&truth)) = (row.normal, gt_normals.get(&(image, row.point))) {
                normal_pairs.push((unit(pred, "prediction").invalid("reading predicted normals")?, truth));
            }
        }
        let ply_path = args.pred.join(io::ply_file(image));
        let cloud = if ply_path.exists() {
            io::read_ply(&ply_path).invalid("reading predicted point cloud")?
        } else {
            Vec::new()
        };
        let position_pairs: Vec<(Vec3, Vec3)> = cloud
            .iter()
            .filter_map(|&(id, p)| gt_positions.get(&(image, id)).map(|&g| (p, g)))
            .collect();
        // A frame enters the report only when both sides overlap the truth.
        if normal_pairs.is_empty() || position_pairs.is_empty() {
            continue;
        }
        let (en, en_angular_deg) =
            normal_agreement(normal_pairs.iter().copied()).pipeline("frame normal agreement")?;
        let (scale, ed_rmse, ed_rel) =
            aligned_depth_errors(&position_pairs).pipeline("frame depth alignment")?;
        frames.push(FrameEval {
            image,
            n_overlap: position_pairs.len(),
            en,
            en_angular_deg,
            scale,
            ed_rmse,
            ed_rel,
        });
        pooled.extend(normal_pairs);
    }
    if frames.is_empty() {
        return Err(Failure::invalid(anyhow!(
            "prediction and ground truth share no evaluable frames"
        )));
    }
    let (en, en_angular_deg) = normal_agreement(pooled).pipeline("pooled normal agreement")?;
    let n = frames.len() as f64;
    let rejected = pred_rows.iter().filter(|r| r.normal.is_none()).count();
    let report = EvalReport {
        en,
        en_angular_deg,
        ed_rmse: frames.iter().map(|f| f.ed_rmse).sum::<f64>() / n,
        ed_rel: frames.iter().map(|f| f.ed_rel).sum::<f64>() / n,
        rejected_fraction: rejected as f64 / pred_rows.len().max(1) as f64,
        frames,
    };

    println!("En                = {:.6}", report.en);
    println!("En_angular_deg    = {:.6}", report.en_angular_deg);
    println!("Ed_rmse           = {:.6e}", report.ed_rmse);
    println!("Ed_rel            = {:.6e}", report.ed_rel);
    println!("rejected_fraction = {:.6}", report.rejected_fraction);
    for f in &report.frames {
        println!(
            "image {}: overlap {}, En {:.6}, angle {:.4} deg, scale {:.6}, Ed_rmse {:.6e}, Ed_rel {:.6e}",
            f.image, f.n_overlap, f.en, f.en_angular_deg, f.scale, f.ed_rmse, f.ed_rel
        );
    }
    if let Some(path) = &args.report {
        io::write_json(path, &report).invalid("writing report")?;
    }
    Ok(())
}
