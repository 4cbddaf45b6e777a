//! Evaluation metrics and the monocular scale alignment they depend on.
//!
//! Normal agreement is the mean absolute dot product between predicted and
//! ground-truth normals over the overlapping reconstructed points, reported
//! together with its mean angular form. Depth error aligns each frame's
//! points to ground truth by one optimal positive scale (the only gauge
//! freedom of a calibrated monocular reconstruction) and reports both an
//! RMSE and the relative Frobenius error, each averaged over frames.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::multiview::NormalField;
use crate::surface::ReconstructedSurface;
use crate::synthetic::GroundTruth;
use crate::types::Vec3;

/// Evaluation of one image against ground truth.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FrameEval {
    pub image: u32,
    /// Points shared by the prediction and the ground truth.
    pub n_overlap: usize,
    /// Mean |n_pred . n_gt| over this image's reconstructed points.
    pub en: f64,
    pub en_angular_deg: f64,
    /// Optimal positive scale applied to predicted points before comparing.
    pub scale: f64,
    pub ed_rmse: f64,
    pub ed_rel: f64,
}

/// Full evaluation report.
///
/// `en` uses the absolute dot product, so it is blind to any global sign
/// convention of the predicted field; both depth errors are computed after
/// per-frame scale alignment and averaged over frames.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub en: f64,
    pub en_angular_deg: f64,
    pub ed_rmse: f64,
    pub ed_rel: f64,
    /// Fraction of field cells that ended without a normal.
    pub rejected_fraction: f64,
    pub frames: Vec<FrameEval>,
}

/// Accumulates |dot| and angle over an iterator of (pred, gt) normal pairs.
struct NormalAgreement {
    sum_dot: f64,
    sum_angle_deg: f64,
    n: usize,
}

impl NormalAgreement {
    fn new() -> Self {
        Self {
            sum_dot: 0.0,
            sum_angle_deg: 0.0,
            n: 0,
        }
    }

    fn push(&mut self, pred: Vec3, gt: Vec3) {
        let dot = pred.dot(&gt).abs().clamp(0.0, 1.0);
        self.sum_dot += dot;
        self.sum_angle_deg += dot.acos().to_degrees();
        self.n += 1;
    }

    fn finish(&self) -> Result<(f64, f64)> {
        if self.n == 0 {
            return Err(Error::EmptyOverlap);
        }
        let n = self.n as f64;
        Ok((self.sum_dot / n, self.sum_angle_deg / n))
    }
}

/// Mean normal agreement (En, En_angular_deg) over every reconstructed cell
/// of the field that overlaps the ground truth.
pub fn normal_error(pred: &NormalField, gt: &GroundTruth) -> Result<(f64, f64)> {
    let mut agg = NormalAgreement::new();
    accumulate_normals(pred, gt, None, &mut agg);
    agg.finish()
}

/// Mean normal agreement (En, En_angular_deg) over explicit (pred, gt) unit
/// normal pairs, for callers that load both sides from files.
pub fn normal_agreement(pairs: impl IntoIterator<Item = (Vec3, Vec3)>) -> Result<(f64, f64)> {
    let mut agg = NormalAgreement::new();
    for (pred, gt) in pairs {
        agg.push(pred, gt);
    }
    agg.finish()
}

fn accumulate_normals(
    pred: &NormalField,
    gt: &GroundTruth,
    only_image: Option<u32>,
    agg: &mut NormalAgreement,
) {
    for (image, point, entry) in pred.iter() {
        if only_image.is_some_and(|want| want != image) {
            continue;
        }
        let (Some(normal), true) = (
            entry.normal,
            (image as usize) < gt.n_frames() && (point as usize) < gt.n_points(),
        ) else {
            continue;
        };
        let truth = gt.frame_point(image as usize, point as usize).normal;
        agg.push(normal.as_vec(), truth.as_vec());
    }
}

/// Least-squares scale aligning predicted points to ground truth,
/// c = sum <pred, gt> / sum |pred|^2. The monocular gauge is positive, so a
/// non-positive optimum means the prediction does not face the ground truth.
fn optimal_scale(pairs: &[(Vec3, Vec3)]) -> Result<f64> {
    let num: f64 = pairs.iter().map(|(p, g)| p.dot(g)).sum();
    let den: f64 = pairs.iter().map(|(p, _)| p.norm_squared()).sum();
    if !(num > 0.0 && den > 0.0) {
        return Err(Error::NonPositiveScale);
    }
    Ok(num / den)
}

fn frame_pairs(pred: &ReconstructedSurface, gt: &GroundTruth) -> Result<Vec<(Vec3, Vec3)>> {
    let image = pred.image() as usize;
    if image >= gt.n_frames() {
        return Err(Error::EmptyOverlap);
    }
    let pairs: Vec<(Vec3, Vec3)> = pred
        .iter()
        .filter(|&(id, _)| (id as usize) < gt.n_points())
        .map(|(id, p)| (p.position, gt.frame_point(image, id as usize).position))
        .collect();
    if pairs.is_empty() {
        return Err(Error::EmptyOverlap);
    }
    Ok(pairs)
}

/// Depth error of one bent surface: (Ed_rmse, Ed_rel) after scale alignment.
pub fn depth_error(pred: &ReconstructedSurface, gt: &GroundTruth) -> Result<(f64, f64)> {
    let pairs = frame_pairs(pred, gt)?;
    let (_, rmse, rel) = aligned_depth_errors(&pairs)?;
    Ok((rmse, rel))
}

/// Depth errors of one frame over explicit (pred, gt) position pairs:
/// (scale, Ed_rmse, Ed_rel) after scale alignment.
pub fn aligned_depth_errors(pairs: &[(Vec3, Vec3)]) -> Result<(f64, f64, f64)> {
    if pairs.is_empty() {
        return Err(Error::EmptyOverlap);
    }
    let c = optimal_scale(pairs)?;
    let sq_diff: f64 = pairs.iter().map(|(p, g)| (c * p - g).norm_squared()).sum();
    let sq_gt: f64 = pairs.iter().map(|(_, g)| g.norm_squared()).sum();
    let rmse = (sq_diff / pairs.len() as f64).sqrt();
    let rel = (sq_diff / sq_gt).sqrt();
    Ok((c, rmse, rel))
}

/// Evaluates a normal field plus its bent surfaces against ground truth.
///
/// Normal agreement pools every overlapping cell of the field; depth errors
/// are per-frame and averaged over the provided surfaces. Every surface must
/// overlap the ground truth.
pub fn evaluate(
    field: &NormalField,
    surfaces: &[ReconstructedSurface],
    gt: &GroundTruth,
) -> Result<EvalReport> {
    let (en, en_angular_deg) = normal_error(field, gt)?;
    let mut frames = Vec::with_capacity(surfaces.len());
    for surface in surfaces {
        let pairs = frame_pairs(surface, gt)?;
        let (scale, ed_rmse, ed_rel) = aligned_depth_errors(&pairs)?;
        let mut agg = NormalAgreement::new();
        accumulate_normals(field, gt, Some(surface.image()), &mut agg);
        let (frame_en, frame_angle) = agg.finish()?;
        frames.push(FrameEval {
            image: surface.image(),
            n_overlap: pairs.len(),
            en: frame_en,
            en_angular_deg: frame_angle,
            scale,
            ed_rmse,
            ed_rel,
        });
    }
    let n = frames.len().max(1) as f64;
    let ed_rmse = frames.iter().map(|f| f.ed_rmse).sum::<f64>() / n;
    let ed_rel = frames.iter().map(|f| f.ed_rel).sum::<f64>() / n;
    Ok(EvalReport {
        en,
        en_angular_deg,
        ed_rmse,
        ed_rel,
        rejected_fraction: field.rejected_fraction(),
        frames,
    })
}
