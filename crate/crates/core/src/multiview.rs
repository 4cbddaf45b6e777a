//! Pairwise normal estimation across all image pairs and median fusion.
//!
//! For a reference image k and another image i, the warp i→k is
//! differentiated at each shared point; the decomposed local homography
//! yields a normal on the warp destination k, and its transfer lives on
//! image i. Running every image as reference gives each (image, point)
//! cell 2·(M−1) contributing estimates, fused by a component-wise median.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::homography::{homography_from_jet, is_degenerate, DegeneracyGate};
use crate::solver::{build_s_matrix, select_normal, solve_normals, transfer_normal};
use crate::types::{ImagePoint, UnitNormal, Vec3};
use crate::warp::{fit_warp_between, CorrespondenceSet, GridSpec, WarpModel, WarpSource};

/// Which images serve as the decomposition reference.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReferencePolicy {
    /// Every image takes the reference role once (the full loop).
    AllImages,
    /// Only the named image; cheaper, fewer estimates per cell.
    Single(u32),
}

/// Why a pair produced no normal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum RejectionReason {
    /// Homography too close to a scaled rotation (or not constructible).
    Degenerate,
    /// Candidate quadratics have negative discriminants.
    NoRealSolution,
    /// No candidate passes the cheirality test.
    NotVisible,
    /// The point is not observed in both images of the pair.
    MissingCorrespondence,
}

impl RejectionReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            RejectionReason::Degenerate => "degenerate",
            RejectionReason::NoRealSolution => "no_real_solution",
            RejectionReason::NotVisible => "not_visible",
            RejectionReason::MissingCorrespondence => "missing",
        }
    }
}

/// One decomposition attempt for (reference, other, point).
#[derive(Clone, Copy, Debug)]
pub struct PairEstimate {
    pub ref_image: u32,
    pub other_image: u32,
    pub point: u32,
    /// Selected normal on the reference image, absent when rejected.
    pub normal_on_ref: Option<UnitNormal>,
    /// Transferred normal on the other image, absent when rejected.
    pub normal_on_other: Option<UnitNormal>,
    /// Singular-value ratio σ1/σ3 when a homography was built.
    pub cond: Option<f64>,
    pub rejection: Option<RejectionReason>,
}

/// Fused state of one (image, point) cell.
#[derive(Clone, Copy, Debug)]
pub struct NormalEntry {
    /// Median normal; absent when no estimate contributed.
    pub normal: Option<UnitNormal>,
    /// Number of contributing (non-rejected) estimates.
    pub support: usize,
    /// Most frequent rejection among estimates touching this cell.
    pub dominant_rejection: Option<RejectionReason>,
}

/// Per-image, per-point aggregated normals.
#[derive(Clone, Debug, Default)]
pub struct NormalField {
    entries: BTreeMap<(u32, u32), NormalEntry>,
}

impl NormalField {
    /// Builds a field from explicit cells, e.g. when reloading persisted output.
    pub fn from_entries(entries: impl IntoIterator<Item = ((u32, u32), NormalEntry)>) -> Self {
        Self {
            entries: entries.into_iter().collect(),
        }
    }

    pub fn get(&self, image: u32, point: u32) -> Option<&NormalEntry> {
        self.entries.get(&(image, point))
    }

    pub fn normal(&self, image: u32, point: u32) -> Option<UnitNormal> {
        self.entries.get(&(image, point)).and_then(|e| e.normal)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, u32, &NormalEntry)> + '_ {
        self.entries.iter().map(|(&(i, j), e)| (i, j, e))
    }

    pub fn images(&self) -> BTreeSet<u32> {
        self.entries.keys().map(|&(i, _)| i).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn reconstructed_count(&self) -> usize {
        self.entries.values().filter(|e| e.normal.is_some()).count()
    }

    /// Fraction of cells without a fused normal.
    pub fn rejected_fraction(&self) -> f64 {
        if self.entries.is_empty() {
            return 0.0;
        }
        1.0 - self.reconstructed_count() as f64 / self.entries.len() as f64
    }
}

/// Warps between ordered image pairs; key (from, to) maps image `from`
/// points to image `to` points.
#[derive(Clone, Debug, Default)]
pub struct WarpSet<W: WarpSource> {
    warps: BTreeMap<(u32, u32), W>,
}

impl<W: WarpSource> WarpSet<W> {
    pub fn new() -> Self {
        Self {
            warps: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, from: u32, to: u32, warp: W) {
        self.warps.insert((from, to), warp);
    }

    pub fn get(&self, from: u32, to: u32) -> Option<&W> {
        self.warps.get(&(from, to))
    }

    pub fn len(&self) -> usize {
        self.warps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.warps.is_empty()
    }
}

/// Ordered (reference, other) pairs the policy requires.
fn policy_pairs(images: &[u32], policy: ReferencePolicy) -> Result<Vec<(u32, u32)>> {
    if images.len() < 2 {
        return Err(Error::TooFewImages { got: images.len() });
    }
    let refs: Vec<u32> = match policy {
        ReferencePolicy::AllImages => images.to_vec(),
        ReferencePolicy::Single(k) => {
            if !images.contains(&k) {
                return Err(Error::InvalidParam {
                    name: "reference image",
                    value: k as f64,
                });
            }
            vec![k]
        }
    };
    let mut pairs = Vec::new();
    for &k in &refs {
        for &i in images {
            if i != k {
                pairs.push((k, i));
            }
        }
    }
    Ok(pairs)
}

/// Fit the spline warps the policy needs (other image → reference), in
/// parallel.
pub fn fit_warps(
    set: &CorrespondenceSet,
    grid: GridSpec,
    lambda_reg: f64,
    policy: ReferencePolicy,
) -> Result<WarpSet<WarpModel>> {
    let images: Vec<u32> = set.images().collect();
    let pairs = policy_pairs(&images, policy)?;
    let fitted: Result<Vec<_>> = pairs
        .par_iter()
        .map(|&(k, i)| fit_warp_between(set, i, k, grid, lambda_reg).map(|w| ((i, k), w)))
        .collect();
    let mut out = WarpSet::new();
    for (key, warp) in fitted? {
        out.warps.insert(key, warp);
    }
    Ok(out)
}

/// Decompose one (reference, other, point) triple. `x_other` is the point's
/// observation on the other image, the source of the warp other→reference.
fn estimate_one<W: WarpSource>(
    warp: &W,
    k: u32,
    i: u32,
    j: u32,
    x_other: ImagePoint,
    gate: &DegeneracyGate,
) -> PairEstimate {
    let rejected = |cond: Option<f64>, why: RejectionReason| PairEstimate {
        ref_image: k,
        other_image: i,
        point: j,
        normal_on_ref: None,
        normal_on_other: None,
        cond,
        rejection: Some(why),
    };

    let jet = match warp.jet(x_other) {
        Ok(jet) => jet,
        Err(_) => return rejected(None, RejectionReason::Degenerate),
    };
    // The warp lands on the reference image, so the solved normal lives
    // there and the transfer carries it back to the other image.
    let h = match homography_from_jet(&jet, jet.eta, x_other) {
        Ok(h) => h,
        Err(_) => return rejected(None, RejectionReason::Degenerate),
    };
    let cond = Some(h.cond());
    if is_degenerate(&h, gate) {
        return rejected(cond, RejectionReason::Degenerate);
    }
    let s = match build_s_matrix(&h) {
        Ok(s) => s,
        Err(_) => return rejected(cond, RejectionReason::Degenerate),
    };
    let mut candidates = match solve_normals(&s) {
        Ok(c) => c,
        Err(Error::NoRealSolution { .. }) => {
            return rejected(cond, RejectionReason::NoRealSolution)
        }
        Err(_) => return rejected(cond, RejectionReason::Degenerate),
    };
    let normal = match select_normal(&mut candidates, jet.eta) {
        Ok(n) => n,
        Err(_) => return rejected(cond, RejectionReason::NotVisible),
    };
    let transferred = match transfer_normal(&normal, &h) {
        Ok(n) => n,
        Err(_) => return rejected(cond, RejectionReason::Degenerate),
    };
    PairEstimate {
        ref_image: k,
        other_image: i,
        point: j,
        normal_on_ref: Some(normal),
        normal_on_other: Some(transferred),
        cond,
        rejection: None,
    }
}

/// Run the full pairwise loop. Estimates come back in deterministic
/// (reference, other, point) order regardless of thread count.
pub fn run_pairwise<W: WarpSource>(
    set: &CorrespondenceSet,
    warps: &WarpSet<W>,
    gate: &DegeneracyGate,
    policy: ReferencePolicy,
) -> Result<Vec<PairEstimate>> {
    let images: Vec<u32> = set.images().collect();
    let pairs = policy_pairs(&images, policy)?;
    let point_ids: Vec<u32> = set.point_ids().collect();

    // Missing warps are a caller error, checked up front so the parallel
    // section cannot fail.
    for &(k, i) in &pairs {
        if warps.get(i, k).is_none() && !set.shared(i, k).is_empty() {
            return Err(Error::MissingWarp { from: i, to: k });
        }
    }

    let per_pair: Vec<Vec<PairEstimate>> = pairs
        .par_iter()
        .map(|&(k, i)| {
            let warp = warps.get(i, k);
            point_ids
                .iter()
                .map(|&j| match (set.get(k, j), set.get(i, j), warp) {
                    (Some(_), Some(x_other), Some(w)) => estimate_one(w, k, i, j, x_other, gate),
                    _ => PairEstimate {
                        ref_image: k,
                        other_image: i,
                        point: j,
                        normal_on_ref: None,
                        normal_on_other: None,
                        cond: None,
                        rejection: Some(RejectionReason::MissingCorrespondence),
                    },
                })
                .collect()
        })
        .collect();
    Ok(per_pair.into_iter().flatten().collect())
}

/// Component-wise median, averaging the two middle values on even counts.
fn median_component(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Fuse pair estimates into one normal per (image, point) cell.
pub fn aggregate(estimates: &[PairEstimate]) -> NormalField {
    let mut contributions: BTreeMap<(u32, u32), Vec<Vec3>> = BTreeMap::new();
    let mut rejections: BTreeMap<(u32, u32), Vec<RejectionReason>> = BTreeMap::new();

    for e in estimates {
        let cells = [(e.ref_image, e.normal_on_ref), (e.other_image, e.normal_on_other)];
        for (image, normal) in cells {
            let key = (image, e.point);
            match normal {
                Some(n) => contributions.entry(key).or_default().push(n.as_vec()),
                None => {
                    if let Some(why) = e.rejection {
                        rejections.entry(key).or_default().push(why);
                    }
                }
            }
        }
    }

    let mut entries = BTreeMap::new();
    let keys: BTreeSet<(u32, u32)> = contributions
        .keys()
        .chain(rejections.keys())
        .copied()
        .collect();
    for key in keys {
        let vecs = contributions.remove(&key).unwrap_or_default();
        let support = vecs.len();
        let normal = if support == 0 {
            None
        } else {
            let mut us: Vec<f64> = vecs.iter().map(|v| v.x).collect();
            let mut vs: Vec<f64> = vecs.iter().map(|v| v.y).collect();
            let mut ws: Vec<f64> = vecs.iter().map(|v| v.z).collect();
            let median = Vec3::new(
                median_component(&mut us),
                median_component(&mut vs),
                median_component(&mut ws),
            );
            // A vanishing median means the contributors cancel; treat the
            // cell as unreconstructed rather than emit a junk direction.
            UnitNormal::new(median).ok()
        };
        let dominant_rejection = rejections.get(&key).map(|reasons| {
            let mut counts: BTreeMap<RejectionReason, usize> = BTreeMap::new();
            for &r in reasons {
                *counts.entry(r).or_insert(0) += 1;
            }
            counts
                .into_iter()
                .max_by_key(|&(_, c)| c)
                .map(|(r, _)| r)
                .expect("nonempty rejection tally")
        });
        entries.insert(
            key,
            NormalEntry {
                normal,
                support,
                dominant_rejection,
            },
        );
    }
    NormalField { entries }
}

/// Pairwise estimation and aggregation in one call.
pub fn estimate_normals<W: WarpSource>(
    set: &CorrespondenceSet,
    warps: &WarpSet<W>,
    gate: &DegeneracyGate,
    policy: ReferencePolicy,
) -> Result<NormalField> {
    Ok(aggregate(&run_pairwise(set, warps, gate, policy)?))
}
