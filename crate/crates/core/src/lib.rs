//! Surface normals and 3D shape for deforming surfaces, from two or more
//! calibrated images with point correspondences.
//!
//! The pipeline decomposes, per correspondence, a local plane-induced
//! homography extracted from the first- and second-order derivatives of an
//! image-to-image warp. Each decomposition yields two closed-form normal
//! candidates; a visibility test and a smoothness criterion pick one, and
//! per-point estimates from all image pairs are fused by a component-wise
//! median. Normals are then integrated into a depth map over the
//! correspondence graph.
//!
//! Stages, in dependency order:
//!
//! 1. [`warp`]: B-spline warp fitting and differentiation (value, Jacobian,
//!    second derivatives) between image pairs.
//! 2. [`homography`]: closed-form local homography from a warp jet, with a
//!    degeneracy gate on its singular-value spread.
//! 3. [`solver`]: the shape matrix `S`, its two closed-form normal
//!    candidates, visibility, selection, and transfer to the second image.
//! 4. [`multiview`]: pairwise estimation over all image pairs and median
//!    aggregation into per-image normal fields.
//! 5. [`surface`]: integration of the normal field into inverse depth over
//!    the correspondence graph.
//! 6. [`synthetic`] and [`metrics`]: ground-truth scene generation and
//!    error reporting used for validation.

pub mod error;
pub mod homography;
pub mod metrics;
pub mod multiview;
pub mod solver;
pub mod surface;
pub mod synthetic;
pub mod types;
pub mod warp;

pub use error::{Error, Result};
pub use homography::{
    homography_from_jet, is_degenerate, DegeneracyGate, LocalHomography, DEFAULT_TAU,
};
pub use metrics::{
    aligned_depth_errors, depth_error, evaluate, normal_agreement, normal_error, EvalReport,
    FrameEval,
};
pub use multiview::{
    aggregate, estimate_normals, fit_warps, run_pairwise, NormalEntry, NormalField, PairEstimate,
    ReferencePolicy, RejectionReason, WarpSet,
};
pub use solver::{
    build_s_matrix, check_visibility, select_normal, solve_normals, transfer_normal,
    NormalCandidates, SMatrix,
};
pub use surface::{
    bend_surface, build_graph, CorrespondenceGraph, GraphEdge, ReconstructedSurface, SurfacePoint,
};
pub use synthetic::{
    default_motion, generate, planted_pair_homography, rotation_only_motion, static_motion,
    CameraSpec, Deformation, FramePoint, GroundTruth, RigidPose, SceneSpec, SurfaceKind,
};
pub use types::{
    cross_matrix, gradient_from_normal, normal_from_gradient, svd3, DepthJet, ImagePoint,
    Intrinsics, Mat2, Mat3, Mat32, MetricTensor2, Svd3, UnitNormal, Vec2, Vec3,
};
pub use warp::{
    eval_jet, eval_jet_fd, fit_warp, fit_warp_between, homography_jet, Correspondence,
    CorrespondenceSet, GridSpec, HomographyWarp, ResidualStats, WarpJet, WarpModel, WarpSource,
    DEFAULT_LAMBDA_REG,
};
