use thiserror::Error;

/// Errors shared across the reconstruction pipeline.
///
/// Per-point failures inside the multi-view loop are not errors; they are
/// modeled as [`crate::multiview::RejectionReason`] so that a partially
/// degenerate scene still produces output.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("image point ({u}, {v}) outside the retina sanity range")]
    InvalidPoint { u: f64, v: f64 },

    #[error("cannot normalize a near-zero vector ({0})")]
    ZeroVector(&'static str),

    #[error("invalid parameter {name} = {value}")]
    InvalidParam { name: &'static str, value: f64 },

    #[error("need at least {need} correspondences, got {got}")]
    TooFewCorrespondences { got: usize, need: usize },

    #[error("mismatched input lengths: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(&'static str),

    #[error("warp normal equations are rank-deficient; fit with lambda_reg > 0")]
    RankDeficientFit,

    #[error("query ({u}, {v}) outside the warp domain")]
    OutOfDomain { u: f64, v: f64 },

    #[error("finite-difference step h = {h} produced no usable variation")]
    FdStep { h: f64 },

    #[error("warp Jacobian is singular at the query point")]
    SingularJacobian,

    #[error("homography matrix is singular or nearly singular")]
    SingularHomography,

    #[error("local plane passes through the optical center at the anchor point")]
    PlaneThroughCenter,

    #[error("shape matrix is indistinguishable from zero (rigidity-degenerate pair)")]
    DegenerateSMatrix,

    #[error("no real normal solution: discriminant {discriminant:.3e} below tolerance")]
    NoRealSolution { discriminant: f64 },

    #[error("no candidate normal passes the visibility test")]
    PointRejected,

    #[error("duplicate observation of point {point} in image {image}")]
    DuplicateObservation { image: u32, point: u32 },

    #[error("need at least two images, got {got}")]
    TooFewImages { got: usize },

    #[error("no warp available from image {from} to image {to}")]
    MissingWarp { from: u32, to: u32 },

    #[error("need at least {need} points, got {got}")]
    TooFewPoints { got: usize, need: usize },

    #[error("no reconstructed normals to integrate")]
    NoReconstructedPoints,

    #[error("point {point} of frame {frame} projects behind the camera")]
    BehindCamera { frame: usize, point: usize },

    #[error("prediction and ground truth share no reconstructed points")]
    EmptyOverlap,

    #[error("least-squares depth scale is not positive")]
    NonPositiveScale,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
