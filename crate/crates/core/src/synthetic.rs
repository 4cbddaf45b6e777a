//! Ground-truth scene generation for validation.
//!
//! Surfaces are embeddings of a flat template (a, b) ∈ [−0.4, 0.4]²,
//! deformed per frame and placed by a rigid pose. The cylinder roll is the
//! canonical isometric deformation: it is developable with analytic normals
//! and exactly preserves template arc length. Conformal deformation scales
//! the embedding uniformly per frame. The stretched sheet scales one axis
//! only, which is neither isometric nor conformal.
//!
//! Everything downstream tests against this module: exact per-point
//! tangent-plane homographies, analytic normals, and noiseless projections,
//! with pixel noise applied to observations only.

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ImagePoint, Intrinsics, Mat3, UnitNormal, Vec3};
use crate::warp::CorrespondenceSet;

/// Template half-extent: points sample (a, b) ∈ [−HALF, HALF]².
pub const TEMPLATE_HALF_EXTENT: f64 = 0.4;

/// Surface family, with its per-frame shape schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SurfaceKind {
    /// Rigid flat sheet; deformation comes from poses or conformal scale.
    Plane,
    /// Developable roll of the template with one radius per frame.
    Cylinder { radii: Vec<f64> },
    /// One-axis stretch with one factor per frame. Not length-preserving.
    StretchedSheet { stretches: Vec<f64> },
}

/// Per-frame deformation regime applied on top of the surface family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Deformation {
    Isometric,
    /// Uniform scale per frame; tangent lengths multiply by exactly λ_f.
    Conformal { lambdas: Vec<f64> },
    /// No constraint; required by (and only valid with) the stretched sheet.
    Generic,
}

/// Rigid placement of one frame: X_cam = rotation · X_surface + translation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidPose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl RigidPose {
    pub fn identity_at(depth: f64) -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::new(0.0, 0.0, depth),
        }
    }
}

/// Pinhole camera description.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub focal_px: f64,
    pub image_size: (u32, u32),
}

impl Default for CameraSpec {
    fn default() -> Self {
        Self {
            focal_px: 500.0,
            image_size: (640, 480),
        }
    }
}

impl CameraSpec {
    pub fn intrinsics(&self) -> Result<Intrinsics> {
        Intrinsics::new(
            self.focal_px,
            self.focal_px,
            self.image_size.0 as f64 / 2.0,
            self.image_size.1 as f64 / 2.0,
        )
    }
}

/// Full description of a synthetic scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub surface: SurfaceKind,
    pub deformation: Deformation,
    pub n_points: usize,
    pub n_frames: usize,
    pub camera: CameraSpec,
    pub poses: Vec<RigidPose>,
    pub noise_sigma_px: f64,
    pub rng_seed: u64,
}

/// One surface point in one frame, in camera coordinates.
#[derive(Clone, Copy, Debug)]
pub struct FramePoint {
    pub position: Vec3,
    /// Unit normal oriented toward positive n·(u, v, 1).
    pub normal: UnitNormal,
    /// Noiseless retina projection.
    pub retina: ImagePoint,
    /// Noiseless pixel projection.
    pub pixel: ImagePoint,
    /// Embedding tangents ∂X/∂a and ∂X/∂b, camera frame.
    pub tangent_a: Vec3,
    pub tangent_b: Vec3,
}

/// Generated scene: exact geometry plus noisy observations.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    intrinsics: Intrinsics,
    /// Template parameters per point.
    template: Vec<(f64, f64)>,
    /// frames[f][j] is point j in frame f.
    frames: Vec<Vec<FramePoint>>,
    /// Noisy pixel observations, same indexing.
    observed: Vec<Vec<ImagePoint>>,
}

impl GroundTruth {
    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn n_points(&self) -> usize {
        self.template.len()
    }

    pub fn intrinsics(&self) -> &Intrinsics {
        &self.intrinsics
    }

    pub fn template_point(&self, point: usize) -> (f64, f64) {
        self.template[point]
    }

    pub fn frame_point(&self, frame: usize, point: usize) -> &FramePoint {
        &self.frames[frame][point]
    }

    pub fn observed_pixel(&self, frame: usize, point: usize) -> ImagePoint {
        self.observed[frame][point]
    }

    pub fn observed_retina(&self, frame: usize, point: usize) -> ImagePoint {
        let p = self.observed[frame][point];
        // Observations are finite by construction.
        self.intrinsics
            .to_retina(p.u, p.v)
            .expect("finite observation")
    }

    /// Noisy retina correspondences across all frames, keyed by frame index
    /// and point index.
    pub fn correspondences(&self) -> Result<CorrespondenceSet> {
        let mut set = CorrespondenceSet::new();
        for f in 0..self.n_frames() {
            for j in 0..self.n_points() {
                set.insert(f as u32, j as u32, self.observed_retina(f, j))?;
            }
        }
        Ok(set)
    }
}

/// Per-frame embedding scale from the deformation regime.
fn frame_scale(deformation: &Deformation, frame: usize) -> f64 {
    match deformation {
        Deformation::Isometric | Deformation::Generic => 1.0,
        Deformation::Conformal { lambdas } => lambdas[frame],
    }
}

/// Template embedding and its tangents for one frame, surface coordinates.
fn embed(surface: &SurfaceKind, frame: usize, a: f64, b: f64) -> (Vec3, Vec3, Vec3) {
    match surface {
        SurfaceKind::Plane => (
            Vec3::new(a, b, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
        ),
        SurfaceKind::Cylinder { radii } => {
            let r = radii[frame];
            let phi = a / r;
            (
                Vec3::new(r * phi.sin(), b, r * (1.0 - phi.cos())),
                Vec3::new(phi.cos(), 0.0, phi.sin()),
                Vec3::new(0.0, 1.0, 0.0),
            )
        }
        SurfaceKind::StretchedSheet { stretches } => {
            let s = stretches[frame];
            (
                Vec3::new(s * a, b, 0.0),
                Vec3::new(s, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
            )
        }
    }
}

fn validate(spec: &SceneSpec) -> Result<()> {
    if spec.n_points < 4 {
        return Err(Error::TooFewPoints {
            got: spec.n_points,
            need: 4,
        });
    }
    if spec.n_frames < 1 {
        return Err(Error::InvalidParam {
            name: "n_frames",
            value: spec.n_frames as f64,
        });
    }
    if spec.poses.len() != spec.n_frames {
        return Err(Error::LengthMismatch {
            left: spec.poses.len(),
            right: spec.n_frames,
        });
    }
    if !(spec.camera.focal_px.is_finite() && spec.camera.focal_px > 0.0) {
        return Err(Error::InvalidParam {
            name: "focal_px",
            value: spec.camera.focal_px,
        });
    }
    if !(spec.noise_sigma_px.is_finite() && spec.noise_sigma_px >= 0.0) {
        return Err(Error::InvalidParam {
            name: "noise_sigma_px",
            value: spec.noise_sigma_px,
        });
    }
    match &spec.surface {
        SurfaceKind::Plane => {}
        SurfaceKind::Cylinder { radii } => {
            if radii.len() != spec.n_frames {
                return Err(Error::LengthMismatch {
                    left: radii.len(),
                    right: spec.n_frames,
                });
            }
            if let Some(&r) = radii.iter().find(|r| !(r.is_finite() && **r > 0.1)) {
                return Err(Error::InvalidParam {
                    name: "cylinder radius",
                    value: r,
                });
            }
        }
        SurfaceKind::StretchedSheet { stretches } => {
            if stretches.len() != spec.n_frames {
                return Err(Error::LengthMismatch {
                    left: stretches.len(),
                    right: spec.n_frames,
                });
            }
            if let Some(&s) = stretches.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
                return Err(Error::InvalidParam {
                    name: "stretch factor",
                    value: s,
                });
            }
        }
    }
    match (&spec.surface, &spec.deformation) {
        (SurfaceKind::StretchedSheet { .. }, Deformation::Generic) => {}
        (SurfaceKind::StretchedSheet { .. }, _) => {
            return Err(Error::DegenerateGeometry(
                "stretched sheet is neither isometric nor conformal",
            ));
        }
        (_, Deformation::Generic) => {
            return Err(Error::DegenerateGeometry(
                "generic deformation is only meaningful with the stretched sheet",
            ));
        }
        (_, Deformation::Conformal { lambdas }) => {
            if lambdas.len() != spec.n_frames {
                return Err(Error::LengthMismatch {
                    left: lambdas.len(),
                    right: spec.n_frames,
                });
            }
            if let Some(&l) = lambdas.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
                return Err(Error::InvalidParam {
                    name: "lambda",
                    value: l,
                });
            }
        }
        (_, Deformation::Isometric) => {}
    }
    Ok(())
}

/// Generate the scene. Identical specs (including seed) produce bit-identical
/// output: template samples are drawn first, then observation noise in
/// frame-major, point-major, coordinate order.
pub fn generate(spec: &SceneSpec) -> Result<GroundTruth> {
    validate(spec)?;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.rng_seed);
    let half = TEMPLATE_HALF_EXTENT;
    let template: Vec<(f64, f64)> = (0..spec.n_points)
        .map(|_| (rng.gen_range(-half..half), rng.gen_range(-half..half)))
        .collect();

    let intrinsics = spec.camera.intrinsics()?;
    let mut frames = Vec::with_capacity(spec.n_frames);
    for (f, pose) in spec.poses.iter().enumerate() {
        let scale = frame_scale(&spec.deformation, f);
        let mut pts = Vec::with_capacity(spec.n_points);
        for (j, &(a, b)) in template.iter().enumerate() {
            let (x, ta, tb) = embed(&spec.surface, f, a, b);
            let position = pose.rotation * (x * scale) + pose.translation;
            if position.z <= 1e-6 {
                return Err(Error::BehindCamera { frame: f, point: j });
            }
            let tangent_a = pose.rotation * (ta * scale);
            let tangent_b = pose.rotation * (tb * scale);
            let raw = tangent_a.cross(&tangent_b);
            if raw.norm() <= 1e-12 {
                return Err(Error::DegenerateGeometry("degenerate surface tangents"));
            }
            // Orient toward positive n·(u, v, 1), the solver's convention.
            let oriented = if raw.dot(&position) >= 0.0 { raw } else { -raw };
            let retina = ImagePoint::new(position.x / position.z, position.y / position.z);
            let (px, py) = intrinsics.to_pixel(retina);
            pts.push(FramePoint {
                position,
                normal: UnitNormal::new(oriented)?,
                retina,
                pixel: ImagePoint::new(px, py),
                tangent_a,
                tangent_b,
            });
        }
        frames.push(pts);
    }

    let mut observed = Vec::with_capacity(spec.n_frames);
    if spec.noise_sigma_px > 0.0 {
        let noise = Normal::new(0.0, spec.noise_sigma_px)
            .map_err(|_| Error::InvalidParam {
                name: "noise_sigma_px",
                value: spec.noise_sigma_px,
            })?;
        for frame in &frames {
            observed.push(
                frame
                    .iter()
                    .map(|p| {
                        ImagePoint::new(
                            p.pixel.u + noise.sample(&mut rng),
                            p.pixel.v + noise.sample(&mut rng),
                        )
                    })
                    .collect(),
            );
        }
    } else {
        for frame in &frames {
            observed.push(frame.iter().map(|p| p.pixel).collect());
        }
    }

    Ok(GroundTruth {
        intrinsics,
        template,
        frames,
        observed,
    })
}

/// Exact tangent-plane homography sending retina points of `frame_from` to
/// retina points of `frame_at` around `point`. Decomposing it recovers the
/// `frame_at` normal.
///
/// Both tangent planes are parametrized by the shared template chart, so
/// x_f ∝ [tangent_a, tangent_b, position]_f · (α, β, 1)ᵀ and the homography
/// is the change of chart between the two frames.
pub fn planted_pair_homography(
    gt: &GroundTruth,
    frame_at: usize,
    frame_from: usize,
    point: usize,
) -> Result<Mat3> {
    let chart = |frame: usize| -> Result<Mat3> {
        let p = gt.frame_point(frame, point);
        if p.tangent_a.cross(&p.tangent_b).norm() <= 1e-12 {
            return Err(Error::DegenerateGeometry("degenerate surface tangents"));
        }
        Ok(Matrix3::from_columns(&[
            p.tangent_a,
            p.tangent_b,
            p.position,
        ]))
    };
    let at = chart(frame_at)?;
    let from = chart(frame_from)?;
    let from_inv = from.try_inverse().ok_or(Error::PlaneThroughCenter)?;
    let h = at * from_inv;
    if h.determinant().abs() <= 1e-14 * h.norm().powi(3) {
        return Err(Error::PlaneThroughCenter);
    }
    Ok(h)
}

/// Motion with both rotation and baseline, surface held around depth 1.6.
pub fn default_motion(n_frames: usize) -> Vec<RigidPose> {
    (0..n_frames)
        .map(|f| {
            let t = f as f64;
            let rot = nalgebra::Rotation3::from_euler_angles(
                0.035 * t,
                -0.05 * t,
                0.02 * t,
            )
            .into_inner();
            RigidPose {
                rotation: rot,
                translation: Vec3::new(0.12 * t, -0.08 * t, 1.6 + 0.15 * t),
            }
        })
        .collect()
}

/// Camera rotating about its own center: every pairwise homography is a
/// rotation, so the whole scene is degenerate for the decomposition.
pub fn rotation_only_motion(n_frames: usize) -> Vec<RigidPose> {
    let anchor = Vec3::new(0.0, 0.0, 1.6);
    (0..n_frames)
        .map(|f| {
            let t = f as f64;
            let rot = nalgebra::Rotation3::from_euler_angles(0.04 * t, -0.06 * t, 0.0)
                .into_inner();
            RigidPose {
                rotation: rot,
                translation: rot * anchor,
            }
        })
        .collect()
}

/// All frames identical: static rigid scene.
pub fn static_motion(n_frames: usize) -> Vec<RigidPose> {
    vec![RigidPose::identity_at(1.6); n_frames]
}
