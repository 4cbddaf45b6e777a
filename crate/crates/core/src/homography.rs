//! Local plane-induced homography from a warp jet.
//!
//! Around a correspondence (x̄ in the source image, x in the destination),
//! a smooth warp agrees to second order with the homography induced by the
//! surface tangent plane. That homography is assembled in closed form from
//! the warp jet:
//!
//! ```text
//! Hᵀ = [[I₂, 0], [−x̄ᵀ, 1]] · [[J_ηᵀ, m], [0, 1]] · [[I₂, 0], [xᵀ, 1]]
//! m  = −[[0, 1], [1, 0]] · J_η⁻¹ · ∂²η/∂ū∂v̄
//! ```
//!
//! The assembled matrix is scaled so its second singular value is 1 and
//! signed so that s̄ = h31 ū + h32 v̄ + h33 is positive at the evaluation
//! point (positive s̄ keeps transferred depths positive). The singular-value
//! spread σ1/σ3 measures how far the homography is from a rotation, which
//! is the degenerate case where the decomposition carries no shape
//! information.

use crate::error::{Error, Result};
use crate::types::{svd3, ImagePoint, Mat2, Mat3, Vec2};
use crate::warp::WarpJet;

/// Default degeneracy threshold on σ1/σ3.
pub const DEFAULT_TAU: f64 = 1.05;

/// Rejection gate on the conditioning of a local homography.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DegeneracyGate {
    tau: f64,
    cond_max: Option<f64>,
}

impl DegeneracyGate {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau.is_finite() && tau >= 1.0) {
            return Err(Error::InvalidParam {
                name: "tau",
                value: tau,
            });
        }
        Ok(Self {
            tau,
            cond_max: None,
        })
    }

    /// Gate that also rejects overly ill-conditioned homographies. Disabled
    /// by default; kept configurable for noisy data.
    pub fn with_upper_bound(tau: f64, cond_max: f64) -> Result<Self> {
        let mut gate = Self::new(tau)?;
        if !(cond_max.is_finite() && cond_max > tau) {
            return Err(Error::InvalidParam {
                name: "cond_max",
                value: cond_max,
            });
        }
        gate.cond_max = Some(cond_max);
        Ok(gate)
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn cond_max(&self) -> Option<f64> {
        self.cond_max
    }
}

impl Default for DegeneracyGate {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            cond_max: None,
        }
    }
}

/// A normalized local homography with its conditioning data.
#[derive(Clone, Copy, Debug)]
pub struct LocalHomography {
    h: Mat3,
    sigma: [f64; 3],
    cond: f64,
    m: Vec2,
    s_bar_at_point: f64,
}

impl LocalHomography {
    /// Normalize an explicit homography matrix: divide by the second
    /// singular value, then flip sign if s̄ at `x_bar` is negative.
    pub fn from_matrix(h: Mat3, x_bar: ImagePoint) -> Result<Self> {
        if h.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("homography"));
        }
        let scale = h.norm();
        if h.determinant().abs() <= 1e-14 * scale.powi(3) {
            return Err(Error::SingularHomography);
        }
        let svd = svd3(&h)?;
        let s2 = svd.sigma[1];
        if !(s2 > 0.0) {
            return Err(Error::SingularHomography);
        }
        let mut hn = h / s2;
        let mut s_bar = hn[(2, 0)] * x_bar.u + hn[(2, 1)] * x_bar.v + hn[(2, 2)];
        if s_bar.abs() <= 1e-9 * hn.norm() {
            return Err(Error::DegenerateGeometry(
                "correspondence lies on the homography horizon",
            ));
        }
        if s_bar < 0.0 {
            hn = -hn;
            s_bar = -s_bar;
        }
        let sigma = [svd.sigma[0] / s2, 1.0, svd.sigma[2] / s2];
        Ok(Self {
            h: hn,
            sigma,
            cond: sigma[0] / sigma[2],
            m: Vec2::new(hn[(2, 0)], hn[(2, 1)]) / s_bar,
            s_bar_at_point: s_bar,
        })
    }

    /// Normalized matrix (σ2 = 1, s̄ > 0 at the evaluation point).
    pub fn h(&self) -> &Mat3 {
        &self.h
    }

    /// Singular values of the normalized matrix, descending.
    pub fn sigma(&self) -> [f64; 3] {
        self.sigma
    }

    /// Conditioning ratio σ1/σ3. Always ≥ 1.
    pub fn cond(&self) -> f64 {
        self.cond
    }

    /// The curvature-lift vector (1/s̄)(h31, h32).
    pub fn m(&self) -> Vec2 {
        self.m
    }

    /// s̄ evaluated at the correspondence. Positive by construction.
    pub fn s_bar_at_point(&self) -> f64 {
        self.s_bar_at_point
    }
}

/// Assemble the local homography mapping x̄ to x from the warp jet at x̄.
pub fn homography_from_jet(
    jet: &WarpJet,
    x: ImagePoint,
    x_bar: ImagePoint,
) -> Result<LocalHomography> {
    if !jet.is_finite() {
        return Err(Error::NonFinite("warp jet"));
    }
    let j = jet.j;
    if j.determinant().abs() <= 1e-14 * j.norm_squared().max(f64::MIN_POSITIVE) {
        return Err(Error::SingularJacobian);
    }
    let j_inv = j
        .try_inverse()
        .ok_or(Error::SingularJacobian)?;
    let swap = Mat2::new(0.0, 1.0, 1.0, 0.0);
    let m = -(swap * j_inv * jet.d2_uv);

    let lift_xbar = Mat3::new(
        1.0, 0.0, 0.0, //
        0.0, 1.0, 0.0, //
        -x_bar.u, -x_bar.v, 1.0,
    );
    let middle = Mat3::new(
        j[(0, 0)], j[(1, 0)], m.x, //
        j[(0, 1)], j[(1, 1)], m.y, //
        0.0, 0.0, 1.0,
    );
    let lift_x = Mat3::new(
        1.0, 0.0, 0.0, //
        0.0, 1.0, 0.0, //
        x.u, x.v, 1.0,
    );
    let h = (lift_xbar * middle * lift_x).transpose();
    LocalHomography::from_matrix(h, x_bar)
}

/// True iff the homography carries too little shape information to solve.
pub fn is_degenerate(h: &LocalHomography, gate: &DegeneracyGate) -> bool {
    if h.cond <= gate.tau {
        return true;
    }
    matches!(gate.cond_max, Some(upper) if h.cond > upper)
}
