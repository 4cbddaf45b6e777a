//! Scalar-level geometry types shared by the whole pipeline.
//!
//! All image coordinates are retina-normalized: pixel coordinates are mapped
//! through the camera intrinsics at the I/O boundary and never appear inside
//! the math. Everything is `f64`.

use nalgebra::{Matrix2, Matrix3, Matrix3x2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Mat2 = Matrix2<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Mat32 = Matrix3x2<f64>;
pub type Vec2 = Vector2<f64>;
pub type Vec3 = Vector3<f64>;

/// Retina-normalized coordinates beyond this magnitude indicate that pixel
/// coordinates were fed in without applying the intrinsics.
pub const RETINA_SANITY_BOUND: f64 = 10.0;

/// A point in retina-normalized image coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImagePoint {
    pub u: f64,
    pub v: f64,
}

impl ImagePoint {
    #[inline]
    pub fn new(u: f64, v: f64) -> Self {
        debug_assert!(u.is_finite() && v.is_finite(), "non-finite image point");
        Self { u, v }
    }

    /// Validating constructor for the I/O boundary.
    pub fn try_new(u: f64, v: f64) -> Result<Self> {
        if !(u.is_finite() && v.is_finite()) {
            return Err(Error::NonFinite("image point"));
        }
        if u.abs() >= RETINA_SANITY_BOUND || v.abs() >= RETINA_SANITY_BOUND {
            return Err(Error::InvalidPoint { u, v });
        }
        Ok(Self { u, v })
    }

    /// Homogeneous viewing ray (u, v, 1).
    #[inline]
    pub fn ray(&self) -> Vec3 {
        Vec3::new(self.u, self.v, 1.0)
    }
}

/// A unit-length surface normal. Construction normalizes, so the unit-norm
/// invariant holds to 1e-12 by definition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnitNormal(Vec3);

impl UnitNormal {
    pub fn new(v: Vec3) -> Result<Self> {
        if !(v.x.is_finite() && v.y.is_finite() && v.z.is_finite()) {
            return Err(Error::NonFinite("normal"));
        }
        let n = v.norm();
        if n < 1e-300 {
            return Err(Error::ZeroVector("normal"));
        }
        Ok(Self(v / n))
    }

    pub fn from_components(x: f64, y: f64, z: f64) -> Result<Self> {
        Self::new(Vec3::new(x, y, z))
    }

    #[inline]
    pub fn as_vec(&self) -> Vec3 {
        self.0
    }

    #[inline]
    pub fn dot(&self, other: &UnitNormal) -> f64 {
        self.0.dot(&other.0)
    }

    /// Angle in radians, ignoring orientation.
    pub fn angle_to(&self, other: &UnitNormal) -> f64 {
        // atan2 form stays accurate near 0 and π/2, where acos of a
        // rounded dot product bottoms out around 1e-8.
        let cross = self.as_vec().cross(&other.as_vec()).norm();
        cross.atan2(self.dot(other).abs())
    }
}

/// First-order depth data at one image point: inverse depth `beta` and the
/// logarithmic gradient `k = grad(beta) / beta`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DepthJet {
    pub beta: f64,
    pub k1: f64,
    pub k2: f64,
}

impl DepthJet {
    pub fn new(beta: f64, k1: f64, k2: f64) -> Result<Self> {
        if !(beta.is_finite() && k1.is_finite() && k2.is_finite()) {
            return Err(Error::NonFinite("depth jet"));
        }
        if beta <= 0.0 {
            return Err(Error::InvalidParam {
                name: "beta",
                value: beta,
            });
        }
        Ok(Self { beta, k1, k2 })
    }
}

/// The 2x2 first fundamental form g = J^T J of the surface embedding,
/// stored by its upper triangle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricTensor2 {
    pub g11: f64,
    pub g12: f64,
    pub g22: f64,
}

impl MetricTensor2 {
    pub fn new(g11: f64, g12: f64, g22: f64) -> Result<Self> {
        if !(g11.is_finite() && g12.is_finite() && g22.is_finite()) {
            return Err(Error::NonFinite("metric tensor"));
        }
        let scale = g11.abs().max(g22.abs()).max(1.0);
        if g11 < -1e-12 * scale || g11 * g22 - g12 * g12 < -1e-12 * scale * scale {
            return Err(Error::DegenerateGeometry("metric tensor is not PSD"));
        }
        Ok(Self { g11, g12, g22 })
    }

    /// Metric induced by a 3x2 embedding Jacobian.
    pub fn from_jacobian(j: &Mat32) -> Self {
        let c1 = j.column(0);
        let c2 = j.column(1);
        Self {
            g11: c1.dot(&c1),
            g12: c1.dot(&c2),
            g22: c2.dot(&c2),
        }
    }

    #[inline]
    pub fn det(&self) -> f64 {
        self.g11 * self.g22 - self.g12 * self.g12
    }

    #[inline]
    pub fn to_mat(&self) -> Mat2 {
        Mat2::new(self.g11, self.g12, self.g12, self.g22)
    }
}

/// Pinhole intrinsics; applied only at the I/O boundary.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx.is_finite() && fy.is_finite() && cx.is_finite() && cy.is_finite()) {
            return Err(Error::NonFinite("intrinsics"));
        }
        if fx <= 0.0 || fy <= 0.0 {
            return Err(Error::InvalidParam {
                name: "focal",
                value: fx.min(fy),
            });
        }
        Ok(Self { fx, fy, cx, cy })
    }

    pub fn to_retina(&self, x_px: f64, y_px: f64) -> Result<ImagePoint> {
        ImagePoint::try_new((x_px - self.cx) / self.fx, (y_px - self.cy) / self.fy)
    }

    pub fn to_pixel(&self, p: ImagePoint) -> (f64, f64) {
        (self.fx * p.u + self.cx, self.fy * p.v + self.cy)
    }
}

/// Result of [`svd3`]: `m = u * diag(sigma) * vt` with `sigma[0] >= sigma[1]
/// >= sigma[2] >= 0` and orthonormal factors.
#[derive(Clone, Copy, Debug)]
pub struct Svd3 {
    pub u: Mat3,
    pub sigma: Vec3,
    pub vt: Mat3,
}

/// Singular value decomposition of a 3x3 matrix with descending singular
/// values. Errors on non-finite input.
///
/// One-sided Jacobi: rotate column pairs of `m` until they are mutually
/// orthogonal. Column norms are the singular values, the accumulated
/// rotations form `V`, and normalized columns form `U`. For a 3x3 this
/// converges in a handful of sweeps and reconstructs to machine precision,
/// which general-purpose bidiagonalization SVDs do not always reach.
pub fn svd3(m: &Mat3) -> Result<Svd3> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("svd3 input"));
    }
    let mut b = *m;
    let mut v = Mat3::identity();
    for _ in 0..60 {
        let mut off = 0.0f64;
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            let alpha = b.column(p).norm_squared();
            let beta = b.column(q).norm_squared();
            let gamma = b.column(p).dot(&b.column(q));
            if alpha == 0.0 || beta == 0.0 || gamma == 0.0 {
                continue;
            }
            let rel = gamma.abs() / (alpha * beta).sqrt();
            off = off.max(rel);
            if rel <= 1e-15 {
                continue;
            }
            // Smaller root of t^2 + 2*zeta*t - 1 = 0 zeroes the new cross term.
            let zeta = (beta - alpha) / (2.0 * gamma);
            let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
            let c = 1.0 / (1.0 + t * t).sqrt();
            let s = c * t;
            for r in 0..3 {
                let (bp, bq) = (b[(r, p)], b[(r, q)]);
                b[(r, p)] = c * bp - s * bq;
                b[(r, q)] = s * bp + c * bq;
                let (vp, vq) = (v[(r, p)], v[(r, q)]);
                v[(r, p)] = c * vp - s * vq;
                v[(r, q)] = s * vp + c * vq;
            }
        }
        if off <= 1e-15 {
            break;
        }
    }

    let mut cols: [(f64, Vec3, Vec3); 3] = [
        (b.column(0).norm(), b.column(0).into(), v.column(0).into()),
        (b.column(1).norm(), b.column(1).into(), v.column(1).into()),
        (b.column(2).norm(), b.column(2).into(), v.column(2).into()),
    ];
    cols.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite norms"));

    let sigma = Vec3::new(cols[0].0, cols[1].0, cols[2].0);
    let mut u = Mat3::zeros();
    let mut vt = Mat3::zeros();
    for (i, (s, bi, vi)) in cols.iter().enumerate() {
        if *s > 0.0 {
            u.set_column(i, &(bi / *s));
        }
        vt.set_row(i, &vi.transpose());
    }
    // Complete U to an orthonormal basis where columns vanished (rank < 3).
    if sigma[0] == 0.0 {
        u = Mat3::identity();
    } else {
        if sigma[1] == 0.0 {
            let u0 = u.column(0).into_owned();
            let e = if u0.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
            u.set_column(1, &(e - u0 * e.dot(&u0)).normalize());
        }
        if sigma[2] == 0.0 {
            let u2 = u.column(0).cross(&u.column(1));
            u.set_column(2, &u2);
        }
    }
    Ok(Svd3 { u, sigma, vt })
}

/// Skew-symmetric cross-product matrix: `cross_matrix(v) * w == v x w`.
pub fn cross_matrix(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Unit normal from the logarithmic depth gradient at `x`, oriented so that
/// `n . (u, v, 1) > 0`.
pub fn normal_from_gradient(x: ImagePoint, k1: f64, k2: f64) -> Result<UnitNormal> {
    UnitNormal::new(Vec3::new(k1, k2, 1.0 - x.u * k1 - x.v * k2))
}

/// Logarithmic depth gradient `(k1, k2)` encoded by a normal at `x`.
/// Errors when the viewing ray grazes the surface (`n . ray == 0`).
pub fn gradient_from_normal(n: &UnitNormal, x: ImagePoint) -> Result<(f64, f64)> {
    let v = n.as_vec();
    let denom = x.u * v.x + x.v * v.y + v.z;
    if denom.abs() < 1e-12 {
        return Err(Error::DegenerateGeometry("viewing ray grazes the surface"));
    }
    Ok((v.x / denom, v.y / denom))
}
