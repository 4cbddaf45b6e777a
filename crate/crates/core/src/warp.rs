//! Image-to-image warp fitting and differentiation.
//!
//! A warp η maps points of a source image to their corresponding points in a
//! destination image. Downstream stages consume only the local jet of η
//! (value, Jacobian, second derivatives), so the fit must be at least C².
//! We use uniform cubic tensor-product B-splines, least squares with a
//! bending-energy penalty:
//!
//! 1. clamped knot grid over the source bounding box, padded 5%;
//! 2. normal equations `(AᵀA + λR) c = Aᵀ b` per output coordinate, where
//!    `R` integrates `f_uu² + 2 f_uv² + f_vv²` by Gauss quadrature;
//! 3. analytic derivative evaluation from the same basis.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::types::{ImagePoint, Mat2, Mat3, Vec2};

/// Spline degree. Cubic is the lowest degree with continuous second
/// derivatives, which the homography extraction needs.
pub const SPLINE_DEGREE: usize = 3;

/// Fraction of the source bounding-box extent added on each side of the
/// spline domain.
pub const DOMAIN_PAD_FRACTION: f64 = 0.05;

/// Fewer correspondences than this cannot constrain a useful warp.
pub const MIN_CORRESPONDENCES: usize = 6;

/// Default bending-energy weight, in retina-normalized units.
pub const DEFAULT_LAMBDA_REG: f64 = 1e-3;

/// Control-grid dimensions (control points per axis).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize) -> Result<Self> {
        if nx < 4 || ny < 4 {
            return Err(Error::InvalidParam {
                name: "grid",
                value: nx.min(ny) as f64,
            });
        }
        Ok(Self { nx, ny })
    }

    pub fn control_count(&self) -> usize {
        self.nx * self.ny
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { nx: 8, ny: 8 }
    }
}

/// One tracked point: its id plus the images where it was observed.
#[derive(Clone, Debug, Default)]
pub struct Correspondence {
    pub point_id: u32,
    /// Observed position per image id. Keyed map, so a point appears at most
    /// once per image by construction.
    pub observations: BTreeMap<u32, ImagePoint>,
}

/// All tracks of a sequence, indexed both ways.
#[derive(Clone, Debug, Default)]
pub struct CorrespondenceSet {
    tracks: BTreeMap<u32, BTreeMap<u32, ImagePoint>>,
    images: BTreeSet<u32>,
}

impl CorrespondenceSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Build from (image, point, position) rows; duplicates are an error.
    pub fn from_rows<I>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (u32, u32, ImagePoint)>,
    {
        let mut set = Self::new();
        for (image, point, pos) in rows {
            set.insert(image, point, pos)?;
        }
        Ok(set)
    }

    pub fn insert(&mut self, image: u32, point: u32, pos: ImagePoint) -> Result<()> {
        let track = self.tracks.entry(point).or_default();
        if track.insert(image, pos).is_some() {
            return Err(Error::DuplicateObservation { image, point });
        }
        self.images.insert(image);
        Ok(())
    }

    pub fn images(&self) -> impl Iterator<Item = u32> + '_ {
        self.images.iter().copied()
    }

    pub fn image_count(&self) -> usize {
        self.images.len()
    }

    pub fn point_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.tracks.keys().copied()
    }

    pub fn get(&self, image: u32, point: u32) -> Option<ImagePoint> {
        self.tracks.get(&point).and_then(|t| t.get(&image)).copied()
    }

    /// Points observed in `image`, ordered by point id.
    pub fn points_in(&self, image: u32) -> Vec<(u32, ImagePoint)> {
        self.tracks
            .iter()
            .filter_map(|(&id, t)| t.get(&image).map(|&p| (id, p)))
            .collect()
    }

    /// Points observed in both images, ordered by point id.
    pub fn shared(&self, image_a: u32, image_b: u32) -> Vec<(u32, ImagePoint, ImagePoint)> {
        self.tracks
            .iter()
            .filter_map(|(&id, t)| match (t.get(&image_a), t.get(&image_b)) {
                (Some(&pa), Some(&pb)) => Some((id, pa, pb)),
                _ => None,
            })
            .collect()
    }

    pub fn tracks(&self) -> impl Iterator<Item = Correspondence> + '_ {
        self.tracks.iter().map(|(&point_id, obs)| Correspondence {
            point_id,
            observations: obs.clone(),
        })
    }
}

// ── B-spline basis ──────────────────────────────────────────────────────────

/// Clamped uniform cubic knot vector on [a, b] with `n` control points.
#[derive(Clone, Copy, Debug)]
struct Axis {
    a: f64,
    b: f64,
    n: usize,
}

impl Axis {
    fn knot(&self, i: usize) -> f64 {
        if i <= SPLINE_DEGREE {
            self.a
        } else if i >= self.n {
            self.b
        } else {
            let h = (self.b - self.a) / (self.n - SPLINE_DEGREE) as f64;
            self.a + (i - SPLINE_DEGREE) as f64 * h
        }
    }

    fn contains(&self, u: f64) -> bool {
        u >= self.a && u <= self.b
    }

    fn span(&self, u: f64) -> usize {
        let cells = self.n - SPLINE_DEGREE;
        let h = (self.b - self.a) / cells as f64;
        let cell = (((u - self.a) / h).floor() as isize).clamp(0, cells as isize - 1) as usize;
        SPLINE_DEGREE + cell
    }

    /// Nonzero basis functions and their first two derivatives at `u`
    /// (Cox–de Boor with the derivative table of The NURBS Book, A2.3).
    /// Entry `j` belongs to control point `span - 3 + j`.
    fn basis_ders(&self, span: usize, u: f64) -> [[f64; 4]; 3] {
        const P: usize = SPLINE_DEGREE;
        let mut ndu = [[0.0f64; P + 1]; P + 1];
        let mut left = [0.0f64; P + 1];
        let mut right = [0.0f64; P + 1];
        ndu[0][0] = 1.0;
        for j in 1..=P {
            left[j] = u - self.knot(span + 1 - j);
            right[j] = self.knot(span + j) - u;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }

        let mut ders = [[0.0f64; P + 1]; 3];
        ders[0] = [ndu[0][P], ndu[1][P], ndu[2][P], ndu[3][P]];

        let mut a = [[0.0f64; P + 1]; 2];
        for r in 0..=P {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0] = [1.0, 0.0, 0.0, 0.0];
            a[1] = [0.0; P + 1];
            for k in 1..=2usize {
                let mut d = 0.0;
                let rk = r as isize - k as isize;
                let pk = P - k;
                if r >= k {
                    a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                    d = a[s2][0] * ndu[rk as usize][pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if r as isize - 1 <= pk as isize { k - 1 } else { P - r };
                for j in j1..=j2 {
                    a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][(rk + j as isize) as usize];
                    d += a[s2][j] * ndu[(rk + j as isize) as usize][pk];
                }
                if r as isize <= pk as isize {
                    a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                    d += a[s2][k] * ndu[r][pk];
                }
                ders[k][r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        // Scale derivative rows by p! / (p - k)!.
        let mut factor = P as f64;
        for k in 1..=2usize {
            for j in 0..=P {
                ders[k][j] *= factor;
            }
            factor *= (P - k) as f64;
        }
        ders
    }
}

// ── Warp model ──────────────────────────────────────────────────────────────

/// Local differential data of a warp at one source point: the warped
/// position, the 2x2 Jacobian, and the three second-derivative 2-vectors.
#[derive(Clone, Copy, Debug)]
pub struct WarpJet {
    pub eta: ImagePoint,
    pub j: Mat2,
    pub d2_uu: Vec2,
    pub d2_uv: Vec2,
    pub d2_vv: Vec2,
}

impl WarpJet {
    pub fn is_finite(&self) -> bool {
        self.eta.u.is_finite()
            && self.eta.v.is_finite()
            && self.j.iter().all(|x| x.is_finite())
            && self.d2_uu.iter().all(|x| x.is_finite())
            && self.d2_uv.iter().all(|x| x.is_finite())
            && self.d2_vv.iter().all(|x| x.is_finite())
    }
}

/// Per-fit residual statistics (per-coordinate RMS and worst point distance).
#[derive(Clone, Copy, Debug, Default)]
pub struct ResidualStats {
    pub rms: f64,
    pub max: f64,
    pub n_points: usize,
}

/// A fitted tensor-product B-spline warp. Immutable after fitting;
/// evaluation is pure and safe to call from many threads.
#[derive(Clone, Debug)]
pub struct WarpModel {
    grid: GridSpec,
    ax: Axis,
    ay: Axis,
    coeff_u: DVector<f64>,
    coeff_v: DVector<f64>,
    lambda_reg: f64,
    residuals: ResidualStats,
    bending_energy: f64,
}

impl WarpModel {
    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn degree(&self) -> usize {
        SPLINE_DEGREE
    }

    pub fn lambda_reg(&self) -> f64 {
        self.lambda_reg
    }

    pub fn residuals(&self) -> ResidualStats {
        self.residuals
    }

    /// Quadrature value of the penalty integral for the fitted coefficients.
    pub fn bending_energy(&self) -> f64 {
        self.bending_energy
    }

    /// Spline domain as (u_min, u_max, v_min, v_max).
    pub fn domain(&self) -> (f64, f64, f64, f64) {
        (self.ax.a, self.ax.b, self.ay.a, self.ay.b)
    }

    pub fn contains(&self, q: ImagePoint) -> bool {
        self.ax.contains(q.u) && self.ay.contains(q.v)
    }

    fn column(&self, ix: usize, iy: usize) -> usize {
        ix * self.grid.ny + iy
    }

    /// Warped position only.
    pub fn eval(&self, q: ImagePoint) -> Result<ImagePoint> {
        Ok(self.jet(q)?.eta)
    }

    /// Analytic value, Jacobian, and second derivatives at `q`.
    pub fn jet(&self, q: ImagePoint) -> Result<WarpJet> {
        if !self.contains(q) {
            return Err(Error::OutOfDomain { u: q.u, v: q.v });
        }
        let sx = self.ax.span(q.u);
        let sy = self.ay.span(q.v);
        let bx = self.ax.basis_ders(sx, q.u);
        let by = self.ay.basis_ders(sy, q.v);

        // out[c][k]: coordinate c, mode k in {val, du, dv, duu, duv, dvv}.
        let mut out = [[0.0f64; 6]; 2];
        for i in 0..4 {
            for j in 0..4 {
                let col = self.column(sx - 3 + i, sy - 3 + j);
                let w = [
                    bx[0][i] * by[0][j],
                    bx[1][i] * by[0][j],
                    bx[0][i] * by[1][j],
                    bx[2][i] * by[0][j],
                    bx[1][i] * by[1][j],
                    bx[0][i] * by[2][j],
                ];
                for (c, coeff) in [&self.coeff_u, &self.coeff_v].into_iter().enumerate() {
                    let cv = coeff[col];
                    for (k, wk) in w.iter().enumerate() {
                        out[c][k] += cv * wk;
                    }
                }
            }
        }
        Ok(WarpJet {
            eta: ImagePoint::new(out[0][0], out[1][0]),
            j: Mat2::new(out[0][1], out[0][2], out[1][1], out[1][2]),
            d2_uu: Vec2::new(out[0][3], out[1][3]),
            d2_uv: Vec2::new(out[0][4], out[1][4]),
            d2_vv: Vec2::new(out[0][5], out[1][5]),
        })
    }

    /// Central-difference jet with step `h`; testing fallback for [`jet`].
    pub fn jet_fd(&self, q: ImagePoint, h: f64) -> Result<WarpJet> {
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::InvalidParam { name: "h", value: h });
        }
        if q.u + h == q.u || q.v + h == q.v {
            return Err(Error::FdStep { h });
        }
        for (du, dv) in [(-h, -h), (-h, h), (h, -h), (h, h)] {
            let p = ImagePoint::new(q.u + du, q.v + dv);
            if !self.contains(p) {
                return Err(Error::OutOfDomain { u: p.u, v: p.v });
            }
        }
        let at = |du: f64, dv: f64| self.eval(ImagePoint::new(q.u + du, q.v + dv));
        let c = at(0.0, 0.0)?;
        let xp = at(h, 0.0)?;
        let xm = at(-h, 0.0)?;
        let yp = at(0.0, h)?;
        let ym = at(0.0, -h)?;
        let pp = at(h, h)?;
        let pm = at(h, -h)?;
        let mp = at(-h, h)?;
        let mm = at(-h, -h)?;

        let d1 = |p: ImagePoint, m: ImagePoint| {
            Vec2::new((p.u - m.u) / (2.0 * h), (p.v - m.v) / (2.0 * h))
        };
        let d2 = |p: ImagePoint, m: ImagePoint| {
            Vec2::new(
                (p.u - 2.0 * c.u + m.u) / (h * h),
                (p.v - 2.0 * c.v + m.v) / (h * h),
            )
        };
        let du = d1(xp, xm);
        let dv = d1(yp, ym);
        let jet = WarpJet {
            eta: c,
            j: Mat2::new(du.x, dv.x, du.y, dv.y),
            d2_uu: d2(xp, xm),
            d2_vv: d2(yp, ym),
            d2_uv: Vec2::new(
                (pp.u - pm.u - mp.u + mm.u) / (4.0 * h * h),
                (pp.v - pm.v - mp.v + mm.v) / (4.0 * h * h),
            ),
        };
        if !jet.is_finite() {
            return Err(Error::FdStep { h });
        }
        Ok(jet)
    }
}

/// Fit a warp from `src` to `dst` by regularized least squares.
pub fn fit_warp(
    src: &[ImagePoint],
    dst: &[ImagePoint],
    grid: GridSpec,
    lambda_reg: f64,
) -> Result<WarpModel> {
    if src.len() != dst.len() {
        return Err(Error::LengthMismatch {
            left: src.len(),
            right: dst.len(),
        });
    }
    if src.len() < MIN_CORRESPONDENCES {
        return Err(Error::TooFewCorrespondences {
            got: src.len(),
            need: MIN_CORRESPONDENCES,
        });
    }
    if !(lambda_reg.is_finite() && lambda_reg >= 0.0) {
        return Err(Error::InvalidParam {
            name: "lambda_reg",
            value: lambda_reg,
        });
    }
    GridSpec::new(grid.nx, grid.ny)?;
    if lambda_reg == 0.0 && src.len() * 4 < grid.control_count() {
        // An unregularized fit with fewer than controls/4 points is
        // guaranteed rank-deficient in practice.
        return Err(Error::RankDeficientFit);
    }
    for p in src.iter().chain(dst) {
        if !(p.u.is_finite() && p.v.is_finite()) {
            return Err(Error::NonFinite("correspondence"));
        }
    }

    let (mut umin, mut umax) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut vmin, mut vmax) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in src {
        umin = umin.min(p.u);
        umax = umax.max(p.u);
        vmin = vmin.min(p.v);
        vmax = vmax.max(p.v);
    }
    if umax - umin <= 0.0 || vmax - vmin <= 0.0 {
        return Err(Error::DegenerateGeometry("source points have zero extent"));
    }
    let pad_u = DOMAIN_PAD_FRACTION * (umax - umin);
    let pad_v = DOMAIN_PAD_FRACTION * (vmax - vmin);
    let ax = Axis {
        a: umin - pad_u,
        b: umax + pad_u,
        n: grid.nx,
    };
    let ay = Axis {
        a: vmin - pad_v,
        b: vmax + pad_v,
        n: grid.ny,
    };

    let nc = grid.control_count();
    let mut gram = DMatrix::<f64>::zeros(nc, nc);
    let mut rhs_u = DVector::<f64>::zeros(nc);
    let mut rhs_v = DVector::<f64>::zeros(nc);

    let mut cols = [0usize; 16];
    let mut vals = [0.0f64; 16];
    for (s, d) in src.iter().zip(dst) {
        let sx = ax.span(s.u);
        let sy = ay.span(s.v);
        let bx = ax.basis_ders(sx, s.u);
        let by = ay.basis_ders(sy, s.v);
        for i in 0..4 {
            for j in 0..4 {
                let k = i * 4 + j;
                cols[k] = (sx - 3 + i) * grid.ny + (sy - 3 + j);
                vals[k] = bx[0][i] * by[0][j];
            }
        }
        for a in 0..16 {
            rhs_u[cols[a]] += vals[a] * d.u;
            rhs_v[cols[a]] += vals[a] * d.v;
            for b in 0..16 {
                gram[(cols[a], cols[b])] += vals[a] * vals[b];
            }
        }
    }

    let bending = bending_matrix(&ax, &ay, grid);
    let mut system = gram;
    if lambda_reg > 0.0 {
        system += &bending * lambda_reg;
    }
    // Cholesky alone can slip past a numerically singular Gram matrix
    // (collinear sources, unsupported control points), so gate on the
    // eigenvalue spread first. The system is small; this is cheap.
    let eigs = system.clone().symmetric_eigenvalues();
    let (emin, emax) = (eigs.min(), eigs.max());
    if !(emin.is_finite() && emax.is_finite()) || emin <= 1e-12 * emax {
        return Err(Error::RankDeficientFit);
    }
    let chol = match system.cholesky() {
        Some(c) => c,
        None => return Err(Error::RankDeficientFit),
    };
    let coeff_u = chol.solve(&rhs_u);
    let coeff_v = chol.solve(&rhs_v);
    if coeff_u.iter().chain(coeff_v.iter()).any(|x| !x.is_finite()) {
        return Err(Error::RankDeficientFit);
    }

    let bending_energy =
        coeff_u.dot(&(&bending * &coeff_u)) + coeff_v.dot(&(&bending * &coeff_v));
    let mut model = WarpModel {
        grid,
        ax,
        ay,
        coeff_u,
        coeff_v,
        lambda_reg,
        residuals: ResidualStats::default(),
        bending_energy,
    };

    let mut sq_sum = 0.0;
    let mut max_d = 0.0f64;
    for (s, d) in src.iter().zip(dst) {
        let e = model.eval(*s)?;
        let sq = (e.u - d.u).powi(2) + (e.v - d.v).powi(2);
        sq_sum += sq;
        max_d = max_d.max(sq.sqrt());
    }
    model.residuals = ResidualStats {
        rms: (sq_sum / (2 * src.len()) as f64).sqrt(),
        max: max_d,
        n_points: src.len(),
    };
    Ok(model)
}

/// Fit the warp mapping points of `from` to their matches in `to`.
pub fn fit_warp_between(
    set: &CorrespondenceSet,
    from: u32,
    to: u32,
    grid: GridSpec,
    lambda_reg: f64,
) -> Result<WarpModel> {
    let shared = set.shared(from, to);
    let src: Vec<ImagePoint> = shared.iter().map(|&(_, a, _)| a).collect();
    let dst: Vec<ImagePoint> = shared.iter().map(|&(_, _, b)| b).collect();
    fit_warp(&src, &dst, grid, lambda_reg)
}

/// Quadratic-form matrix of the bending energy
/// `∫ f_uu² + 2 f_uv² + f_vv² du dv` over the spline domain.
///
/// Integrands are piecewise polynomials of degree ≤ 6 per axis, so 4-point
/// Gauss–Legendre per knot cell per axis integrates them exactly.
fn bending_matrix(ax: &Axis, ay: &Axis, grid: GridSpec) -> DMatrix<f64> {
    const GL_NODE: [f64; 4] = [
        -0.861136311594052575,
        -0.339981043584856265,
        0.339981043584856265,
        0.861136311594052575,
    ];
    const GL_WEIGHT: [f64; 4] = [
        0.347854845137453857,
        0.652145154862546143,
        0.652145154862546143,
        0.347854845137453857,
    ];

    let nc = grid.control_count();
    let mut r = DMatrix::<f64>::zeros(nc, nc);
    let cells_x = grid.nx - SPLINE_DEGREE;
    let cells_y = grid.ny - SPLINE_DEGREE;
    let hx = (ax.b - ax.a) / cells_x as f64;
    let hy = (ay.b - ay.a) / cells_y as f64;

    for cx in 0..cells_x {
        for cy in 0..cells_y {
            let x0 = ax.a + cx as f64 * hx;
            let y0 = ay.a + cy as f64 * hy;
            for (gx, wx) in GL_NODE.iter().zip(GL_WEIGHT) {
                let u = x0 + 0.5 * hx * (1.0 + gx);
                let sx = ax.span(u);
                let bx = ax.basis_ders(sx, u);
                for (gy, wy) in GL_NODE.iter().zip(GL_WEIGHT) {
                    let v = y0 + 0.5 * hy * (1.0 + gy);
                    let sy = ay.span(v);
                    let by = ay.basis_ders(sy, v);
                    let w = wx * wy * 0.25 * hx * hy;

                    let mut col = [0usize; 16];
                    let mut duu = [0.0f64; 16];
                    let mut duv = [0.0f64; 16];
                    let mut dvv = [0.0f64; 16];
                    for i in 0..4 {
                        for j in 0..4 {
                            let k = i * 4 + j;
                            col[k] = (sx - 3 + i) * grid.ny + (sy - 3 + j);
                            duu[k] = bx[2][i] * by[0][j];
                            duv[k] = bx[1][i] * by[1][j];
                            dvv[k] = bx[0][i] * by[2][j];
                        }
                    }
                    for a in 0..16 {
                        for b in 0..16 {
                            r[(col[a], col[b])] += w
                                * (duu[a] * duu[b] + 2.0 * duv[a] * duv[b] + dvv[a] * dvv[b]);
                        }
                    }
                }
            }
        }
    }
    r
}

/// Free-function aliases mirroring the pipeline vocabulary.
pub fn eval_jet(model: &WarpModel, q: ImagePoint) -> Result<WarpJet> {
    model.jet(q)
}

pub fn eval_jet_fd(model: &WarpModel, q: ImagePoint, h: f64) -> Result<WarpJet> {
    model.jet_fd(q, h)
}

// ── Exact homography warps ──────────────────────────────────────────────────

/// Analytic jet of the exact homography warp `q ↦ (H q̃) / s̄`, where
/// `s̄ = h31 u + h32 v + h33`. The Jacobian is
/// `(1/s̄) [[h11 − h31 u', h12 − h32 u'], [h21 − h31 v', h22 − h32 v']]`
/// and the stacked second derivatives are
/// `−(1/s̄) · J · [[2 h31, h32, 0], [0, h31, 2 h32]]`.
pub fn homography_jet(h: &Mat3, q: ImagePoint) -> Result<WarpJet> {
    if h.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("homography"));
    }
    let s = h[(2, 0)] * q.u + h[(2, 1)] * q.v + h[(2, 2)];
    if s.abs() <= 1e-12 * h.norm() {
        return Err(Error::DegenerateGeometry("query on the homography horizon"));
    }
    let u = (h[(0, 0)] * q.u + h[(0, 1)] * q.v + h[(0, 2)]) / s;
    let v = (h[(1, 0)] * q.u + h[(1, 1)] * q.v + h[(1, 2)]) / s;
    let j = Mat2::new(
        h[(0, 0)] - h[(2, 0)] * u,
        h[(0, 1)] - h[(2, 1)] * u,
        h[(1, 0)] - h[(2, 0)] * v,
        h[(1, 1)] - h[(2, 1)] * v,
    ) / s;
    let k = nalgebra::Matrix2x3::new(
        2.0 * h[(2, 0)],
        h[(2, 1)],
        0.0,
        0.0,
        h[(2, 0)],
        2.0 * h[(2, 1)],
    );
    let d2 = -(j * k) / s;
    Ok(WarpJet {
        eta: ImagePoint::new(u, v),
        j,
        d2_uu: d2.column(0).into(),
        d2_uv: d2.column(1).into(),
        d2_vv: d2.column(2).into(),
    })
}

/// Anything that can produce a warp jet at a query point. Implemented by the
/// fitted spline and by exact generators used in synthetic pipelines.
pub trait WarpSource: Sync {
    fn jet(&self, q: ImagePoint) -> Result<WarpJet>;
}

impl WarpSource for WarpModel {
    fn jet(&self, q: ImagePoint) -> Result<WarpJet> {
        WarpModel::jet(self, q)
    }
}

/// Exact warp of a fixed homography; jets come from the closed form rather
/// than a fit.
#[derive(Clone, Debug)]
pub struct HomographyWarp {
    h: Mat3,
}

impl HomographyWarp {
    pub fn new(h: Mat3) -> Result<Self> {
        if h.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("homography"));
        }
        if h.determinant().abs() <= 1e-14 * h.norm().powi(3) {
            return Err(Error::SingularHomography);
        }
        Ok(Self { h })
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.h
    }
}

impl WarpSource for HomographyWarp {
    fn jet(&self, q: ImagePoint) -> Result<WarpJet> {
        homography_jet(&self.h, q)
    }
}
