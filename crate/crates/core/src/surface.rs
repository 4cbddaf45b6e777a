//! Surface reconstruction from an aggregated normal field.
//!
//! Each normal fixes the gradient of log inverse depth at its image point,
//! k_i = n_i / (u n1 + v n2 + n3). Integrating that gradient over a neighbor
//! graph of the observed points and exponentiating recovers inverse depth
//! beta up to one global factor per connected component; 3D points follow as
//! (u, v, 1) / beta. The solve is anchored weighted least squares over graph
//! edges with no smoothness term on data edges.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::error::{Error, Result};
use crate::multiview::NormalField;
use crate::types::{ImagePoint, UnitNormal, Vec2, Vec3};

/// Neighbor count for the fallback graph when triangulation degenerates.
pub const KNN_FALLBACK_K: usize = 6;
/// Distances below this clamp the inverse-distance edge weight.
const WEIGHT_DIST_FLOOR: f64 = 1e-12;
/// Smallest usable n . (u, v, 1) when converting a normal to a gradient.
const GRADIENT_DENOM_FLOOR: f64 = 1e-9;
/// Log-form edge increments need 1 + k . dx above this; otherwise the edge
/// falls back to the plain midpoint product.
const LOG_ARG_FLOOR: f64 = 1e-6;
/// Relative residual tolerance of the conjugate-gradient solve.
const CG_TOLERANCE: f64 = 1e-13;

/// Undirected neighbor link between two graph nodes.
#[derive(Clone, Copy, Debug)]
pub struct GraphEdge {
    /// Lower node index.
    pub a: usize,
    /// Higher node index.
    pub b: usize,
    /// Inverse-distance weight, always positive and finite.
    pub weight: f64,
}

/// Neighbor graph over the observed points of one image.
///
/// Nodes are point ids with retina positions; edges come from a Delaunay
/// triangulation, or from a k-nearest-neighbor fallback when the point set
/// is degenerate (collinear, or fewer than three points).
#[derive(Clone, Debug)]
pub struct CorrespondenceGraph {
    ids: Vec<u32>,
    positions: Vec<ImagePoint>,
    index: BTreeMap<u32, usize>,
    edges: Vec<GraphEdge>,
    /// Per node: (neighbor node index, edge index).
    adjacency: Vec<Vec<(usize, usize)>>,
    component: Vec<usize>,
    n_components: usize,
}

impl CorrespondenceGraph {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[GraphEdge] {
        &self.edges
    }

    pub fn node_id(&self, idx: usize) -> u32 {
        self.ids[idx]
    }

    pub fn position(&self, idx: usize) -> ImagePoint {
        self.positions[idx]
    }

    pub fn index_of(&self, id: u32) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn n_components(&self) -> usize {
        self.n_components
    }

    pub fn component(&self, idx: usize) -> usize {
        self.component[idx]
    }
}

/// One reconstructed point of a bent surface.
#[derive(Clone, Copy, Debug)]
pub struct SurfacePoint {
    /// 3D position (u, v, 1) / beta in the camera frame, up to global scale.
    pub position: Vec3,
    /// Inverse depth, positive by construction.
    pub beta: f64,
    /// True when the point carried a usable normal; false when its depth was
    /// filled in by the smoothness-only solve.
    pub from_data: bool,
}

/// Per-image surface produced by integrating a normal field.
#[derive(Clone, Debug)]
pub struct ReconstructedSurface {
    image: u32,
    points: BTreeMap<u32, SurfacePoint>,
    scale_anchor: u32,
    anchors: Vec<u32>,
    multi_component: bool,
}

impl ReconstructedSurface {
    /// Image this surface was bent for.
    pub fn image(&self) -> u32 {
        self.image
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn get(&self, point: u32) -> Option<&SurfacePoint> {
        self.points.get(&point)
    }

    pub fn beta(&self, point: u32) -> Option<f64> {
        self.points.get(&point).map(|p| p.beta)
    }

    pub fn position(&self, point: u32) -> Option<Vec3> {
        self.points.get(&point).map(|p| p.position)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &SurfacePoint)> + '_ {
        self.points.iter().map(|(&id, p)| (id, p))
    }

    /// Best-supported point; its beta is exactly 1.
    pub fn scale_anchor(&self) -> u32 {
        self.scale_anchor
    }

    /// One anchor per connected component of the data subgraph.
    pub fn anchors(&self) -> &[u32] {
        &self.anchors
    }

    /// True when the data subgraph was disconnected and each component was
    /// anchored separately, so relative scale across components is arbitrary.
    pub fn multi_component(&self) -> bool {
        self.multi_component
    }
}

#[cfg(test)]
impl ReconstructedSurface {
    pub(crate) fn scale_positions(&mut self, c: f64) {
        for p in self.points.values_mut() {
            p.position *= c;
        }
    }

    pub(crate) fn perturb_positions(&mut self, f: &mut dyn FnMut(u32, &mut Vec3)) {
        for (&id, p) in self.points.iter_mut() {
            f(id, &mut p.position);
        }
    }

    pub(crate) fn shift_image(&mut self, image: u32) {
        self.image = image;
    }
}

/// Builds the neighbor graph over one image's observed points.
///
/// Edges are the Delaunay triangulation of the retina positions with
/// inverse-distance weights. When triangulation degenerates (fewer than
/// three points, or all points collinear) every node links to its k nearest
/// neighbors instead; isolated leftovers such as duplicate positions get the
/// same treatment so components stay meaningful.
pub fn build_graph(points: &[(u32, ImagePoint)]) -> Result<CorrespondenceGraph> {
    if points.len() < 2 {
        return Err(Error::TooFewPoints {
            got: points.len(),
            need: 2,
        });
    }
    let mut nodes: Vec<(u32, ImagePoint)> = points.to_vec();
    nodes.sort_by_key(|&(id, _)| id);
    for pair in nodes.windows(2) {
        if pair[0].0 == pair[1].0 {
            return Err(Error::InvalidParam {
                name: "point_id",
                value: f64::from(pair[0].0),
            });
        }
    }
    let ids: Vec<u32> = nodes.iter().map(|&(id, _)| id).collect();
    let positions: Vec<ImagePoint> = nodes.iter().map(|&(_, p)| p).collect();
    let n = ids.len();

    let coords: Vec<delaunator::Point> = positions
        .iter()
        .map(|p| delaunator::Point { x: p.u, y: p.v })
        .collect();
    let triangulation = delaunator::triangulate(&coords);

    let mut pairs: BTreeSet<(usize, usize)> = BTreeSet::new();
    let link = |a: usize, b: usize, pairs: &mut BTreeSet<(usize, usize)>| {
        if a != b {
            pairs.insert((a.min(b), a.max(b)));
        }
    };
    for tri in triangulation.triangles.chunks_exact(3) {
        link(tri[0], tri[1], &mut pairs);
        link(tri[1], tri[2], &mut pairs);
        link(tri[2], tri[0], &mut pairs);
    }

    // Degenerate triangulation, plus any node the triangulation skipped.
    let mut degree = vec![0usize; n];
    for &(a, b) in &pairs {
        degree[a] += 1;
        degree[b] += 1;
    }
    let k = KNN_FALLBACK_K.min(n - 1);
    for a in 0..n {
        if degree[a] > 0 {
            continue;
        }
        let mut by_dist: Vec<(f64, usize)> = (0..n)
            .filter(|&b| b != a)
            .map(|b| (distance(positions[a], positions[b]), b))
            .collect();
        by_dist.sort_by(|x, y| x.partial_cmp(y).expect("finite distances"));
        for &(_, b) in by_dist.iter().take(k) {
            link(a, b, &mut pairs);
        }
    }

    let edges: Vec<GraphEdge> = pairs
        .iter()
        .map(|&(a, b)| GraphEdge {
            a,
            b,
            weight: 1.0 / distance(positions[a], positions[b]).max(WEIGHT_DIST_FLOOR),
        })
        .collect();

    let mut adjacency = vec![Vec::new(); n];
    for (e, edge) in edges.iter().enumerate() {
        adjacency[edge.a].push((edge.b, e));
        adjacency[edge.b].push((edge.a, e));
    }

    let all = vec![true; n];
    let (component, n_components) =
        label_masked_components(n, &all, |i| adjacency[i].iter().map(|&(j, _)| j).collect());

    let index = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    Ok(CorrespondenceGraph {
        ids,
        positions,
        index,
        edges,
        adjacency,
        component,
        n_components,
    })
}

fn distance(a: ImagePoint, b: ImagePoint) -> f64 {
    f64::hypot(a.u - b.u, a.v - b.v)
}

/// Labels connected components by breadth-first search over a neighbor
/// relation restricted to the nodes where `active` holds.
fn label_masked_components<F>(n: usize, active: &[bool], neighbors: F) -> (Vec<usize>, usize)
where
    F: Fn(usize) -> Vec<usize>,
{
    let mut component = vec![usize::MAX; n];
    let mut count = 0usize;
    for start in 0..n {
        if !active[start] || component[start] != usize::MAX {
            continue;
        }
        let mut queue = VecDeque::from([start]);
        component[start] = count;
        while let Some(i) = queue.pop_front() {
            for j in neighbors(i) {
                if active[j] && component[j] == usize::MAX {
                    component[j] = count;
                    queue.push_back(j);
                }
            }
        }
        count += 1;
    }
    (component, count)
}

/// Gradient of log inverse depth implied by a normal at an image point,
/// k = (n1, n2) / (u n1 + v n2 + n3). None when the normal is at or beyond
/// the horizon of the viewing ray, where no finite gradient exists.
fn log_depth_gradient(n: &UnitNormal, x: ImagePoint) -> Option<Vec2> {
    let v = n.as_vec();
    let denom = v.dot(&x.ray());
    if denom <= GRADIENT_DENOM_FLOOR {
        return None;
    }
    Some(Vec2::new(v.x / denom, v.y / denom))
}

/// Increment of log beta along an edge from endpoint gradients.
///
/// Averages the two endpoint estimates in log form, which integrates the
/// gradient of any linear beta exactly; near the horizon where a log argument
/// degenerates it falls back to the plain midpoint product.
fn edge_increment(k_p: Vec2, k_q: Vec2, dx: Vec2) -> f64 {
    let g_p = k_p.dot(&dx);
    let g_q = k_q.dot(&dx);
    if 1.0 + g_p > LOG_ARG_FLOOR && 1.0 - g_q > LOG_ARG_FLOOR {
        0.5 * ((1.0 + g_p).ln() - (1.0 - g_q).ln())
    } else {
        0.5 * (g_p + g_q)
    }
}

#[derive(Clone, Copy)]
enum Term {
    Free(usize),
    Fixed(f64),
}

/// Normal equations of a weighted least-squares problem over difference
/// residuals weight * (value(q) - value(p) - target)^2.
struct WlsSystem {
    diag: Vec<f64>,
    rows: Vec<Vec<(usize, f64)>>,
    rhs: Vec<f64>,
}

impl WlsSystem {
    fn new(n: usize) -> Self {
        Self {
            diag: vec![0.0; n],
            rows: vec![Vec::new(); n],
            rhs: vec![0.0; n],
        }
    }

    fn add_difference(&mut self, p: Term, q: Term, weight: f64, target: f64) {
        match (p, q) {
            (Term::Free(i), Term::Free(j)) => {
                self.diag[i] += weight;
                self.diag[j] += weight;
                self.rows[i].push((j, -weight));
                self.rows[j].push((i, -weight));
                self.rhs[i] -= weight * target;
                self.rhs[j] += weight * target;
            }
            (Term::Free(i), Term::Fixed(v)) => {
                self.diag[i] += weight;
                self.rhs[i] += weight * (v - target);
            }
            (Term::Fixed(v), Term::Free(j)) => {
                self.diag[j] += weight;
                self.rhs[j] += weight * (v + target);
            }
            (Term::Fixed(_), Term::Fixed(_)) => {}
        }
    }

    /// Jacobi-preconditioned conjugate gradients. The matrix is a graph
    /// Laplacian with at least one eliminated anchor per block, hence
    /// symmetric positive definite; iteration is sequential so repeated
    /// solves are bit-identical.
    fn solve(&self) -> Vec<f64> {
        let n = self.diag.len();
        let mut x = vec![0.0; n];
        if n == 0 {
            return x;
        }
        let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let b_norm = norm(&self.rhs);
        if b_norm == 0.0 {
            return x;
        }
        let inv_diag: Vec<f64> = self.diag.iter().map(|&d| 1.0 / d).collect();
        let mut r = self.rhs.clone();
        let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let mut ap = vec![0.0; n];
        for _ in 0..(10 * n + 300) {
            for i in 0..n {
                let mut s = self.diag[i] * p[i];
                for &(j, w) in &self.rows[i] {
                    s += w * p[j];
                }
                ap[i] = s;
            }
            let p_ap = dot(&p, &ap);
            if p_ap <= 0.0 {
                break;
            }
            let alpha = rz / p_ap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            if norm(&r) <= CG_TOLERANCE * b_norm {
                break;
            }
            for i in 0..n {
                z[i] = r[i] * inv_diag[i];
            }
            let rz_next = dot(&r, &z);
            let beta = rz_next / rz;
            rz = rz_next;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        x
    }
}

/// Bends a surface to match one image's normal field.
///
/// Stage one integrates the log-inverse-depth gradients over edges whose
/// endpoints both carry a usable normal, anchoring the best-supported point
/// of each connected component of that data subgraph at beta = 1. Stage two
/// assigns the remaining points by a smoothness-only solve that holds the
/// stage-one values fixed; graph components with no data at all stay flat at
/// beta = 1. Inverse depth is solved in log space, so beta > 0 everywhere.
pub fn bend_surface(
    field: &NormalField,
    image: u32,
    graph: &CorrespondenceGraph,
) -> Result<ReconstructedSurface> {
    let n = graph.len();
    let mut gradient: Vec<Option<Vec2>> = vec![None; n];
    let mut support = vec![0usize; n];
    for i in 0..n {
        let id = graph.ids[i];
        if let Some(entry) = field.get(image, id) {
            support[i] = entry.support;
            if let Some(normal) = entry.normal {
                gradient[i] = log_depth_gradient(&normal, graph.positions[i]);
            }
        }
    }
    let is_data: Vec<bool> = gradient.iter().map(Option::is_some).collect();
    if !is_data.iter().any(|&d| d) {
        return Err(Error::NoReconstructedPoints);
    }

    // Components of the subgraph induced by data nodes.
    let (data_component, n_data_components) = label_masked_components(n, &is_data, |i| {
        graph.adjacency[i]
            .iter()
            .map(|&(j, _)| j)
            .filter(|&j| is_data[j])
            .collect()
    });

    // Anchor each data component at its best-supported node, ties to the
    // smaller point id; node order already ascends by id.
    let mut anchor_of = vec![usize::MAX; n_data_components];
    for i in 0..n {
        if !is_data[i] {
            continue;
        }
        let c = data_component[i];
        if anchor_of[c] == usize::MAX || support[i] > support[anchor_of[c]] {
            anchor_of[c] = i;
        }
    }
    let is_anchor: Vec<bool> = (0..n).map(|i| anchor_of.contains(&i)).collect();

    // Stage one: data edges only, block diagonal across components.
    let mut free_ix = vec![usize::MAX; n];
    let mut n_free = 0usize;
    for i in 0..n {
        if is_data[i] && !is_anchor[i] {
            free_ix[i] = n_free;
            n_free += 1;
        }
    }
    let term = |i: usize, w: &[f64]| {
        if free_ix[i] != usize::MAX {
            Term::Free(free_ix[i])
        } else {
            Term::Fixed(w[i])
        }
    };
    let zeros = vec![0.0; n];
    let mut system = WlsSystem::new(n_free);
    for edge in &graph.edges {
        if !(is_data[edge.a] && is_data[edge.b]) {
            continue;
        }
        let dx_full = Vec2::new(
            graph.positions[edge.b].u - graph.positions[edge.a].u,
            graph.positions[edge.b].v - graph.positions[edge.a].v,
        );
        let target = edge_increment(
            gradient[edge.a].expect("data node"),
            gradient[edge.b].expect("data node"),
            dx_full,
        );
        system.add_difference(term(edge.a, &zeros), term(edge.b, &zeros), edge.weight, target);
    }
    let solved = system.solve();
    let mut w = vec![0.0; n];
    for i in 0..n {
        if free_ix[i] != usize::MAX {
            w[i] = solved[free_ix[i]];
        }
    }

    // Stage two: smoothness-only fill of nodes without data. Components of
    // the full graph that contain no data stay at w = 0.
    let mut component_has_data = vec![false; graph.n_components];
    for i in 0..n {
        if is_data[i] {
            component_has_data[graph.component[i]] = true;
        }
    }
    let mut fill_ix = vec![usize::MAX; n];
    let mut n_fill = 0usize;
    for i in 0..n {
        if !is_data[i] && component_has_data[graph.component[i]] {
            fill_ix[i] = n_fill;
            n_fill += 1;
        }
    }
    if n_fill > 0 {
        let mut fill = WlsSystem::new(n_fill);
        for edge in &graph.edges {
            if is_data[edge.a] && is_data[edge.b] {
                continue;
            }
            let term = |i: usize| {
                if fill_ix[i] != usize::MAX {
                    Term::Free(fill_ix[i])
                } else {
                    Term::Fixed(w[i])
                }
            };
            fill.add_difference(term(edge.a), term(edge.b), edge.weight, 0.0);
        }
        let filled = fill.solve();
        for i in 0..n {
            if fill_ix[i] != usize::MAX {
                w[i] = filled[fill_ix[i]];
            }
        }
    }

    let mut points = BTreeMap::new();
    for i in 0..n {
        let beta = if is_anchor[i] { 1.0 } else { w[i].exp() };
        let p = graph.positions[i];
        points.insert(
            graph.ids[i],
            SurfacePoint {
                position: Vec3::new(p.u, p.v, 1.0) / beta,
                beta,
                from_data: is_data[i],
            },
        );
    }
    let anchors: Vec<u32> = {
        let mut a: Vec<u32> = anchor_of.iter().map(|&i| graph.ids[i]).collect();
        a.sort_unstable();
        a
    };
    // Global gauge: the overall best-supported data node anchors its own
    // component, so it is always among the per-component anchors.
    let scale_anchor = (0..n)
        .filter(|&i| is_data[i])
        .max_by(|&a, &b| {
            support[a]
                .cmp(&support[b])
                .then(graph.ids[b].cmp(&graph.ids[a]))
        })
        .map(|i| graph.ids[i])
        .expect("at least one data node");
    Ok(ReconstructedSurface {
        image,
        points,
        scale_anchor,
        anchors,
        multi_component: n_data_components > 1,
    })
}
