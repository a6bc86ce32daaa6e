//! Geometry of the expohedron, the permutahedron generated by an exposure
//! vector `gamma`.
//!
//! A point `x` belongs to the expohedron iff it is majorized by `gamma`: for
//! every `k < n` the sum of the `k` largest entries of `x` is at most the sum
//! of the `k` largest entries of `gamma`, and the totals agree. A tight prefix
//! level `k` means the `k` largest items of `x` sit on the facet
//! `sum_{i in S} x_i = G_k`; the tight levels always form a chain, which is
//! what [`FaceDescriptor`] records.
//!
//! All vertices lie on a sphere centred at `(sum(gamma) / n) * 1`, which is
//! used for the central (gnomonic) projections below.

use crate::error::{Error, Result};
use crate::model::{dot, geometry_scale, norm};

/// Default absolute membership tolerance for `gamma`.
pub fn membership_tol(gamma: &[f64]) -> f64 {
    1e-9 * geometry_scale(gamma)
}

/// `G_k` for `k = 0..=n`: sums of the `k` largest entries of `gamma`.
pub fn prefix_bounds(gamma: &[f64]) -> Vec<f64> {
    let mut sorted = gamma.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut out = Vec::with_capacity(sorted.len() + 1);
    out.push(0.0);
    let mut acc = 0.0;
    for v in sorted {
        acc += v;
        out.push(acc);
    }
    out
}

/// Item indices sorted by descending value; equal values keep index order.
pub fn descending_order(x: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[b].total_cmp(&x[a]).then(a.cmp(&b)));
    idx
}

fn sorted_gamma(gamma: &[f64]) -> Vec<f64> {
    let mut g = gamma.to_vec();
    g.sort_by(|a, b| b.total_cmp(a));
    g
}

/// Largest prefix-sum excess `max_k (S_k(x) - G_k)` over `k = 1..n-1`.
fn max_excess(x: &[f64], bounds: &[f64]) -> f64 {
    let order = descending_order(x);
    let mut acc = 0.0;
    let mut worst = f64::NEG_INFINITY;
    for (k, &i) in order.iter().enumerate().take(x.len().saturating_sub(1)) {
        acc += x[i];
        worst = worst.max(acc - bounds[k + 1]);
    }
    worst
}

/// Result of a majorization test.
#[derive(Debug, Clone, PartialEq)]
pub enum Membership {
    /// Strictly inside: no prefix level is tight.
    Interior,
    /// On the boundary; 1-based prefix levels that are tight.
    Boundary { tight: Vec<usize> },
    /// Outside; 1-based prefix levels that are exceeded.
    Outside { violated: Vec<usize> },
}

impl Membership {
    pub fn is_feasible(&self) -> bool {
        !matches!(self, Membership::Outside { .. })
    }
}

/// Classifies `x` against the expohedron of `gamma`.
pub fn majorization_check(x: &[f64], gamma: &[f64], tol: f64) -> Result<Membership> {
    if x.len() != gamma.len() {
        return Err(Error::Dimension {
            expected: gamma.len(),
            got: x.len(),
        });
    }
    let bounds = prefix_bounds(gamma);
    let n = x.len();
    let sum: f64 = x.iter().sum();
    if (sum - bounds[n]).abs() > tol {
        return Err(Error::NotOnSumHyperplane {
            sum,
            total: bounds[n],
        });
    }
    let order = descending_order(x);
    let mut acc = 0.0;
    let mut tight = Vec::new();
    let mut violated = Vec::new();
    for k in 1..n {
        acc += x[order[k - 1]];
        let gap = acc - bounds[k];
        if gap > tol {
            violated.push(k);
        } else if gap.abs() <= tol {
            tight.push(k);
        }
    }
    Ok(if !violated.is_empty() {
        Membership::Outside { violated }
    } else if !tight.is_empty() || n == 1 {
        Membership::Boundary { tight }
    } else {
        Membership::Interior
    })
}

/// A face of the expohedron as an ordered partition of the items.
///
/// Block `j` holds the items ranked between tight levels `k_{j-1}` and `k_j`;
/// the union of the first `j` blocks is a tight top set.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FaceDescriptor {
    pub blocks: Vec<Vec<usize>>,
    pub tight_levels: Vec<usize>,
}

impl FaceDescriptor {
    /// Splits `order` (items by descending value) at the given 1-based levels.
    pub fn from_order(order: &[usize], tight_levels: &[usize]) -> Self {
        let mut blocks = Vec::with_capacity(tight_levels.len() + 1);
        let mut start = 0;
        for &k in tight_levels {
            blocks.push(order[start..k].to_vec());
            start = k;
        }
        blocks.push(order[start..].to_vec());
        FaceDescriptor {
            blocks,
            tight_levels: tight_levels.to_vec(),
        }
    }

    pub fn n_items(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }

    /// Affine dimension of the face.
    pub fn dimension(&self) -> usize {
        self.n_items() - self.blocks.len()
    }

    pub fn is_vertex(&self) -> bool {
        self.blocks.iter().all(|b| b.len() == 1)
    }

    /// The face obtained by releasing tight level number `idx` (an index into
    /// `tight_levels`), merging the two blocks around it.
    pub fn drop_level(&self, idx: usize) -> Self {
        let mut blocks = self.blocks.clone();
        let tail = blocks.remove(idx + 1);
        blocks[idx].extend(tail);
        let mut tight_levels = self.tight_levels.clone();
        tight_levels.remove(idx);
        FaceDescriptor {
            blocks,
            tight_levels,
        }
    }

    /// Block index of every item.
    pub fn block_index(&self) -> Vec<usize> {
        let mut out = vec![0; self.n_items()];
        for (j, b) in self.blocks.iter().enumerate() {
            for &i in b {
                out[i] = j;
            }
        }
        out
    }

    /// Orthogonal projection onto the tangent space (zero sum on every block).
    pub fn project_tangent(&self, v: &[f64]) -> Vec<f64> {
        let mut out = v.to_vec();
        for b in &self.blocks {
            let mean = b.iter().map(|&i| v[i]).sum::<f64>() / b.len() as f64;
            for &i in b {
                out[i] -= mean;
            }
        }
        out
    }

    /// Checks the defining equalities for `x` within `tol`.
    pub fn holds_for(&self, x: &[f64], gamma: &[f64], tol: f64) -> bool {
        let bounds = prefix_bounds(gamma);
        let mut acc = 0.0;
        let mut count = 0;
        for b in &self.blocks {
            acc += b.iter().map(|&i| x[i]).sum::<f64>();
            count += b.len();
            if (acc - bounds[count]).abs() > tol {
                return false;
            }
        }
        true
    }
}

/// Minimal face containing `x`.
pub fn face_of(x: &[f64], gamma: &[f64], tol: f64) -> Result<FaceDescriptor> {
    let tight = match majorization_check(x, gamma, tol)? {
        Membership::Interior => Vec::new(),
        Membership::Boundary { tight } => tight,
        Membership::Outside { violated } => return Err(Error::NotInPolytope { violated }),
    };
    Ok(FaceDescriptor::from_order(&descending_order(x), &tight))
}

/// Exit point of a ray through the expohedron.
#[derive(Debug, Clone, PartialEq)]
pub struct RayHit {
    pub step: f64,
    pub point: Vec<f64>,
}

/// Largest `t >= 0` with `x + t d` still in the expohedron.
pub fn ray_boundary_intersection(x: &[f64], d: &[f64], gamma: &[f64], tol: f64) -> Result<RayHit> {
    let n = gamma.len();
    if x.len() != n || d.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: if x.len() != n { x.len() } else { d.len() },
        });
    }
    let dn = norm(d);
    if dn <= tol {
        return Err(Error::ZeroDirection);
    }
    let dsum: f64 = d.iter().sum();
    if dsum.abs() > tol.max(1e-12 * dn) {
        return Err(Error::OffHyperplaneDirection(dsum));
    }
    let bounds = prefix_bounds(gamma);
    let scale = geometry_scale(gamma);
    let start_excess = max_excess(x, &bounds);
    if start_excess > tol {
        let violated = match majorization_check(x, gamma, tol)? {
            Membership::Outside { violated } => violated,
            _ => Vec::new(),
        };
        return Err(Error::NotInPolytope { violated });
    }
    let ftol = (1e-12 * scale).max(start_excess);
    let (step, _) = exit_step(x, d, &bounds, f64::INFINITY, ftol);
    if !step.is_finite() {
        return Err(Error::ZeroDirection);
    }
    Ok(RayHit {
        step,
        point: x.iter().zip(d).map(|(a, b)| a + step * b).collect(),
    })
}

/// `max_k (sum of the k largest y_i - bounds_k)` over `k = 1..n-1`, with the
/// maximizing top set.
pub(crate) fn top_sum_excess(y: &[f64], bounds: &[f64]) -> (f64, Vec<usize>) {
    let mut order: Vec<usize> = (0..y.len()).collect();
    let (excess, k) = top_sum_excess_with(y, bounds, &mut order);
    order.truncate(k);
    (excess, order)
}

/// Same as [`top_sum_excess`], re-sorting `order` in place (cheap when it is
/// nearly sorted already) and returning the size of the maximizing top set.
fn top_sum_excess_with(y: &[f64], bounds: &[f64], order: &mut [usize]) -> (f64, usize) {
    let n = y.len();
    order.sort_by(|&a, &b| y[b].total_cmp(&y[a]).then(a.cmp(&b)));
    let mut acc = 0.0;
    let mut best = (f64::NEG_INFINITY, 0);
    for k in 1..n {
        acc += y[order[k - 1]];
        let e = acc - bounds[k];
        if e > best.0 {
            best = (e, k);
        }
    }
    best
}

/// Largest step in `[0, limit]` along `d` from `x` that keeps every top-`k`
/// sum within `bounds` (up to `tol`), and the top set that blocks it.
///
/// The excess is convex and piecewise linear in the step, so jumping to the
/// root of the currently violated piece decreases monotonically onto the exit.
pub(crate) fn exit_step(
    x: &[f64],
    d: &[f64],
    bounds: &[f64],
    limit: f64,
    mut tol: f64,
) -> (f64, Option<Vec<usize>>) {
    let n = x.len();
    if n < 2 {
        return (limit, None);
    }
    let pnorm = norm(d);
    let slope_floor = |items: &[usize]| 1e-9 * (items.len() as f64).sqrt() * pnorm;
    let piece = |items: &[usize]| {
        let sx: f64 = items.iter().map(|&i| x[i]).sum();
        let sd: f64 = items.iter().map(|&i| d[i]).sum();
        (sx - bounds[items.len()], sd)
    };
    let mut alpha = limit;
    let mut blocking = None;
    if !alpha.is_finite() {
        // Far along the ray the order of d decides which sum grows fastest.
        let (_, items) = top_sum_excess(d, &vec![0.0; n + 1]);
        let (c, sd) = piece(&items);
        if sd <= slope_floor(&items) {
            return (f64::INFINITY, None);
        }
        alpha = (-c / sd).max(0.0);
        blocking = Some(items);
    }
    let mut y = vec![0.0; n];
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..4 * n {
        for ((yi, a), b) in y.iter_mut().zip(x).zip(d) {
            *yi = a + alpha * b;
        }
        let (excess, k) = top_sum_excess_with(&y, bounds, &mut order);
        if excess <= tol {
            return (alpha, blocking);
        }
        let items = &order[..k];
        let (c, sd) = piece(items);
        if sd <= slope_floor(items) {
            // A tight level drifting by rounding; it does not bound the step.
            tol = excess;
            continue;
        }
        let next = (-c / sd).max(0.0);
        blocking = Some(items.to_vec());
        if next >= alpha {
            return (alpha, blocking);
        }
        alpha = next;
    }
    (alpha, blocking)
}

/// Circumscribed sphere of the expohedron within the sum hyperplane.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereFrame {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl SphereFrame {
    pub fn new(gamma: &[f64]) -> Result<Self> {
        let n = gamma.len();
        if n == 0 {
            return Err(Error::DegenerateSphere);
        }
        let c = gamma.iter().sum::<f64>() / n as f64;
        let radius = gamma.iter().map(|g| (g - c).powi(2)).sum::<f64>().sqrt();
        if radius <= 1e-12 * geometry_scale(gamma) {
            return Err(Error::DegenerateSphere);
        }
        Ok(SphereFrame {
            center: vec![c; n],
            radius,
        })
    }

    pub fn distance_from_center(&self, p: &[f64]) -> f64 {
        p.iter()
            .zip(&self.center)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Central projection of `x` onto the circumscribed sphere.
pub fn project_to_sphere(x: &[f64], frame: &SphereFrame) -> Result<Vec<f64>> {
    let diff: Vec<f64> = x.iter().zip(&frame.center).map(|(a, c)| a - c).collect();
    let len = norm(&diff);
    if len <= 1e-12 * frame.radius.max(1.0) {
        return Err(Error::CenterProjection);
    }
    Ok(frame
        .center
        .iter()
        .zip(&diff)
        .map(|(c, v)| c + frame.radius * v / len)
        .collect())
}

/// Maps a sphere point back to the expohedron boundary along the ray from the
/// center.
pub fn project_sphere_to_boundary(
    p: &[f64],
    frame: &SphereFrame,
    gamma: &[f64],
) -> Result<Vec<f64>> {
    let d: Vec<f64> = p.iter().zip(&frame.center).map(|(a, c)| a - c).collect();
    if norm(&d) <= 1e-12 * frame.radius.max(1.0) {
        return Err(Error::CenterProjection);
    }
    let hit = ray_boundary_intersection(&frame.center, &d, gamma, membership_tol(gamma))?;
    Ok(hit.point)
}

/// Vertex assigning the `k`-th largest `gamma` to the item ranked `k`-th by
/// `key` (ties by smaller index).
pub fn vertex_ordered_by(key: &[f64], gamma: &[f64]) -> Vec<f64> {
    let sorted = sorted_gamma(gamma);
    let mut v = vec![0.0; key.len()];
    for (rank, &item) in descending_order(key).iter().enumerate() {
        v[item] = sorted[rank];
    }
    v
}

/// Exposure of the relevance-sorted (PRP) ranking.
pub fn max_utility_vertex(relevance: &[f64], gamma: &[f64]) -> Vec<f64> {
    vertex_ordered_by(relevance, gamma)
}

/// Utility of the PRP ranking, `sum_k rho_(k) gamma_k`.
pub fn max_utility(relevance: &[f64], gamma: &[f64]) -> f64 {
    dot(&max_utility_vertex(relevance, gamma), relevance)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOY3: [f64; 3] = [1.0, 0.63093, 0.5];

    #[test]
    fn vertex_is_tight_everywhere() {
        let g = [3.0, 2.0, 1.0];
        let m = majorization_check(&[1.0, 3.0, 2.0], &g, 1e-9).unwrap();
        assert_eq!(m, Membership::Boundary { tight: vec![1, 2] });
    }

    #[test]
    fn center_is_interior() {
        let g = [3.0, 2.0, 1.0];
        assert_eq!(
            majorization_check(&[2.0, 2.0, 2.0], &g, 1e-9).unwrap(),
            Membership::Interior
        );
    }

    #[test]
    fn outside_reports_violated_levels() {
        let m = majorization_check(&[1.1, 0.4], &[1.0, 0.5], 1e-9).unwrap();
        assert_eq!(m, Membership::Outside { violated: vec![1] });
    }

    #[test]
    fn wrong_total_is_rejected() {
        assert!(matches!(
            majorization_check(&[1.0, 1.0], &[1.0, 0.5], 1e-9),
            Err(Error::NotOnSumHyperplane { .. })
        ));
    }

    #[test]
    fn face_of_toy3_point() {
        let x = [0.92062, 0.5, 0.71031];
        let f = face_of(&x, &TOY3, 1e-9).unwrap();
        assert_eq!(f.blocks, vec![vec![0, 2], vec![1]]);
        assert_eq!(f.tight_levels, vec![2]);
        assert!(f.holds_for(&x, &TOY3, 1e-9));
    }

    #[test]
    fn face_of_center_and_vertex() {
        let g = [3.0, 2.0, 1.0];
        let f = face_of(&[2.0, 2.0, 2.0], &g, 1e-9).unwrap();
        assert_eq!(f.blocks, vec![vec![0, 1, 2]]);
        assert!(f.tight_levels.is_empty());
        let f = face_of(&[3.0, 2.0, 1.0], &g, 1e-9).unwrap();
        assert_eq!(f.blocks, vec![vec![0], vec![1], vec![2]]);
        assert!(f.is_vertex());
        assert!(matches!(
            face_of(&[1.1, 0.4], &[1.0, 0.5], 1e-9),
            Err(Error::NotInPolytope { .. })
        ));
    }

    #[test]
    fn drop_level_merges_blocks() {
        let f = FaceDescriptor::from_order(&[2, 0, 1], &[1, 2]);
        let g = f.drop_level(0);
        assert_eq!(g.blocks, vec![vec![2, 0], vec![1]]);
        assert_eq!(g.tight_levels, vec![2]);
    }

    #[test]
    fn ray_exits_at_vertex() {
        let hit =
            ray_boundary_intersection(&[2.0, 2.0, 2.0], &[1.0, 0.0, -1.0], &[3.0, 2.0, 1.0], 1e-9)
                .unwrap();
        assert!((hit.step - 1.0).abs() < 1e-12);
        for (a, b) in hit.point.iter().zip([3.0, 2.0, 1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn ray_toy2() {
        let hit =
            ray_boundary_intersection(&[0.75, 0.75], &[1.0, -1.0], &[1.0, 0.5], 1e-9).unwrap();
        assert!((hit.step - 0.25).abs() < 1e-12);
    }

    #[test]
    fn ray_errors() {
        assert_eq!(
            ray_boundary_intersection(&[0.75, 0.75], &[0.0, 0.0], &[1.0, 0.5], 1e-9),
            Err(Error::ZeroDirection)
        );
        assert!(matches!(
            ray_boundary_intersection(&[0.75, 0.75], &[1.0, 0.0], &[1.0, 0.5], 1e-9),
            Err(Error::OffHyperplaneDirection(_))
        ));
    }

    #[test]
    fn sphere_frames() {
        let f = SphereFrame::new(&[3.0, 2.0, 1.0]).unwrap();
        assert_eq!(f.center, vec![2.0, 2.0, 2.0]);
        assert!((f.radius - 2f64.sqrt()).abs() < 1e-15);
        let f = SphereFrame::new(&[1.0, 0.5]).unwrap();
        assert_eq!(f.center, vec![0.75, 0.75]);
        assert!((f.radius - 0.25 * 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(SphereFrame::new(&[1.0, 1.0]), Err(Error::DegenerateSphere));
    }

    #[test]
    fn sphere_projection_examples() {
        let g = [1.0, 0.5];
        let f = SphereFrame::new(&g).unwrap();
        let p = project_to_sphere(&[0.8, 0.7], &f).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-12 && (p[1] - 0.5).abs() < 1e-12);
        let v = project_to_sphere(&[0.5, 1.0], &f).unwrap();
        assert!((v[0] - 0.5).abs() < 1e-12 && (v[1] - 1.0).abs() < 1e-12);
        assert_eq!(
            project_to_sphere(&[0.75, 0.75], &f),
            Err(Error::CenterProjection)
        );

        let b = project_sphere_to_boundary(&[1.0, 0.5], &f, &g).unwrap();
        assert!((b[0] - 1.0).abs() < 1e-12 && (b[1] - 0.5).abs() < 1e-12);

        let g3 = [3.0, 2.0, 1.0];
        let f3 = SphereFrame::new(&g3).unwrap();
        let b = project_sphere_to_boundary(&[3.0, 2.0, 1.0], &f3, &g3).unwrap();
        for (a, e) in b.iter().zip([3.0, 2.0, 1.0]) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn prp_vertex() {
        let v = max_utility_vertex(&[0.9, 0.6, 0.1], &TOY3);
        assert_eq!(v, TOY3.to_vec());
        assert_eq!(max_utility_vertex(&[0.1, 0.9], &[1.0, 0.5]), vec![0.5, 1.0]);
        assert_eq!(max_utility_vertex(&[0.5, 0.5], &[1.0, 0.5]), vec![1.0, 0.5]);
    }
}
