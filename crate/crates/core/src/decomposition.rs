//! Turning expected exposures into deliverable rankings.
//!
//! Two routes are provided: Carathéodory peeling directly on the expohedron
//! (at most `n` rankings) and Birkhoff–von Neumann on a bistochastic matrix
//! (at most `(n-1)^2 + 1` permutation matrices).

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::expohedron::{descending_order, exit_step, face_of, membership_tol, prefix_bounds};
use crate::model::{geometry_scale, norm, Atom, ExposurePoint, Permutation, RankingDistribution};

/// Entries at or below this are treated as outside the support.
pub const SUPPORT_THRESHOLD: f64 = 1e-12;

/// A square matrix with unit row and column sums; row = item, column = rank.
#[derive(Debug, Clone, PartialEq)]
pub struct BistochasticMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl BistochasticMatrix {
    /// Validates row-major `entries` as an `n x n` bistochastic matrix.
    pub fn new(n: usize, entries: Vec<f64>, tol: f64) -> Result<Self> {
        if entries.len() != n * n {
            return Err(Error::Dimension {
                expected: n * n,
                got: entries.len(),
            });
        }
        if let Some(v) = entries.iter().find(|v| !v.is_finite() || **v < -tol) {
            return Err(Error::NotBistochastic(format!("entry {v} is negative")));
        }
        for i in 0..n {
            let row: f64 = entries[i * n..(i + 1) * n].iter().sum();
            if (row - 1.0).abs() > tol {
                return Err(Error::NotBistochastic(format!("row {i} sums to {row}")));
            }
            let col: f64 = (0..n).map(|r| entries[r * n + i]).sum();
            if (col - 1.0).abs() > tol {
                return Err(Error::NotBistochastic(format!("column {i} sums to {col}")));
            }
        }
        Ok(BistochasticMatrix { n, entries })
    }

    pub fn from_permutation(p: &Permutation) -> Self {
        let n = p.len();
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            entries[i * n + p.position_of(i)] = 1.0;
        }
        BistochasticMatrix { n, entries }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries[row * self.n + col]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// Expected exposure `B gamma`.
    pub fn apply(&self, gamma: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                self.entries[i * self.n..(i + 1) * self.n]
                    .iter()
                    .zip(gamma)
                    .map(|(b, g)| b * g)
                    .sum()
            })
            .collect()
    }
}

/// Carathéodory decomposition of an expohedron point into at most `n`
/// rankings.
///
/// Each round takes the vertex `v` that orders `gamma` like the current point,
/// walks from the point away from `v` to the boundary, and splits the point
/// into a mix of `v` and the exit point. The exit point gains a tight prefix
/// level, so at most `n` rounds are needed.
pub fn caratheodory_decompose(x: &[f64], gamma: &[f64], tol: f64) -> Result<RankingDistribution> {
    let n = gamma.len();
    face_of(x, gamma, tol)?;
    let scale = geometry_scale(gamma);
    let vertex_tol = 1e-12 * scale;
    let mut sorted = gamma.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let bounds = prefix_bounds(gamma);
    let snap_tol = 1e-10 * scale;
    let face_tol = tol.max(membership_tol(gamma));

    let mut atoms: Vec<Atom> = Vec::new();
    let mut current = x.to_vec();
    let mut remaining = 1.0;
    for _ in 0..=n {
        let order = descending_order(&current);
        let perm = Permutation::from_ranking(&order)?;
        let v = perm.exposure(&sorted);
        let d: Vec<f64> = current.iter().zip(&v).map(|(a, b)| a - b).collect();
        let (excess, vertex) = prefix_levels(&current, &order, &bounds, face_tol);
        if excess > face_tol {
            return Err(Error::NotInPolytope {
                violated: Vec::new(),
            });
        }
        if norm(&d) <= vertex_tol || vertex {
            atoms.push(Atom {
                weight: remaining,
                perm,
            });
            return RankingDistribution::normalized(atoms, SUPPORT_THRESHOLD);
        }
        let (s, _) = exit_step(
            &current,
            &d,
            &bounds,
            f64::INFINITY,
            excess.max(1e-12 * scale),
        );
        if !s.is_finite() {
            return Err(Error::ZeroDirection);
        }
        let lambda = s / (1.0 + s);
        atoms.push(Atom {
            weight: remaining * lambda,
            perm,
        });
        remaining *= 1.0 - lambda;
        let hit: Vec<f64> = current.iter().zip(&d).map(|(a, b)| a + s * b).collect();
        current = snap_to_tight_levels(&hit, &bounds, snap_tol)?;
    }
    // Numerical fallback: the chain is full, so the point is a vertex.
    let order = descending_order(&current);
    atoms.push(Atom {
        weight: remaining,
        perm: Permutation::from_ranking(&order)?,
    });
    RankingDistribution::normalized(atoms, SUPPORT_THRESHOLD)
}

/// Largest prefix-level excess of `x` (sorted by `order`), and whether every
/// level is tight, which makes `x` a vertex.
fn prefix_levels(x: &[f64], order: &[usize], bounds: &[f64], tol: f64) -> (f64, bool) {
    let mut acc = 0.0;
    let mut excess = f64::NEG_INFINITY;
    let mut tight = true;
    for (k, &i) in order.iter().enumerate() {
        acc += x[i];
        let e = acc - bounds[k + 1];
        if k + 1 < order.len() {
            excess = excess.max(e);
        }
        tight &= e.abs() <= tol;
    }
    (excess, tight)
}

/// Removes rounding drift on nearly tight prefix levels: every block between
/// consecutive tight levels is shifted uniformly so its sum is exact.
fn snap_to_tight_levels(x: &[f64], bounds: &[f64], tol: f64) -> Result<Vec<f64>> {
    let order = descending_order(x);
    let mut out = x.to_vec();
    let mut start = 0;
    let mut acc = 0.0;
    for k in 1..=x.len() {
        acc += x[order[k - 1]];
        if k < x.len() && (acc - bounds[k]).abs() > tol {
            continue;
        }
        let block = &order[start..k];
        let actual: f64 = block.iter().map(|&i| x[i]).sum();
        let shift = (bounds[k] - bounds[start] - actual) / block.len() as f64;
        for &i in block {
            out[i] += shift;
        }
        start = k;
    }
    Ok(out)
}

/// Incremental bipartite matching on the positive support of a residual
/// matrix. Rows are items, columns are ranks.
struct SupportMatching {
    n: usize,
    row_to_col: Vec<usize>,
    col_to_row: Vec<usize>,
}

const UNMATCHED: usize = usize::MAX;

impl SupportMatching {
    fn new(n: usize) -> Self {
        SupportMatching {
            n,
            row_to_col: vec![UNMATCHED; n],
            col_to_row: vec![UNMATCHED; n],
        }
    }

    /// Drops matched pairs whose entry left the support.
    fn prune(&mut self, residual: &[f64]) {
        for r in 0..self.n {
            let c = self.row_to_col[r];
            if c != UNMATCHED && residual[r * self.n + c] <= SUPPORT_THRESHOLD {
                self.row_to_col[r] = UNMATCHED;
                self.col_to_row[c] = UNMATCHED;
            }
        }
    }

    /// Completes the matching with augmenting paths; false if no perfect
    /// matching exists on the support.
    fn complete(&mut self, residual: &[f64]) -> bool {
        let n = self.n;
        let mut visited = vec![usize::MAX; n];
        for root in 0..n {
            if self.row_to_col[root] != UNMATCHED {
                continue;
            }
            if !self.augment(root, residual, &mut visited, root) {
                return false;
            }
        }
        true
    }

    fn augment(
        &mut self,
        root: usize,
        residual: &[f64],
        visited: &mut [usize],
        stamp: usize,
    ) -> bool {
        let n = self.n;
        // Iterative DFS over alternating paths; parent[c] = row that reached column c.
        let mut parent_row = vec![UNMATCHED; n];
        let mut stack = vec![(root, 0usize)];
        while let Some(top) = stack.len().checked_sub(1) {
            let (r, start) = stack[top];
            let mut descend = None;
            let mut c = start;
            while c < n {
                if visited[c] != stamp && residual[r * n + c] > SUPPORT_THRESHOLD {
                    visited[c] = stamp;
                    parent_row[c] = r;
                    let owner = self.col_to_row[c];
                    if owner == UNMATCHED {
                        // Flip the alternating path back to the root.
                        let mut col = c;
                        loop {
                            let row = parent_row[col];
                            let prev = self.row_to_col[row];
                            self.row_to_col[row] = col;
                            self.col_to_row[col] = row;
                            if row == root {
                                return true;
                            }
                            col = prev;
                        }
                    }
                    descend = Some(owner);
                    c += 1;
                    break;
                }
                c += 1;
            }
            stack[top].1 = c;
            match descend {
                Some(owner) => stack.push((owner, 0)),
                None => {
                    stack.pop();
                }
            }
        }
        false
    }
}

/// Birkhoff–von Neumann decomposition by repeated perfect matchings on the
/// positive support of the residual.
pub fn bvn_decompose(b: &BistochasticMatrix, tol: f64) -> Result<Vec<(f64, Permutation)>> {
    let b = BistochasticMatrix::new(b.n, b.entries.clone(), tol)?;
    let n = b.n;
    let mut residual: Vec<f64> = b.entries.iter().map(|v| v.max(0.0)).collect();
    let mut matching = SupportMatching::new(n);
    let mut atoms: Vec<(f64, Permutation)> = Vec::new();
    let mut taken = 0.0;
    let max_atoms = (n.saturating_sub(1)).pow(2) + 1;
    loop {
        let remaining = 1.0 - taken;
        if remaining <= SUPPORT_THRESHOLD || atoms.len() >= max_atoms {
            break;
        }
        matching.prune(&residual);
        if !matching.complete(&residual) {
            if remaining <= 1e-9 {
                break;
            }
            return Err(Error::MatchingNotFound {
                residual: remaining,
            });
        }
        let w = (0..n)
            .map(|r| residual[r * n + matching.row_to_col[r]])
            .fold(f64::INFINITY, f64::min);
        for r in 0..n {
            let idx = r * n + matching.row_to_col[r];
            residual[idx] -= w;
            if residual[idx] <= SUPPORT_THRESHOLD {
                residual[idx] = 0.0;
            }
        }
        taken += w;
        atoms.push((w, Permutation::from_positions(matching.row_to_col.clone())?));
    }
    atoms.retain(|(w, _)| *w > SUPPORT_THRESHOLD);
    let total: f64 = atoms.iter().map(|(w, _)| w).sum();
    if atoms.is_empty() || total <= 0.0 {
        return Err(Error::MatchingNotFound { residual: 1.0 });
    }
    for a in &mut atoms {
        a.0 /= total;
    }
    Ok(atoms)
}

/// Expected exposure `sum_i w_i pi_i(gamma)` of a distribution.
pub fn expected_exposure(dist: &RankingDistribution, gamma: &[f64]) -> Result<ExposurePoint> {
    let atoms = dist.atoms();
    if atoms.is_empty() {
        return Err(Error::EmptyDistribution);
    }
    let mut x = vec![0.0; gamma.len()];
    for a in atoms {
        for (i, xi) in x.iter_mut().enumerate() {
            *xi += a.weight * gamma[a.perm.position_of(i)];
        }
    }
    Ok(ExposurePoint(x))
}

/// How repeated deliveries are drawn from a distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DeliveryStrategy {
    /// Independent draws from a seeded generator.
    Iid { seed: u64 },
    /// Deterministic largest-deficit scheduling: every atom's count stays
    /// within one delivery of `weight * t`.
    #[default]
    LowDiscrepancy,
}

/// Atom indices for `count` deliveries.
pub fn delivery_schedule(
    dist: &RankingDistribution,
    count: usize,
    strategy: DeliveryStrategy,
) -> Result<Vec<usize>> {
    let atoms = dist.atoms();
    if atoms.is_empty() {
        return Err(Error::EmptyDistribution);
    }
    match strategy {
        DeliveryStrategy::Iid { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let index = WeightedIndex::new(atoms.iter().map(|a| a.weight))
                .map_err(|e| Error::InvalidInstance(e.to_string()))?;
            Ok((0..count).map(|_| index.sample(&mut rng)).collect())
        }
        DeliveryStrategy::LowDiscrepancy => {
            let mut counts = vec![0usize; atoms.len()];
            let mut out = Vec::with_capacity(count);
            for t in 1..=count {
                let mut best = 0;
                let mut best_deficit = f64::NEG_INFINITY;
                for (k, a) in atoms.iter().enumerate() {
                    let deficit = a.weight * t as f64 - counts[k] as f64;
                    if deficit > best_deficit + 1e-12 {
                        best = k;
                        best_deficit = deficit;
                    }
                }
                counts[best] += 1;
                out.push(best);
            }
            Ok(out)
        }
    }
}

/// `count` rankings delivered from `dist`.
pub fn sample_deliveries(
    dist: &RankingDistribution,
    count: usize,
    strategy: DeliveryStrategy,
) -> Result<Vec<Permutation>> {
    let atoms = dist.atoms();
    Ok(delivery_schedule(dist, count, strategy)?
        .into_iter()
        .map(|k| atoms[k].perm.clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reconstruct(dist: &RankingDistribution, gamma: &[f64]) -> Vec<f64> {
        expected_exposure(dist, gamma).unwrap().into_inner()
    }

    #[test]
    fn vertex_decomposes_to_itself() {
        let g = [3.0, 2.0, 1.0];
        let d = caratheodory_decompose(&[1.0, 3.0, 2.0], &g, 1e-9).unwrap();
        assert_eq!(d.atoms().len(), 1);
        assert_eq!(d.atoms()[0].perm.ranking(), vec![1, 2, 0]);
    }

    #[test]
    fn toy2_center_splits_evenly() {
        let g = [1.0, 0.5];
        let d = caratheodory_decompose(&[0.75, 0.75], &g, 1e-9).unwrap();
        assert_eq!(d.atoms().len(), 2);
        for a in d.atoms() {
            assert!((a.weight - 0.5).abs() < 1e-12);
        }
        let x = reconstruct(&d, &g);
        assert!((x[0] - 0.75).abs() < 1e-12 && (x[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn center_of_321() {
        let g = [3.0, 2.0, 1.0];
        let d = caratheodory_decompose(&[2.0, 2.0, 2.0], &g, 1e-9).unwrap();
        assert!(d.atoms().len() <= 3);
        for v in reconstruct(&d, &g) {
            assert!((v - 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn caratheodory_rejects_outside_points() {
        assert!(matches!(
            caratheodory_decompose(&[1.1, 0.4], &[1.0, 0.5], 1e-9),
            Err(Error::NotInPolytope { .. })
        ));
    }

    #[test]
    fn bvn_identity_and_uniform() {
        let id = BistochasticMatrix::from_permutation(&Permutation::identity(3));
        let atoms = bvn_decompose(&id, 1e-9).unwrap();
        assert_eq!(atoms.len(), 1);
        assert_eq!(atoms[0].1, Permutation::identity(3));

        let half = BistochasticMatrix::new(2, vec![0.5; 4], 1e-9).unwrap();
        let atoms = bvn_decompose(&half, 1e-9).unwrap();
        assert_eq!(atoms.len(), 2);
        assert!(atoms.iter().all(|(w, _)| (w - 0.5).abs() < 1e-12));
        let mut perms: Vec<_> = atoms.iter().map(|(_, p)| p.ranking()).collect();
        perms.sort();
        assert_eq!(perms, vec![vec![0, 1], vec![1, 0]]);
    }

    #[test]
    fn bvn_rejects_non_bistochastic() {
        assert!(matches!(
            BistochasticMatrix::new(2, vec![0.7, 0.5, 0.3, 0.5], 1e-9),
            Err(Error::NotBistochastic(_))
        ));
    }

    #[test]
    fn expected_exposure_examples() {
        let g = [1.0, 0.5];
        let single = RankingDistribution::new(vec![Atom {
            weight: 1.0,
            perm: Permutation::from_ranking(&[1, 0]).unwrap(),
        }])
        .unwrap();
        assert_eq!(reconstruct(&single, &g), vec![0.5, 1.0]);
        let mixed = RankingDistribution::new(vec![
            Atom {
                weight: 0.5,
                perm: Permutation::identity(2),
            },
            Atom {
                weight: 0.5,
                perm: Permutation::from_ranking(&[1, 0]).unwrap(),
            },
        ])
        .unwrap();
        assert_eq!(reconstruct(&mixed, &g), vec![0.75, 0.75]);
    }

    fn half_half() -> RankingDistribution {
        RankingDistribution::new(vec![
            Atom {
                weight: 0.5,
                perm: Permutation::identity(2),
            },
            Atom {
                weight: 0.5,
                perm: Permutation::from_ranking(&[1, 0]).unwrap(),
            },
        ])
        .unwrap()
    }

    #[test]
    fn low_discrepancy_alternates() {
        let s = delivery_schedule(&half_half(), 4, DeliveryStrategy::LowDiscrepancy).unwrap();
        assert_eq!(s, vec![0, 1, 0, 1]);
        assert!(
            sample_deliveries(&half_half(), 0, DeliveryStrategy::LowDiscrepancy)
                .unwrap()
                .is_empty()
        );
    }

    #[test]
    fn iid_is_seeded() {
        let a = delivery_schedule(&half_half(), 10, DeliveryStrategy::Iid { seed: 42 }).unwrap();
        let b = delivery_schedule(&half_half(), 10, DeliveryStrategy::Iid { seed: 42 }).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, vec![1, 1, 0, 1, 0, 0, 0, 1, 1, 0]);
    }
}
