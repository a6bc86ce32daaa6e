//! Brute-force reference: optimize directly over weights on all `n!`
//! vertices of the expohedron. Only usable for small `n` (the acceptance
//! checks use `n <= 5`); it shares the active-set kernel but none of the
//! majorization machinery, so it independently checks the cut-generation
//! solvers and the facet walk.

use crate::error::{Error, Result};
use crate::model::{dot, QueryInstance};

use super::active_set::{solve_qp, QpProblem};

/// All permutations of `0..n` as rankings (item at each position).
pub fn all_rankings(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(n), &mut vec![false; n], &mut out);
    out
}

/// Exposure vectors of every vertex of the expohedron of `gamma`.
pub fn all_vertices(gamma: &[f64]) -> Vec<Vec<f64>> {
    all_rankings(gamma.len())
        .into_iter()
        .map(|ranking| {
            let mut v = vec![0.0; gamma.len()];
            for (pos, &item) in ranking.iter().enumerate() {
                v[item] = gamma[pos];
            }
            v
        })
        .collect()
}

fn simplex_problem(n_vertices: usize) -> QpProblem {
    let mut p = QpProblem::new(n_vertices);
    p.push_eq(vec![1.0; n_vertices], 1.0);
    for k in 0..n_vertices {
        let mut r = vec![0.0; n_vertices];
        r[k] = -1.0;
        p.push_ineq(r, 0.0);
    }
    p
}

/// Vertex-weight formulation of the utility/unfairness problems.
pub struct VertexOracle<'a> {
    instance: &'a QueryInstance,
    vertices: Vec<Vec<f64>>,
    utilities: Vec<f64>,
    /// `G V`: group exposure of each vertex, one row per group.
    group_rows: Vec<Vec<f64>>,
}

impl<'a> VertexOracle<'a> {
    pub fn new(instance: &'a QueryInstance) -> Result<Self> {
        if instance.n() > 7 {
            return Err(Error::InvalidInstance(
                "vertex oracle limited to n <= 7".into(),
            ));
        }
        let vertices = all_vertices(instance.gamma());
        let utilities = vertices
            .iter()
            .map(|v| dot(v, &instance.relevance))
            .collect();
        let aggregates: Vec<Vec<f64>> = vertices.iter().map(|v| instance.aggregate(v)).collect();
        let group_rows = (0..instance.n_groups())
            .map(|j| aggregates.iter().map(|a| a[j]).collect())
            .collect();
        Ok(VertexOracle {
            instance,
            vertices,
            utilities,
            group_rows,
        })
    }

    fn fairness_problem(&self) -> QpProblem {
        let mut p = simplex_problem(self.vertices.len());
        p.objective_rows = self.group_rows.clone();
        p.objective_target = self.instance.target_exposure.clone();
        p
    }

    fn exposure(&self, w: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.instance.n()];
        for (wk, v) in w.iter().zip(&self.vertices) {
            for (xi, vi) in x.iter_mut().zip(v) {
                *xi += wk * vi;
            }
        }
        x
    }

    /// Minimum attainable unfairness and a minimizing exposure.
    pub fn min_unfairness(&self) -> Result<(f64, Vec<f64>)> {
        let m = self.vertices.len();
        let sol = solve_qp(&self.fairness_problem(), &vec![1.0 / m as f64; m])?;
        Ok((sol.objective.max(0.0).sqrt(), self.exposure(&sol.x)))
    }

    /// Largest utility among points with minimum unfairness.
    pub fn max_utility_at_min_unfairness(&self) -> Result<f64> {
        let m = self.vertices.len();
        let (_, x) = self.min_unfairness()?;
        let image = self.instance.aggregate(&x);
        let mut p = simplex_problem(m);
        p.linear = self.utilities.iter().map(|u| -u).collect();
        for (row, y) in self.group_rows.iter().zip(&image) {
            p.push_eq(row.clone(), *y);
        }
        let start = self.min_unfairness_weights()?;
        let sol = solve_qp(&p, &start)?;
        Ok(-sol.objective)
    }

    fn min_unfairness_weights(&self) -> Result<Vec<f64>> {
        let m = self.vertices.len();
        Ok(solve_qp(&self.fairness_problem(), &vec![1.0 / m as f64; m])?.x)
    }

    /// Minimum unfairness subject to utility exactly `u`.
    pub fn min_unfairness_at_utility(&self, u: f64) -> Result<f64> {
        let m = self.vertices.len();
        let (lo, hi) = self.utility_range();
        if u < self.utilities[lo] - 1e-12 || u > self.utilities[hi] + 1e-12 {
            return Err(Error::UtilityInfeasible {
                requested: u,
                max: self.utilities[hi],
            });
        }
        let span = self.utilities[hi] - self.utilities[lo];
        let t = if span <= 0.0 {
            1.0
        } else {
            ((u - self.utilities[lo]) / span).clamp(0.0, 1.0)
        };
        let mut start = vec![0.0; m];
        start[lo] += 1.0 - t;
        start[hi] += t;
        let mut p = self.fairness_problem();
        p.push_eq(self.utilities.clone(), u);
        let sol = solve_qp(&p, &start)?;
        Ok(sol.objective.max(0.0).sqrt())
    }

    pub fn max_utility(&self) -> f64 {
        let (_, hi) = self.utility_range();
        self.utilities[hi]
    }

    fn utility_range(&self) -> (usize, usize) {
        let mut lo = 0;
        let mut hi = 0;
        for (k, &u) in self.utilities.iter().enumerate() {
            if u < self.utilities[lo] {
                lo = k;
            }
            if u > self.utilities[hi] {
                hi = k;
            }
        }
        (lo, hi)
    }
}

/// Squared distance from `x` to the convex hull of the vertices of `gamma`.
pub fn hull_distance_sq(x: &[f64], gamma: &[f64]) -> Result<f64> {
    let vertices = all_vertices(gamma);
    let m = vertices.len();
    let mut p = simplex_problem(m);
    p.objective_rows = (0..x.len())
        .map(|i| vertices.iter().map(|v| v[i]).collect())
        .collect();
    p.objective_target = x.to_vec();
    let sol = solve_qp(&p, &vec![1.0 / m as f64; m])?;
    Ok(sol.objective.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TargetPolicy;

    #[test]
    fn enumerates_factorial() {
        assert_eq!(all_rankings(4).len(), 24);
        assert_eq!(all_vertices(&[3.0, 2.0, 1.0]).len(), 6);
    }

    #[test]
    fn toy2_oracle_values() {
        let inst = QueryInstance::new(
            "toy2",
            vec![1.0, 0.2],
            vec![0, 1],
            vec![1.0, 0.5],
            &TargetPolicy::SizeProportional,
        )
        .unwrap();
        let o = VertexOracle::new(&inst).unwrap();
        assert!(o.min_unfairness().unwrap().0 < 1e-9);
        assert!((o.max_utility_at_min_unfairness().unwrap() - 0.9).abs() < 1e-9);
        assert!((o.min_unfairness_at_utility(1.0).unwrap() - 0.125 * 2f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn hull_membership() {
        let g = [3.0, 2.0, 1.0];
        assert!(hull_distance_sq(&[2.0, 2.0, 2.0], &g).unwrap() < 1e-18);
        assert!(hull_distance_sq(&[3.5, 2.0, 0.5], &g).unwrap() > 1e-3);
    }
}
