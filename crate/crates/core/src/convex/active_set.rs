//! Dense primal active-set solver for convex problems of the form
//!
//! ```text
//!   minimize   |M x - t|^2 + c . x
//!   subject to A x  = b
//!              C x <= d
//!              sum of the k largest x_i <= B_k   (optional, k = 1..n-1)
//! ```
//!
//! `M` may be rank deficient (or empty, which gives a linear program). Each
//! iteration works in the null space of the working set: components of the
//! projected gradient that see no curvature are followed as descent rays until
//! a constraint blocks; otherwise the Newton step on the curved part is
//! taken. Multipliers of the working set decide which constraint to release.
//!
//! The top-`k` family has one row per item subset. It is never materialized:
//! the ratio test finds the first subset to become tight along a step by
//! sorting, and only those subsets enter the working set.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::expohedron::{descending_order, exit_step, top_sum_excess};
use crate::model::{dot, norm};

#[derive(Debug, Clone, Default)]
pub struct QpProblem {
    pub n: usize,
    pub objective_rows: Vec<Vec<f64>>,
    pub objective_target: Vec<f64>,
    pub linear: Vec<f64>,
    pub eq_rows: Vec<Vec<f64>>,
    pub eq_rhs: Vec<f64>,
    pub ineq_rows: Vec<Vec<f64>>,
    pub ineq_rhs: Vec<f64>,
    /// Bounds `B_0..=B_n` of the implicit top-`k` family, if present.
    pub top_sum_bounds: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Explicit inequalities in the final working set.
    pub active: Vec<usize>,
}

impl QpProblem {
    pub fn new(n: usize) -> Self {
        QpProblem {
            n,
            linear: vec![0.0; n],
            ..Default::default()
        }
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let quad: f64 = self
            .objective_rows
            .iter()
            .zip(&self.objective_target)
            .map(|(r, t)| (dot(r, x) - t).powi(2))
            .sum();
        quad + dot(&self.linear, x)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = self.linear.clone();
        for (r, t) in self.objective_rows.iter().zip(&self.objective_target) {
            let res = 2.0 * (dot(r, x) - t);
            for (gi, ri) in g.iter_mut().zip(r) {
                *gi += res * ri;
            }
        }
        g
    }

    pub fn push_eq(&mut self, row: Vec<f64>, rhs: f64) {
        self.eq_rows.push(row);
        self.eq_rhs.push(rhs);
    }

    pub fn push_ineq(&mut self, row: Vec<f64>, rhs: f64) {
        self.ineq_rows.push(row);
        self.ineq_rhs.push(rhs);
    }

    /// Largest violation over the inequalities, including the top-`k` family.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let explicit = self
            .ineq_rows
            .iter()
            .zip(&self.ineq_rhs)
            .map(|(r, b)| dot(r, x) - b)
            .fold(f64::NEG_INFINITY, f64::max);
        match &self.top_sum_bounds {
            Some(bounds) => explicit.max(top_sum_excess(x, bounds).0),
            None => explicit,
        }
    }

    fn top_sum_tol(&self) -> f64 {
        self.top_sum_bounds.as_ref().map_or(0.0, |b| {
            1e-12 * b.last().copied().unwrap_or(0.0).abs().max(1.0)
        })
    }
}

fn indicator(items: &[usize], n: usize) -> Vec<f64> {
    let mut r = vec![0.0; n];
    for &i in items {
        r[i] = 1.0;
    }
    r
}

/// Orthonormal basis of a growing set of rows.
#[derive(Debug, Clone, Default)]
struct RowBasis {
    q: Vec<Vec<f64>>,
}

impl RowBasis {
    fn project_out(&self, v: &mut [f64]) {
        for _ in 0..2 {
            for q in &self.q {
                let c = dot(q, v);
                for (vi, qi) in v.iter_mut().zip(q) {
                    *vi -= c * qi;
                }
            }
        }
    }

    /// Adds `row`; returns false (and leaves the basis unchanged) if the row
    /// is numerically dependent.
    fn push(&mut self, row: &[f64]) -> bool {
        let scale = norm(row);
        if scale == 0.0 {
            return false;
        }
        let mut v = row.to_vec();
        self.project_out(&mut v);
        let len = norm(&v);
        if len <= 1e-10 * scale {
            return false;
        }
        for vi in &mut v {
            *vi /= len;
        }
        self.q.push(v);
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Source {
    Row(usize),
    TopSet(usize),
}

#[derive(Debug, Clone)]
struct Active {
    source: Source,
    row: Vec<f64>,
}

impl Active {
    /// Fixed ordering for the anti-cycling rule.
    fn rank(&self) -> (usize, usize) {
        match self.source {
            Source::Row(k) => (0, k),
            Source::TopSet(k) => (1, k),
        }
    }
}

pub struct ActiveSetSolver<'a> {
    problem: &'a QpProblem,
    eq_used: Vec<usize>,
    working: Vec<Active>,
    basis: RowBasis,
    top_ids: HashMap<Vec<usize>, usize>,
    max_iterations: usize,
}

impl<'a> ActiveSetSolver<'a> {
    pub fn new(problem: &'a QpProblem) -> Self {
        let mut basis = RowBasis::default();
        let mut eq_used = Vec::new();
        for (k, row) in problem.eq_rows.iter().enumerate() {
            if basis.push(row) {
                eq_used.push(k);
            }
        }
        let mut cons = problem.ineq_rows.len() + problem.eq_rows.len();
        if problem.top_sum_bounds.is_some() {
            cons += problem.n;
        }
        ActiveSetSolver {
            problem,
            eq_used,
            working: Vec::new(),
            basis,
            top_ids: HashMap::new(),
            max_iterations: 100 * (problem.n + cons) + 1000,
        }
    }

    fn rebuild_basis(&mut self) {
        let mut basis = RowBasis::default();
        for &k in &self.eq_used {
            basis.push(&self.problem.eq_rows[k]);
        }
        let working = std::mem::take(&mut self.working);
        self.working = working.into_iter().filter(|a| basis.push(&a.row)).collect();
        self.basis = basis;
    }

    fn add_working(&mut self, source: Source, row: Vec<f64>) {
        if self.basis.push(&row) {
            self.working.push(Active { source, row });
        }
    }

    fn top_set_id(&mut self, mut items: Vec<usize>) -> (usize, Vec<usize>) {
        items.sort_unstable();
        let next = self.top_ids.len();
        let id = *self.top_ids.entry(items.clone()).or_insert(next);
        (id, items)
    }

    /// Orthonormal basis of the objective rows projected onto the null space
    /// of the working set. Directions orthogonal to it carry no curvature.
    fn curved_basis(&self) -> RowBasis {
        let p = self.problem;
        let n = p.n;
        let g = p.objective_rows.len();
        let mut curved = RowBasis::default();
        if g == 0 {
            return curved;
        }
        let mut rows = DMatrix::from_fn(g, n, |i, j| p.objective_rows[i][j]);
        let m = self.basis.q.len();
        if m > 0 {
            let q = DMatrix::from_fn(m, n, |i, j| self.basis.q[i][j]);
            for _ in 0..2 {
                let coeffs = &rows * q.transpose();
                rows -= coeffs * &q;
            }
        }
        for (i, r) in p.objective_rows.iter().enumerate() {
            let scale = norm(r);
            let mut v: Vec<f64> = rows.row(i).iter().cloned().collect();
            curved.project_out(&mut v);
            let len = norm(&v);
            if len > 1e-9 * scale {
                curved.q.push(v.iter().map(|x| x / len).collect());
            }
        }
        curved
    }

    /// Solves from a point that satisfies every constraint (within rounding).
    pub fn solve(mut self, start: &[f64]) -> Result<QpSolution> {
        let p = self.problem;
        let n = p.n;
        let top_tol = p.top_sum_tol();
        let mut x = start.to_vec();
        let mut degenerate_steps = 0usize;
        if let Some(bounds) = &p.top_sum_bounds {
            // Top sets already tight at the start join the working set.
            let order = descending_order(&x);
            let mut acc = 0.0;
            for k in 1..n {
                acc += x[order[k - 1]];
                if acc - bounds[k] >= -top_tol {
                    let (id, items) = self.top_set_id(order[..k].to_vec());
                    self.add_working(Source::TopSet(id), indicator(&items, n));
                }
            }
        }
        for iter in 0..self.max_iterations {
            let grad = p.gradient(&x);
            let gnorm = norm(&grad);
            let mut gp = grad.clone();
            self.basis.project_out(&mut gp);

            // Curved part of the objective restricted to the null space.
            let (direction, newton) = {
                let curved = self.curved_basis();
                let mut perp = gp.clone();
                curved.project_out(&mut perp);
                if norm(&perp) > 1e-10 * (1.0 + gnorm) {
                    (perp.iter().map(|v| -v).collect::<Vec<f64>>(), false)
                } else {
                    (newton_step(p, &curved.q, &gp), true)
                }
            };

            let xnorm = norm(&x);
            let pnorm = norm(&direction);
            if newton && pnorm <= 1e-12 * (1.0 + xnorm) {
                match self.release_candidate(&grad, degenerate_steps > 2 * n)? {
                    Some(pos) => {
                        self.working.remove(pos);
                        self.rebuild_basis();
                        continue;
                    }
                    None => {
                        let objective = p.objective(&x);
                        let active = self
                            .working
                            .iter()
                            .filter_map(|a| match a.source {
                                Source::Row(k) => Some(k),
                                Source::TopSet(_) => None,
                            })
                            .collect();
                        return Ok(QpSolution {
                            x,
                            objective,
                            iterations: iter,
                            active,
                        });
                    }
                }
            }

            // Rays may still see tiny curvature; never step past the line minimum.
            let mut alpha = if newton {
                1.0
            } else {
                let curvature: f64 = p
                    .objective_rows
                    .iter()
                    .map(|r| dot(r, &direction).powi(2))
                    .sum();
                let slope = dot(&grad, &direction);
                if curvature > 0.0 {
                    -slope / (2.0 * curvature)
                } else {
                    f64::INFINITY
                }
            };
            // Ratio test; ties go to the smallest index. The threshold matches
            // the dependence test of `RowBasis::push`, so a blocking row can
            // always join the working set.
            let mut blocking = None;
            for (k, (row, rhs)) in p.ineq_rows.iter().zip(&p.ineq_rhs).enumerate() {
                if self.working.iter().any(|a| a.source == Source::Row(k)) {
                    continue;
                }
                let ap = dot(row, &direction);
                if ap <= 1e-9 * norm(row) * pnorm {
                    continue;
                }
                let slack = (rhs - dot(row, &x)).max(0.0);
                let a = slack / ap;
                if a < alpha {
                    alpha = a;
                    blocking = Some(k);
                }
            }
            let mut top_block = None;
            if let Some(bounds) = &p.top_sum_bounds {
                let (a, items) = exit_step(&x, &direction, bounds, alpha, top_tol);
                if let Some(items) = items {
                    if a < alpha || !alpha.is_finite() || blocking.is_none() {
                        alpha = a;
                        blocking = None;
                        top_block = Some(items);
                    }
                }
            }
            if !alpha.is_finite() {
                return Err(Error::SolverStalled("unbounded descent direction".into()));
            }
            if alpha * pnorm <= 1e-14 * (1.0 + xnorm) {
                degenerate_steps += 1;
            } else {
                degenerate_steps = 0;
            }
            for (xi, di) in x.iter_mut().zip(&direction) {
                *xi += alpha * di;
            }
            if let Some(k) = blocking {
                self.add_working(Source::Row(k), p.ineq_rows[k].clone());
            }
            if let Some(items) = top_block {
                let (id, items) = self.top_set_id(items);
                self.add_working(Source::TopSet(id), indicator(&items, n));
            }
        }
        Err(Error::SolverStalled(format!(
            "active set did not converge in {} iterations",
            self.max_iterations
        )))
    }

    /// Position in `working` of the inequality to release, if any multiplier
    /// is negative.
    fn release_candidate(&self, grad: &[f64], bland: bool) -> Result<Option<usize>> {
        if self.working.is_empty() {
            return Ok(None);
        }
        let p = self.problem;
        let rows: Vec<&Vec<f64>> = self
            .eq_used
            .iter()
            .map(|&k| &p.eq_rows[k])
            .chain(self.working.iter().map(|a| &a.row))
            .collect();
        let m = rows.len();
        let gram = DMatrix::from_fn(m, m, |i, j| dot(rows[i], rows[j]));
        let rhs = DVector::from_fn(m, |i, _| -dot(rows[i], grad));
        let lambda = match gram.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => gram
                .lu()
                .solve(&rhs)
                .ok_or_else(|| Error::SolverStalled("singular working set".into()))?,
        };
        let offset = self.eq_used.len();
        let scale = 1e-10 * (1.0 + norm(grad));
        let mut pick: Option<(usize, f64)> = None;
        for (pos, a) in self.working.iter().enumerate() {
            let l = lambda[offset + pos];
            if l >= -scale {
                continue;
            }
            pick = match pick {
                None => Some((pos, l)),
                Some((bp, bl)) => {
                    let better = if bland {
                        a.rank() < self.working[bp].rank()
                    } else {
                        l < bl
                    };
                    if better {
                        Some((pos, l))
                    } else {
                        Some((bp, bl))
                    }
                }
            };
        }
        Ok(pick.map(|(pos, _)| pos))
    }
}

/// Minimizer of the quadratic model within the span of `basis`.
fn newton_step(p: &QpProblem, basis: &[Vec<f64>], grad: &[f64]) -> Vec<f64> {
    let n = p.n;
    let k = basis.len();
    if k == 0 {
        return vec![0.0; n];
    }
    // Columns M b_j; the reduced Hessian is twice their Gram matrix.
    let images: Vec<Vec<f64>> = basis
        .iter()
        .map(|b| p.objective_rows.iter().map(|r| dot(r, b)).collect())
        .collect();
    let hess = DMatrix::from_fn(k, k, |i, j| dot(&images[i], &images[j]));
    let rhs = DVector::from_fn(k, |i, _| -0.5 * dot(&basis[i], grad));
    let z = match hess.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => hess.lu().solve(&rhs).unwrap_or_else(|| DVector::zeros(k)),
    };
    let mut step = vec![0.0; n];
    for (b, zj) in basis.iter().zip(z.iter()) {
        for (si, bi) in step.iter_mut().zip(b) {
            *si += zj * bi;
        }
    }
    step
}

/// Solves `problem` starting from the feasible point `start`.
pub fn solve_qp(problem: &QpProblem, start: &[f64]) -> Result<QpSolution> {
    ActiveSetSolver::new(problem).solve(start)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_constrained_least_squares() {
        // min (x0 - 2)^2 + (x1 + 1)^2, 0 <= x <= 1
        let mut p = QpProblem::new(2);
        p.objective_rows = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        p.objective_target = vec![2.0, -1.0];
        p.push_ineq(vec![1.0, 0.0], 1.0);
        p.push_ineq(vec![0.0, 1.0], 1.0);
        p.push_ineq(vec![-1.0, 0.0], 0.0);
        p.push_ineq(vec![0.0, -1.0], 0.0);
        let s = solve_qp(&p, &[0.5, 0.5]).unwrap();
        assert!((s.x[0] - 1.0).abs() < 1e-12);
        assert!(s.x[1].abs() < 1e-12);
    }

    #[test]
    fn linear_program_on_simplex() {
        // max 3a + b + 2c on the probability simplex -> vertex a.
        let mut p = QpProblem::new(3);
        p.linear = vec![-3.0, -1.0, -2.0];
        p.push_eq(vec![1.0; 3], 1.0);
        for i in 0..3 {
            let mut r = vec![0.0; 3];
            r[i] = -1.0;
            p.push_ineq(r, 0.0);
        }
        let s = solve_qp(&p, &[1.0 / 3.0; 3]).unwrap();
        assert!((s.x[0] - 1.0).abs() < 1e-12);
        assert!((s.objective + 3.0).abs() < 1e-12);
    }

    #[test]
    fn rank_deficient_objective_uses_linear_tiebreak() {
        // min (x0 + x1 - 1)^2 - 0.1 x0 with 0 <= x <= 1: the quadratic fixes
        // the sum only, the linear term pushes x0 up.
        let mut p = QpProblem::new(2);
        p.objective_rows = vec![vec![1.0, 1.0]];
        p.objective_target = vec![1.0];
        p.linear = vec![-0.1, 0.0];
        for i in 0..2 {
            let mut up = vec![0.0; 2];
            up[i] = 1.0;
            p.push_ineq(up, 1.0);
            let mut lo = vec![0.0; 2];
            lo[i] = -1.0;
            p.push_ineq(lo, 0.0);
        }
        let s = solve_qp(&p, &[0.0, 0.0]).unwrap();
        // optimum: x0 at its bound, x1 zeroes the residual.
        assert!((s.x[0] - 1.0).abs() < 1e-10, "{:?}", s.x);
        assert!(s.x[1].abs() < 1e-10, "{:?}", s.x);
        assert!((s.objective + 0.1).abs() < 1e-12);
    }
}
