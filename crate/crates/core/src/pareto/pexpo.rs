//! Exact front by walking the expohedron boundary.
//!
//! Along the front the exposure minimizes `1/2 |G x - target|^2 - theta rho.x`
//! for increasing `theta`, so it moves piecewise linearly. On a face with
//! tangent space `V`, `dx/dtheta = d` with `P_V G'G d = P_V rho`. A segment ends
//! when the ray leaves the polytope (a new prefix becomes tight) or when the
//! multiplier of a tight prefix reaches zero (the prefix may be released).
//! At each break point the next direction solves the sensitivity problem
//! over the critical cone: prefixes with positive multipliers stay tight,
//! the others may only move inward.

use std::collections::BTreeSet;

use nalgebra::DMatrix;

use crate::convex::active_set::{solve_qp, QpProblem};
use crate::convex::start_point;
use crate::error::{Error, Result};
use crate::expohedron::{
    face_of, max_utility, membership_tol, ray_boundary_intersection, FaceDescriptor,
};
use crate::model::{dot, geometry_scale, norm, QueryInstance};

use super::{ParetoFront, ParetoPoint};

/// Best direction on a face together with its utility gain per unit of
/// unfairness (`f64::INFINITY` when unfairness does not grow to first order).
#[derive(Debug, Clone, PartialEq)]
pub struct FaceDirection {
    pub direction: Vec<f64>,
    pub slope: f64,
}

/// Orthonormal basis of the face tangent space (zero sum on every block),
/// one column per basis vector.
fn tangent_basis(face: &FaceDescriptor) -> DMatrix<f64> {
    let n = face.n_items();
    let dim = face.dimension();
    let mut z = DMatrix::zeros(n, dim);
    let mut col = 0;
    for block in &face.blocks {
        for k in 1..block.len() {
            let norm = ((k * (k + 1)) as f64).sqrt();
            for &i in &block[..k] {
                z[(i, col)] = 1.0 / norm;
            }
            z[(block[k], col)] = -(k as f64) / norm;
            col += 1;
        }
    }
    z
}

/// Optimal trade-off direction inside `face` at `x`. `None` on a vertex or when
/// no direction on the face gains utility without losing fairness first.
pub fn optimal_direction_on_face(
    instance: &QueryInstance,
    x: &[f64],
    face: &FaceDescriptor,
) -> Result<Option<FaceDirection>> {
    let n = instance.n();
    if x.len() != n || face.n_items() != n {
        return Err(Error::Dimension {
            expected: n,
            got: x.len().min(face.n_items()),
        });
    }
    let gamma = instance.gamma();
    if !face.holds_for(x, gamma, membership_tol(gamma)) {
        return Err(Error::NotInPolytope {
            violated: face.tight_levels.clone(),
        });
    }
    if face.dimension() == 0 {
        return Ok(None);
    }
    let z = tangent_basis(face);
    let dim = z.ncols();
    let g = instance.n_groups();
    let mut gz = DMatrix::zeros(g, dim);
    for i in 0..n {
        let grp = instance.group_of[i];
        for c in 0..dim {
            gz[(grp, c)] += z[(i, c)];
        }
    }
    let rho = nalgebra::DVector::from_column_slice(&instance.relevance);
    let rho_z = z.transpose() * &rho;
    let svd = gz.svd(false, true);
    let v_t = svd.v_t.expect("requested");
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cutoff = 1e-10 * sigma_max.max(1.0);

    let mut range_part = nalgebra::DVector::zeros(dim);
    let mut newton = nalgebra::DVector::zeros(dim);
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff {
            let v = v_t.row(k).transpose();
            let c = v.dot(&rho_z);
            range_part += &v * c;
            newton += &v * (c / (s * s));
        }
    }
    let free = &rho_z - &range_part;
    let tol = 1e-10 * norm(&instance.relevance).max(1e-300);
    if free.norm() > tol {
        let d = &z * free;
        let len = d.norm();
        return Ok(Some(FaceDirection {
            direction: d.iter().map(|v| v / len).collect(),
            slope: f64::INFINITY,
        }));
    }
    let d = &z * newton;
    let len = d.norm();
    if len <= 1e-300 {
        return Ok(None);
    }
    let d: Vec<f64> = d.iter().map(|v| v / len).collect();
    let gain = dot(&d, &instance.relevance);
    if gain <= tol {
        return Ok(None);
    }
    let gd = instance.aggregate(&d);
    let r: Vec<f64> = instance
        .aggregate(x)
        .iter()
        .zip(&instance.target_exposure)
        .map(|(a, t)| a - t)
        .collect();
    let r_norm = norm(&r);
    let slope = if r_norm > membership_tol(gamma) {
        let rate = dot(&r, &gd);
        if rate < -tol * r_norm {
            return Ok(None);
        }
        if rate <= 1e-15 * r_norm {
            f64::INFINITY
        } else {
            gain * r_norm / rate
        }
    } else {
        gain / norm(&gd)
    };
    Ok(Some(FaceDirection {
        direction: d,
        slope,
    }))
}

/// Multipliers of the tight prefixes of `face` for the stationarity vector
/// `h = G'(G x - target) - theta rho`: level `j` gets `mean_{j+1}(h) - mean_j(h)`.
fn multipliers(face: &FaceDescriptor, h: &[f64]) -> Vec<f64> {
    let means: Vec<f64> = face
        .blocks
        .iter()
        .map(|b| b.iter().map(|&i| h[i]).sum::<f64>() / b.len() as f64)
        .collect();
    means.windows(2).map(|w| w[1] - w[0]).collect()
}

struct Walker<'a> {
    inst: &'a QueryInstance,
    scale: f64,
    tol: f64,
    group_rows: Vec<Vec<f64>>,
}

impl Walker<'_> {
    fn residual(&self, x: &[f64]) -> Vec<f64> {
        self.inst
            .aggregate(x)
            .iter()
            .zip(&self.inst.target_exposure)
            .map(|(a, t)| a - t)
            .collect()
    }

    /// `G' v` for a group-space vector.
    fn spread(&self, v: &[f64]) -> Vec<f64> {
        self.inst.group_of.iter().map(|&g| v[g]).collect()
    }

    fn stationarity(&self, x: &[f64], theta: f64) -> Vec<f64> {
        let gr = self.spread(&self.residual(x));
        gr.iter()
            .zip(&self.inst.relevance)
            .map(|(a, r)| a - theta * r)
            .collect()
    }

    /// Indicator of the top `k` items of the face order.
    fn prefix_row(&self, order: &[usize], k: usize) -> Vec<f64> {
        let mut row = vec![0.0; order.len()];
        for &i in &order[..k] {
            row[i] = 1.0;
        }
        row
    }

    fn cone_problem(&self, order: &[usize], equal: &[usize], inward: &[usize]) -> QpProblem {
        let n = order.len();
        let mut p = QpProblem::new(n);
        p.push_eq(vec![1.0; n], 0.0);
        for &k in equal {
            p.push_eq(self.prefix_row(order, k), 0.0);
        }
        for &k in inward {
            p.push_ineq(self.prefix_row(order, k), 0.0);
        }
        p
    }

    /// Projection of `rho` onto the critical cone intersected with `G d = 0`.
    fn free_direction(
        &self,
        order: &[usize],
        equal: &[usize],
        inward: &[usize],
    ) -> Result<Option<Vec<f64>>> {
        let n = order.len();
        let mut p = self.cone_problem(order, equal, inward);
        for row in &self.group_rows {
            p.push_eq(row.clone(), 0.0);
        }
        p.objective_rows = (0..n)
            .map(|i| {
                let mut r = vec![0.0; n];
                r[i] = 1.0;
                r
            })
            .collect();
        p.objective_target = self.inst.relevance.clone();
        let sol = solve_qp(&p, &vec![0.0; n])?;
        let rho = &self.inst.relevance;
        let gain = dot(&sol.x, rho);
        if gain > 1e-10 * dot(rho, rho).max(1e-300) {
            Ok(Some(sol.x))
        } else {
            Ok(None)
        }
    }

    /// `dx/dtheta` over the critical cone: minimize `1/2 |G d|^2 - rho.d`.
    fn sensitivity(&self, order: &[usize], equal: &[usize], inward: &[usize]) -> Result<Vec<f64>> {
        let n = order.len();
        let mut p = self.cone_problem(order, equal, inward);
        p.objective_rows = self.group_rows.clone();
        p.objective_target = vec![0.0; self.group_rows.len()];
        p.linear = self.inst.relevance.iter().map(|r| -2.0 * r).collect();
        Ok(solve_qp(&p, &vec![0.0; n])?.x)
    }
}

/// Exact front from the fairness-optimal start point to the PRP ranking.
///
/// Break points are returned in order; every exposure on the segment between
/// two consecutive points is Pareto-optimal.
pub fn pexpo_front(instance: &QueryInstance) -> Result<ParetoFront> {
    let n = instance.n();
    let gamma = instance.gamma();
    let walker = Walker {
        inst: instance,
        scale: geometry_scale(gamma),
        tol: membership_tol(gamma),
        group_rows: instance.group_rows(),
    };
    let u_prp = max_utility(&instance.relevance, gamma);
    let rho_norm = norm(&instance.relevance);

    let mut x = start_point(instance)?.into_inner();
    let mut theta = 0.0_f64;
    // Prefix levels whose multiplier is known to be zero at the current point.
    let mut released: BTreeSet<usize> = BTreeSet::new();
    let mut points = vec![ParetoPoint::evaluate(instance, x.clone())?];
    let mut visited: Vec<Vec<usize>> = Vec::new();
    let limit = 4 * n * n;

    for _ in 0..limit.max(4) {
        if dot(&x, &instance.relevance) >= u_prp - 1e-9 {
            return Ok(finish(points));
        }
        let face = face_of(&x, gamma, walker.tol)?;
        visited.push(face.tight_levels.clone());
        let order: Vec<usize> = face.blocks.concat();
        let h = walker.stationarity(&x, theta);
        let lam = multipliers(&face, &h);
        let lam_tol = 1e-9 * h.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        let mut equal = Vec::new();
        let mut inward = Vec::new();
        for (&k, &l) in face.tight_levels.iter().zip(&lam) {
            if l > lam_tol && !released.contains(&k) {
                equal.push(k);
            } else {
                inward.push(k);
            }
        }

        if let Some(d) = walker.free_direction(&order, &equal, &inward)? {
            let hit = ray_boundary_intersection(&x, &d, gamma, walker.tol)?;
            if hit.step * norm(&d) <= 1e-14 * walker.scale {
                return Err(Error::SolverStalled("free direction is blocked".into()));
            }
            let before = face.tight_levels.clone();
            x = hit.point;
            released = newly_tight(&x, gamma, walker.tol, &before)?;
            points.push(ParetoPoint::evaluate(instance, x.clone())?);
            continue;
        }

        let d = walker.sensitivity(&order, &equal, &inward)?;
        let d_norm = norm(&d);
        if d_norm <= 1e-11 * rho_norm.max(1e-300) {
            // Stationary in x: raise theta until a multiplier vanishes.
            let rho_means = multipliers(&face, &instance.relevance);
            let mut next: Option<(f64, usize)> = None;
            for ((&k, &l), &rm) in face.tight_levels.iter().zip(&lam).zip(&rho_means) {
                // d lambda / d theta = -(mean_{j+1}(rho) - mean_j(rho)).
                if l > lam_tol && !released.contains(&k) && rm > 0.0 {
                    let dt = l / rm;
                    if next.is_none_or(|(b, _)| dt < b) {
                        next = Some((dt, k));
                    }
                }
            }
            match next {
                Some((dt, k)) => {
                    theta += dt;
                    released.insert(k);
                    continue;
                }
                None => return Ok(finish(points)),
            }
        }

        // Prefixes that stay tight along d, and their multipliers over the step.
        let d_scale = d_norm * (n as f64).sqrt();
        let seg_levels: Vec<usize> = face
            .tight_levels
            .iter()
            .copied()
            .filter(|&k| order[..k].iter().map(|&i| d[i]).sum::<f64>().abs() <= 1e-9 * d_scale)
            .collect();
        let seg_face = FaceDescriptor::from_order(&order, &seg_levels);
        let lam0 = multipliers(&seg_face, &h);
        let gd = walker.spread(&instance.aggregate(&d));
        let dh: Vec<f64> = gd
            .iter()
            .zip(&instance.relevance)
            .map(|(a, r)| a - r)
            .collect();
        let lam_rate = multipliers(&seg_face, &dh);
        let rate_tol = 1e-10 * dh.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        let mut event: Option<(f64, usize)> = None;
        for ((&k, &l), &dl) in seg_levels.iter().zip(&lam0).zip(&lam_rate) {
            if l > lam_tol && !released.contains(&k) && dl < -rate_tol {
                let s = l / -dl;
                if event.is_none_or(|(b, _)| s < b) {
                    event = Some((s, k));
                }
            }
        }
        let hit = ray_boundary_intersection(&x, &d, gamma, walker.tol)?;
        let (step, next_released) = match event {
            Some((s, k)) if s < hit.step => {
                let mut set = BTreeSet::new();
                set.insert(k);
                (s, Some(set))
            }
            _ => (hit.step, None),
        };
        if step * d_norm <= 1e-14 * walker.scale {
            // Zero-length segment: the blocking prefix carries no multiplier.
            match next_released {
                Some(set) => released.extend(set),
                None => {
                    let fresh = newly_tight(&hit.point, gamma, walker.tol, &seg_levels)?;
                    if fresh.is_subset(&released) {
                        return Err(Error::SolverStalled("zero-length step".into()));
                    }
                    released.extend(fresh);
                }
            }
            continue;
        }
        x = match &next_released {
            Some(_) => x.iter().zip(&d).map(|(a, b)| a + step * b).collect(),
            None => hit.point,
        };
        theta += step;
        released = match next_released {
            Some(set) => set,
            None => newly_tight(&x, gamma, walker.tol, &seg_levels)?,
        };
        points.push(ParetoPoint::evaluate(instance, x.clone())?);
    }
    Err(Error::NonTermination { limit, visited })
}

/// Tight levels of `x` not listed in `before`.
fn newly_tight(x: &[f64], gamma: &[f64], tol: f64, before: &[usize]) -> Result<BTreeSet<usize>> {
    let face = face_of(x, gamma, tol)?;
    Ok(face
        .tight_levels
        .into_iter()
        .filter(|k| !before.contains(k))
        .collect())
}

/// Drops break points that the next one weakly dominates (moves that gain
/// utility at constant unfairness) and repeated points.
fn finish(points: Vec<ParetoPoint>) -> ParetoFront {
    let mut out: Vec<ParetoPoint> = Vec::with_capacity(points.len());
    for p in points {
        if let Some(last) = out.last() {
            if p.utility <= last.utility {
                continue;
            }
            if p.unfairness <= last.unfairness {
                out.pop();
            }
        }
        out.push(p);
    }
    ParetoFront {
        points: out,
        connected: true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TargetPolicy;

    fn toy2() -> QueryInstance {
        QueryInstance::new(
            "toy2",
            vec![1.0, 0.2],
            vec![0, 1],
            vec![1.0, 0.5],
            &TargetPolicy::SizeProportional,
        )
        .unwrap()
    }

    fn toy3() -> QueryInstance {
        QueryInstance::new(
            "toy3",
            vec![0.9, 0.6, 0.1],
            vec![0, 0, 1],
            vec![1.0, 0.63093, 0.5],
            &TargetPolicy::SizeProportional,
        )
        .unwrap()
    }

    #[test]
    fn toy2_direction_on_full_face() {
        let inst = toy2();
        let face = face_of(&[0.75, 0.75], inst.gamma(), 1e-9).unwrap();
        let dir = optimal_direction_on_face(&inst, &[0.75, 0.75], &face)
            .unwrap()
            .unwrap();
        let s = 0.5f64.sqrt();
        assert!((dir.direction[0] - s).abs() < 1e-12 && (dir.direction[1] + s).abs() < 1e-12);
        assert!((dir.slope - 0.565685).abs() < 1e-6);
    }

    #[test]
    fn single_group_direction_is_free() {
        let inst = QueryInstance::new(
            "one",
            vec![0.2, 0.9, 0.5],
            vec![0, 0, 0],
            vec![3.0, 2.0, 1.0],
            &TargetPolicy::SizeProportional,
        )
        .unwrap();
        let x = [2.0, 2.0, 2.0];
        let face = face_of(&x, inst.gamma(), 1e-9).unwrap();
        let dir = optimal_direction_on_face(&inst, &x, &face)
            .unwrap()
            .unwrap();
        assert!(dir.slope.is_infinite());
        // Proportional to rho minus its mean.
        let m = (0.2 + 0.9 + 0.5) / 3.0;
        let rv: Vec<f64> = inst.relevance.iter().map(|r| r - m).collect();
        let c = dot(&rv, &dir.direction) / norm(&rv);
        assert!((c - 1.0).abs() < 1e-12);
    }

    #[test]
    fn vertex_has_no_direction() {
        let inst = toy3();
        let x = [1.0, 0.63093, 0.5];
        let face = face_of(&x, inst.gamma(), 1e-9).unwrap();
        assert!(optimal_direction_on_face(&inst, &x, &face)
            .unwrap()
            .is_none());
    }

    #[test]
    fn toy2_front_is_one_segment() {
        let f = pexpo_front(&toy2()).unwrap();
        assert_eq!(f.len(), 2, "{:?}", f.points);
        assert!((f.points[0].utility - 0.9).abs() < 1e-9);
        assert!(f.points[0].unfairness < 1e-9);
        assert!((f.points[1].utility - 1.1).abs() < 1e-9);
        assert!((f.points[1].unfairness - 0.353553).abs() < 1e-6);
        assert!((f.points[1].exposure[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn single_group_front_is_prp() {
        let inst = QueryInstance::new(
            "one",
            vec![0.2, 0.9, 0.5],
            vec![0, 0, 0],
            vec![3.0, 2.0, 1.0],
            &TargetPolicy::SizeProportional,
        )
        .unwrap();
        let f = pexpo_front(&inst).unwrap();
        assert_eq!(f.len(), 1);
        assert!((f.points[0].utility - max_utility(&inst.relevance, inst.gamma())).abs() < 1e-9);
        assert!(f.points[0].unfairness < 1e-9);
    }

    #[test]
    fn toy3_front_endpoints() {
        let f = pexpo_front(&toy3()).unwrap();
        let first = &f.points[0];
        let last = f.points.last().unwrap();
        assert!((first.utility - 1.19959).abs() < 1e-5, "{first:?}");
        assert!(first.unfairness < 1e-7);
        assert!((last.utility - 1.32856).abs() < 1e-5, "{last:?}");
        assert!((last.unfairness - 0.297423).abs() < 1e-6, "{last:?}");
        for w in f.points.windows(2) {
            assert!(w[1].unfairness > w[0].unfairness && w[1].utility > w[0].utility);
        }
    }
}
