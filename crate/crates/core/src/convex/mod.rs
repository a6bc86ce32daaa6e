//! Convex subproblems over the expohedron and the Birkhoff polytope.
//!
//! Majorization `x ⪯ gamma` has one inequality per item subset; the active-set
//! solver handles that family implicitly, so only the top-`k` sets that become
//! tight are ever formed.

pub mod active_set;
pub mod birkhoff;
pub mod oracle;

use crate::error::{Error, Result};
use crate::expohedron::{max_utility, prefix_bounds, vertex_ordered_by};
use crate::model::{geometry_scale, utility_of, ExposurePoint, QueryInstance};

use active_set::{solve_qp, QpProblem, QpSolution};

pub use birkhoff::{scalarized_birkhoff_qp, BirkhoffQpResult};

/// Minimizes `base` over the expohedron of `gamma` from the feasible `start`.
fn solve_over_expohedron(base: &QpProblem, gamma: &[f64], start: &[f64]) -> Result<QpSolution> {
    let mut problem = base.clone();
    problem.top_sum_bounds = Some(prefix_bounds(gamma));
    solve_qp(&problem, start)
}

fn fairness_problem(instance: &QueryInstance) -> QpProblem {
    let mut p = QpProblem::new(instance.n());
    p.objective_rows = instance.group_rows();
    p.objective_target = instance.target_exposure.clone();
    p.push_eq(vec![1.0; instance.n()], instance.total_exposure());
    p
}

/// Fairness-optimal, then utility-maximal exposure point.
///
/// Stage one minimizes `|G x - target|` over the expohedron (the optimal group
/// image is unique); stage two maximizes utility with the group image fixed.
pub fn start_point(instance: &QueryInstance) -> Result<ExposurePoint> {
    let n = instance.n();
    let center = vec![instance.total_exposure() / n as f64; n];
    let gamma = instance.gamma();

    let stage1 = solve_over_expohedron(&fairness_problem(instance), gamma, &center)?;
    let x1 = stage1.x;
    let group_image = instance.aggregate(&x1);

    let mut lp = QpProblem::new(n);
    lp.linear = instance.relevance.iter().map(|r| -r).collect();
    for (row, y) in instance.group_rows().into_iter().zip(&group_image) {
        lp.push_eq(row, *y);
    }
    let stage2 = solve_over_expohedron(&lp, gamma, &x1)?;
    Ok(ExposurePoint(stage2.x))
}

/// Minimum-unfairness exposure at fixed utility `u`.
pub fn min_unfairness_at_utility(instance: &QueryInstance, u: f64) -> Result<ExposurePoint> {
    let n = instance.n();
    let gamma = instance.gamma();
    let rho = &instance.relevance;
    let scale = geometry_scale(gamma);
    let tol = 1e-9 * scale;

    let top = vertex_ordered_by(rho, gamma);
    let neg: Vec<f64> = rho.iter().map(|r| -r).collect();
    let bottom = vertex_ordered_by(&neg, gamma);
    let u_max = max_utility(rho, gamma);
    let u_min = utility_of(&bottom, rho)?;
    if u > u_max + tol || u < u_min - tol {
        return Err(Error::UtilityInfeasible {
            requested: u,
            max: u_max,
        });
    }
    let u = u.clamp(u_min, u_max);

    let center = vec![instance.total_exposure() / n as f64; n];
    let u_center = utility_of(&center, rho)?;
    let (end, u_end) = if u >= u_center {
        (&top, u_max)
    } else {
        (&bottom, u_min)
    };
    let span = u_end - u_center;
    let tau = if span.abs() <= 1e-15 {
        1.0
    } else {
        ((u - u_center) / span).clamp(0.0, 1.0)
    };
    let feasible: Vec<f64> = center
        .iter()
        .zip(end)
        .map(|(c, v)| c + tau * (v - c))
        .collect();

    fixed_utility_solve(instance, u, &feasible)
}

/// Same as [`min_unfairness_at_utility`], warm-started between two feasible
/// exposure points whose utilities bracket `u`.
pub fn min_unfairness_at_utility_between(
    instance: &QueryInstance,
    u: f64,
    lo: &[f64],
    hi: &[f64],
) -> Result<ExposurePoint> {
    let rho = &instance.relevance;
    let (u_lo, u_hi) = (utility_of(lo, rho)?, utility_of(hi, rho)?);
    let tol = 1e-9 * geometry_scale(instance.gamma());
    if u < u_lo.min(u_hi) - tol || u > u_lo.max(u_hi) + tol {
        return Err(Error::UtilityInfeasible {
            requested: u,
            max: u_lo.max(u_hi),
        });
    }
    let span = u_hi - u_lo;
    let w = if span.abs() <= 1e-15 {
        0.0
    } else {
        ((u - u_lo) / span).clamp(0.0, 1.0)
    };
    let start: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| a + w * (b - a)).collect();
    let u = utility_of(&start, rho)?;
    fixed_utility_solve(instance, u, &start)
}

fn fixed_utility_solve(instance: &QueryInstance, u: f64, start: &[f64]) -> Result<ExposurePoint> {
    let mut p = fairness_problem(instance);
    p.push_eq(instance.relevance.clone(), u);
    let sol = solve_over_expohedron(&p, instance.gamma(), start)?;
    Ok(ExposurePoint(sol.x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expohedron::majorization_check;
    use crate::model::{unfairness_of, TargetPolicy};

    fn toy2(target: TargetPolicy) -> QueryInstance {
        QueryInstance::new("toy2", vec![1.0, 0.2], vec![0, 1], vec![1.0, 0.5], &target).unwrap()
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

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn start_point_toy2_center() {
        let inst = toy2(TargetPolicy::SizeProportional);
        let x = start_point(&inst).unwrap();
        assert!(close(&x, &[0.75, 0.75], 1e-9), "{x:?}");
        assert!((utility_of(&x, &inst.relevance).unwrap() - 0.9).abs() < 1e-9);
    }

    #[test]
    fn start_point_toy3() {
        let inst = toy3();
        let x = start_point(&inst).unwrap();
        assert!(close(&x, &[0.92062, 0.5, 0.71031], 1e-9), "{x:?}");
        assert!(unfairness_of(&x, &inst).unwrap() < 1e-7);
    }

    #[test]
    fn start_point_target_outside() {
        let inst = toy2(TargetPolicy::Explicit(vec![1.25, 0.25]));
        let x = start_point(&inst).unwrap();
        assert!(close(&x, &[1.0, 0.5], 1e-9), "{x:?}");
    }

    #[test]
    fn fixed_utility_toy2() {
        let inst = toy2(TargetPolicy::SizeProportional);
        let x = min_unfairness_at_utility(&inst, 1.0).unwrap();
        assert!(close(&x, &[0.875, 0.625], 1e-9), "{x:?}");
        assert!((unfairness_of(&x, &inst).unwrap() - 0.176777).abs() < 1e-6);
        let x = min_unfairness_at_utility(&inst, 1.1).unwrap();
        assert!(close(&x, &[1.0, 0.5], 1e-9), "{x:?}");
        assert!(matches!(
            min_unfairness_at_utility(&inst, 1.2),
            Err(Error::UtilityInfeasible { .. })
        ));
    }

    #[test]
    fn solutions_are_feasible() {
        let inst = toy3();
        for u in [1.2, 1.25, 1.3, 1.328] {
            let x = min_unfairness_at_utility(&inst, u).unwrap();
            assert!(majorization_check(&x, inst.gamma(), 1e-7)
                .unwrap()
                .is_feasible());
        }
    }
}
