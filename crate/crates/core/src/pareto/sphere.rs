//! Approximate front from great-circle arcs on the circumscribed sphere.
//!
//! The arc from the fairness-optimal point to the PRP vertex is split
//! recursively at true Pareto points ("marked points") found by the
//! fixed-utility solver; the final arcs are sampled and mapped back to the
//! expohedron boundary.

use crate::convex::{min_unfairness_at_utility_between, start_point};
use crate::error::{Error, Result};
use crate::expohedron::{
    max_utility_vertex, project_sphere_to_boundary, project_to_sphere, SphereFrame,
};
use crate::model::{dot, norm, QueryInstance};

use super::{pexpo_front, ParetoFront, ParetoPoint};

/// Great-circle arc between two points of a sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicArc {
    center: Vec<f64>,
    radius: f64,
    from: Vec<f64>,
    to: Vec<f64>,
    omega: f64,
}

impl GeodesicArc {
    pub fn new(p: &[f64], q: &[f64], frame: &SphereFrame) -> Result<Self> {
        let unit = |v: &[f64]| -> Vec<f64> {
            v.iter()
                .zip(&frame.center)
                .map(|(a, c)| (a - c) / frame.radius)
                .collect()
        };
        let from = unit(p);
        let to = unit(q);
        let cos = (dot(&from, &to) / (norm(&from) * norm(&to))).clamp(-1.0, 1.0);
        let omega = cos.acos();
        if omega <= 1e-12 || std::f64::consts::PI - omega <= 1e-9 {
            return Err(Error::DegenerateArc);
        }
        Ok(GeodesicArc {
            center: frame.center.clone(),
            radius: frame.radius,
            from,
            to,
            omega,
        })
    }

    /// Angle subtended by the arc.
    pub fn angle(&self) -> f64 {
        self.omega
    }

    /// Point at fraction `t` of the arc; `t = 0` and `t = 1` give the ends.
    pub fn sample(&self, t: f64) -> Vec<f64> {
        let s = self.omega.sin();
        let a = ((1.0 - t) * self.omega).sin() / s;
        let b = (t * self.omega).sin() / s;
        self.center
            .iter()
            .zip(self.from.iter().zip(&self.to))
            .map(|(c, (u, w))| c + self.radius * (a * u + b * w))
            .collect()
    }
}

/// Result of the geodesic approximation.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereExpoFront {
    pub front: ParetoFront,
    /// True Pareto points used to split arcs, in utility order.
    pub marked: Vec<ParetoPoint>,
    /// Number of fixed-utility solves performed.
    pub qp_solves: usize,
}

#[derive(Clone)]
struct Node {
    on_sphere: Vec<f64>,
    point: ParetoPoint,
}

/// Sphere point for the start exposure. The center has no central
/// projection; it is then replaced by the sphere point in the direction that
/// keeps group exposure fixed while raising utility.
fn start_on_sphere(x: &[f64], frame: &SphereFrame, instance: &QueryInstance) -> Result<Vec<f64>> {
    match project_to_sphere(x, frame) {
        Err(Error::CenterProjection) => {}
        other => return other,
    }
    let g = instance.n_groups();
    let mut sums = vec![0.0; g];
    let sizes = instance.group_sizes();
    for (i, &grp) in instance.group_of.iter().enumerate() {
        sums[grp] += instance.relevance[i];
    }
    let mut v: Vec<f64> = instance
        .group_of
        .iter()
        .zip(&instance.relevance)
        .map(|(&grp, r)| r - sums[grp] / sizes[grp] as f64)
        .collect();
    if norm(&v) <= 1e-12 {
        let mean = instance.relevance.iter().sum::<f64>() / instance.n() as f64;
        v = instance.relevance.iter().map(|r| r - mean).collect();
    }
    let len = norm(&v);
    if len <= 1e-12 {
        return Err(Error::CenterProjection);
    }
    Ok(frame
        .center
        .iter()
        .zip(&v)
        .map(|(c, vi)| c + frame.radius * vi / len)
        .collect())
}

/// Geodesic approximation with `rounds` bisection rounds (up to
/// `2^rounds - 1` marked points) and `n_sample >= 2` samples per final arc,
/// arc ends included. Instances with two items have a one-dimensional
/// polytope, and the exact segment is returned.
pub fn sphere_expo_front(
    instance: &QueryInstance,
    rounds: usize,
    n_sample: usize,
) -> Result<SphereExpoFront> {
    if n_sample < 2 {
        return Err(Error::InvalidGrid(format!(
            "need at least 2 samples per arc, got {n_sample}"
        )));
    }
    if instance.n() <= 2 {
        return Ok(SphereExpoFront {
            front: pexpo_front(instance)?,
            marked: Vec::new(),
            qp_solves: 0,
        });
    }
    let gamma = instance.gamma();
    let frame = SphereFrame::new(gamma)?;
    let x0 = start_point(instance)?.into_inner();
    let start = Node {
        on_sphere: start_on_sphere(&x0, &frame, instance)?,
        point: ParetoPoint::evaluate(instance, x0)?,
    };
    let prp = max_utility_vertex(&instance.relevance, gamma);
    let end = Node {
        on_sphere: prp.clone(),
        point: ParetoPoint::evaluate(instance, prp)?,
    };
    if end.point.utility - start.point.utility <= 1e-12 * instance.scale() {
        return Ok(SphereExpoFront {
            front: ParetoFront::sampled(vec![start.point, end.point]),
            marked: Vec::new(),
            qp_solves: 0,
        });
    }

    let close = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt()
            <= 1e-9 * frame.radius
    };
    let mut nodes = vec![start, end];
    let mut marked = Vec::new();
    let mut qp_solves = 0;
    for _ in 0..rounds {
        let mut next = vec![nodes[0].clone()];
        for pair in nodes.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            if let Ok(arc) = GeodesicArc::new(&a.on_sphere, &b.on_sphere, &frame) {
                let mid = project_sphere_to_boundary(&arc.sample(0.5), &frame, gamma)?;
                let lo = a.point.utility.min(b.point.utility);
                let hi = a.point.utility.max(b.point.utility);
                let u_mid = dot(&mid, &instance.relevance).clamp(lo, hi);
                let m = min_unfairness_at_utility_between(
                    instance,
                    u_mid,
                    &a.point.exposure,
                    &b.point.exposure,
                )?
                .into_inner();
                qp_solves += 1;
                let point = ParetoPoint::evaluate(instance, m.clone())?;
                marked.push(point.clone());
                if let Ok(on_sphere) = project_to_sphere(&m, &frame) {
                    if !close(&on_sphere, &a.on_sphere) && !close(&on_sphere, &b.on_sphere) {
                        next.push(Node { on_sphere, point });
                    }
                }
            }
            next.push(b.clone());
        }
        nodes = next;
    }

    let mut samples: Vec<ParetoPoint> = nodes.iter().map(|nd| nd.point.clone()).collect();
    for pair in nodes.windows(2) {
        let Ok(arc) = GeodesicArc::new(&pair[0].on_sphere, &pair[1].on_sphere, &frame) else {
            continue;
        };
        for j in 1..n_sample - 1 {
            let t = j as f64 / (n_sample - 1) as f64;
            let x = project_sphere_to_boundary(&arc.sample(t), &frame, gamma)?;
            samples.push(ParetoPoint::evaluate(instance, x)?);
        }
    }
    marked.sort_by(|p, q| p.utility.total_cmp(&q.utility));
    Ok(SphereExpoFront {
        front: ParetoFront::sampled(samples),
        marked,
        qp_solves,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expohedron::majorization_check;
    use crate::model::TargetPolicy;

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
    fn arc_endpoints_and_radius() {
        let g = [3.0, 2.0, 1.0];
        let frame = SphereFrame::new(&g).unwrap();
        let p = [3.0, 2.0, 1.0];
        let q = [1.0, 3.0, 2.0];
        let arc = GeodesicArc::new(&p, &q, &frame).unwrap();
        for (a, b) in arc.sample(0.0).iter().zip(&p) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in arc.sample(1.0).iter().zip(&q) {
            assert!((a - b).abs() < 1e-12);
        }
        for k in 0..=20 {
            let s = arc.sample(k as f64 / 20.0);
            assert!((frame.distance_from_center(&s) - 2f64.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn quarter_circle_midpoint() {
        let frame = SphereFrame {
            center: vec![0.0, 0.0, 0.0],
            radius: 1.0,
        };
        let arc = GeodesicArc::new(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &frame).unwrap();
        let m = arc.sample(0.5);
        let h = 0.5f64.sqrt();
        assert!((m[0] - h).abs() < 1e-12 && (m[1] - h).abs() < 1e-12);
    }

    #[test]
    fn degenerate_arcs() {
        let frame = SphereFrame {
            center: vec![0.0, 0.0],
            radius: 1.0,
        };
        assert!(matches!(
            GeodesicArc::new(&[1.0, 0.0], &[1.0, 0.0], &frame),
            Err(Error::DegenerateArc)
        ));
        assert!(matches!(
            GeodesicArc::new(&[1.0, 0.0], &[-1.0, 0.0], &frame),
            Err(Error::DegenerateArc)
        ));
    }

    #[test]
    fn zero_rounds_two_samples_gives_endpoints() {
        let r = sphere_expo_front(&toy3(), 0, 2).unwrap();
        assert_eq!(r.front.len(), 2);
        assert_eq!(r.qp_solves, 0);
        assert!(r.front.points[0].unfairness < 1e-7);
        assert!((r.front.points[1].utility - 1.32856).abs() < 1e-5);
    }

    #[test]
    fn toy3_marked_point_on_exact_front() {
        let inst = toy3();
        let r = sphere_expo_front(&inst, 1, 5).unwrap();
        assert_eq!(r.marked.len(), 1);
        let exact = pexpo_front(&inst).unwrap();
        let m = &r.marked[0];
        let u = exact.utility_at(m.unfairness).unwrap();
        assert!((u - m.utility).abs() < 1e-6, "{u} vs {}", m.utility);
        for p in &r.front.points {
            assert!(majorization_check(&p.exposure, inst.gamma(), 1e-7)
                .unwrap()
                .is_feasible());
        }
    }

    #[test]
    fn two_items_bypass() {
        let inst = QueryInstance::new(
            "toy2",
            vec![1.0, 0.2],
            vec![0, 1],
            vec![1.0, 0.5],
            &TargetPolicy::SizeProportional,
        )
        .unwrap();
        let r = sphere_expo_front(&inst, 3, 5).unwrap();
        assert_eq!(r.front, pexpo_front(&inst).unwrap());
    }

    #[test]
    fn marked_sets_are_nested() {
        let inst = toy3();
        let a = sphere_expo_front(&inst, 1, 3).unwrap();
        let b = sphere_expo_front(&inst, 2, 3).unwrap();
        assert_eq!(b.qp_solves, 3);
        assert!(b
            .marked
            .iter()
            .any(|p| (p.utility - a.marked[0].utility).abs() < 1e-12));
    }
}
