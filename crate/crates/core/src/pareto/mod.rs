//! Utility/unfairness Pareto fronts: the exact facet walk, the geodesic
//! approximation, a fixed-utility sweep, and front comparison metrics.

mod pexpo;
mod sphere;

pub use pexpo::{optimal_direction_on_face, pexpo_front, FaceDirection};
pub use sphere::{sphere_expo_front, GeodesicArc, SphereExpoFront};

use serde::{Deserialize, Serialize};

use crate::convex::{min_unfairness_at_utility, start_point};
use crate::error::{Error, Result};
use crate::expohedron::max_utility;
use crate::model::{dot, ExposurePoint, QueryInstance};

/// One evaluated trade-off point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParetoPoint {
    pub exposure: ExposurePoint,
    pub utility: f64,
    pub unfairness: f64,
    /// `G x - target`, kept so that segments can be evaluated exactly.
    #[serde(skip)]
    pub residual: Vec<f64>,
}

impl ParetoPoint {
    pub fn evaluate(instance: &QueryInstance, x: Vec<f64>) -> Result<Self> {
        if x.len() != instance.n() {
            return Err(Error::Dimension {
                expected: instance.n(),
                got: x.len(),
            });
        }
        let residual: Vec<f64> = instance
            .aggregate(&x)
            .iter()
            .zip(&instance.target_exposure)
            .map(|(a, t)| a - t)
            .collect();
        Ok(ParetoPoint {
            utility: dot(&x, &instance.relevance),
            unfairness: dot(&residual, &residual).sqrt(),
            exposure: ExposurePoint(x),
            residual,
        })
    }
}

/// Points ordered by increasing unfairness.
///
/// When `connected` is set, every pair of consecutive exposures is joined by a
/// segment of Pareto-optimal points, so the front between them is the image
/// of that segment rather than a straight line in objective space.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParetoFront {
    pub points: Vec<ParetoPoint>,
    pub connected: bool,
}

impl ParetoFront {
    /// Front made of isolated samples; dominated points are removed.
    pub fn sampled(points: Vec<ParetoPoint>) -> Self {
        ParetoFront {
            points: non_dominated(points),
            connected: false,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Consecutive pieces of the front curve. Sampled fronts use the upper
    /// concave envelope, since mixtures of two exposures are feasible and no
    /// less fair than the straight line between them.
    fn pieces(&self) -> Vec<Piece<'_>> {
        let chain: Vec<&ParetoPoint> = if self.connected {
            self.points.iter().collect()
        } else {
            concave_envelope(&self.points)
        };
        chain
            .windows(2)
            .map(|w| Piece {
                a: w[0],
                b: w[1],
                exact: self.connected,
            })
            .collect()
    }

    fn envelope_start(&self) -> Option<&ParetoPoint> {
        self.points.first()
    }

    /// Area dominated by the front inside the box bounded by the reference
    /// point (`u_ref`, `f_ref`) (utility from below, unfairness from above).
    pub fn hypervolume(&self, u_ref: f64, f_ref: f64) -> f64 {
        let Some(first) = self.envelope_start() else {
            return 0.0;
        };
        let mut area = (first.utility - u_ref).max(0.0) * (f_ref - first.unfairness).max(0.0);
        for piece in self.pieces() {
            let du = piece.b.utility - piece.a.utility;
            if du <= 0.0 {
                continue;
            }
            area += du * piece.mean_clearance(f_ref);
        }
        area
    }

    /// Best utility on the front at unfairness `f`. `None` below the first
    /// point's unfairness.
    pub fn utility_at(&self, f: f64) -> Option<f64> {
        let first = self.envelope_start()?;
        if f < first.unfairness {
            return None;
        }
        let pieces = self.pieces();
        for piece in &pieces {
            if f <= piece.b.unfairness {
                return Some(piece.utility_at(f));
            }
        }
        Some(pieces.last().map_or(first.utility, |p| p.b.utility))
    }
}

struct Piece<'a> {
    a: &'a ParetoPoint,
    b: &'a ParetoPoint,
    exact: bool,
}

impl Piece<'_> {
    fn unfairness(&self, s: f64) -> f64 {
        if !self.exact {
            return self.a.unfairness + s * (self.b.unfairness - self.a.unfairness);
        }
        self.a
            .residual
            .iter()
            .zip(&self.b.residual)
            .map(|(ra, rb)| {
                let r = ra + s * (rb - ra);
                r * r
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Mean of `f_ref - F` over the piece, uniform in the segment parameter.
    fn mean_clearance(&self, f_ref: f64) -> f64 {
        let mean_f = if self.exact {
            adaptive_simpson(&|s| self.unfairness(s), 0.0, 1.0, 1e-13, 40)
        } else {
            0.5 * (self.a.unfairness + self.b.unfairness)
        };
        f_ref - mean_f
    }

    fn utility_at(&self, f: f64) -> f64 {
        let (fa, fb) = (self.a.unfairness, self.b.unfairness);
        if f <= fa {
            return self.a.utility;
        }
        if fb - fa <= 0.0 {
            return self.b.utility;
        }
        let s = if self.exact {
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if self.unfairness(mid) < f {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        } else {
            (f - fa) / (fb - fa)
        };
        self.a.utility + s * (self.b.utility - self.a.utility)
    }
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn rec(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = simpson(fa, fm, fb, a, b);
    rec(f, a, b, fa, fm, fb, whole, tol, depth)
}

/// Sorts by unfairness and keeps the points not dominated by an earlier one.
pub fn non_dominated(mut points: Vec<ParetoPoint>) -> Vec<ParetoPoint> {
    points.sort_by(|p, q| {
        p.unfairness
            .total_cmp(&q.unfairness)
            .then(q.utility.total_cmp(&p.utility))
    });
    let mut out: Vec<ParetoPoint> = Vec::with_capacity(points.len());
    for p in points {
        match out.last() {
            Some(last) if p.unfairness <= last.unfairness || p.utility <= last.utility => {}
            _ => out.push(p),
        }
    }
    out
}

/// Upper concave envelope of utility as a function of unfairness.
fn concave_envelope(points: &[ParetoPoint]) -> Vec<&ParetoPoint> {
    let mut hull: Vec<&ParetoPoint> = Vec::with_capacity(points.len());
    for p in points {
        while hull.len() >= 2 {
            let o = hull[hull.len() - 2];
            let a = hull[hull.len() - 1];
            let lhs = (a.utility - o.utility) * (p.unfairness - o.unfairness);
            let rhs = (p.utility - o.utility) * (a.unfairness - o.unfairness);
            if lhs <= rhs {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    hull
}

/// Fixed-utility sweep: `n_points` utilities evenly spaced from the start
/// point's utility to the PRP utility, each solved for minimum unfairness.
pub fn qp_sweep_front(instance: &QueryInstance, n_points: usize) -> Result<ParetoFront> {
    if n_points < 2 {
        return Err(Error::InvalidGrid(format!(
            "need at least 2 points, got {n_points}"
        )));
    }
    let start = start_point(instance)?;
    let u0 = dot(&start, &instance.relevance);
    let u1 = max_utility(&instance.relevance, instance.gamma());
    let mut points = Vec::with_capacity(n_points);
    for k in 0..n_points {
        let u = if k + 1 == n_points {
            u1
        } else {
            u0 + (u1 - u0) * k as f64 / (n_points - 1) as f64
        };
        let x = min_unfairness_at_utility(instance, u)?;
        points.push(ParetoPoint::evaluate(instance, x.into_inner())?);
    }
    Ok(ParetoFront::sampled(points))
}

/// Distance between an approximate and an exact front.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrontGap {
    pub hypervolume_gap: f64,
    pub max_utility_gap: f64,
}

/// Hypervolume difference (reference point: lowest utility and highest
/// unfairness over both fronts) and the largest utility shortfall of
/// `approx` at its own unfairness levels.
pub fn front_gap(approx: &ParetoFront, exact: &ParetoFront) -> Result<FrontGap> {
    if approx.is_empty() || exact.is_empty() {
        return Err(Error::EmptyFront);
    }
    let all = approx.points.iter().chain(&exact.points);
    let u_ref = all.clone().map(|p| p.utility).fold(f64::INFINITY, f64::min);
    let f_ref = all.map(|p| p.unfairness).fold(f64::NEG_INFINITY, f64::max);
    let hv_gap = (exact.hypervolume(u_ref, f_ref) - approx.hypervolume(u_ref, f_ref)).abs();
    let f_floor = exact.points[0].unfairness;
    let max_gap = approx
        .points
        .iter()
        .map(|p| {
            let u = exact
                .utility_at(p.unfairness.max(f_floor))
                .expect("level at or above the first point");
            u - p.utility
        })
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(FrontGap {
        hypervolume_gap: hv_gap,
        max_utility_gap: max_gap,
    })
}

/// One line of the fronts CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FrontRow {
    pub query_id: String,
    pub method: String,
    pub param: String,
    pub utility: f64,
    pub unfairness: f64,
    pub normalized_utility: f64,
    pub normalized_unfairness: f64,
    pub exposure: String,
}

/// Flattens a front into CSV rows. Normalization divides by the PRP utility
/// and the PRP unfairness; the latter is left unnormalized (NaN) when the PRP
/// point is already fair.
pub fn front_rows(
    instance: &QueryInstance,
    front: &ParetoFront,
    method: &str,
    param: &str,
) -> Result<Vec<FrontRow>> {
    let (u_prp, f_prp) = prp_reference(instance)?;
    front
        .points
        .iter()
        .map(|p| {
            Ok(FrontRow {
                query_id: instance.query_id.clone(),
                method: method.to_string(),
                param: param.to_string(),
                utility: p.utility,
                unfairness: p.unfairness,
                normalized_utility: p.utility / u_prp,
                normalized_unfairness: if f_prp > 1e-12 {
                    p.unfairness / f_prp
                } else {
                    f64::NAN
                },
                exposure: serde_json::to_string(&p.exposure)?,
            })
        })
        .collect()
}

/// Utility and unfairness of the PRP ranking.
pub fn prp_reference(instance: &QueryInstance) -> Result<(f64, f64)> {
    let v = crate::expohedron::max_utility_vertex(&instance.relevance, instance.gamma());
    let p = ParetoPoint::evaluate(instance, v)?;
    Ok((p.utility, p.unfairness))
}
