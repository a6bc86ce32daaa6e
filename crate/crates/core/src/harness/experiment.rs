//! Batch runs over a dataset: fronts, decompositions and deliveries per
//! query, with per-phase timings, plus cross-query aggregation.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::ctrl_simulate;
use crate::convex::scalarized_birkhoff_qp;
use crate::decomposition::{
    bvn_decompose, caratheodory_decompose, sample_deliveries, DeliveryStrategy,
};
use crate::error::{Error, Result};
use crate::expohedron::membership_tol;
use crate::model::{Atom, QueryInstance, RankingDistribution};
use crate::pareto::{
    front_rows, pexpo_front, qp_sweep_front, sphere_expo_front, FrontRow, ParetoFront, ParetoPoint,
};

use super::dataset::{
    filter_instances, gen_synthetic, instances_from_json, parse_letor_file, DropCounts,
    LetorOptions, SyntheticKind,
};

/// Front method and its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum Method {
    Pexpo,
    #[serde(rename_all = "camelCase")]
    SphereExpo {
        rounds: usize,
        n_sample: usize,
    },
    #[serde(rename_all = "camelCase")]
    BirkhoffQp {
        alphas: Vec<f64>,
        budget: usize,
    },
    #[serde(rename_all = "camelCase")]
    Ctrl {
        lambdas: Vec<f64>,
        horizon: usize,
    },
    #[serde(rename_all = "camelCase")]
    QpSweep {
        n_points: usize,
    },
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Pexpo => "pexpo",
            Method::SphereExpo { .. } => "sphere",
            Method::BirkhoffQp { .. } => "birkhoff-qp",
            Method::Ctrl { .. } => "ctrl",
            Method::QpSweep { .. } => "qp-sweep",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Method::SphereExpo { n_sample, .. } if *n_sample < 2 => Err(Error::InvalidGrid(
                "sphere needs at least 2 samples per arc".into(),
            )),
            Method::BirkhoffQp { alphas, .. } if alphas.is_empty() => {
                Err(Error::InvalidGrid("empty alpha grid".into()))
            }
            Method::Ctrl { lambdas, .. } if lambdas.is_empty() => {
                Err(Error::InvalidGrid("empty lambda grid".into()))
            }
            Method::Ctrl { horizon: 0, .. } => {
                Err(Error::InvalidGrid("horizon must be at least 1".into()))
            }
            Method::QpSweep { n_points } if *n_points < 2 => {
                Err(Error::InvalidGrid("sweep needs at least 2 points".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Where the queries come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    Synthetic {
        kind: SyntheticKind,
        count: usize,
        seed: u64,
    },
    Letor {
        path: String,
        options: LetorOptions,
        max_docs: usize,
    },
    Json {
        path: String,
    },
    Inline(Vec<QueryInstance>),
}

impl DatasetSpec {
    /// Loads and filters the queries.
    pub fn load(&self) -> Result<(Vec<QueryInstance>, DropCounts)> {
        match self {
            DatasetSpec::Synthetic { kind, count, seed } => {
                Ok((gen_synthetic(*kind, *count, *seed), DropCounts::default()))
            }
            DatasetSpec::Letor {
                path,
                options,
                max_docs,
            } => Ok(filter_instances(
                parse_letor_file(path, options)?,
                *max_docs,
            )),
            DatasetSpec::Json { path } => Ok((
                instances_from_json(&std::fs::read_to_string(path)?)?,
                DropCounts::default(),
            )),
            DatasetSpec::Inline(v) => Ok((v.clone(), DropCounts::default())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub method: Method,
    pub dataset: DatasetSpec,
    /// Seeds the i.i.d. delivery sampler (offset by query index).
    pub seed: u64,
    /// Rankings delivered per front point.
    pub deliveries: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PhaseTimes {
    pub front: f64,
    pub decomposition: f64,
    pub delivery: f64,
}

impl PhaseTimes {
    pub fn total(&self) -> f64 {
        self.front + self.decomposition + self.delivery
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct QueryRuntime {
    pub query_id: String,
    pub phases: PhaseTimes,
    /// Fixed-utility solves for the sphere method.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub marked_solves: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RuntimeReport {
    pub method: String,
    pub queries: usize,
    pub mean_seconds_per_query: f64,
    pub phases: PhaseTimes,
    pub per_query: Vec<QueryRuntime>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct QueryFailure {
    pub query_id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub rows: Vec<FrontRow>,
    pub runtime: RuntimeReport,
    pub failures: Vec<QueryFailure>,
    pub drops: DropCounts,
}

impl ExperimentReport {
    /// More than 10 % of the queries failed.
    pub fn too_many_failures(&self) -> bool {
        let total = self.runtime.queries + self.failures.len();
        total > 0 && self.failures.len() * 10 > total
    }
}

struct QueryOutput {
    rows: Vec<FrontRow>,
    runtime: QueryRuntime,
}

fn seconds(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn decompose_point(instance: &QueryInstance, p: &ParetoPoint) -> Result<RankingDistribution> {
    let gamma = instance.gamma();
    caratheodory_decompose(&p.exposure, gamma, membership_tol(gamma))
}

fn run_query(
    config: &ExperimentConfig,
    index: usize,
    instance: &QueryInstance,
) -> Result<QueryOutput> {
    let method = &config.method;
    let strategy = DeliveryStrategy::Iid {
        seed: config.seed.wrapping_add(index as u64),
    };
    let mut phases = PhaseTimes::default();
    let mut marked_solves = None;
    let clock = Instant::now();
    // Front points with their row parameter, plus matrices for the Birkhoff baseline.
    let mut labelled: Vec<(ParetoPoint, String)> = Vec::new();
    let mut distributions: Option<Vec<RankingDistribution>> = None;
    match method {
        Method::Pexpo => {
            let f = pexpo_front(instance)?;
            labelled = f.points.into_iter().map(|p| (p, String::new())).collect();
        }
        Method::SphereExpo { rounds, n_sample } => {
            let r = sphere_expo_front(instance, *rounds, *n_sample)?;
            marked_solves = Some(r.qp_solves);
            let param = format!("K={rounds}");
            labelled = r
                .front
                .points
                .into_iter()
                .map(|p| (p, param.clone()))
                .collect();
        }
        Method::QpSweep { n_points } => {
            let f = qp_sweep_front(instance, *n_points)?;
            labelled = f
                .points
                .into_iter()
                .enumerate()
                .map(|(k, p)| (p, k.to_string()))
                .collect();
        }
        Method::BirkhoffQp { alphas, budget } => {
            let mut matrices = Vec::with_capacity(alphas.len());
            for &a in alphas {
                let r = scalarized_birkhoff_qp(instance, a, *budget)?;
                labelled.push((ParetoPoint::evaluate(instance, r.exposure)?, a.to_string()));
                matrices.push(r.matrix);
            }
            phases.front = seconds(clock.elapsed());
            let t = Instant::now();
            let mut dists = Vec::with_capacity(matrices.len());
            for m in &matrices {
                let atoms = bvn_decompose(m, 1e-9)?
                    .into_iter()
                    .map(|(weight, perm)| Atom { weight, perm })
                    .collect();
                dists.push(RankingDistribution::normalized(atoms, 1e-12)?);
            }
            phases.decomposition = seconds(t.elapsed());
            distributions = Some(dists);
        }
        Method::Ctrl { lambdas, horizon } => {
            for &l in lambdas {
                let out = ctrl_simulate(instance, l, *horizon, true)?;
                let mut mean = vec![0.0; instance.n()];
                for perm in &out.deliveries {
                    for (m, e) in mean.iter_mut().zip(perm.exposure(instance.gamma())) {
                        *m += e / *horizon as f64;
                    }
                }
                labelled.push((ParetoPoint::evaluate(instance, mean)?, l.to_string()));
            }
            phases.front = seconds(clock.elapsed());
        }
    }
    let dists = match distributions {
        Some(d) => d,
        None if matches!(method, Method::Ctrl { .. }) => Vec::new(),
        None => {
            phases.front = seconds(clock.elapsed());
            let t = Instant::now();
            let d = labelled
                .iter()
                .map(|(p, _)| decompose_point(instance, p))
                .collect::<Result<Vec<_>>>()?;
            phases.decomposition = seconds(t.elapsed());
            d
        }
    };
    let t = Instant::now();
    for d in &dists {
        sample_deliveries(d, config.deliveries, strategy)?;
    }
    phases.delivery = seconds(t.elapsed());

    let mut rows = Vec::with_capacity(labelled.len());
    for (p, param) in labelled {
        let front = ParetoFront {
            points: vec![p],
            connected: false,
        };
        rows.extend(front_rows(instance, &front, method.name(), &param)?);
    }
    Ok(QueryOutput {
        rows,
        runtime: QueryRuntime {
            query_id: instance.query_id.clone(),
            phases,
            marked_solves,
        },
    })
}

/// Runs the configured method on every query of the dataset in parallel.
/// Failing queries are recorded and skipped; outputs keep dataset order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.method.validate()?;
    let (instances, drops) = config.dataset.load()?;
    if instances.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let results: Vec<Result<QueryOutput>> = instances
        .par_iter()
        .enumerate()
        .map(|(k, inst)| run_query(config, k, inst))
        .collect();

    let mut rows = Vec::new();
    let mut per_query = Vec::new();
    let mut failures = Vec::new();
    for (inst, res) in instances.iter().zip(results) {
        match res {
            Ok(out) => {
                rows.extend(out.rows);
                per_query.push(out.runtime);
            }
            Err(e) => failures.push(QueryFailure {
                query_id: inst.query_id.clone(),
                message: e.to_string(),
            }),
        }
    }
    let count = per_query.len();
    let mut phases = PhaseTimes::default();
    for q in &per_query {
        phases.front += q.phases.front;
        phases.decomposition += q.phases.decomposition;
        phases.delivery += q.phases.delivery;
    }
    if count > 0 {
        let c = count as f64;
        phases.front /= c;
        phases.decomposition /= c;
        phases.delivery /= c;
    }
    Ok(ExperimentReport {
        rows,
        runtime: RuntimeReport {
            method: config.method.name().to_string(),
            queries: count,
            mean_seconds_per_query: phases.total(),
            phases,
            per_query,
        },
        failures,
        drops,
    })
}

pub fn write_csv<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn csv_string<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
}

pub fn read_front_rows(path: impl AsRef<Path>) -> Result<Vec<FrontRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

/// One query's front in normalized coordinates, sorted by unfairness.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedFront {
    pub query_id: String,
    /// `(normalized unfairness, normalized utility)` pairs.
    pub points: Vec<(f64, f64)>,
}

/// Groups CSV rows by query. Queries whose PRP point is already fair have
/// no unfairness scale and are excluded; their number is returned.
pub fn normalized_fronts(rows: &[FrontRow]) -> (Vec<NormalizedFront>, usize) {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    let mut excluded: BTreeMap<String, ()> = BTreeMap::new();
    for r in rows {
        if !groups.contains_key(&r.query_id) && !excluded.contains_key(&r.query_id) {
            order.push(r.query_id.clone());
        }
        if r.normalized_unfairness.is_finite() {
            groups
                .entry(r.query_id.clone())
                .or_default()
                .push((r.normalized_unfairness, r.normalized_utility));
        } else {
            excluded.insert(r.query_id.clone(), ());
        }
    }
    let fronts = order
        .into_iter()
        .filter(|q| !excluded.contains_key(q))
        .map(|q| {
            let mut points = groups.remove(&q).unwrap_or_default();
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            NormalizedFront {
                query_id: q,
                points,
            }
        })
        .collect();
    (fronts, excluded.len())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct AggregatedCurve {
    pub grid: Vec<f64>,
    pub mean_utility: Vec<f64>,
    pub query_count: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct AggregateRow {
    pub grid: f64,
    pub mean_utility: f64,
    pub count: usize,
}

impl AggregatedCurve {
    pub fn rows(&self) -> Vec<AggregateRow> {
        self.grid
            .iter()
            .zip(&self.mean_utility)
            .zip(&self.query_count)
            .map(|((&grid, &mean_utility), &count)| AggregateRow {
                grid,
                mean_utility,
                count,
            })
            .collect()
    }
}

/// Linear interpolation in sorted `(x, y)` pairs, clamped to the end values.
fn interpolate(points: &[(f64, f64)], x: f64) -> f64 {
    let first = points[0];
    let last = points[points.len() - 1];
    if x <= first.0 {
        return first.1;
    }
    if x >= last.0 {
        return last.1;
    }
    let k = points.partition_point(|p| p.0 <= x);
    let (a, b) = (points[k - 1], points[k]);
    if b.0 - a.0 <= 0.0 {
        return b.1;
    }
    a.1 + (x - a.0) / (b.0 - a.0) * (b.1 - a.1)
}

/// Mean normalized utility over queries at `grid_size` evenly spaced
/// normalized-unfairness levels in `[0, 1]`.
pub fn aggregate_fronts(fronts: &[NormalizedFront], grid_size: usize) -> Result<AggregatedCurve> {
    if grid_size < 2 {
        return Err(Error::InvalidGrid(format!(
            "grid size {grid_size} must be at least 2"
        )));
    }
    if fronts.is_empty() || fronts.iter().any(|f| f.points.is_empty()) {
        return Err(Error::EmptyFront);
    }
    let grid: Vec<f64> = (0..grid_size)
        .map(|k| k as f64 / (grid_size - 1) as f64)
        .collect();
    let mean_utility = grid
        .iter()
        .map(|&x| {
            fronts
                .iter()
                .map(|f| interpolate(&f.points, x))
                .sum::<f64>()
                / fronts.len() as f64
        })
        .collect();
    Ok(AggregatedCurve {
        query_count: vec![fronts.len(); grid_size],
        grid,
        mean_utility,
    })
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

    #[test]
    fn qp_sweep_shape() {
        let cfg = ExperimentConfig {
            method: Method::QpSweep { n_points: 20 },
            dataset: DatasetSpec::Synthetic {
                kind: SyntheticKind::Ds,
                count: 50,
                seed: 7,
            },
            seed: 7,
            deliveries: 10,
        };
        let report = run_experiment(&cfg).unwrap();
        assert!(report.failures.is_empty(), "{:?}", report.failures);
        let mut blocks: BTreeMap<&str, usize> = BTreeMap::new();
        for r in &report.rows {
            *blocks.entry(&r.query_id).or_default() += 1;
        }
        assert_eq!(blocks.len(), 50);
        assert!(blocks.values().all(|&c| c <= 20));
    }

    #[test]
    fn sphere_records_marked_solves() {
        let cfg = ExperimentConfig {
            method: Method::SphereExpo {
                rounds: 3,
                n_sample: 5,
            },
            dataset: DatasetSpec::Synthetic {
                kind: SyntheticKind::Ds,
                count: 4,
                seed: 3,
            },
            seed: 1,
            deliveries: 10,
        };
        let report = run_experiment(&cfg).unwrap();
        assert!(report
            .runtime
            .per_query
            .iter()
            .all(|q| q.marked_solves == Some(7)));
    }

    #[test]
    fn empty_dataset() {
        let cfg = ExperimentConfig {
            method: Method::Pexpo,
            dataset: DatasetSpec::Inline(Vec::new()),
            seed: 0,
            deliveries: 1,
        };
        assert!(matches!(run_experiment(&cfg), Err(Error::EmptyDataset)));
    }

    #[test]
    fn reproducible_rows() {
        let cfg = ExperimentConfig {
            method: Method::Pexpo,
            dataset: DatasetSpec::Synthetic {
                kind: SyntheticKind::Ds,
                count: 6,
                seed: 11,
            },
            seed: 5,
            deliveries: 20,
        };
        let a = csv_string(&run_experiment(&cfg).unwrap().rows).unwrap();
        let b = csv_string(&run_experiment(&cfg).unwrap().rows).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn toy2_aggregate_is_straight() {
        let inst = toy2();
        let f = pexpo_front(&inst).unwrap();
        let rows = front_rows(&inst, &f, "pexpo", "").unwrap();
        let (fronts, excluded) = normalized_fronts(&rows);
        assert_eq!(excluded, 0);
        let two = vec![fronts[0].clone(), fronts[0].clone()];
        let curve = aggregate_fronts(&two, 5).unwrap();
        for (x, u) in curve.grid.iter().zip(&curve.mean_utility) {
            let expect = 0.9 / 1.1 + x * (1.0 - 0.9 / 1.1);
            assert!((u - expect).abs() < 1e-9);
        }
        assert!(matches!(
            aggregate_fronts(&fronts, 1),
            Err(Error::InvalidGrid(_))
        ));
    }
}
