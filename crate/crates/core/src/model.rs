//! Domain types shared by every module: query instances, exposure points,
//! rankings and distributions over rankings, plus the two objectives.
//!
//! Items and groups are 0-indexed everywhere inside the crate. A ranking is
//! stored as `position_of[item] = rank` with rank 0 the top slot, and the
//! exposure vector `gamma[rank]` is strictly decreasing.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance for "targets distribute total exposure".
pub const TARGET_SUM_TOL: f64 = 1e-9;

/// DCG position weights `1 / log2(k + 1)` for ranks `k = 1..=n`.
pub fn dcg_weights(n: usize) -> Vec<f64> {
    (1..=n).map(|k| 1.0 / ((k + 1) as f64).log2()).collect()
}

/// How the per-group target exposure is derived from an instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetPolicy {
    /// Proportional to the group's share of total relevance.
    Merit,
    /// Proportional to the group's share of items.
    SizeProportional,
    /// Caller-provided per-group targets; must sum to the exposure total.
    Explicit(Vec<f64>),
}

/// One query: relevance, group membership, exposure model and fairness target.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryInstance {
    pub query_id: String,
    pub relevance: Vec<f64>,
    pub group_of: Vec<usize>,
    pub exposure_weights: Vec<f64>,
    pub target_exposure: Vec<f64>,
    n_groups: usize,
}

impl QueryInstance {
    /// Builds and validates an instance, deriving the target from `policy`.
    ///
    /// `group_of` must use dense ids `0..g` with every group non-empty; use
    /// [`compact_groups`] on raw labels first.
    pub fn new(
        query_id: impl Into<String>,
        relevance: Vec<f64>,
        group_of: Vec<usize>,
        exposure_weights: Vec<f64>,
        policy: &TargetPolicy,
    ) -> Result<Self> {
        let n = relevance.len();
        if n == 0 {
            return Err(Error::InvalidInstance("no items".into()));
        }
        if group_of.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: group_of.len(),
            });
        }
        if exposure_weights.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: exposure_weights.len(),
            });
        }
        if relevance
            .iter()
            .any(|r| !r.is_finite() || *r < 0.0 || *r > 1.0)
        {
            return Err(Error::InvalidInstance(
                "relevance must lie in [0, 1]".into(),
            ));
        }
        if exposure_weights.iter().any(|w| !w.is_finite() || *w <= 0.0) {
            return Err(Error::InvalidInstance(
                "exposure weights must be positive".into(),
            ));
        }
        if exposure_weights.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidInstance(
                "exposure weights must be strictly decreasing".into(),
            ));
        }
        let n_groups = group_of.iter().max().map_or(0, |m| m + 1);
        let mut sizes = vec![0usize; n_groups];
        for &g in &group_of {
            sizes[g] += 1;
        }
        if sizes.contains(&0) {
            return Err(Error::InvalidInstance(
                "group ids must be dense and non-empty".into(),
            ));
        }
        let mut inst = QueryInstance {
            query_id: query_id.into(),
            relevance,
            group_of,
            exposure_weights,
            target_exposure: Vec::new(),
            n_groups,
        };
        inst.target_exposure = build_target_exposure(&inst, policy)?;
        Ok(inst)
    }

    pub fn n(&self) -> usize {
        self.relevance.len()
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    pub fn gamma(&self) -> &[f64] {
        &self.exposure_weights
    }

    pub fn total_exposure(&self) -> f64 {
        self.exposure_weights.iter().sum()
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_groups];
        for &g in &self.group_of {
            sizes[g] += 1;
        }
        sizes
    }

    /// Group-aggregated exposure `G x`.
    pub fn aggregate(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_groups];
        for (i, &xi) in x.iter().enumerate() {
            out[self.group_of[i]] += xi;
        }
        out
    }

    /// Rows of the group indicator matrix `G` (one row per group).
    pub fn group_rows(&self) -> Vec<Vec<f64>> {
        let mut rows = vec![vec![0.0; self.n()]; self.n_groups];
        for (i, &g) in self.group_of.iter().enumerate() {
            rows[g][i] = 1.0;
        }
        rows
    }

    /// Scale used for geometry tolerances: `max(1, |gamma|_1)`.
    pub fn scale(&self) -> f64 {
        geometry_scale(&self.exposure_weights)
    }

    /// Replaces the target with one derived from another policy.
    pub fn with_target(mut self, policy: &TargetPolicy) -> Result<Self> {
        self.target_exposure = build_target_exposure(&self, policy)?;
        Ok(self)
    }
}

pub(crate) fn geometry_scale(gamma: &[f64]) -> f64 {
    gamma.iter().map(|g| g.abs()).sum::<f64>().max(1.0)
}

/// Maps arbitrary group labels to dense ids `0..g`, preserving label order.
pub fn compact_groups<T: Ord + Clone>(labels: &[T]) -> Vec<usize> {
    let mut distinct: Vec<T> = labels.to_vec();
    distinct.sort();
    distinct.dedup();
    labels
        .iter()
        .map(|l| distinct.binary_search(l).expect("label present"))
        .collect()
}

/// Computes per-group target exposure for `policy`. The existing target on
/// `instance` is ignored.
pub fn build_target_exposure(instance: &QueryInstance, policy: &TargetPolicy) -> Result<Vec<f64>> {
    let total = instance.total_exposure();
    let g = instance.n_groups();
    match policy {
        TargetPolicy::Merit => {
            let rel_total: f64 = instance.relevance.iter().sum();
            if rel_total <= 0.0 {
                return Err(Error::ZeroRelevance);
            }
            let mut shares = vec![0.0; g];
            for (i, &r) in instance.relevance.iter().enumerate() {
                shares[instance.group_of[i]] += r;
            }
            Ok(shares.into_iter().map(|s| s / rel_total * total).collect())
        }
        TargetPolicy::SizeProportional => {
            let n = instance.n() as f64;
            Ok(instance
                .group_sizes()
                .into_iter()
                .map(|s| s as f64 / n * total)
                .collect())
        }
        TargetPolicy::Explicit(values) => {
            if values.len() != g {
                return Err(Error::Dimension {
                    expected: g,
                    got: values.len(),
                });
            }
            let sum: f64 = values.iter().sum();
            if (sum - total).abs() > TARGET_SUM_TOL {
                return Err(Error::InvalidInstance(format!(
                    "explicit targets sum to {sum}, expected {total}"
                )));
            }
            Ok(values.clone())
        }
    }
}

/// An n-vector of expected exposures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExposurePoint(pub Vec<f64>);

impl ExposurePoint {
    pub fn new(x: Vec<f64>) -> Self {
        ExposurePoint(x)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ExposurePoint {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for ExposurePoint {
    fn from(v: Vec<f64>) -> Self {
        ExposurePoint(v)
    }
}

/// Expected utility `x . rho`.
pub fn utility_of(x: &[f64], relevance: &[f64]) -> Result<f64> {
    if x.len() != relevance.len() {
        return Err(Error::Dimension {
            expected: relevance.len(),
            got: x.len(),
        });
    }
    Ok(dot(x, relevance))
}

/// Group unfairness `|G x - target|_2`.
pub fn unfairness_of(x: &[f64], instance: &QueryInstance) -> Result<f64> {
    if x.len() != instance.n() {
        return Err(Error::Dimension {
            expected: instance.n(),
            got: x.len(),
        });
    }
    let agg = instance.aggregate(x);
    Ok(agg
        .iter()
        .zip(&instance.target_exposure)
        .map(|(a, t)| (a - t) * (a - t))
        .sum::<f64>()
        .sqrt())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// A ranking of `n` items.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Permutation {
    position_of: Vec<usize>,
}

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Permutation {
            position_of: (0..n).collect(),
        }
    }

    /// From `position_of[item] = rank`.
    pub fn from_positions(position_of: Vec<usize>) -> Result<Self> {
        let n = position_of.len();
        let mut seen = vec![false; n];
        for &p in &position_of {
            if p >= n || seen[p] {
                return Err(Error::InvalidInstance("not a bijection".into()));
            }
            seen[p] = true;
        }
        Ok(Permutation { position_of })
    }

    /// From a list of item ids ordered by rank (top first).
    pub fn from_ranking(ranking: &[usize]) -> Result<Self> {
        let n = ranking.len();
        let mut position_of = vec![usize::MAX; n];
        for (rank, &item) in ranking.iter().enumerate() {
            if item >= n || position_of[item] != usize::MAX {
                return Err(Error::InvalidInstance("not a bijection".into()));
            }
            position_of[item] = rank;
        }
        Ok(Permutation { position_of })
    }

    pub fn len(&self) -> usize {
        self.position_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.position_of.is_empty()
    }

    pub fn position_of(&self, item: usize) -> usize {
        self.position_of[item]
    }

    pub fn positions(&self) -> &[usize] {
        &self.position_of
    }

    /// Item ids ordered by rank.
    pub fn ranking(&self) -> Vec<usize> {
        let mut r = vec![0; self.len()];
        for (item, &pos) in self.position_of.iter().enumerate() {
            r[pos] = item;
        }
        r
    }

    /// Exposure vector `pi(gamma)`: item `i` receives `gamma[position_of[i]]`.
    pub fn exposure(&self, gamma: &[f64]) -> Vec<f64> {
        self.position_of.iter().map(|&p| gamma[p]).collect()
    }
}

/// One weighted ranking of a distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub weight: f64,
    pub perm: Permutation,
}

/// A probability distribution over rankings.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingDistribution {
    atoms: Vec<Atom>,
}

pub const DISTRIBUTION_SUM_TOL: f64 = 1e-12;

impl RankingDistribution {
    pub fn new(atoms: Vec<Atom>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::EmptyDistribution);
        }
        let n = atoms[0].perm.len();
        if atoms.iter().any(|a| a.perm.len() != n) {
            return Err(Error::InvalidInstance(
                "atoms rank different item counts".into(),
            ));
        }
        if atoms.iter().any(|a| a.weight.is_nan() || a.weight < 0.0) {
            return Err(Error::InvalidInstance("negative atom weight".into()));
        }
        let total: f64 = atoms.iter().map(|a| a.weight).sum();
        if (total - 1.0).abs() > DISTRIBUTION_SUM_TOL {
            return Err(Error::InvalidInstance(format!("weights sum to {total}")));
        }
        Ok(RankingDistribution { atoms })
    }

    /// Drops weights below `threshold` and rescales the rest to sum to one.
    pub fn normalized(mut atoms: Vec<Atom>, threshold: f64) -> Result<Self> {
        atoms.retain(|a| a.weight > threshold);
        let total: f64 = atoms.iter().map(|a| a.weight).sum();
        if atoms.is_empty() || total <= 0.0 {
            return Err(Error::EmptyDistribution);
        }
        for a in &mut atoms {
            a.weight /= total;
        }
        Self::new(atoms)
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn n_items(&self) -> usize {
        self.atoms[0].perm.len()
    }
}

#[derive(Serialize, Deserialize)]
struct AtomJson {
    weight: f64,
    ranking: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct DistributionJson {
    atoms: Vec<AtomJson>,
}

impl Serialize for RankingDistribution {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        DistributionJson {
            atoms: self
                .atoms
                .iter()
                .map(|a| AtomJson {
                    weight: a.weight,
                    ranking: a.perm.ranking(),
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for RankingDistribution {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = DistributionJson::deserialize(d)?;
        let atoms = raw
            .atoms
            .into_iter()
            .map(|a| {
                Permutation::from_ranking(&a.ranking).map(|perm| Atom {
                    weight: a.weight,
                    perm,
                })
            })
            .collect::<Result<Vec<_>>>()
            .map_err(D::Error::custom)?;
        RankingDistribution::new(atoms).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy2(rho: Vec<f64>, policy: TargetPolicy) -> QueryInstance {
        QueryInstance::new("toy2", rho, vec![0, 1], vec![1.0, 0.5], &policy).unwrap()
    }

    fn toy3_gamma() -> Vec<f64> {
        vec![1.0, 0.63093, 0.5]
    }

    #[test]
    fn size_proportional_targets() {
        let inst = QueryInstance::new(
            "toy3",
            vec![0.9, 0.6, 0.1],
            vec![0, 0, 1],
            toy3_gamma(),
            &TargetPolicy::SizeProportional,
        )
        .unwrap();
        assert!((inst.target_exposure[0] - 1.42062).abs() < 1e-9);
        assert!((inst.target_exposure[1] - 0.71031).abs() < 1e-9);

        let inst = toy2(vec![0.5, 0.2], TargetPolicy::SizeProportional);
        assert_eq!(inst.target_exposure, vec![0.75, 0.75]);
    }

    #[test]
    fn merit_targets() {
        let inst = toy2(vec![1.0, 0.2], TargetPolicy::Merit);
        assert!((inst.target_exposure[0] - 1.25).abs() < 1e-12);
        assert!((inst.target_exposure[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn merit_rejects_zero_relevance() {
        let err = QueryInstance::new(
            "z",
            vec![0.0, 0.0],
            vec![0, 1],
            vec![1.0, 0.5],
            &TargetPolicy::Merit,
        )
        .unwrap_err();
        assert_eq!(err, Error::ZeroRelevance);
    }

    #[test]
    fn explicit_targets_must_sum_to_total() {
        let bad = QueryInstance::new(
            "e",
            vec![0.5, 0.2],
            vec![0, 1],
            vec![1.0, 0.5],
            &TargetPolicy::Explicit(vec![1.0, 1.0]),
        );
        assert!(matches!(bad, Err(Error::InvalidInstance(_))));
        let ok = toy2(vec![0.5, 0.2], TargetPolicy::Explicit(vec![1.25, 0.25]));
        assert_eq!(ok.target_exposure, vec![1.25, 0.25]);
    }

    #[test]
    fn utility_examples() {
        let u = utility_of(&[1.0, 0.63093, 0.5], &[0.9, 0.6, 0.1]).unwrap();
        assert!((u - 1.328558).abs() < 1e-6);
        assert_eq!(utility_of(&[0.0; 3], &[0.9, 0.6, 0.1]).unwrap(), 0.0);
        let u = utility_of(&[0.75, 0.75], &[1.0, 0.2]).unwrap();
        assert!((u - 0.9).abs() < 1e-12);
        assert!(matches!(
            utility_of(&[1.0], &[1.0, 2.0]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn unfairness_examples() {
        let inst = toy2(vec![1.0, 0.2], TargetPolicy::SizeProportional);
        assert_eq!(unfairness_of(&[0.75, 0.75], &inst).unwrap(), 0.0);
        let f = unfairness_of(&[1.0, 0.5], &inst).unwrap();
        assert!((f - 0.353553).abs() < 1e-6);

        let inst3 = QueryInstance::new(
            "toy3",
            vec![0.9, 0.6, 0.1],
            vec![0, 0, 1],
            toy3_gamma(),
            &TargetPolicy::SizeProportional,
        )
        .unwrap();
        let f = unfairness_of(&[1.0, 0.63093, 0.5], &inst3).unwrap();
        assert!((f - 0.297423).abs() < 1e-6);
    }

    #[test]
    fn dcg_weights_match_log_convention() {
        let g = dcg_weights(3);
        assert_eq!(g[0], 1.0);
        assert!((g[1] - 0.6309297535714575).abs() < 1e-15);
        assert_eq!(g[2], 0.5);
    }

    #[test]
    fn permutation_roundtrip() {
        let p = Permutation::from_ranking(&[2, 0, 1]).unwrap();
        assert_eq!(p.positions(), &[1, 2, 0]);
        assert_eq!(p.ranking(), vec![2, 0, 1]);
        assert_eq!(p.exposure(&[3.0, 2.0, 1.0]), vec![2.0, 1.0, 3.0]);
        assert!(Permutation::from_ranking(&[0, 0, 1]).is_err());
    }

    #[test]
    fn distribution_json_schema() {
        let d = RankingDistribution::new(vec![
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
        let s = serde_json::to_string(&d).unwrap();
        assert_eq!(
            s,
            r#"{"atoms":[{"weight":0.5,"ranking":[0,1]},{"weight":0.5,"ranking":[1,0]}]}"#
        );
        let back: RankingDistribution = serde_json::from_str(&s).unwrap();
        assert_eq!(back, d);
        assert_eq!(
            RankingDistribution::new(vec![]),
            Err(Error::EmptyDistribution)
        );
    }

    #[test]
    fn compact_groups_is_dense() {
        assert_eq!(compact_groups(&[7, 3, 7, 9]), vec![1, 0, 1, 2]);
    }
}
