//! Instance sources: the labeled sparse ranking format, instance JSON and
//! synthetic generation, plus the query filter.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{compact_groups, dcg_weights, QueryInstance, TargetPolicy};

/// Options for reading the labeled sparse format.
#[derive(Debug, Clone, PartialEq)]
pub struct LetorOptions {
    /// Feature id whose value decides the group.
    pub group_feature: u32,
    /// Bin edges for the group feature; corpus quintiles when `None`.
    pub bin_edges: Option<Vec<f64>>,
    pub max_grade: f64,
    pub target: TargetPolicy,
}

impl Default for LetorOptions {
    fn default() -> Self {
        LetorOptions {
            group_feature: 132,
            bin_edges: None,
            max_grade: 4.0,
            target: TargetPolicy::Merit,
        }
    }
}

struct Record {
    qid: String,
    grade: f64,
    feature: f64,
}

fn parse_record(line: &str, number: usize, feature_id: u32) -> Result<Option<Record>> {
    let body = line.split('#').next().unwrap_or("").trim();
    if body.is_empty() {
        return Ok(None);
    }
    let bad = |message: String| Error::Parse {
        line: number,
        message,
    };
    let mut tokens = body.split_whitespace();
    let grade: f64 = tokens
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| bad("expected a numeric relevance grade".into()))?;
    let qid = tokens
        .next()
        .and_then(|t| t.strip_prefix("qid:"))
        .filter(|q| !q.is_empty())
        .ok_or_else(|| bad("expected qid:<id>".into()))?
        .to_string();
    let mut feature = None;
    for tok in tokens {
        let (id, value) = tok
            .split_once(':')
            .ok_or_else(|| bad(format!("malformed feature `{tok}`")))?;
        let id: u32 = id
            .parse()
            .map_err(|_| bad(format!("bad feature id `{id}`")))?;
        let value: f64 = value
            .parse()
            .map_err(|_| bad(format!("bad feature value `{value}`")))?;
        if id == feature_id {
            feature = Some(value);
        }
    }
    let feature = feature.ok_or(Error::MissingFeature {
        line: number,
        feature: feature_id,
    })?;
    Ok(Some(Record {
        qid,
        grade,
        feature,
    }))
}

/// One-based bin label: 1 + number of edges at or below `value`.
pub fn bin_label(value: f64, edges: &[f64]) -> usize {
    1 + edges.iter().filter(|&&e| e <= value).count()
}

/// Edges at the 20/40/60/80 % quantiles (linear interpolation).
pub fn quintile_edges(values: &[f64]) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let last = (v.len() - 1) as f64;
    let mut edges: Vec<f64> = [0.2, 0.4, 0.6, 0.8]
        .iter()
        .map(|q| {
            let pos = q * last;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
        })
        .collect();
    edges.dedup();
    edges
}

/// Parses labeled sparse ranking text. Queries keep first-appearance order.
pub fn parse_letor_str(text: &str, opts: &LetorOptions) -> Result<Vec<QueryInstance>> {
    let mut records = Vec::new();
    for (k, line) in text.lines().enumerate() {
        if let Some(r) = parse_record(line, k + 1, opts.group_feature)? {
            if !(0.0..=opts.max_grade).contains(&r.grade) {
                return Err(Error::Parse {
                    line: k + 1,
                    message: format!("grade {} outside [0, {}]", r.grade, opts.max_grade),
                });
            }
            records.push(r);
        }
    }
    let edges = match &opts.bin_edges {
        Some(e) => e.clone(),
        None => quintile_edges(&records.iter().map(|r| r.feature).collect::<Vec<_>>()),
    };
    let mut order: Vec<String> = Vec::new();
    let mut by_query: BTreeMap<String, (Vec<f64>, Vec<usize>)> = BTreeMap::new();
    for r in records {
        let entry = by_query.entry(r.qid.clone()).or_insert_with(|| {
            order.push(r.qid.clone());
            (Vec::new(), Vec::new())
        });
        entry.0.push(r.grade / opts.max_grade);
        entry.1.push(bin_label(r.feature, &edges));
    }
    order
        .into_iter()
        .map(|qid| {
            let (rel, labels) = by_query.remove(&qid).expect("collected");
            build_instance(qid, rel, &labels, None, &opts.target)
        })
        .collect()
}

pub fn parse_letor_file(path: impl AsRef<Path>, opts: &LetorOptions) -> Result<Vec<QueryInstance>> {
    parse_letor_str(&std::fs::read_to_string(path)?, opts)
}

/// Writes instances back in the labeled sparse format. Each group is
/// written as a representative value of bin `group + 1` under `edges`, so
/// parsing the output with the same edges restores relevance and groups.
pub fn write_letor(instances: &[QueryInstance], opts: &LetorOptions, edges: &[f64]) -> String {
    let rep = |label: usize| -> f64 {
        // label 1 is below the first edge, label k sits at edge k-2.
        match label {
            1 => edges.first().map_or(0.0, |e| e - 1.0),
            k => edges
                .get(k - 2)
                .copied()
                .unwrap_or_else(|| edges.last().map_or(0.0, |e| e + 1.0) + k as f64),
        }
    };
    let mut out = String::new();
    for inst in instances {
        for (i, r) in inst.relevance.iter().enumerate() {
            let _ = writeln!(
                out,
                "{} qid:{} {}:{}",
                r * opts.max_grade,
                inst.query_id,
                opts.group_feature,
                rep(inst.group_of[i] + 1)
            );
        }
    }
    out
}

/// Builds an instance from raw group labels. Merit targets need positive
/// total relevance; all-zero queries fall back to size-proportional targets
/// (the filter removes them anyway).
fn build_instance<T: Ord + Clone>(
    qid: String,
    relevance: Vec<f64>,
    labels: &[T],
    gamma: Option<Vec<f64>>,
    target: &TargetPolicy,
) -> Result<QueryInstance> {
    let n = relevance.len();
    let groups = compact_groups(labels);
    let gamma = gamma.unwrap_or_else(|| dcg_weights(n));
    let policy = match target {
        TargetPolicy::Merit if relevance.iter().all(|&r| r == 0.0) => {
            &TargetPolicy::SizeProportional
        }
        other => other,
    };
    QueryInstance::new(qid, relevance, groups, gamma, policy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct TargetJson {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    policy: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    values: Option<Vec<f64>>,
}

/// Instance JSON: `{queryId, relevance, groups, gamma?, target: {policy} | {values}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct InstanceJson {
    pub query_id: String,
    pub relevance: Vec<f64>,
    pub groups: Vec<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target: Option<TargetJson>,
}

impl InstanceJson {
    pub fn from_instance(inst: &QueryInstance) -> Self {
        InstanceJson {
            query_id: inst.query_id.clone(),
            relevance: inst.relevance.clone(),
            groups: inst.group_of.iter().map(|&g| g as i64).collect(),
            gamma: Some(inst.exposure_weights.clone()),
            target: Some(TargetJson {
                policy: None,
                values: Some(inst.target_exposure.clone()),
            }),
        }
    }

    pub fn into_instance(self) -> Result<QueryInstance> {
        let policy = match self.target {
            None => TargetPolicy::Merit,
            Some(TargetJson {
                values: Some(v), ..
            }) => TargetPolicy::Explicit(v),
            Some(TargetJson {
                policy: Some(p), ..
            }) => match p.as_str() {
                "merit" => TargetPolicy::Merit,
                "size-proportional" | "sizeProportional" => TargetPolicy::SizeProportional,
                other => {
                    return Err(Error::InvalidInstance(format!(
                        "unknown target policy `{other}`"
                    )))
                }
            },
            Some(_) => {
                return Err(Error::InvalidInstance(
                    "target needs `policy` or `values`".into(),
                ))
            }
        };
        build_instance(
            self.query_id,
            self.relevance,
            &self.groups,
            self.gamma,
            &policy,
        )
    }
}

/// Reads one instance object or an array of them.
pub fn instances_from_json(text: &str) -> Result<Vec<QueryInstance>> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        Many(Vec<InstanceJson>),
        One(InstanceJson),
    }
    let parsed: OneOrMany = serde_json::from_str(text)?;
    let list = match parsed {
        OneOrMany::Many(v) => v,
        OneOrMany::One(one) => vec![one],
    };
    list.into_iter().map(InstanceJson::into_instance).collect()
}

pub fn instances_to_json(instances: &[QueryInstance]) -> Result<String> {
    let list: Vec<InstanceJson> = instances.iter().map(InstanceJson::from_instance).collect();
    Ok(serde_json::to_string_pretty(&list)?)
}

/// Per-rule counts of dropped queries; each query counts under the first
/// rule it fails.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DropCounts {
    pub too_many_documents: usize,
    pub single_document: usize,
    pub equal_relevance: usize,
    pub single_group: usize,
    pub one_item_per_group: usize,
}

impl DropCounts {
    pub fn total(&self) -> usize {
        self.too_many_documents
            + self.single_document
            + self.equal_relevance
            + self.single_group
            + self.one_item_per_group
    }
}

/// Removes queries that carry no trade-off.
pub fn filter_instances(
    instances: Vec<QueryInstance>,
    max_docs: usize,
) -> (Vec<QueryInstance>, DropCounts) {
    let mut counts = DropCounts::default();
    let kept = instances
        .into_iter()
        .filter(|inst| {
            let n = inst.n();
            let first = inst.relevance[0];
            if n > max_docs {
                counts.too_many_documents += 1;
            } else if n == 1 {
                counts.single_document += 1;
            } else if inst.relevance.iter().all(|&r| r == first) {
                counts.equal_relevance += 1;
            } else if inst.n_groups() == 1 {
                counts.single_group += 1;
            } else if inst.n_groups() == n {
                counts.one_item_per_group += 1;
            } else {
                return true;
            }
            false
        })
        .collect();
    (kept, counts)
}

/// Synthetic dataset families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticKind {
    /// Small queries, 8 to 20 items.
    Ds,
    /// Large queries, 5 to 100 items.
    Dl,
}

impl SyntheticKind {
    pub fn item_range(self) -> (usize, usize) {
        match self {
            SyntheticKind::Ds => (8, 20),
            SyntheticKind::Dl => (5, 100),
        }
    }
}

/// Random queries with uniform relevance, uniform group count in
/// `[2, n - 1]` and merit targets.
pub fn gen_synthetic(kind: SyntheticKind, count: usize, seed: u64) -> Vec<QueryInstance> {
    let (lo, hi) = kind.item_range();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prefix = match kind {
        SyntheticKind::Ds => "ds",
        SyntheticKind::Dl => "dl",
    };
    (0..count)
        .map(|k| random_instance(&mut rng, format!("{prefix}-{k:05}"), lo, hi))
        .collect()
}

/// One random query with `n` uniform in `[min_items, max_items]`
/// (`min_items >= 3`).
pub fn random_instance(
    rng: &mut impl Rng,
    query_id: String,
    min_items: usize,
    max_items: usize,
) -> QueryInstance {
    loop {
        let n = rng.gen_range(min_items..=max_items);
        let g = rng.gen_range(2..=n - 1);
        let relevance: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        // One item per group first, the rest uniform, then shuffled.
        let mut groups: Vec<usize> = (0..n)
            .map(|i| if i < g { i } else { rng.gen_range(0..g) })
            .collect();
        groups.shuffle(rng);
        if let Ok(inst) = QueryInstance::new(
            query_id.clone(),
            relevance,
            groups,
            dcg_weights(n),
            &TargetPolicy::Merit,
        ) {
            return inst;
        }
    }
}
