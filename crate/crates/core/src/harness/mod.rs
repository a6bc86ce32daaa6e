//! Datasets, batch experiments, aggregation and runtime benchmarks.

pub mod bench;
pub mod dataset;
pub mod experiment;

pub use dataset::{
    filter_instances, gen_synthetic, instances_from_json, instances_to_json, parse_letor_file,
    parse_letor_str, DropCounts, LetorOptions, SyntheticKind,
};
pub use experiment::{
    aggregate_fronts, normalized_fronts, run_experiment, AggregatedCurve, DatasetSpec,
    ExperimentConfig, ExperimentReport, Method,
};
