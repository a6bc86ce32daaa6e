use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use expofront::controller::{ctrl_simulate, trajectory_rows};
use expofront::decomposition::{bvn_decompose, caratheodory_decompose, BistochasticMatrix};
use expofront::expohedron::membership_tol;
use expofront::harness::bench::{runtime_comparison, BenchSettings};
use expofront::harness::experiment::{csv_string, read_front_rows};
use expofront::harness::{
    aggregate_fronts, filter_instances, gen_synthetic, instances_to_json, normalized_fronts,
    parse_letor_file, run_experiment, DatasetSpec, ExperimentConfig, LetorOptions, Method,
    SyntheticKind,
};
use expofront::model::{Atom, RankingDistribution};
use expofront::{Error, Result};

#[derive(Parser)]
#[command(
    name = "expofront",
    version,
    about = "Utility/unfairness Pareto fronts for repeated rankings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic queries as instance JSON.
    Synth {
        #[arg(long, value_enum, default_value = "ds")]
        kind: Kind,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Read a labeled sparse ranking file, filter it and write instance JSON.
    Parse {
        input: PathBuf,
        #[command(flatten)]
        letor: LetorArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Where to write the per-rule drop counts.
        #[arg(long)]
        drops: Option<PathBuf>,
    },
    /// Compute a front per query.
    Front {
        #[arg(value_enum)]
        method: FrontMethod,
        #[command(flatten)]
        source: SourceArgs,
        /// Bisection rounds for the sphere method.
        #[arg(long, default_value_t = 3)]
        k: usize,
        /// Samples per final arc for the sphere method.
        #[arg(long, default_value_t = 4)]
        n_sample: usize,
        /// Number of points for the QP sweep.
        #[arg(long, default_value_t = 20)]
        n_points: usize,
        /// Number of evenly spaced alphas in [0, 1] for the Birkhoff baseline.
        #[arg(long, default_value_t = 20)]
        alpha_grid: usize,
        /// Iteration budget per Birkhoff solve.
        #[arg(long, default_value_t = 300)]
        budget: usize,
        /// Rankings delivered per front point.
        #[arg(long, default_value_t = 100)]
        t: usize,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Simulate the exposure controller.
    Ctrl {
        #[command(flatten)]
        source: SourceArgs,
        /// Comma-separated controller gains.
        #[arg(long, value_delimiter = ',', default_value = "0,0.01,0.1,1,10,100")]
        lambda_grid: Vec<f64>,
        #[arg(long, default_value_t = 1000)]
        t: usize,
        /// Write per-step trajectories instead of final front points.
        #[arg(long)]
        trajectory: bool,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Decompose an exposure vector or a bistochastic matrix into rankings.
    Decompose {
        #[arg(value_enum)]
        method: DecomposeMethod,
        /// JSON `{"gamma": [..], "exposure": [..]}` or `{"matrix": [[..], ..]}`.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Time both pipelines on large synthetic queries.
    Bench {
        #[arg(long, default_value_t = 20)]
        queries: usize,
        #[arg(long, default_value_t = 100)]
        items: usize,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long, default_value_t = 4)]
        n_sample: usize,
        #[arg(long, default_value_t = 20)]
        alpha_grid: usize,
        #[arg(long, default_value_t = 300)]
        budget: usize,
        /// Where to write the comparison JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Average normalized fronts from a fronts CSV.
    Aggregate {
        input: PathBuf,
        #[arg(long, default_value_t = 101)]
        grid: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Ds,
    Dl,
}

impl From<Kind> for SyntheticKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Ds => SyntheticKind::Ds,
            Kind::Dl => SyntheticKind::Dl,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FrontMethod {
    Pexpo,
    Sphere,
    QpSweep,
    BirkhoffQp,
}

#[derive(Clone, Copy, ValueEnum)]
enum DecomposeMethod {
    Caratheodory,
    Bvn,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct LetorArgs {
    #[arg(long, default_value_t = 132)]
    group_feature: u32,
    /// Comma-separated bin edges; corpus quintiles when omitted.
    #[arg(long, value_delimiter = ',')]
    bin_edges: Option<Vec<f64>>,
    #[arg(long, default_value_t = 4.0)]
    max_grade: f64,
    #[arg(long, default_value_t = 100)]
    max_docs: usize,
}

impl LetorArgs {
    fn options(&self) -> LetorOptions {
        LetorOptions {
            group_feature: self.group_feature,
            bin_edges: self.bin_edges.clone(),
            max_grade: self.max_grade,
            ..LetorOptions::default()
        }
    }
}

#[derive(Args)]
struct SourceArgs {
    /// Instance JSON, or a labeled sparse ranking file with `--letor`.
    #[arg(long, conflicts_with = "synthetic")]
    input: Option<PathBuf>,
    #[arg(long)]
    letor: bool,
    #[command(flatten)]
    letor_args: LetorArgs,
    /// Generate queries instead of reading them.
    #[arg(long, value_enum)]
    synthetic: Option<Kind>,
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SourceArgs {
    fn dataset(&self) -> Result<DatasetSpec> {
        match (&self.input, self.synthetic) {
            (Some(path), _) if self.letor => Ok(DatasetSpec::Letor {
                path: path.display().to_string(),
                options: self.letor_args.options(),
                max_docs: self.letor_args.max_docs,
            }),
            (Some(path), _) => Ok(DatasetSpec::Json {
                path: path.display().to_string(),
            }),
            (None, Some(kind)) => Ok(DatasetSpec::Synthetic {
                kind: kind.into(),
                count: self.count,
                seed: self.seed,
            }),
            (None, None) => Err(Error::InvalidGrid("pass --input or --synthetic".into())),
        }
    }
}

#[derive(Args)]
struct OutputArgs {
    /// Fronts or trajectory output; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Where to write the runtime JSON.
    #[arg(long)]
    runtime: Option<PathBuf>,
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(Error::from),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn render<T: Serialize>(rows: &[T], format: Format) -> Result<String> {
    match format {
        Format::Csv => csv_string(rows),
        Format::Json => Ok(serde_json::to_string_pretty(rows)? + "\n"),
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum DecomposeInput {
    Point { gamma: Vec<f64>, exposure: Vec<f64> },
    Matrix { matrix: Vec<Vec<f64>> },
}

#[derive(Serialize)]
struct AtomRow {
    weight: f64,
    ranking: String,
}

fn decompose(method: DecomposeMethod, input: &Path, tol: f64) -> Result<RankingDistribution> {
    let parsed: DecomposeInput = serde_json::from_str(&fs::read_to_string(input)?)?;
    match (method, parsed) {
        (DecomposeMethod::Caratheodory, DecomposeInput::Point { gamma, exposure }) => {
            caratheodory_decompose(&exposure, &gamma, tol.max(membership_tol(&gamma)))
        }
        (DecomposeMethod::Bvn, DecomposeInput::Matrix { matrix }) => {
            let n = matrix.len();
            let b = BistochasticMatrix::new(n, matrix.into_iter().flatten().collect(), 1e-6)?;
            let atoms = bvn_decompose(&b, tol)?
                .into_iter()
                .map(|(weight, perm)| Atom { weight, perm })
                .collect();
            RankingDistribution::normalized(atoms, 1e-12)
        }
        (DecomposeMethod::Caratheodory, _) => Err(Error::InvalidInstance(
            "expected `gamma` and `exposure`".into(),
        )),
        (DecomposeMethod::Bvn, _) => Err(Error::InvalidInstance("expected `matrix`".into())),
    }
}

fn run_front(
    method: Method,
    source: &SourceArgs,
    deliveries: usize,
    output: &OutputArgs,
) -> Result<bool> {
    let report = run_experiment(&ExperimentConfig {
        method,
        dataset: source.dataset()?,
        seed: source.seed,
        deliveries,
    })?;
    emit(output.out.as_deref(), &render(&report.rows, output.format)?)?;
    if let Some(p) = &output.runtime {
        fs::write(p, serde_json::to_string_pretty(&report.runtime)? + "\n")?;
    }
    for f in &report.failures {
        eprintln!("query {} failed: {}", f.query_id, f.message);
    }
    if report.drops.total() > 0 {
        eprintln!("dropped queries: {}", serde_json::to_string(&report.drops)?);
    }
    Ok(!report.too_many_failures())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Synth {
            kind,
            count,
            seed,
            out,
        } => {
            let instances = gen_synthetic(kind.into(), count, seed);
            emit(out.as_deref(), &(instances_to_json(&instances)? + "\n"))?;
            Ok(true)
        }
        Command::Parse {
            input,
            letor,
            out,
            drops,
        } => {
            let parsed = parse_letor_file(&input, &letor.options())?;
            let (kept, counts) = filter_instances(parsed, letor.max_docs);
            emit(out.as_deref(), &(instances_to_json(&kept)? + "\n"))?;
            let counts = serde_json::to_string_pretty(&counts)? + "\n";
            match drops {
                Some(p) => fs::write(p, counts)?,
                None => eprint!("{counts}"),
            }
            Ok(true)
        }
        Command::Front {
            method,
            source,
            k,
            n_sample,
            n_points,
            alpha_grid,
            budget,
            t,
            output,
        } => {
            let method = match method {
                FrontMethod::Pexpo => Method::Pexpo,
                FrontMethod::Sphere => Method::SphereExpo {
                    rounds: k,
                    n_sample,
                },
                FrontMethod::QpSweep => Method::QpSweep { n_points },
                FrontMethod::BirkhoffQp => {
                    let steps = alpha_grid.max(2) - 1;
                    Method::BirkhoffQp {
                        alphas: (0..=steps).map(|j| j as f64 / steps as f64).collect(),
                        budget,
                    }
                }
            };
            run_front(method, &source, t, &output)
        }
        Command::Ctrl {
            source,
            lambda_grid,
            t,
            trajectory,
            output,
        } => {
            if !trajectory {
                let method = Method::Ctrl {
                    lambdas: lambda_grid,
                    horizon: t,
                };
                return run_front(method, &source, 0, &output);
            }
            let (instances, _) = source.dataset()?.load()?;
            let mut rows = Vec::new();
            for inst in &instances {
                for &l in &lambda_grid {
                    let outcome = ctrl_simulate(inst, l, t, false)?;
                    rows.extend(trajectory_rows(inst, l, &outcome));
                }
            }
            emit(output.out.as_deref(), &render(&rows, output.format)?)?;
            Ok(true)
        }
        Command::Decompose {
            method,
            input,
            tol,
            out,
            format,
        } => {
            let dist = decompose(method, &input, tol)?;
            let text = match format {
                Format::Json => serde_json::to_string_pretty(&dist)? + "\n",
                Format::Csv => {
                    let rows: Vec<AtomRow> = dist
                        .atoms()
                        .iter()
                        .map(|a| {
                            let ranking: Vec<String> =
                                a.perm.ranking().iter().map(|i| i.to_string()).collect();
                            AtomRow {
                                weight: a.weight,
                                ranking: ranking.join(" "),
                            }
                        })
                        .collect();
                    csv_string(&rows)?
                }
            };
            emit(out.as_deref(), &text)?;
            Ok(true)
        }
        Command::Bench {
            queries,
            items,
            seed,
            k,
            n_sample,
            alpha_grid,
            budget,
            out,
        } => {
            let cmp = runtime_comparison(&BenchSettings {
                queries,
                items,
                seed,
                rounds: k,
                n_sample,
                alpha_grid,
                birkhoff_budget: budget,
            })?;
            print!("{}", cmp.table());
            if let Some(p) = out {
                fs::write(p, serde_json::to_string_pretty(&cmp)? + "\n")?;
            }
            Ok(true)
        }
        Command::Aggregate {
            input,
            grid,
            out,
            format,
        } => {
            let rows = read_front_rows(&input)?;
            let (fronts, excluded) = normalized_fronts(&rows);
            if excluded > 0 {
                eprintln!("excluded {excluded} queries whose PRP point is already fair");
            }
            let curve = aggregate_fronts(&fronts, grid)?;
            emit(out.as_deref(), &render(&curve.rows(), format)?)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("more than 10% of queries failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
