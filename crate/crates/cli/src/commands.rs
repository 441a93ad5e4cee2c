use std::io::Read;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;

use lumpkit::aggregation::{
    aggregate_initial, build_partitioned, induced_dynamics, median_dynamics, optimal_pi0,
    proportional_alpha, uniform_alpha, AlphaWeights, Disaggregation, Partition, ReducedModel,
};
use lumpkit::benchlab::{
    self, fmt_f64, AlphaChoice, ExperimentConfig, ExperimentInput, GenSpec, SearchAlgorithm,
};
use lumpkit::bounds::{
    actual_error, ctmc_bounds, dtmc_bounds, error_matrix_parts, stationary_bound, TimePoint,
};
use lumpkit::chain::{
    ctmc_transient, dtmc_transient, stationary, validate, DistVector, GeneratorMatrix, MarkovChain,
    TransitionMatrix,
};
use lumpkit::error::{Error, Result};
use lumpkit::io;
use lumpkit::lumpability::{
    almost_exact_eps, check_partition_dynamic_exact, coarsest_exactly_lumpable, is_aggregatable,
    is_deflatable, is_exactly_lumpable, is_ordinarily_lumpable, is_strictly_lumpable,
};
use lumpkit::schur::{
    schur_dynamic_exact, trivial_stationary_aggregation, BlockOrdering, SchurConfig,
};
use lumpkit::search::{
    refine_almost_exact, svd_dir, svd_sgn, ClusterStrategy, RefineConfig, SvdConfig,
};
use lumpkit::sparse::SparseMatrix;

use crate::manifest::RunTimer;

/// Default tolerance, overridable through LUMPKIT_TOL.
fn env_tol() -> f64 {
    std::env::var("LUMPKIT_TOL")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(lumpkit::DEFAULT_TOL)
}

#[derive(Parser)]
#[command(
    name = "lumpkit",
    version,
    about = "Markov chain aggregation with certified error bounds"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KindArg {
    Dtmc,
    Ctmc,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlphaModeArg {
    Uniform,
    Proportional,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Args)]
struct MatrixInput {
    /// MatrixMarket file holding P or Q; `-` reads standard input.
    matrix: String,
    /// Override the DTMC/CTMC inference from row sums.
    #[arg(long, value_enum)]
    kind: Option<KindArg>,
}

impl MatrixInput {
    fn load(&self) -> Result<MarkovChain> {
        let raw = if self.matrix == "-" {
            let mut text = String::new();
            std::io::stdin().read_to_string(&mut text)?;
            io::read_matrix(text.as_bytes())?
        } else {
            io::read_matrix_file(Path::new(&self.matrix))?
        };
        chain_from_matrix(raw, self.kind)
    }
}

fn chain_from_matrix(raw: SparseMatrix, kind: Option<KindArg>) -> Result<MarkovChain> {
    if raw.nrows() != raw.ncols() {
        return Err(Error::Dimension(format!(
            "chain matrix must be square, got {}x{}",
            raw.nrows(),
            raw.ncols()
        )));
    }
    let kind = match kind {
        Some(k) => k,
        None => {
            // Row sums near 1 mean a DTMC, near 0 a CTMC.
            let sums = raw.row_sums();
            let near = |target: f64| sums.iter().all(|&s| (s - target).abs() < 1e-6);
            if near(1.0) {
                KindArg::Dtmc
            } else if near(0.0) {
                KindArg::Ctmc
            } else {
                return Err(Error::InvalidChain(
                    "row sums are neither 1 nor 0; pass --kind".into(),
                ));
            }
        }
    };
    Ok(match kind {
        KindArg::Dtmc => MarkovChain::Dtmc(TransitionMatrix::new_unchecked(raw)?),
        KindArg::Ctmc => MarkovChain::Ctmc(GeneratorMatrix::new_unchecked(raw)?),
    })
}

fn load_p0(path: &Path, n: usize, tol: f64) -> Result<DistVector> {
    let v = io::read_vector_file(path)?;
    if v.len() != n {
        return Err(Error::Dimension(format!(
            "initial vector {} has length {}, chain has {n} states",
            path.display(),
            v.len()
        )));
    }
    DistVector::probability(v, tol)
}

fn resolve_alpha(
    chain: &MarkovChain,
    partition: &Partition,
    alpha_file: &Option<PathBuf>,
    mode: Option<AlphaModeArg>,
    tol: f64,
) -> Result<AlphaWeights> {
    match (alpha_file, mode) {
        (Some(path), _) => AlphaWeights::new(io::read_vector_file(path)?, partition, tol.max(1e-6)),
        (None, Some(AlphaModeArg::Proportional)) => proportional_alpha(chain, partition, false),
        (None, Some(AlphaModeArg::Uniform)) | (None, None) => Ok(uniform_alpha(partition)),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Check the chain invariants and report every violation.
    Validate {
        #[command(flatten)]
        input: MatrixInput,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Exact transient distribution at a step or time point.
    Transient {
        #[command(flatten)]
        input: MatrixInput,
        #[arg(long)]
        p0: PathBuf,
        #[arg(long, conflicts_with = "t")]
        k: Option<usize>,
        #[arg(long)]
        t: Option<f64>,
        /// Poisson truncation budget for CTMC transients.
        #[arg(long, default_value_t = 1e-10)]
        trunc_eps: f64,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Stationary distribution of an irreducible chain.
    Stationary {
        #[command(flatten)]
        input: MatrixInput,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Build a reduced model from a partition and weights.
    Aggregate {
        #[command(flatten)]
        input: MatrixInput,
        #[arg(long)]
        partition: PathBuf,
        #[arg(long)]
        alpha: Option<PathBuf>,
        #[arg(long, value_enum)]
        alpha_mode: Option<AlphaModeArg>,
        /// Use the weighted-median reduced dynamics instead of A P Lambda.
        #[arg(long)]
        median: bool,
        #[arg(long)]
        p0: PathBuf,
        /// Choose pi0 by least absolute deviations instead of aggregation.
        #[arg(long)]
        optimal_pi0: bool,
        /// Constrain the optimal pi0 to probability vectors.
        #[arg(long, requires = "optimal_pi0")]
        constrain: bool,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Transient error bounds for a reduced model, as CSV or JSON.
    Bounds {
        #[command(flatten)]
        input: MatrixInput,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        p0: PathBuf,
        #[arg(long, conflicts_with = "t")]
        k: Option<usize>,
        #[arg(long)]
        t: Option<f64>,
        #[arg(long, default_value_t = 1000)]
        quad_steps: usize,
        #[arg(long, value_enum, default_value = "csv")]
        format: FormatArg,
    },
    /// Stationarity defect of the disaggregated reduced stationary vector.
    StationaryBound {
        #[command(flatten)]
        input: MatrixInput,
        #[arg(long)]
        model: PathBuf,
        /// Reduced candidate vector; defaults to the stationary vector of
        /// the reduced dynamics when that matrix is stochastic.
        #[arg(long)]
        pi: Option<PathBuf>,
    },
    /// Decide the lumpability notions for a partition.
    Lumpability {
        #[command(flatten)]
        input: MatrixInput,
        #[arg(long)]
        partition: PathBuf,
        #[arg(long)]
        alpha: Option<PathBuf>,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// The unique coarsest exactly lumpable partition.
    Coarsest {
        #[command(flatten)]
        input: MatrixInput,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Search for a low-error partition.
    Search {
        #[command(subcommand)]
        algorithm: SearchCommand,
    },
    /// Dynamic-exact reduction through the real Schur decomposition.
    Schur {
        #[command(flatten)]
        input: MatrixInput,
        #[arg(long, required_unless_present = "trivial")]
        dim: Option<usize>,
        #[arg(long, value_enum, default_value = "descending-modulus")]
        ordering: OrderingArg,
        #[arg(long)]
        drop_stationary: bool,
        /// Reduce to the trivial one-state stationary aggregation instead.
        #[arg(long, conflicts_with_all = ["dim", "drop_stationary"])]
        trivial: bool,
        /// Initial distribution; pi0 is then chosen by least absolute
        /// deviations.
        #[arg(long)]
        p0: Option<PathBuf>,
        #[arg(long, default_value_t = 2000)]
        dense_cap: usize,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Generate a structured random chain.
    Gen {
        #[command(subcommand)]
        family: GenCommand,
    },
    /// Sweep search algorithms over generated chains, emitting CSV.
    Experiment {
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 20)]
        m: usize,
        #[arg(long, default_value_t = 0.5)]
        block_zero_prob: f64,
        #[arg(long, default_value_t = 0.002)]
        perturb: f64,
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long, default_value_t = 1)]
        seed_base: u64,
        /// Comma-separated: svd-dir, svd-sgn, refine.
        #[arg(long, value_delimiter = ',', default_value = "svd-dir,refine")]
        algorithms: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "0.05,0.1,0.2")]
        eps_grid: Vec<f64>,
        #[arg(long, value_enum)]
        alpha_mode: Option<AlphaModeArg>,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Write a built-in worked example to disk (or its matrix to stdout).
    Fixture {
        name: String,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum OrderingArg {
    DescendingModulus,
    AsComputed,
}

#[derive(Subcommand)]
enum SearchCommand {
    /// Direction-based SVD clustering.
    SvdDir {
        #[command(flatten)]
        input: MatrixInput,
        #[arg(long)]
        eps: f64,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        #[arg(long)]
        fixed_l: Option<usize>,
        #[arg(long, value_enum)]
        alpha_mode: Option<AlphaModeArg>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Sign-pattern SVD clustering.
    SvdSgn {
        #[command(flatten)]
        input: MatrixInput,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        fixed_l: Option<usize>,
        #[arg(long, value_enum)]
        alpha_mode: Option<AlphaModeArg>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Refinement towards an eps-almost exactly lumpable partition.
    Refine {
        #[command(flatten)]
        input: MatrixInput,
        #[arg(long)]
        eps: f64,
        #[arg(long, value_enum, default_value = "auto")]
        strategy: StrategyArg,
        #[arg(long, value_enum)]
        alpha_mode: Option<AlphaModeArg>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Hierarchical,
    Greedy,
    Auto,
}

#[derive(Subcommand)]
enum GenCommand {
    /// P = Lambda Pi A for random reduced dynamics and planted weights.
    Aggregatable {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        m: usize,
        #[arg(long, default_value_t = 0.5)]
        block_zero_prob: f64,
        #[arg(long, default_value_t = 0.0)]
        perturb: f64,
        #[arg(long)]
        seed: u64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Random chain with exactly equal incoming sums inside each aggregate.
    ExactlyLumpable {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        seed: u64,
        #[arg(short, long)]
        output: PathBuf,
    },
}

pub fn dispatch(cli: Cli) -> Result<()> {
    let tol_default = env_tol();
    match cli.command {
        Command::Validate { input, tol } => {
            let chain = input.load()?;
            let report = validate(&chain, tol.unwrap_or(tol_default));
            if report.is_ok() {
                println!("ok: all invariants hold");
                Ok(())
            } else {
                for v in &report.violations {
                    println!("violation: {v}");
                }
                Err(Error::InvalidChain(format!(
                    "{} invariant violation(s)",
                    report.violations.len()
                )))
            }
        }
        Command::Transient {
            input,
            p0,
            k,
            t,
            trunc_eps,
            output,
        } => {
            let chain = input.load()?;
            let p0 = load_p0(&p0, chain.n(), tol_default)?;
            let values = match (&chain, k, t) {
                (MarkovChain::Dtmc(p), Some(k), None) => dtmc_transient(p, &p0, k).values().clone(),
                (MarkovChain::Ctmc(q), None, Some(t)) => {
                    let result = ctmc_transient(q, &p0, t, trunc_eps)?;
                    eprintln!("truncated mass: {}", fmt_f64(result.truncated_mass));
                    result.values
                }
                (MarkovChain::Dtmc(_), _, _) => {
                    return Err(Error::Precondition("DTMC transients need --k".into()));
                }
                (MarkovChain::Ctmc(_), _, _) => {
                    return Err(Error::Precondition("CTMC transients need --t".into()));
                }
            };
            emit_vector(&values, output.as_deref())
        }
        Command::Stationary { input, tol, output } => {
            let chain = input.load()?;
            let pi = stationary(&chain, tol.unwrap_or(tol_default))?;
            emit_vector(pi.values(), output.as_deref())
        }
        Command::Aggregate {
            input,
            partition,
            alpha,
            alpha_mode,
            median,
            p0,
            optimal_pi0: use_lp,
            constrain,
            output,
        } => {
            let mut timer = RunTimer::new("aggregate");
            timer.input(Path::new(&input.matrix));
            timer.input(&partition);
            let chain = input.load()?;
            let partition = io::read_partition_file(&partition)?;
            if partition.n() != chain.n() {
                return Err(Error::Dimension(
                    "partition does not match the chain".into(),
                ));
            }
            let alpha = resolve_alpha(&chain, &partition, &alpha, alpha_mode, tol_default)?;
            let disagg = build_partitioned(&partition, &alpha)?;
            let dynamics = if median {
                median_dynamics(&partition, &alpha, &chain)?
            } else {
                induced_dynamics(&disagg, &chain)?
            };
            let p0 = load_p0(&p0, chain.n(), tol_default)?;
            let pi0 = if use_lp {
                let (pi0, objective) = optimal_pi0(disagg.a(), &p0, constrain)?;
                println!("initial error: {}", fmt_f64(objective));
                pi0
            } else {
                aggregate_initial(&p0, &disagg)?
            };
            let model = ReducedModel::new(disagg, dynamics, pi0, chain.is_discrete(), tol_default)?;
            io::write_model_dir(&model, &output)?;
            timer.write(&output)?;
            println!(
                "wrote reduced model (m={}, stochastic={}) to {}",
                model.m(),
                model.stochastic_flag,
                output.display()
            );
            Ok(())
        }
        Command::Bounds {
            input,
            model,
            p0,
            k,
            t,
            quad_steps,
            format,
        } => {
            let chain = input.load()?;
            let model = io::read_model_dir(&model)?;
            if model.n() != chain.n() {
                return Err(Error::Dimension("model does not match the chain".into()));
            }
            let p0 = load_p0(&p0, chain.n(), tol_default)?;
            match (&chain, k, t) {
                (MarkovChain::Dtmc(_), Some(k_max), None) => {
                    let report = dtmc_bounds(&model, &chain, &p0, k_max)?;
                    let actual: Vec<f64> = (0..=k_max)
                        .map(|k| actual_error(&chain, &model, &p0, TimePoint::Step(k)))
                        .collect::<Result<_>>()?;
                    match format {
                        FormatArg::Csv => {
                            println!("k,initial,precise,general,simple,actual");
                            for k in 0..=k_max {
                                let simple = report
                                    .simple
                                    .as_ref()
                                    .map_or("nan".to_string(), |s| fmt_f64(s[k]));
                                println!(
                                    "{},{},{},{},{},{}",
                                    k,
                                    fmt_f64(report.initial_error),
                                    fmt_f64(report.precise[k]),
                                    fmt_f64(report.general[k]),
                                    simple,
                                    fmt_f64(actual[k])
                                );
                            }
                        }
                        FormatArg::Json => {
                            let mut value =
                                serde_json::to_value(&report).expect("report serializes");
                            value["actual"] =
                                serde_json::to_value(&actual).expect("curve serializes");
                            println!("{}", serde_json::to_string_pretty(&value).unwrap());
                        }
                    }
                    if let Some(reason) = &report.simple_omitted {
                        eprintln!("simple bound omitted: {reason}");
                    }
                    Ok(())
                }
                (MarkovChain::Ctmc(_), None, Some(t_max)) => {
                    let report = ctmc_bounds(&model, &chain, &p0, t_max, quad_steps)?;
                    let actual: Vec<f64> = report
                        .times
                        .iter()
                        .map(|&t| actual_error(&chain, &model, &p0, TimePoint::Time(t)))
                        .collect::<Result<_>>()?;
                    match format {
                        FormatArg::Csv => {
                            println!("t,initial,precise_estimate,general,simple,actual");
                            for (i, &t) in report.times.iter().enumerate() {
                                let simple = report
                                    .simple
                                    .as_ref()
                                    .map_or("nan".to_string(), |s| fmt_f64(s[i]));
                                println!(
                                    "{},{},{},{},{},{}",
                                    fmt_f64(t),
                                    fmt_f64(report.initial_error),
                                    fmt_f64(report.precise_estimate[i]),
                                    fmt_f64(report.general[i]),
                                    simple,
                                    fmt_f64(actual[i])
                                );
                            }
                        }
                        FormatArg::Json => {
                            let mut value =
                                serde_json::to_value(&report).expect("report serializes");
                            value["actual"] =
                                serde_json::to_value(&actual).expect("curve serializes");
                            println!("{}", serde_json::to_string_pretty(&value).unwrap());
                        }
                    }
                    eprintln!(
                        "note: precise_estimate is a quadrature estimate (step {}), not certified",
                        fmt_f64(report.quad_step)
                    );
                    Ok(())
                }
                _ => Err(Error::Precondition(
                    "pass --k for DTMC models and --t for CTMC models".into(),
                )),
            }
        }
        Command::StationaryBound { input, model, pi } => {
            let chain = input.load()?;
            let model = io::read_model_dir(&model)?;
            let pi = match pi {
                Some(path) => io::read_vector_file(&path)?,
                None => {
                    if !model.stochastic_flag {
                        return Err(Error::Precondition(
                            "pass --pi unless the reduced dynamics is stochastic (or a generator)"
                                .into(),
                        ));
                    }
                    let raw = SparseMatrix::from_dense(&model.dynamics);
                    let reduced = if model.discrete {
                        MarkovChain::Dtmc(TransitionMatrix::new_unchecked(raw)?)
                    } else {
                        MarkovChain::Ctmc(GeneratorMatrix::new_unchecked(raw)?)
                    };
                    stationary(&reduced, tol_default)?.values().clone()
                }
            };
            let report = stationary_bound(&model, &chain, &pi)?;
            println!("measure: {}", fmt_f64(report.measure));
            println!("bound: {}", fmt_f64(report.bound));
            println!("eigen_residual: {}", fmt_f64(report.eigen_residual));
            Ok(())
        }
        Command::Lumpability {
            input,
            partition,
            alpha,
            tol,
        } => {
            let tol = tol.unwrap_or(tol_default);
            let chain = input.load()?;
            let partition = io::read_partition_file(&partition)?;
            if partition.n() != chain.n() {
                return Err(Error::Dimension(
                    "partition does not match the chain".into(),
                ));
            }
            println!("{}", is_ordinarily_lumpable(&chain, &partition, tol));
            println!("{}", is_exactly_lumpable(&chain, &partition, tol));
            println!("{}", is_strictly_lumpable(&chain, &partition, tol));
            let alpha = match alpha {
                Some(path) => {
                    AlphaWeights::new(io::read_vector_file(&path)?, &partition, tol.max(1e-6))?
                }
                None => {
                    eprintln!("note: no --alpha given, using uniform weights");
                    uniform_alpha(&partition)
                }
            };
            if chain.is_discrete() {
                println!("{}", is_deflatable(&chain, &partition, &alpha, tol)?);
                println!("{}", is_aggregatable(&chain, &partition, &alpha, tol)?);
            } else {
                println!("deflatable: skipped (defined for DTMCs only)");
                println!("aggregatable: skipped (defined for DTMCs only)");
            }
            match check_partition_dynamic_exact(&chain, &partition, &alpha, tol) {
                Ok(report) => println!("{report}"),
                Err(Error::Reducible(_)) => {
                    println!("dynamic-exact (partition): skipped (reducible chain)");
                }
                Err(e) => return Err(e),
            }
            println!(
                "almost-exact eps: {}",
                fmt_f64(almost_exact_eps(&chain, &partition))
            );
            Ok(())
        }
        Command::Coarsest { input, output } => {
            let chain = input.load()?;
            let partition = coarsest_exactly_lumpable(&chain);
            eprintln!("m={}", partition.m());
            match output {
                Some(path) => Ok(io::write_partition_file(&partition, &path)?),
                None => {
                    println!("{}", io::partition_to_json(&partition));
                    Ok(())
                }
            }
        }
        Command::Search { algorithm } => run_search(algorithm),
        Command::Schur {
            input,
            dim,
            ordering,
            drop_stationary,
            trivial,
            p0,
            dense_cap,
            output,
        } => {
            let mut timer = RunTimer::new("schur");
            timer.input(Path::new(&input.matrix));
            let chain = input.load()?;
            let reduction = if trivial {
                trivial_stationary_aggregation(&chain, tol_default)?
            } else {
                let cfg = SchurConfig {
                    ordering: match ordering {
                        OrderingArg::DescendingModulus => BlockOrdering::DescendingModulus,
                        OrderingArg::AsComputed => BlockOrdering::AsComputed,
                    },
                    drop_stationary,
                    dense_cap,
                };
                schur_dynamic_exact(&chain, dim.expect("clap enforces --dim"), &cfg)?
            };
            let pi0 = match p0 {
                Some(path) => {
                    let p0 = load_p0(&path, chain.n(), tol_default)?;
                    let (pi0, objective) = optimal_pi0(&reduction.a, &p0, false)?;
                    println!("initial error: {}", fmt_f64(objective));
                    pi0
                }
                None => DVector::zeros(reduction.achieved_dim),
            };
            let model = ReducedModel::new(
                Disaggregation::new_abstract(reduction.a.clone()),
                reduction.dynamics.clone(),
                pi0,
                chain.is_discrete(),
                tol_default,
            )?;
            io::write_model_dir(&model, &output)?;
            timer.write(&output)?;
            println!(
                "wrote abstract reduction (dim={}, residual={}) to {}",
                reduction.achieved_dim,
                fmt_f64(reduction.residual),
                output.display()
            );
            Ok(())
        }
        Command::Gen { family } => match family {
            GenCommand::Aggregatable {
                n,
                m,
                block_zero_prob,
                perturb,
                seed,
                output,
            } => {
                let mut timer = RunTimer::new("gen aggregatable");
                timer.seed(seed);
                let spec = GenSpec {
                    n,
                    m,
                    block_zero_prob,
                    perturb_magnitude: perturb,
                    seed,
                };
                let (p, partition, alpha) = benchlab::gen_aggregatable(&spec)?;
                let p = benchlab::perturb(&p, perturb, benchlab::perturb_seed(seed));
                std::fs::create_dir_all(&output)?;
                io::write_matrix_file(p.matrix(), &output.join("chain.mtx"))?;
                io::write_partition_file(&partition, &output.join("partition.json"))?;
                io::write_vector_file(alpha.values(), &output.join("alpha.txt"))?;
                timer.write(&output)?;
                println!("wrote aggregatable chain to {}", output.display());
                Ok(())
            }
            GenCommand::ExactlyLumpable { n, m, seed, output } => {
                let mut timer = RunTimer::new("gen exactly-lumpable");
                timer.seed(seed);
                let (p, partition) = benchlab::gen_exactly_lumpable(n, m, seed)?;
                std::fs::create_dir_all(&output)?;
                io::write_matrix_file(p.matrix(), &output.join("chain.mtx"))?;
                io::write_partition_file(&partition, &output.join("partition.json"))?;
                timer.write(&output)?;
                println!("wrote exactly lumpable chain to {}", output.display());
                Ok(())
            }
        },
        Command::Experiment {
            n,
            m,
            block_zero_prob,
            perturb,
            seeds,
            seed_base,
            algorithms,
            eps_grid,
            alpha_mode,
            jobs,
            output,
        } => {
            let algorithms = algorithms
                .iter()
                .map(|name| match name.as_str() {
                    "svd-dir" => Ok(SearchAlgorithm::SvdDir),
                    "svd-sgn" => Ok(SearchAlgorithm::SvdSgn),
                    "refine" => Ok(SearchAlgorithm::Refine),
                    other => Err(Error::Precondition(format!("unknown algorithm {other}"))),
                })
                .collect::<Result<Vec<_>>>()?;
            let inputs: Vec<ExperimentInput> = (0..seeds)
                .map(|i| {
                    ExperimentInput::Spec(GenSpec {
                        n,
                        m,
                        block_zero_prob,
                        perturb_magnitude: perturb,
                        seed: seed_base + i,
                    })
                })
                .collect();
            let cfg = ExperimentConfig {
                algorithms,
                eps_grid,
                alpha: match alpha_mode {
                    Some(AlphaModeArg::Uniform) => AlphaChoice::Uniform,
                    Some(AlphaModeArg::Proportional) => AlphaChoice::Proportional,
                    None => AlphaChoice::Default,
                },
                delta: 0.05,
                jobs,
            };
            let mut timer = RunTimer::new("experiment");
            timer.seed(seed_base);
            let rows = benchlab::run_experiment(&inputs, &cfg)?;
            let failed = rows.iter().filter(|r| r.error.is_some()).count();
            match output {
                Some(path) => {
                    let mut buf = Vec::new();
                    benchlab::write_csv(&rows, &mut buf)?;
                    std::fs::write(&path, buf)?;
                    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                        timer.write(dir)?;
                    }
                    println!("wrote {} rows to {}", rows.len(), path.display());
                }
                None => benchlab::write_csv(&rows, std::io::stdout().lock())?,
            }
            if failed > 0 {
                eprintln!("{failed} row(s) failed; see the err_bound=NaN rows");
            }
            Ok(())
        }
        Command::Fixture { name, output } => {
            let fixture = benchlab::builtin_fixture(&name)?;
            match output {
                Some(dir) => {
                    std::fs::create_dir_all(&dir)?;
                    io::write_matrix_file(fixture.chain.matrix(), &dir.join("chain.mtx"))?;
                    if let Some(partition) = &fixture.partition {
                        io::write_partition_file(partition, &dir.join("partition.json"))?;
                    }
                    if let Some(alpha) = &fixture.alpha {
                        io::write_vector_file(alpha.values(), &dir.join("alpha.txt"))?;
                    }
                    if let Some(p0) = &fixture.p0 {
                        io::write_vector_file(p0.values(), &dir.join("p0.txt"))?;
                    }
                    println!("wrote fixture {name} to {}", dir.display());
                }
                None => {
                    let mut buf = Vec::new();
                    io::write_matrix(fixture.chain.matrix(), &mut buf)?;
                    print!("{}", String::from_utf8_lossy(&buf));
                }
            }
            Ok(())
        }
    }
}

fn run_search(cmd: SearchCommand) -> Result<()> {
    let (chain, partition, alpha_mode, output) = match cmd {
        SearchCommand::SvdDir {
            input,
            eps,
            delta,
            fixed_l,
            alpha_mode,
            output,
        } => {
            let chain = input.load()?;
            let MarkovChain::Dtmc(p) = &chain else {
                return Err(Error::UnsupportedKind("DTMCs (SVD search)".into()));
            };
            let report = svd_dir(
                p,
                &SvdConfig {
                    eps,
                    delta,
                    fixed_l,
                },
            )?;
            (chain, report.partition, alpha_mode, output)
        }
        SearchCommand::SvdSgn {
            input,
            eps,
            fixed_l,
            alpha_mode,
            output,
        } => {
            let chain = input.load()?;
            let MarkovChain::Dtmc(p) = &chain else {
                return Err(Error::UnsupportedKind("DTMCs (SVD search)".into()));
            };
            let report = svd_sgn(
                p,
                &SvdConfig {
                    eps,
                    delta: 0.05,
                    fixed_l,
                },
            )?;
            (chain, report.partition, alpha_mode, output)
        }
        SearchCommand::Refine {
            input,
            eps,
            strategy,
            alpha_mode,
            output,
        } => {
            let chain = input.load()?;
            let cfg = RefineConfig {
                eps,
                strategy: match strategy {
                    StrategyArg::Hierarchical => ClusterStrategy::Hierarchical,
                    StrategyArg::Greedy => ClusterStrategy::Greedy,
                    StrategyArg::Auto => ClusterStrategy::Auto,
                },
                ..RefineConfig::default()
            };
            let partition = refine_almost_exact(&chain, &cfg);
            // Refinement reports with uniform weights by default.
            let alpha_mode = alpha_mode.or(Some(AlphaModeArg::Uniform));
            (chain, partition, alpha_mode, output)
        }
    };
    // SVD searches report with proportional weights by default.
    let alpha = match alpha_mode {
        Some(AlphaModeArg::Uniform) => uniform_alpha(&partition),
        Some(AlphaModeArg::Proportional) | None => proportional_alpha(&chain, &partition, true)?,
    };
    let disagg = build_partitioned(&partition, &alpha)?;
    let dynamics = induced_dynamics(&disagg, &chain)?;
    let err = error_matrix_parts(disagg.a(), &dynamics, &chain)?;
    println!("m={} err_bound={}", partition.m(), fmt_f64(err.inf_norm));
    match output {
        Some(path) => Ok(io::write_partition_file(&partition, &path)?),
        None => {
            println!("{}", io::partition_to_json(&partition));
            Ok(())
        }
    }
}

fn emit_vector(v: &DVector<f64>, output: Option<&Path>) -> Result<()> {
    match output {
        Some(path) => Ok(io::write_vector_file(v, path)?),
        None => {
            let mut buf = Vec::new();
            io::write_vector(v, &mut buf)?;
            print!("{}", String::from_utf8_lossy(&buf));
            Ok(())
        }
    }
}
