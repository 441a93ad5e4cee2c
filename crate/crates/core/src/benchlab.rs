//! Fixture registry, random structured-model generators and the experiment
//! harness producing (aggregate count, error bound) curves.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::{
    build_partitioned, induced_dynamics, proportional_alpha, uniform_alpha, AlphaWeights, Partition,
};
use crate::bounds::error_matrix_parts;
use crate::chain::{DistVector, MarkovChain, TransitionMatrix};
use crate::error::{Error, Result};
use crate::search::{
    refine_almost_exact, svd_dir_with_basis, svd_sgn_with_basis, RefineConfig, SvdBasis, SvdConfig,
};
use crate::sparse::SparseMatrix;

/// A worked example from the aggregation literature, with whatever extra
/// structure is pinned for it.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub name: &'static str,
    pub chain: MarkovChain,
    pub partition: Option<Partition>,
    pub alpha: Option<AlphaWeights>,
    pub p0: Option<DistVector>,
    /// Reduced dynamics pinned for the fixture (the induced or ordinarily
    /// lumped matrix), when the literature exhibits one.
    pub dynamics: Option<DMatrix<f64>>,
}

/// Built-in exact rational fixtures. Known names: CHAIN_A, CHAIN_A2,
/// CHAIN_B, CHAIN_C, CHAIN_CYC.
pub fn builtin_fixture(name: &str) -> Result<Fixture> {
    match name {
        "CHAIN_A" => {
            let chain = MarkovChain::Dtmc(TransitionMatrix::from_rows(
                3,
                &[
                    0.25, 0.25, 0.5, //
                    0.25, 0.5, 0.25, //
                    0.5, 0.25, 0.25,
                ],
            ));
            let partition = Partition::from_blocks(3, &[vec![0, 1], vec![2]])?;
            let alpha =
                AlphaWeights::new(DVector::from_vec(vec![0.5, 0.5, 1.0]), &partition, 1e-12)?;
            Ok(Fixture {
                name: "CHAIN_A",
                chain,
                partition: Some(partition),
                alpha: Some(alpha),
                p0: None,
                dynamics: Some(DMatrix::from_row_slice(2, 2, &[5.0, 3.0, 6.0, 2.0]) / 8.0),
            })
        }
        "CHAIN_A2" => {
            let chain = MarkovChain::Dtmc(TransitionMatrix::from_rows(
                3,
                &[
                    0.25, 0.25, 0.5, //
                    0.25, 0.5, 0.25, //
                    0.5, 0.25, 0.25,
                ],
            ));
            let partition = Partition::from_blocks(3, &[vec![0, 1], vec![2]])?;
            let alpha =
                AlphaWeights::new(DVector::from_vec(vec![0.75, 0.25, 1.0]), &partition, 1e-12)?;
            Ok(Fixture {
                name: "CHAIN_A2",
                chain,
                partition: Some(partition),
                alpha: Some(alpha),
                p0: None,
                dynamics: Some(DMatrix::from_row_slice(2, 2, &[9.0, 7.0, 12.0, 4.0]) / 16.0),
            })
        }
        "CHAIN_B" => {
            let chain = MarkovChain::Dtmc(TransitionMatrix::from_rows(
                3,
                &[
                    0.0, 0.5, 0.5, //
                    0.25, 0.25, 0.5, //
                    0.5, 0.25, 0.25,
                ],
            ));
            let partition = Partition::from_blocks(3, &[vec![0, 1], vec![2]])?;
            let p0 = DistVector::probability(
                DVector::from_vec(vec![19.0 / 30.0, 0.0, 11.0 / 30.0]),
                1e-12,
            )?;
            Ok(Fixture {
                name: "CHAIN_B",
                chain,
                partition: Some(partition),
                alpha: None,
                p0: Some(p0),
                dynamics: Some(DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.75, 0.25])),
            })
        }
        "CHAIN_C" => {
            let chain = MarkovChain::Dtmc(TransitionMatrix::from_rows(
                3,
                &[0.0, 0.25, 0.75, 0.0, 0.5, 0.5, 4.0 / 9.0, 1.0 / 18.0, 0.5],
            ));
            let partition = Partition::from_blocks(3, &[vec![0], vec![1, 2]])?;
            let alpha =
                AlphaWeights::new(DVector::from_vec(vec![1.0, 0.25, 0.75]), &partition, 1e-12)?;
            Ok(Fixture {
                name: "CHAIN_C",
                chain,
                partition: Some(partition),
                alpha: Some(alpha),
                p0: None,
                dynamics: Some(DMatrix::from_row_slice(
                    2,
                    2,
                    &[0.0, 1.0, 1.0 / 3.0, 2.0 / 3.0],
                )),
            })
        }
        "CHAIN_CYC" => {
            let chain = MarkovChain::Dtmc(TransitionMatrix::from_rows(
                3,
                &[
                    0.0, 1.0, 0.0, //
                    0.0, 0.0, 1.0, //
                    1.0, 0.0, 0.0,
                ],
            ));
            Ok(Fixture {
                name: "CHAIN_CYC",
                chain,
                partition: None,
                alpha: None,
                p0: Some(DistVector::point_mass(3, 0)),
                dynamics: None,
            })
        }
        other => Err(Error::UnknownFixture(other.to_string())),
    }
}

pub fn fixture_names() -> &'static [&'static str] {
    &["CHAIN_A", "CHAIN_A2", "CHAIN_B", "CHAIN_C", "CHAIN_CYC"]
}

/// Parameters of the random almost-aggregatable model family.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GenSpec {
    pub n: usize,
    pub m: usize,
    /// Probability that a reduced transition is zeroed out.
    pub block_zero_prob: f64,
    /// Magnitude of the additive uniform noise applied afterwards.
    pub perturb_magnitude: f64,
    pub seed: u64,
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.m > self.n {
            return Err(Error::Precondition(format!(
                "need 1 <= m <= n, got m={} n={}",
                self.m, self.n
            )));
        }
        if !(0.0..=1.0).contains(&self.block_zero_prob) {
            return Err(Error::Precondition(
                "block_zero_prob must lie in [0, 1]".into(),
            ));
        }
        if self.perturb_magnitude < 0.0 {
            return Err(Error::Precondition(
                "perturb_magnitude must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Aggregate sizes as equal as possible, earlier aggregates taking the
/// remainder.
fn spread_sizes(n: usize, m: usize) -> Vec<usize> {
    let base = n / m;
    let extra = n % m;
    (0..m).map(|a| base + usize::from(a < extra)).collect()
}

fn contiguous_partition(n: usize, m: usize) -> Partition {
    let sizes = spread_sizes(n, m);
    let mut omega = Vec::with_capacity(n);
    for (a, &size) in sizes.iter().enumerate() {
        omega.extend(std::iter::repeat(a).take(size));
    }
    Partition::from_omega(omega).expect("sizes cover all aggregates")
}

/// Random aggregatable DTMC: `P = Lambda Pi A` for a random stochastic
/// reduced matrix and random planted weights. Resamples until the reduced
/// transition graph is strongly connected.
pub fn gen_aggregatable(spec: &GenSpec) -> Result<(TransitionMatrix, Partition, AlphaWeights)> {
    spec.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let partition = contiguous_partition(spec.n, spec.m);
    let m = spec.m;

    let mut reduced = DMatrix::zeros(m, m);
    let mut found = false;
    for _ in 0..1000 {
        let mut ok_rows = true;
        for r in 0..m {
            let mut sum = 0.0;
            for c in 0..m {
                let zeroed = rng.random::<f64>() < spec.block_zero_prob;
                let v = if zeroed { 0.0 } else { rng.random::<f64>() };
                reduced[(r, c)] = v;
                sum += v;
            }
            if sum == 0.0 {
                ok_rows = false;
                break;
            }
            for c in 0..m {
                reduced[(r, c)] /= sum;
            }
        }
        if ok_rows && dense_strongly_connected(&reduced) {
            found = true;
            break;
        }
    }
    if !found {
        return Err(Error::NonConvergence(
            "no irreducible reduced matrix found within the retry cap".into(),
        ));
    }

    let blocks = partition.blocks();
    let mut alpha_values = DVector::zeros(spec.n);
    for block in &blocks {
        let raw: Vec<f64> = block.iter().map(|_| rng.random::<f64>()).collect();
        let total: f64 = raw.iter().sum();
        for (&s, &v) in block.iter().zip(raw.iter()) {
            alpha_values[s] = v / total;
        }
    }
    let alpha = AlphaWeights::new(alpha_values, &partition, 1e-9)?;

    let mut dense = DMatrix::zeros(spec.n, spec.n);
    for r in 0..spec.n {
        for s in 0..spec.n {
            dense[(r, s)] =
                reduced[(partition.aggregate_of(r), partition.aggregate_of(s))] * alpha.get(s);
        }
    }
    let p = TransitionMatrix::new_unchecked(SparseMatrix::from_dense(&dense))?;
    Ok((p, partition, alpha))
}

fn dense_strongly_connected(m: &DMatrix<f64>) -> bool {
    let chain = TransitionMatrix::new_unchecked(SparseMatrix::from_dense(m))
        .expect("square reduced matrix");
    crate::chain::is_irreducible(&MarkovChain::Dtmc(chain))
}

/// Noise stream seed derived from a generation seed, so a spec plus its
/// perturbation stays reproducible from the single seed.
pub fn perturb_seed(gen_seed: u64) -> u64 {
    gen_seed ^ 0x5045_5254
}

/// Adds independent uniform `[0, magnitude]` noise to every entry and
/// renormalizes each row. Deterministic for a given seed; a zero magnitude
/// returns the input unchanged.
pub fn perturb(p: &TransitionMatrix, magnitude: f64, seed: u64) -> TransitionMatrix {
    if magnitude == 0.0 {
        return p.clone();
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let n = p.n();
    let mut dense = p.matrix().to_dense();
    for r in 0..n {
        for c in 0..n {
            dense[(r, c)] += rng.random::<f64>() * magnitude;
        }
        let sum = dense.row(r).sum();
        for c in 0..n {
            dense[(r, c)] /= sum;
        }
    }
    TransitionMatrix::new_unchecked(SparseMatrix::from_dense(&dense)).expect("square")
}

/// Random exactly lumpable DTMC with the planted partition.
///
/// All probabilities are dyadic rationals over a common power-of-two
/// denominator, so the defining column-sum equalities and the unit row sums
/// hold exactly in floating point, not just within a tolerance.
pub fn gen_exactly_lumpable(
    n: usize,
    m: usize,
    seed: u64,
) -> Result<(TransitionMatrix, Partition)> {
    if m == 0 || m > n {
        return Err(Error::Precondition(format!(
            "need 1 <= m <= n, got m={m} n={n}"
        )));
    }
    const DENOM: u64 = 1 << 20;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let partition = contiguous_partition(n, m);
    let sizes = spread_sizes(n, m);
    let blocks = partition.blocks();

    // Per-column integer targets: column s in aggregate sigma receives
    // exactly targets[rho][sigma] units from block-row rho. Row feasibility
    // needs sum_sigma |sigma| * targets[rho][sigma] = |rho| * DENOM.
    let mut targets = vec![vec![0i64; m]; m];
    for rho in 0..m {
        let total = sizes[rho] as i64 * DENOM as i64;
        let raw: Vec<i64> = (0..m).map(|_| rng.random_range(1..=(1i64 << 16))).collect();
        let weight: i64 = raw
            .iter()
            .zip(sizes.iter())
            .map(|(&w, &s)| w * s as i64)
            .sum();
        for sigma in 0..m {
            targets[rho][sigma] =
                ((total as i128 * raw[sigma] as i128) / weight as i128).max(1) as i64;
        }
        balance_targets(&mut targets[rho], &sizes, total)?;
    }

    // Per block-row transportation: distribute each column target over the
    // rows of the block without exceeding the per-row supply DENOM.
    let mut numerators = vec![vec![0u64; n]; n];
    for rho in 0..m {
        let rows = &blocks[rho];
        let mut supply: Vec<i64> = vec![DENOM as i64; rows.len()];
        for s in 0..n {
            let mut need = targets[rho][partition.aggregate_of(s)];
            let mut later: i64 = supply.iter().sum::<i64>() - supply[0];
            for (idx, &r) in rows.iter().enumerate() {
                let low = (need - later).max(0);
                let high = supply[idx].min(need);
                debug_assert!(low <= high, "transportation infeasible");
                let v = if low == high {
                    low
                } else {
                    rng.random_range(low..=high)
                };
                numerators[r][s] = v as u64;
                supply[idx] -= v;
                need -= v;
                if idx + 1 < rows.len() {
                    later -= supply[idx + 1];
                }
            }
            debug_assert_eq!(need, 0);
        }
        debug_assert!(supply.iter().all(|&s| s == 0));
    }

    let scale = 1.0 / DENOM as f64;
    let triplets = (0..n).flat_map(|r| {
        let row = &numerators[r];
        (0..n)
            .filter(|&s| row[s] != 0)
            .map(move |s| (r, s, row[s] as f64 * scale))
    });
    let p = TransitionMatrix::new_unchecked(SparseMatrix::from_triplets(n, n, triplets)?)?;
    Ok((p, partition))
}

/// Adjusts per-column targets so that `sum_sigma sizes[sigma] * t[sigma]`
/// hits `total` exactly, keeping every target >= 1. Sizes differ by at most
/// one, so the deficit is always expressible.
fn balance_targets(t: &mut [i64], sizes: &[usize], total: i64) -> Result<()> {
    let current: i64 = t
        .iter()
        .zip(sizes.iter())
        .map(|(&v, &s)| v * s as i64)
        .sum();
    let mut deficit = total - current;
    if deficit == 0 {
        return Ok(());
    }
    let g = *sizes.iter().min().unwrap() as i64;
    let h = *sizes.iter().max().unwrap() as i64;
    // Adjust the largest targets so nothing can drop below 1.
    let pick = |t: &[i64], size: i64| {
        (0..t.len())
            .filter(|&i| sizes[i] as i64 == size)
            .max_by_key(|&i| t[i])
            .expect("size class is present")
    };
    if g == h {
        if deficit % g != 0 {
            return Err(Error::NonConvergence("unreachable target remainder".into()));
        }
        t[pick(t, g)] += deficit / g;
    } else {
        // Sizes g and g+1 are coprime: pay `deficit mod g` with the larger
        // coin, the rest with the smaller one.
        let y = deficit.rem_euclid(g);
        t[pick(t, h)] += y;
        deficit -= y * h;
        t[pick(t, g)] += deficit / g;
    }
    if t.iter().any(|&v| v < 1) {
        return Err(Error::NonConvergence(
            "target balancing went negative".into(),
        ));
    }
    Ok(())
}

/// Search algorithms the experiment harness can sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchAlgorithm {
    SvdDir,
    SvdSgn,
    Refine,
}

impl SearchAlgorithm {
    pub fn name(&self) -> &'static str {
        match self {
            SearchAlgorithm::SvdDir => "svd-dir",
            SearchAlgorithm::SvdSgn => "svd-sgn",
            SearchAlgorithm::Refine => "refine",
        }
    }
}

/// Which weights back the reported model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaChoice {
    /// Proportional for the SVD family, uniform for refinement.
    Default,
    Uniform,
    Proportional,
}

#[derive(Debug, Clone)]
pub enum ExperimentInput {
    Chain { label: String, chain: MarkovChain },
    Spec(GenSpec),
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub algorithms: Vec<SearchAlgorithm>,
    pub eps_grid: Vec<f64>,
    pub alpha: AlphaChoice,
    pub delta: f64,
    pub jobs: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            algorithms: vec![SearchAlgorithm::SvdDir, SearchAlgorithm::Refine],
            eps_grid: vec![0.1],
            alpha: AlphaChoice::Default,
            delta: 0.05,
            jobs: None,
        }
    }
}

/// One experiment outcome; `error` is set when the row failed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub algorithm: String,
    pub eps: f64,
    pub aggregates: usize,
    pub err_bound: f64,
    pub wall_ms: f64,
    pub seed: u64,
    pub error: Option<String>,
}

struct PreparedInput {
    seed: u64,
    chain: MarkovChain,
    svd_basis: Option<SvdBasis>,
}

/// Runs every (input, algorithm, eps) combination, reporting the aggregate
/// count and `||Pi A - A P||_inf` (resp. Theta/Q) of the model built with
/// the configured weights. Rows run concurrently.
pub fn run_experiment(
    inputs: &[ExperimentInput],
    cfg: &ExperimentConfig,
) -> Result<Vec<ExperimentRow>> {
    let wants_svd = cfg
        .algorithms
        .iter()
        .any(|a| matches!(a, SearchAlgorithm::SvdDir | SearchAlgorithm::SvdSgn));

    let mut prepared = Vec::with_capacity(inputs.len());
    for input in inputs {
        let (seed, chain) = match input {
            ExperimentInput::Chain { chain, .. } => (0u64, chain.clone()),
            ExperimentInput::Spec(spec) => {
                let (p, _, _) = gen_aggregatable(spec)?;
                let p = perturb(&p, spec.perturb_magnitude, perturb_seed(spec.seed));
                (spec.seed, MarkovChain::Dtmc(p))
            }
        };
        let svd_basis = match (&chain, wants_svd) {
            (MarkovChain::Dtmc(p), true) => Some(SvdBasis::compute(p)?),
            _ => None,
        };
        prepared.push(PreparedInput {
            seed,
            chain,
            svd_basis,
        });
    }

    let mut tasks = Vec::new();
    for (i, _) in prepared.iter().enumerate() {
        for &algorithm in &cfg.algorithms {
            for &eps in &cfg.eps_grid {
                tasks.push((i, algorithm, eps));
            }
        }
    }

    let body = || {
        tasks
            .par_iter()
            .map(|&(i, algorithm, eps)| run_row(&prepared[i], algorithm, eps, cfg))
            .collect::<Vec<_>>()
    };
    let rows = match cfg.jobs {
        Some(jobs) => rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Precondition(format!("worker pool: {e}")))?
            .install(body),
        None => body(),
    };
    Ok(rows)
}

fn run_row(
    input: &PreparedInput,
    algorithm: SearchAlgorithm,
    eps: f64,
    cfg: &ExperimentConfig,
) -> ExperimentRow {
    let start = Instant::now();
    let outcome = row_outcome(input, algorithm, eps, cfg);
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    match outcome {
        Ok((aggregates, err_bound)) => ExperimentRow {
            algorithm: algorithm.name().to_string(),
            eps,
            aggregates,
            err_bound,
            wall_ms,
            seed: input.seed,
            error: None,
        },
        Err(e) => ExperimentRow {
            algorithm: algorithm.name().to_string(),
            eps,
            aggregates: 0,
            err_bound: f64::NAN,
            wall_ms,
            seed: input.seed,
            error: Some(e.to_string()),
        },
    }
}

fn row_outcome(
    input: &PreparedInput,
    algorithm: SearchAlgorithm,
    eps: f64,
    cfg: &ExperimentConfig,
) -> Result<(usize, f64)> {
    let partition = match algorithm {
        SearchAlgorithm::SvdDir => {
            let basis = input
                .svd_basis
                .as_ref()
                .ok_or_else(|| Error::UnsupportedKind("DTMCs (SVD search)".into()))?;
            svd_dir_with_basis(
                basis,
                &SvdConfig {
                    eps,
                    delta: cfg.delta,
                    fixed_l: None,
                },
            )?
            .partition
        }
        SearchAlgorithm::SvdSgn => {
            let basis = input
                .svd_basis
                .as_ref()
                .ok_or_else(|| Error::UnsupportedKind("DTMCs (SVD search)".into()))?;
            svd_sgn_with_basis(
                basis,
                &SvdConfig {
                    eps,
                    delta: cfg.delta,
                    fixed_l: None,
                },
            )?
            .partition
        }
        SearchAlgorithm::Refine => refine_almost_exact(
            &input.chain,
            &RefineConfig {
                eps,
                ..RefineConfig::default()
            },
        ),
    };
    let alpha = match (cfg.alpha, algorithm) {
        (AlphaChoice::Uniform, _) | (AlphaChoice::Default, SearchAlgorithm::Refine) => {
            uniform_alpha(&partition)
        }
        (AlphaChoice::Proportional, _) | (AlphaChoice::Default, _) => {
            proportional_alpha(&input.chain, &partition, true)?
        }
    };
    let disagg = build_partitioned(&partition, &alpha)?;
    let dynamics = induced_dynamics(&disagg, &input.chain)?;
    let err = error_matrix_parts(disagg.a(), &dynamics, &input.chain)?;
    Ok((partition.m(), err.inf_norm))
}

/// Writes rows in the `algorithm,eps,aggregates,err_bound,wall_ms,seed`
/// schema. Failed rows carry a NaN error bound.
pub fn write_csv<W: std::io::Write>(rows: &[ExperimentRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "algorithm,eps,aggregates,err_bound,wall_ms,seed")?;
    for row in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            row.algorithm,
            fmt_f64(row.eps),
            row.aggregates,
            fmt_f64(row.err_bound),
            fmt_f64(row.wall_ms),
            row.seed
        )?;
    }
    Ok(())
}

/// Formats with 17 significant digits so doubles survive a text round trip.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}
