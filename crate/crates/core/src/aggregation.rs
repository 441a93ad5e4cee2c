//! Weighted state-space partitioning: partitions, per-state weights, the
//! disaggregation matrix A, induced and median-based reduced dynamics, and
//! reduced-model transient evolution.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::chain::{uniformise, DistVector, MarkovChain};
use crate::error::{Error, Result};
use crate::linalg::{expm, l1_norm};
use crate::lp;

/// Surjective map from states onto aggregates `{0, .., m-1}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    omega: Vec<usize>,
    m: usize,
}

impl Partition {
    /// Builds a partition from a per-state aggregate index (0-based). Every
    /// index in `0..m` must occur, with `m` the largest index plus one.
    pub fn from_omega(omega: Vec<usize>) -> Result<Self> {
        if omega.is_empty() {
            return Err(Error::InvalidPartition("empty state space".into()));
        }
        let m = omega.iter().max().unwrap() + 1;
        let mut seen = vec![false; m];
        for &a in &omega {
            seen[a] = true;
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(Error::InvalidPartition(format!(
                "aggregate {} has no states",
                missing + 1
            )));
        }
        Ok(Self { omega, m })
    }

    /// Builds from explicit blocks of (0-based) states covering `0..n`.
    pub fn from_blocks(n: usize, blocks: &[Vec<usize>]) -> Result<Self> {
        let mut omega = vec![usize::MAX; n];
        for (a, block) in blocks.iter().enumerate() {
            for &s in block {
                if s >= n {
                    return Err(Error::InvalidPartition(format!(
                        "state {} out of range",
                        s + 1
                    )));
                }
                if omega[s] != usize::MAX {
                    return Err(Error::InvalidPartition(format!(
                        "state {} assigned twice",
                        s + 1
                    )));
                }
                omega[s] = a;
            }
        }
        if omega.iter().any(|&a| a == usize::MAX) {
            return Err(Error::InvalidPartition("not all states covered".into()));
        }
        Self::from_omega(omega)
    }

    pub fn singletons(n: usize) -> Self {
        Self {
            omega: (0..n).collect(),
            m: n,
        }
    }

    pub fn single(n: usize) -> Self {
        Self {
            omega: vec![0; n],
            m: 1,
        }
    }

    pub fn n(&self) -> usize {
        self.omega.len()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn aggregate_of(&self, s: usize) -> usize {
        self.omega[s]
    }

    pub fn omega(&self) -> &[usize] {
        &self.omega
    }

    /// States of every aggregate, each in ascending order.
    pub fn blocks(&self) -> Vec<Vec<usize>> {
        let mut blocks = vec![Vec::new(); self.m];
        for (s, &a) in self.omega.iter().enumerate() {
            blocks[a].push(s);
        }
        blocks
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.m];
        for &a in &self.omega {
            sizes[a] += 1;
        }
        sizes
    }

    /// True iff `self` and `other` group the states identically, regardless
    /// of aggregate numbering.
    pub fn same_grouping(&self, other: &Partition) -> bool {
        if self.n() != other.n() || self.m() != other.m() {
            return false;
        }
        let mut map = vec![usize::MAX; self.m];
        for s in 0..self.n() {
            let a = self.omega[s];
            let b = other.omega[s];
            if map[a] == usize::MAX {
                map[a] = b;
            } else if map[a] != b {
                return false;
            }
        }
        true
    }

    /// True iff every aggregate of `finer` is contained in one of `self`.
    pub fn is_coarsening_of(&self, finer: &Partition) -> bool {
        if self.n() != finer.n() {
            return false;
        }
        let mut map = vec![usize::MAX; finer.m()];
        for s in 0..self.n() {
            let f = finer.omega[s];
            if map[f] == usize::MAX {
                map[f] = self.omega[s];
            } else if map[f] != self.omega[s] {
                return false;
            }
        }
        true
    }
}

/// One weight per state; within each aggregate the weights form a
/// probability distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaWeights {
    values: DVector<f64>,
}

impl AlphaWeights {
    pub fn new(values: DVector<f64>, partition: &Partition, tol: f64) -> Result<Self> {
        if values.len() != partition.n() {
            return Err(Error::Dimension(format!(
                "alpha length {} does not match {} states",
                values.len(),
                partition.n()
            )));
        }
        if let Some((s, &v)) = values.iter().enumerate().find(|(_, &v)| v < 0.0) {
            return Err(Error::InvalidAlpha(format!(
                "negative weight {v} at state {}",
                s + 1
            )));
        }
        let mut sums = vec![0.0; partition.m()];
        for (s, &v) in values.iter().enumerate() {
            sums[partition.aggregate_of(s)] += v;
        }
        for (a, &sum) in sums.iter().enumerate() {
            if (sum - 1.0).abs() > tol {
                return Err(Error::InvalidAlpha(format!(
                    "aggregate {} weights sum to {sum}, not 1",
                    a + 1
                )));
            }
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn get(&self, s: usize) -> f64 {
        self.values[s]
    }
}

/// `alpha(s) = 1 / |omega(s)|`.
pub fn uniform_alpha(partition: &Partition) -> AlphaWeights {
    let sizes = partition.sizes();
    let values = DVector::from_iterator(
        partition.n(),
        (0..partition.n()).map(|s| 1.0 / sizes[partition.aggregate_of(s)] as f64),
    );
    AlphaWeights { values }
}

/// Proportional weights: `alpha(s)` is the probability of sitting in `s`
/// conditioned on its aggregate after one step from the uniform
/// distribution. For CTMCs the formula is applied to the transition matrix
/// uniformised at the maximal exit rate.
///
/// Aggregates with zero incoming probability make the formula undefined;
/// with `uniform_fallback` those aggregates fall back to uniform weights
/// instead of erroring.
pub fn proportional_alpha(
    chain: &MarkovChain,
    partition: &Partition,
    uniform_fallback: bool,
) -> Result<AlphaWeights> {
    let col_sums = match chain {
        MarkovChain::Dtmc(p) => p.matrix().col_sums(),
        MarkovChain::Ctmc(q) => uniformise(q, None)?.0.matrix().col_sums(),
    };
    let mut agg_sums = vec![0.0; partition.m()];
    for s in 0..partition.n() {
        agg_sums[partition.aggregate_of(s)] += col_sums[s];
    }
    let sizes = partition.sizes();
    let mut values = DVector::zeros(partition.n());
    for s in 0..partition.n() {
        let a = partition.aggregate_of(s);
        if agg_sums[a] <= 0.0 {
            if uniform_fallback {
                values[s] = 1.0 / sizes[a] as f64;
            } else {
                return Err(Error::InvalidAlpha(format!(
                    "aggregate {} receives no incoming probability",
                    a + 1
                )));
            }
        } else {
            values[s] = col_sums[s] / agg_sums[a];
        }
    }
    Ok(AlphaWeights { values })
}

/// How the rows of a disaggregation matrix were obtained.
#[derive(Debug, Clone)]
pub enum DisaggregationMode {
    /// Rows are the alpha distributions of a weighted state-space partition.
    Partitioned {
        partition: Partition,
        alpha: AlphaWeights,
    },
    /// Arbitrary real rows, e.g. from a Schur reduction.
    Abstract,
}

/// The m-by-n matrix A mapping reduced vectors back to the full state space.
#[derive(Debug, Clone)]
pub struct Disaggregation {
    a: DMatrix<f64>,
    mode: DisaggregationMode,
}

impl Disaggregation {
    pub fn new_abstract(a: DMatrix<f64>) -> Self {
        Self {
            a,
            mode: DisaggregationMode::Abstract,
        }
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    pub fn n(&self) -> usize {
        self.a.ncols()
    }

    pub fn mode(&self) -> &DisaggregationMode {
        &self.mode
    }

    pub fn partition(&self) -> Option<&Partition> {
        match &self.mode {
            DisaggregationMode::Partitioned { partition, .. } => Some(partition),
            DisaggregationMode::Abstract => None,
        }
    }

    pub fn alpha(&self) -> Option<&AlphaWeights> {
        match &self.mode {
            DisaggregationMode::Partitioned { alpha, .. } => Some(alpha),
            DisaggregationMode::Abstract => None,
        }
    }

    /// The 0/1 aggregation matrix (n x m); only defined in partitioned mode.
    pub fn lambda(&self) -> Option<DMatrix<f64>> {
        let partition = self.partition()?;
        let mut lambda = DMatrix::zeros(partition.n(), partition.m());
        for s in 0..partition.n() {
            lambda[(s, partition.aggregate_of(s))] = 1.0;
        }
        Some(lambda)
    }
}

/// Builds A from a partition and weights: row sigma carries `alpha_sigma`.
pub fn build_partitioned(partition: &Partition, alpha: &AlphaWeights) -> Result<Disaggregation> {
    if alpha.values().len() != partition.n() {
        return Err(Error::Dimension(
            "alpha length does not match partition".into(),
        ));
    }
    let mut a = DMatrix::zeros(partition.m(), partition.n());
    for s in 0..partition.n() {
        a[(partition.aggregate_of(s), s)] = alpha.get(s);
    }
    // A Lambda = I is then automatic because each row sums to one over its
    // own aggregate; re-check to catch inconsistent inputs.
    for sigma in 0..partition.m() {
        let row_sum: f64 = (0..partition.n())
            .filter(|&s| partition.aggregate_of(s) == sigma)
            .map(|s| a[(sigma, s)])
            .sum();
        if (row_sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidAlpha(format!(
                "aggregate {} has total weight {row_sum}",
                sigma + 1
            )));
        }
    }
    Ok(Disaggregation {
        a,
        mode: DisaggregationMode::Partitioned {
            partition: partition.clone(),
            alpha: alpha.clone(),
        },
    })
}

/// `Pi = A P Lambda` (or `Theta = A Q Lambda`), the natural reduced
/// dynamics. Stochastic whenever A is.
pub fn induced_dynamics(disagg: &Disaggregation, chain: &MarkovChain) -> Result<DMatrix<f64>> {
    let partition = disagg.partition().ok_or_else(|| {
        Error::Precondition("induced dynamics needs a partitioned disaggregation".into())
    })?;
    if chain.n() != disagg.n() {
        return Err(Error::Dimension(
            "chain size does not match disaggregation".into(),
        ));
    }
    let ap = chain.matrix().dense_mul_left(disagg.a());
    let mut pi = DMatrix::zeros(disagg.m(), disagg.m());
    for s in 0..partition.n() {
        let sigma = partition.aggregate_of(s);
        for rho in 0..disagg.m() {
            pi[(rho, sigma)] += ap[(rho, s)];
        }
    }
    Ok(pi)
}

/// Weighted median of `(value, weight)` pairs: an element such that neither
/// the strictly smaller nor the strictly larger values carry more than half
/// of the total weight. Ties are broken towards the smallest qualifying
/// value so outputs are reproducible.
pub fn weighted_median(items: &[(f64, f64)]) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::Precondition(
            "weighted median of an empty set".into(),
        ));
    }
    let mut sorted: Vec<(f64, f64)> = items.to_vec();
    sorted.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .expect("median values must not be NaN")
    });
    let total: f64 = sorted.iter().map(|&(_, w)| w).sum();
    let half = total / 2.0;

    let mut below = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let value = sorted[i].0;
        let mut at = 0.0;
        while i < sorted.len() && sorted[i].0 == value {
            at += sorted[i].1;
            i += 1;
        }
        let above = total - below - at;
        if below <= half && above <= half {
            return Ok(value);
        }
        below += at;
    }
    unreachable!("a weighted median always exists")
}

/// `a_s = (1/alpha(s)) sum_{r in rho} alpha(r) entry(r, s)`, the multiset
/// underlying the median scheme. States with zero weight are excluded.
fn median_candidates(
    alpha: &AlphaWeights,
    ap: &DMatrix<f64>,
    rho: usize,
    block: &[usize],
) -> Vec<(f64, f64)> {
    block
        .iter()
        .filter(|&&s| alpha.get(s) > 0.0)
        .map(|&s| (ap[(rho, s)] / alpha.get(s), alpha.get(s)))
        .collect()
}

/// Reduced dynamics from the weighted-median scheme. Minimizes every
/// per-aggregate error row sum, at the price of the result not necessarily
/// being stochastic (or a generator).
pub fn median_dynamics(
    partition: &Partition,
    alpha: &AlphaWeights,
    chain: &MarkovChain,
) -> Result<DMatrix<f64>> {
    let disagg = build_partitioned(partition, alpha)?;
    let ap = chain.matrix().dense_mul_left(disagg.a());
    let blocks = partition.blocks();
    let m = partition.m();
    let mut pi = DMatrix::zeros(m, m);
    for sigma in 0..m {
        if blocks[sigma].iter().all(|&s| alpha.get(s) == 0.0) {
            return Err(Error::InvalidAlpha(format!(
                "aggregate {} has no state with positive weight",
                sigma + 1
            )));
        }
        for rho in 0..m {
            let items = median_candidates(alpha, &ap, rho, &blocks[sigma]);
            pi[(rho, sigma)] = weighted_median(&items)?;
        }
    }
    Ok(pi)
}

/// `pi_0^T = p_0^T Lambda`: aggregate masses of the initial distribution.
pub fn aggregate_initial(p0: &DistVector, disagg: &Disaggregation) -> Result<DVector<f64>> {
    let partition = disagg.partition().ok_or_else(|| {
        Error::Precondition("aggregating an initial vector needs a partition".into())
    })?;
    if p0.values().len() != partition.n() {
        return Err(Error::Dimension("initial vector length mismatch".into()));
    }
    let mut pi0 = DVector::zeros(partition.m());
    for s in 0..partition.n() {
        pi0[partition.aggregate_of(s)] += p0.values()[s];
    }
    Ok(pi0)
}

/// Reduced initial vector minimizing the initial error `||pi_0^T A - p_0^T||_1`,
/// via a least-absolute-deviations linear program. With
/// `constrain_probability` the minimizer is restricted to probability
/// vectors.
pub fn optimal_pi0(
    a: &DMatrix<f64>,
    p0: &DistVector,
    constrain_probability: bool,
) -> Result<(DVector<f64>, f64)> {
    if p0.values().len() != a.ncols() {
        return Err(Error::Dimension(
            "initial vector length does not match A".into(),
        ));
    }
    lp::solve_lad(a, p0.values(), constrain_probability)
}

/// Whether the reduced dynamics matrix qualifies as stochastic (discrete)
/// or as a generator (continuous), checked rather than assumed.
pub fn dynamics_is_stochastic(dynamics: &DMatrix<f64>, discrete: bool, tol: f64) -> bool {
    let m = dynamics.nrows();
    for i in 0..m {
        let mut sum = 0.0;
        for j in 0..m {
            let v = dynamics[(i, j)];
            if discrete {
                if v < -tol {
                    return false;
                }
            } else if i != j && v < -tol {
                return false;
            }
            sum += v;
        }
        let target = if discrete { 1.0 } else { 0.0 };
        if (sum - target).abs() > tol {
            return false;
        }
    }
    true
}

/// A reduced model: disaggregation matrix, reduced dynamics and reduced
/// initial vector.
#[derive(Debug, Clone)]
pub struct ReducedModel {
    pub disagg: Disaggregation,
    /// Pi (discrete) or Theta (continuous); not necessarily stochastic.
    pub dynamics: DMatrix<f64>,
    pub pi0: DVector<f64>,
    pub discrete: bool,
    /// Verified: Pi row-stochastic, resp. Theta a generator.
    pub stochastic_flag: bool,
}

impl ReducedModel {
    pub fn new(
        disagg: Disaggregation,
        dynamics: DMatrix<f64>,
        pi0: DVector<f64>,
        discrete: bool,
        tol: f64,
    ) -> Result<Self> {
        let m = disagg.m();
        if dynamics.nrows() != m || dynamics.ncols() != m || pi0.len() != m {
            return Err(Error::Dimension(
                "reduced model dimensions inconsistent".into(),
            ));
        }
        let stochastic_flag = dynamics_is_stochastic(&dynamics, discrete, tol);
        Ok(Self {
            disagg,
            dynamics,
            pi0,
            discrete,
            stochastic_flag,
        })
    }

    pub fn m(&self) -> usize {
        self.disagg.m()
    }

    pub fn n(&self) -> usize {
        self.disagg.n()
    }
}

/// `(pi_k, p~_k)`: reduced state after k steps and its disaggregation.
pub fn reduced_transient_discrete(model: &ReducedModel, k: usize) -> (DVector<f64>, DVector<f64>) {
    let mut pi = model.pi0.clone();
    for _ in 0..k {
        pi = model.dynamics.transpose() * pi;
    }
    let approx = model.disagg.a().transpose() * &pi;
    (pi, approx)
}

/// `(pi_t, p~_t)` with `e^{Theta t}` evaluated densely; valid for any
/// square Theta, generator or not.
pub fn reduced_transient_continuous(
    model: &ReducedModel,
    t: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if !t.is_finite() {
        return Err(Error::Precondition(format!("time must be finite, got {t}")));
    }
    let e = expm(&(&model.dynamics * t));
    let pi = e.transpose() * &model.pi0;
    let approx = model.disagg.a().transpose() * &pi;
    Ok((pi, approx))
}

/// Checks `p_0^T Lambda A = p_0^T` within `tol` and reports the residual.
pub fn compatibility_check(
    p0: &DistVector,
    disagg: &Disaggregation,
    tol: f64,
) -> Result<(bool, f64)> {
    let pi0 = aggregate_initial(p0, disagg)?;
    let back = disagg.a().transpose() * pi0;
    let residual = l1_norm(&(back - p0.values()));
    Ok((residual <= tol, residual))
}
