//! Markov chain representation, validation and exact solvers.
//!
//! The transient and stationary solvers here are the ground truth against
//! which every aggregation error in this library is measured.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::l1_norm;
use crate::sparse::SparseMatrix;

/// Default tolerance for stochasticity and generator checks. Inputs are
/// file-parsed decimals, so exact equality is never expected.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Row-stochastic transition matrix of a DTMC.
#[derive(Debug, Clone)]
pub struct TransitionMatrix {
    matrix: SparseMatrix,
}

impl TransitionMatrix {
    pub fn new(matrix: SparseMatrix, tol: f64) -> Result<Self> {
        let m = Self::new_unchecked(matrix)?;
        let report = validate(&MarkovChain::Dtmc(m.clone()), tol);
        if let Some(v) = report.violations.first() {
            return Err(Error::InvalidChain(v.to_string()));
        }
        Ok(m)
    }

    /// Wraps a square matrix without checking stochasticity.
    pub fn new_unchecked(matrix: SparseMatrix) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::Dimension(format!(
                "transition matrix must be square, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        Ok(Self { matrix })
    }

    pub fn from_rows(n: usize, data: &[f64]) -> Self {
        Self::new_unchecked(SparseMatrix::from_rows(n, n, data)).expect("square by construction")
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }
}

/// Generator matrix of a CTMC: nonnegative off-diagonal rates, zero row sums.
#[derive(Debug, Clone)]
pub struct GeneratorMatrix {
    matrix: SparseMatrix,
}

impl GeneratorMatrix {
    pub fn new(matrix: SparseMatrix, tol: f64) -> Result<Self> {
        let q = Self::new_unchecked(matrix)?;
        let report = validate(&MarkovChain::Ctmc(q.clone()), tol);
        if let Some(v) = report.violations.first() {
            return Err(Error::InvalidChain(v.to_string()));
        }
        Ok(q)
    }

    pub fn new_unchecked(matrix: SparseMatrix) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::Dimension(format!(
                "generator matrix must be square, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        Ok(Self { matrix })
    }

    pub fn from_rows(n: usize, data: &[f64]) -> Self {
        Self::new_unchecked(SparseMatrix::from_rows(n, n, data)).expect("square by construction")
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    /// `q = max_s |Q(s, s)|`, the maximal exit rate.
    pub fn max_exit_rate(&self) -> f64 {
        (0..self.n())
            .map(|s| self.matrix.get(s, s).abs())
            .fold(0.0, f64::max)
    }
}

/// A discrete- or continuous-time Markov chain on states `{1, .., n}`.
#[derive(Debug, Clone)]
pub enum MarkovChain {
    Dtmc(TransitionMatrix),
    Ctmc(GeneratorMatrix),
}

impl MarkovChain {
    pub fn n(&self) -> usize {
        match self {
            MarkovChain::Dtmc(p) => p.n(),
            MarkovChain::Ctmc(q) => q.n(),
        }
    }

    pub fn matrix(&self) -> &SparseMatrix {
        match self {
            MarkovChain::Dtmc(p) => p.matrix(),
            MarkovChain::Ctmc(q) => q.matrix(),
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, MarkovChain::Dtmc(_))
    }
}

/// Length-n vector tagged with whether it is a probability distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct DistVector {
    values: DVector<f64>,
    probability: bool,
}

impl DistVector {
    pub fn probability(values: DVector<f64>, tol: f64) -> Result<Self> {
        if let Some((i, &v)) = values.iter().enumerate().find(|(_, &v)| v < -tol) {
            return Err(Error::Precondition(format!(
                "probability vector has negative entry {v} at state {}",
                i + 1
            )));
        }
        let total = values.iter().sum::<f64>();
        if (total - 1.0).abs() > tol {
            return Err(Error::Precondition(format!(
                "probability vector sums to {total}, not 1"
            )));
        }
        Ok(Self {
            values,
            probability: true,
        })
    }

    pub fn signed(values: DVector<f64>) -> Self {
        Self {
            values,
            probability: false,
        }
    }

    /// Unit mass on state `s` (0-based).
    pub fn point_mass(n: usize, s: usize) -> Self {
        let mut values = DVector::zeros(n);
        values[s] = 1.0;
        Self {
            values,
            probability: true,
        }
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            values: DVector::from_element(n, 1.0 / n as f64),
            probability: true,
        }
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn is_probability(&self) -> bool {
        self.probability
    }
}

/// One violated invariant found by [`validate`].
#[derive(Debug, Clone)]
pub struct Violation {
    pub row: usize,
    pub col: Option<usize>,
    pub kind: ViolationKind,
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    NegativeEntry,
    NegativeOffDiagonal,
    RowSum,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.kind {
            ViolationKind::NegativeEntry => write!(
                f,
                "negative entry at ({}, {}), value {:.6e}",
                self.row + 1,
                self.col.unwrap_or(0) + 1,
                -self.residual
            ),
            ViolationKind::NegativeOffDiagonal => write!(
                f,
                "negative off-diagonal rate at ({}, {}), value {:.6e}",
                self.row + 1,
                self.col.unwrap_or(0) + 1,
                -self.residual
            ),
            ViolationKind::RowSum => {
                write!(f, "row {} sum off by {:.6e}", self.row + 1, self.residual)
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks the chain invariants and reports every violated one with its row
/// index and residual.
pub fn validate(chain: &MarkovChain, tol: f64) -> ValidationReport {
    let mut report = ValidationReport::default();
    match chain {
        MarkovChain::Dtmc(p) => {
            let m = p.matrix();
            for (r, c, v) in m.iter() {
                if v < -tol {
                    report.violations.push(Violation {
                        row: r,
                        col: Some(c),
                        kind: ViolationKind::NegativeEntry,
                        residual: -v,
                    });
                }
            }
            for r in 0..m.nrows() {
                let sum = m.row_sum(r);
                if (sum - 1.0).abs() > tol {
                    report.violations.push(Violation {
                        row: r,
                        col: None,
                        kind: ViolationKind::RowSum,
                        residual: (sum - 1.0).abs(),
                    });
                }
            }
        }
        MarkovChain::Ctmc(q) => {
            let m = q.matrix();
            for (r, c, v) in m.iter() {
                if r != c && v < -tol {
                    report.violations.push(Violation {
                        row: r,
                        col: Some(c),
                        kind: ViolationKind::NegativeOffDiagonal,
                        residual: -v,
                    });
                }
            }
            for r in 0..m.nrows() {
                let sum = m.row_sum(r);
                if sum.abs() > tol {
                    report.violations.push(Violation {
                        row: r,
                        col: None,
                        kind: ViolationKind::RowSum,
                        residual: sum.abs(),
                    });
                }
            }
        }
    }
    report
}

/// `<|v|, |M| 1_n> = sum_i |v(i)| sum_j |M(i, j)|`, the tighter of the two
/// norm-product bounds.
pub fn weighted_abs_inner(v: &DVector<f64>, m: &DMatrix<f64>) -> Result<f64> {
    if v.len() != m.nrows() {
        return Err(Error::Dimension(format!(
            "vector length {} does not match matrix rows {}",
            v.len(),
            m.nrows()
        )));
    }
    Ok((0..m.nrows())
        .map(|i| v[i].abs() * (0..m.ncols()).map(|j| m[(i, j)].abs()).sum::<f64>())
        .sum())
}

/// Exact transient distribution `p_k^T = p_0^T P^k` by k sparse
/// vector-matrix products.
pub fn dtmc_transient(p: &TransitionMatrix, p0: &DistVector, k: usize) -> DistVector {
    let mut x = p0.values().clone();
    for _ in 0..k {
        x = p.matrix().vec_mat(&x);
    }
    DistVector {
        values: x,
        probability: p0.is_probability(),
    }
}

/// Embeds a CTMC into a DTMC via `P = I + Q / rate`. The rate defaults to
/// the maximal exit rate and must not fall below it.
pub fn uniformise(q: &GeneratorMatrix, rate: Option<f64>) -> Result<(TransitionMatrix, f64)> {
    let max_rate = q.max_exit_rate();
    let rate = match rate {
        Some(r) => {
            if r < max_rate * (1.0 - 1e-12) {
                return Err(Error::Precondition(format!(
                    "uniformisation rate {r} below maximal exit rate {max_rate}"
                )));
            }
            r
        }
        None => max_rate,
    };
    let n = q.n();
    if rate == 0.0 {
        // Zero generator: the embedded chain never moves.
        return Ok((
            TransitionMatrix::new_unchecked(SparseMatrix::identity(n))?,
            0.0,
        ));
    }
    let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(q.matrix().nnz() + n);
    for (r, c, v) in q.matrix().iter() {
        triplets.push((r, c, v / rate));
    }
    for i in 0..n {
        triplets.push((i, i, 1.0));
    }
    let p = SparseMatrix::from_triplets(n, n, triplets)?;
    Ok((TransitionMatrix::new_unchecked(p)?, rate))
}

/// Result of [`ctmc_transient`]: the Poisson-weighted sum is reported
/// without renormalization together with the truncated tail mass, so bound
/// arithmetic downstream stays conservative.
#[derive(Debug, Clone)]
pub struct CtmcTransient {
    pub values: DVector<f64>,
    /// Poisson mass outside the truncation window, at most the requested eps.
    pub truncated_mass: f64,
    pub rate: f64,
}

/// Transient distribution `p_t^T = p_0^T e^{Qt}` via uniformisation with
/// Poisson truncation. The total truncated probability mass is at most
/// `eps`, split evenly between the two tails.
pub fn ctmc_transient(
    q: &GeneratorMatrix,
    p0: &DistVector,
    t: f64,
    eps: f64,
) -> Result<CtmcTransient> {
    if !t.is_finite() || t < 0.0 {
        return Err(Error::Precondition(format!(
            "time must be finite and nonnegative, got {t}"
        )));
    }
    if eps <= 0.0 {
        return Err(Error::Precondition(
            "truncation eps must be positive".into(),
        ));
    }
    let (p, rate) = uniformise(q, None)?;
    let lambda = rate * t;
    if lambda == 0.0 {
        return Ok(CtmcTransient {
            values: p0.values().clone(),
            truncated_mass: 0.0,
            rate,
        });
    }
    let (left, right, weights) = poisson_window(lambda, eps)?;
    let mut x = p0.values().clone();
    let mut acc = DVector::zeros(q.n());
    let mut used_mass = 0.0;
    for k in 0..=right {
        if k >= left {
            let w = weights[k - left];
            acc.axpy(w, &x, 1.0);
            used_mass += w;
        }
        if k < right {
            x = p.matrix().vec_mat(&x);
        }
    }
    Ok(CtmcTransient {
        values: acc,
        truncated_mass: (1.0 - used_mass).max(0.0),
        rate,
    })
}

/// Poisson truncation window: accumulates terms until each tail holds at
/// most `eps / 2`. Returns (left, right, weights for left..=right).
fn poisson_window(lambda: f64, eps: f64) -> Result<(usize, usize, Vec<f64>)> {
    let cap = (lambda + 40.0 * lambda.sqrt() + 200.0) as usize;
    // Log-space weights stay finite for any rate.
    let mut ln_w = -lambda; // ln of e^{-lambda} lambda^0 / 0!
    let mut cumulative = 0.0;
    let half = eps / 2.0;
    let mut left = 0usize;
    let mut weights: Vec<f64> = Vec::new();
    let mut right = None;
    for k in 0..=cap {
        let w = ln_w.exp();
        if right.is_none() {
            // Left truncation: drop leading terms while their total stays
            // within half of the budget.
            if weights.is_empty() && cumulative + w <= half {
                cumulative += w;
                left = k + 1;
            } else {
                cumulative += w;
                weights.push(w);
                if cumulative >= 1.0 - half {
                    right = Some(k);
                    break;
                }
            }
        }
        ln_w += lambda.ln() - ((k + 1) as f64).ln();
    }
    match right {
        Some(r) => Ok((left, r, weights)),
        None => Err(Error::NonConvergence(format!(
            "Poisson window for rate {lambda} not closed within {cap} terms"
        ))),
    }
}

/// True iff the transition graph is strongly connected.
pub fn is_irreducible(chain: &MarkovChain) -> bool {
    let m = chain.matrix();
    let n = m.nrows();
    if n <= 1 {
        return true;
    }
    let edge = |v: f64| v > 0.0;
    let mut forward = vec![Vec::new(); n];
    let mut backward = vec![Vec::new(); n];
    for (r, c, v) in m.iter() {
        if r != c && edge(v) {
            forward[r].push(c);
            backward[c].push(r);
        }
    }
    reaches_all(&forward, n) && reaches_all(&backward, n)
}

fn reaches_all(adj: &[Vec<usize>], n: usize) -> bool {
    let mut seen = vec![false; n];
    let mut stack = vec![0usize];
    seen[0] = true;
    let mut count = 1;
    while let Some(v) = stack.pop() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                count += 1;
                stack.push(w);
            }
        }
    }
    count == n
}

/// Unique stationary distribution of an irreducible chain.
///
/// Uses a direct dense solve for up to 200 states and power iteration on
/// the (uniformised) transition matrix beyond that.
pub fn stationary(chain: &MarkovChain, tol: f64) -> Result<DistVector> {
    if !is_irreducible(chain) {
        return Err(Error::Reducible(
            "stationary distribution is not unique".into(),
        ));
    }
    let n = chain.n();
    let p = match chain {
        MarkovChain::Dtmc(p) => p.clone(),
        MarkovChain::Ctmc(q) => uniformise(q, None)?.0,
    };
    let pi = if n <= 200 {
        stationary_direct(&p)?
    } else {
        stationary_power(&p, tol)?
    };

    let residual = l1_norm(&(p.matrix().vec_mat(&pi) - &pi));
    if residual > tol {
        return Err(Error::NonConvergence(format!(
            "stationary fixed-point residual {residual:.3e} above tolerance {tol:.3e}"
        )));
    }
    let clamped = pi.map(|x| x.max(0.0));
    let total = clamped.sum();
    DistVector::probability(clamped / total, tol.max(1e-12))
}

fn stationary_direct(p: &TransitionMatrix) -> Result<DVector<f64>> {
    let n = p.n();
    // (P^T - I) pi = 0 with the last equation replaced by sum(pi) = 1.
    let mut b = p.matrix().transpose().to_dense();
    for i in 0..n {
        b[(i, i)] -= 1.0;
    }
    for j in 0..n {
        b[(n - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    b.lu()
        .solve(&rhs)
        .ok_or_else(|| Error::NonConvergence("singular stationary system".into()))
}

fn stationary_power(p: &TransitionMatrix, tol: f64) -> Result<DVector<f64>> {
    let n = p.n();
    let mut x = DVector::from_element(n, 1.0 / n as f64);
    let cap = 200_000;
    for _ in 0..cap {
        let mut next = p.matrix().vec_mat(&x);
        let total: f64 = next.sum();
        next /= total;
        let diff = l1_norm(&(&next - &x));
        x = next;
        if diff <= tol {
            return Ok(x);
        }
    }
    Err(Error::NonConvergence(format!(
        "power iteration did not converge in {cap} iterations"
    )))
}
