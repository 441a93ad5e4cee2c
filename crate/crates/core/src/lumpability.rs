//! Lumpability checkers and the unique coarsest exactly lumpable partition.
//!
//! All checkers take a tolerance because file-parsed inputs are inexact;
//! the underlying definitions are exact equalities. Pairwise conditions are
//! evaluated against the smallest state of each aggregate, which is
//! equivalent to full pairwise equality.

use std::collections::HashMap;

use nalgebra::DMatrix;

use crate::aggregation::{AlphaWeights, Partition, ReducedModel};
use crate::bounds::error_matrix;
use crate::chain::{is_irreducible, MarkovChain};
use crate::error::{Error, Result};

/// Worst witness of a violated lumpability condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Witness {
    /// Reference state of the aggregate (smallest index), 0-based.
    pub state_a: usize,
    /// State compared against the reference, 0-based.
    pub state_b: usize,
    /// Aggregate over which the sums disagree, 0-based.
    pub aggregate: usize,
}

/// Verdict of one lumpability check.
#[derive(Debug, Clone)]
pub struct LumpReport {
    pub property: &'static str,
    pub holds: bool,
    pub max_violation: f64,
    pub witness: Option<Witness>,
    pub tol: f64,
}

impl LumpReport {
    fn new(property: &'static str, max_violation: f64, witness: Option<Witness>, tol: f64) -> Self {
        Self {
            property,
            holds: max_violation <= tol,
            max_violation,
            witness,
            tol,
        }
    }

    fn conjunction(property: &'static str, a: &LumpReport, b: &LumpReport) -> Self {
        let (max_violation, witness) = if a.max_violation >= b.max_violation {
            (a.max_violation, a.witness)
        } else {
            (b.max_violation, b.witness)
        };
        Self {
            property,
            holds: a.holds && b.holds,
            max_violation,
            witness,
            tol: a.tol,
        }
    }
}

impl std::fmt::Display for LumpReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: {} (max violation {:.6e}",
            self.property,
            if self.holds { "holds" } else { "fails" },
            self.max_violation
        )?;
        if let Some(w) = &self.witness {
            write!(
                f,
                ", witness states {}/{} aggregate {}",
                w.state_a + 1,
                w.state_b + 1,
                w.aggregate + 1
            )?;
        }
        write!(f, ")")
    }
}

/// Per-state sums of outgoing entries into each aggregate: `out[s][sigma]`.
fn outgoing_sums(chain: &MarkovChain, partition: &Partition) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; partition.m()]; partition.n()];
    for (r, s, v) in chain.matrix().iter() {
        out[r][partition.aggregate_of(s)] += v;
    }
    out
}

/// Per-state sums of incoming entries from each aggregate: `inc[s][rho]`.
fn incoming_sums(chain: &MarkovChain, partition: &Partition) -> Vec<Vec<f64>> {
    let mut inc = vec![vec![0.0; partition.m()]; partition.n()];
    for (r, s, v) in chain.matrix().iter() {
        inc[s][partition.aggregate_of(r)] += v;
    }
    inc
}

fn reference_comparison(partition: &Partition, per_state: &[Vec<f64>]) -> (f64, Option<Witness>) {
    let mut max_violation = 0.0;
    let mut witness = None;
    for block in partition.blocks() {
        let reference = block[0];
        for &s in &block[1..] {
            for sigma in 0..partition.m() {
                let diff = (per_state[s][sigma] - per_state[reference][sigma]).abs();
                if diff > max_violation {
                    max_violation = diff;
                    witness = Some(Witness {
                        state_a: reference,
                        state_b: s,
                        aggregate: sigma,
                    });
                }
            }
        }
    }
    (max_violation, witness)
}

/// Equal summed outgoing probabilities to every aggregate within each block.
pub fn is_ordinarily_lumpable(chain: &MarkovChain, partition: &Partition, tol: f64) -> LumpReport {
    let out = outgoing_sums(chain, partition);
    let (max_violation, witness) = reference_comparison(partition, &out);
    LumpReport::new("ordinarily lumpable", max_violation, witness, tol)
}

/// Equal summed incoming probabilities from every aggregate within each block.
pub fn is_exactly_lumpable(chain: &MarkovChain, partition: &Partition, tol: f64) -> LumpReport {
    let inc = incoming_sums(chain, partition);
    let (max_violation, witness) = reference_comparison(partition, &inc);
    LumpReport::new("exactly lumpable", max_violation, witness, tol)
}

/// Both ordinarily and exactly lumpable.
pub fn is_strictly_lumpable(chain: &MarkovChain, partition: &Partition, tol: f64) -> LumpReport {
    let ordinary = is_ordinarily_lumpable(chain, partition, tol);
    let exact = is_exactly_lumpable(chain, partition, tol);
    LumpReport::conjunction("strictly lumpable", &ordinary, &exact)
}

/// Jump targets within an aggregate are chosen by `alpha` independently of
/// the origin: `P(r, s) = alpha(s) sum_{s' in omega(s)} P(r, s')`. DTMC only.
pub fn is_deflatable(
    chain: &MarkovChain,
    partition: &Partition,
    alpha: &AlphaWeights,
    tol: f64,
) -> Result<LumpReport> {
    let p = match chain {
        MarkovChain::Dtmc(p) => p,
        MarkovChain::Ctmc(_) => {
            return Err(Error::UnsupportedKind("DTMCs (deflatability)".into()));
        }
    };
    let n = partition.n();
    let out = outgoing_sums(chain, partition);
    let mut max_violation = 0.0;
    let mut witness = None;
    let mut row = vec![0.0; n];
    for r in 0..n {
        row.iter_mut().for_each(|v| *v = 0.0);
        for (s, v) in p.matrix().row(r) {
            row[s] = v;
        }
        for s in 0..n {
            let sigma = partition.aggregate_of(s);
            let diff = (row[s] - alpha.get(s) * out[r][sigma]).abs();
            if diff > max_violation {
                max_violation = diff;
                witness = Some(Witness {
                    state_a: r,
                    state_b: s,
                    aggregate: sigma,
                });
            }
        }
    }
    Ok(LumpReport::new("deflatable", max_violation, witness, tol))
}

/// Deflatable and ordinarily lumpable.
pub fn is_aggregatable(
    chain: &MarkovChain,
    partition: &Partition,
    alpha: &AlphaWeights,
    tol: f64,
) -> Result<LumpReport> {
    let deflatable = is_deflatable(chain, partition, alpha, tol)?;
    let ordinary = is_ordinarily_lumpable(chain, partition, tol);
    Ok(LumpReport::conjunction(
        "aggregatable",
        &deflatable,
        &ordinary,
    ))
}

/// `||Pi A - A P||_inf <= tol` (resp. Theta/Q) for a concrete reduced model.
pub fn is_dynamic_exact(model: &ReducedModel, chain: &MarkovChain, tol: f64) -> Result<LumpReport> {
    let err = error_matrix(model, chain)?;
    let witness = if err.inf_norm > 0.0 {
        let chi = err.tau.imax();
        let mut worst = 0usize;
        let mut best = -1.0;
        for j in 0..err.e.ncols() {
            if err.e[(chi, j)].abs() > best {
                best = err.e[(chi, j)].abs();
                worst = j;
            }
        }
        Some(Witness {
            state_a: worst,
            state_b: worst,
            aggregate: chi,
        })
    } else {
        None
    };
    Ok(LumpReport::new("dynamic-exact", err.inf_norm, witness, tol))
}

/// Dynamic-exactness decided from the partition and weights alone: all
/// weights positive and, per source aggregate, the weighted incoming ratio
/// `(1/alpha(s)) sum_{r in rho} alpha(r) entry(r, s)` constant across each
/// aggregate. Equivalent to `is_dynamic_exact` with the induced dynamics.
pub fn check_partition_dynamic_exact(
    chain: &MarkovChain,
    partition: &Partition,
    alpha: &AlphaWeights,
    tol: f64,
) -> Result<LumpReport> {
    if !is_irreducible(chain) {
        return Err(Error::Reducible(
            "the ratio characterization needs irreducibility".into(),
        ));
    }
    for s in 0..partition.n() {
        if alpha.get(s) <= 0.0 {
            return Ok(LumpReport {
                property: "dynamic-exact (partition)",
                holds: false,
                max_violation: f64::INFINITY,
                witness: Some(Witness {
                    state_a: s,
                    state_b: s,
                    aggregate: partition.aggregate_of(s),
                }),
                tol,
            });
        }
    }
    // Weighted incoming sums per source aggregate.
    let m = partition.m();
    let n = partition.n();
    let mut weighted_inc = vec![vec![0.0; m]; n];
    for (r, s, v) in chain.matrix().iter() {
        weighted_inc[s][partition.aggregate_of(r)] += alpha.get(r) * v;
    }
    let mut max_violation = 0.0;
    let mut witness = None;
    for block in partition.blocks() {
        let reference = block[0];
        for &s in &block[1..] {
            for rho in 0..m {
                let a_ref = weighted_inc[reference][rho] / alpha.get(reference);
                let a_s = weighted_inc[s][rho] / alpha.get(s);
                let diff = (a_s - a_ref).abs();
                if diff > max_violation {
                    max_violation = diff;
                    witness = Some(Witness {
                        state_a: reference,
                        state_b: s,
                        aggregate: rho,
                    });
                }
            }
        }
    }
    Ok(LumpReport::new(
        "dynamic-exact (partition)",
        max_violation,
        witness,
        tol,
    ))
}

/// Smallest eps such that the partition is eps-almost exactly lumpable:
/// the maximal pairwise L1 distance of the incoming-sum vectors within an
/// aggregate (the diameter, not the radius).
pub fn almost_exact_eps(chain: &MarkovChain, partition: &Partition) -> f64 {
    let inc = incoming_sums(chain, partition);
    let mut eps = 0.0f64;
    for block in partition.blocks() {
        for (i, &s) in block.iter().enumerate() {
            for &s2 in &block[i + 1..] {
                let dist: f64 = (0..partition.m())
                    .map(|rho| (inc[s][rho] - inc[s2][rho]).abs())
                    .sum();
                eps = eps.max(dist);
            }
        }
    }
    eps
}

/// The unique coarsest exactly lumpable partition, found by successive
/// refinement from the trivial partition. State keys are quantized at
/// 1e-12 so arithmetically equal sums compare equal.
pub fn coarsest_exactly_lumpable(chain: &MarkovChain) -> Partition {
    let n = chain.n();
    let mut partition = Partition::single(n);
    loop {
        let inc = incoming_sums(chain, &partition);
        let mut next_omega = vec![0usize; n];
        let mut next_m = 0usize;
        for block in partition.blocks() {
            let mut groups: HashMap<Vec<i128>, usize> = HashMap::new();
            for &s in &block {
                let key: Vec<i128> = inc[s].iter().map(|&x| (x * 1e12).round() as i128).collect();
                let id = *groups.entry(key).or_insert_with(|| {
                    let id = next_m;
                    next_m += 1;
                    id
                });
                next_omega[s] = id;
            }
        }
        if next_m == partition.m() {
            return partition;
        }
        partition = Partition::from_omega(next_omega).expect("refinement keeps surjectivity");
    }
}

/// The reduced matrix certifying ordinary lumpability, `P Lambda = Lambda Pi`,
/// built from the per-aggregate outgoing sums of each block's reference state.
pub fn ordinary_lumped_dynamics(chain: &MarkovChain, partition: &Partition) -> DMatrix<f64> {
    let out = outgoing_sums(chain, partition);
    let m = partition.m();
    let mut pi = DMatrix::zeros(m, m);
    for (rho, block) in partition.blocks().iter().enumerate() {
        for sigma in 0..m {
            pi[(rho, sigma)] = out[block[0]][sigma];
        }
    }
    pi
}
