//! Heuristic search for low-error partitions: direction-based and
//! sign-based SVD clustering of states, and refinement towards almost
//! exactly lumpable partitions.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::aggregation::Partition;
use crate::chain::{MarkovChain, TransitionMatrix};
use crate::error::{Error, Result};
use crate::linalg::truncated_svd;

/// Configuration of the SVD-based searches.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SvdConfig {
    /// Singular-value cutoff fraction in [0, 1]: the retained values must
    /// sum to at least (1 - eps) of the total.
    pub eps: f64,
    /// Direction threshold for merging states.
    pub delta: f64,
    /// Overrides the cutoff rule with a fixed embedding dimension; enables
    /// a partial decomposition on large chains.
    pub fixed_l: Option<usize>,
}

impl Default for SvdConfig {
    fn default() -> Self {
        Self {
            eps: 0.0,
            delta: 0.05,
            fixed_l: None,
        }
    }
}

impl SvdConfig {
    fn check(&self, n: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eps) {
            return Err(Error::Precondition(format!(
                "eps must lie in [0, 1], got {}",
                self.eps
            )));
        }
        if self.delta <= 0.0 {
            return Err(Error::Precondition(format!(
                "delta must be positive, got {}",
                self.delta
            )));
        }
        if let Some(l) = self.fixed_l {
            if l == 0 || l > n {
                return Err(Error::Precondition(format!(
                    "fixed_l {l} out of range for n={n}"
                )));
            }
        }
        Ok(())
    }
}

/// Result of an SVD search: the embedding actually used and the partition.
#[derive(Debug, Clone)]
pub struct SvdReport {
    pub l: usize,
    /// The `l` retained singular values, descending.
    pub singular_values: Vec<f64>,
    /// Cropped, sign-canonicalized state vectors as columns (l x n).
    pub vectors: DMatrix<f64>,
    pub partition: Partition,
}

/// Singular values and right-singular vectors of a transition matrix,
/// computed once and shared across cutoff parameters.
#[derive(Debug, Clone)]
pub struct SvdBasis {
    /// All singular values, descending.
    pub gamma: Vec<f64>,
    /// Right-singular vectors as rows (the decomposition convention is
    /// P = U Sigma V with V itself orthogonal, so row i of V pairs with
    /// gamma_i). May hold fewer than n rows for a partial decomposition.
    pub vt: DMatrix<f64>,
}

impl SvdBasis {
    /// Full decomposition.
    pub fn compute(p: &TransitionMatrix) -> Result<Self> {
        let dense = p.matrix().to_dense();
        let svd = dense.svd(false, true);
        let vt = svd
            .v_t
            .ok_or_else(|| Error::NonConvergence("SVD did not produce V".into()))?;
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| {
            svd.singular_values[b]
                .partial_cmp(&svd.singular_values[a])
                .unwrap()
        });
        let gamma: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
        let mut sorted_vt = DMatrix::zeros(vt.nrows(), vt.ncols());
        for (new, &old) in order.iter().enumerate() {
            sorted_vt.set_row(new, &vt.row(old));
        }
        Ok(Self {
            gamma,
            vt: sorted_vt,
        })
    }

    /// Top-l partial decomposition for large chains.
    pub fn compute_partial(p: &TransitionMatrix, l: usize) -> Result<Self> {
        let sparse = p.matrix().clone();
        let sparse_t = sparse.transpose();
        let n = p.n();
        let (gamma, vt) = truncated_svd(
            n,
            n,
            |b| {
                let mut out = DMatrix::zeros(n, b.ncols());
                for j in 0..b.ncols() {
                    let col = DVector::from_column_slice(b.column(j).as_slice());
                    out.set_column(j, &sparse_t.vec_mat(&col));
                }
                out
            },
            |b| {
                let mut out = DMatrix::zeros(n, b.ncols());
                for j in 0..b.ncols() {
                    let col = DVector::from_column_slice(b.column(j).as_slice());
                    out.set_column(j, &sparse.vec_mat(&col));
                }
                out
            },
            l,
            1e-10,
            10_000,
        )?;
        Ok(Self { gamma, vt })
    }

    /// Smallest l whose leading singular values sum to at least (1 - eps)
    /// of the total; at least 1, since a zero-dimensional embedding is
    /// meaningless. Values below 1e-12 of the largest count as zero, so a
    /// rank-deficient matrix behaves as in exact arithmetic.
    pub fn cutoff(&self, eps: f64) -> usize {
        let floor = self.gamma.first().copied().unwrap_or(0.0) * 1e-12;
        let effective = |g: f64| if g > floor { g } else { 0.0 };
        let total: f64 = self.gamma.iter().map(|&g| effective(g)).sum();
        let target = (1.0 - eps) * total;
        let mut sum = 0.0;
        for (i, &g) in self.gamma.iter().enumerate() {
            if sum >= target {
                return i.max(1);
            }
            sum += effective(g);
        }
        // The full effective sum is reached at the numerical rank.
        let rank = self.gamma.iter().filter(|&&g| g > floor).count();
        rank.max(1)
    }

    /// Crops to the first `l` rows and flips each row's sign so its
    /// largest-magnitude entry is positive; the decomposition's per-row
    /// sign freedom would otherwise leak into the sign patterns.
    fn cropped_canonical(&self, l: usize) -> DMatrix<f64> {
        let mut cropped = self.vt.rows(0, l).into_owned();
        for i in 0..l {
            let mut best = 0usize;
            let mut best_abs = -1.0;
            for j in 0..cropped.ncols() {
                if cropped[(i, j)].abs() > best_abs {
                    best_abs = cropped[(i, j)].abs();
                    best = j;
                }
            }
            if cropped[(i, best)] < 0.0 {
                for j in 0..cropped.ncols() {
                    cropped[(i, j)] = -cropped[(i, j)];
                }
            }
        }
        cropped
    }
}

/// Distance between the directions of two vectors: the shorter one is
/// projected onto the longer one and the euclidean distance between the
/// original and the projection is returned. Requires `||v1|| >= ||v2||`;
/// the projection onto a zero vector is defined as zero.
pub fn vdist(v1: &DVector<f64>, v2: &DVector<f64>) -> Result<f64> {
    if v1.len() != v2.len() {
        return Err(Error::Dimension("vdist arguments differ in length".into()));
    }
    let n1 = v1.norm();
    let n2 = v2.norm();
    if n1 < n2 * (1.0 - 1e-12) {
        return Err(Error::Precondition(format!(
            "vdist expects the first vector to be at least as long ({n1} < {n2})"
        )));
    }
    if n1 == 0.0 {
        return Ok(n2);
    }
    let scale = v1.dot(v2) / (n1 * n1);
    Ok((v1 * scale - v2).norm())
}

fn resolve_basis(p: &TransitionMatrix, cfg: &SvdConfig) -> Result<SvdBasis> {
    cfg.check(p.n())?;
    match cfg.fixed_l {
        // Partial triplets suffice when the cutoff rule is bypassed and the
        // chain is too large for a dense decomposition.
        Some(l) if p.n() > 2000 => SvdBasis::compute_partial(p, l),
        _ => SvdBasis::compute(p),
    }
}

/// Direction-based SVD partition search.
pub fn svd_dir(p: &TransitionMatrix, cfg: &SvdConfig) -> Result<SvdReport> {
    let basis = resolve_basis(p, cfg)?;
    svd_dir_with_basis(&basis, cfg)
}

/// Direction-based search on a precomputed decomposition.
pub fn svd_dir_with_basis(basis: &SvdBasis, cfg: &SvdConfig) -> Result<SvdReport> {
    let n = basis.vt.ncols();
    cfg.check(n)?;
    let l = cfg
        .fixed_l
        .unwrap_or_else(|| basis.cutoff(cfg.eps))
        .min(basis.vt.nrows());
    let vectors = basis.cropped_canonical(l);

    let lengths: Vec<f64> = (0..n).map(|s| vectors.column(s).norm()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    // Descending length; equal lengths stay in state order.
    order.sort_by(|&a, &b| lengths[b].partial_cmp(&lengths[a]).unwrap().then(a.cmp(&b)));

    let mut omega = vec![usize::MAX; n];
    let mut m = 0usize;
    let mut processed: Vec<usize> = Vec::with_capacity(n);
    for &s in &order {
        let v_s = vectors.column(s).into_owned();
        // Closest among the already-processed states whose vectors are long
        // enough to have a reliable direction, then among the rest.
        let mut assigned = false;
        for reliable in [true, false] {
            let mut best: Option<(f64, usize)> = None;
            for &t in &processed {
                if (lengths[t] > 2.0 * cfg.delta) != reliable {
                    continue;
                }
                let d = vdist(&vectors.column(t).into_owned(), &v_s)?;
                let better = match best {
                    None => true,
                    Some((bd, bt)) => d < bd || (d == bd && t < bt),
                };
                if better {
                    best = Some((d, t));
                }
            }
            if let Some((d, t)) = best {
                if d < cfg.delta {
                    omega[s] = omega[t];
                    assigned = true;
                    break;
                }
            }
        }
        if !assigned {
            omega[s] = m;
            m += 1;
        }
        processed.push(s);
    }

    Ok(SvdReport {
        l,
        singular_values: basis.gamma[..l.min(basis.gamma.len())].to_vec(),
        vectors,
        partition: Partition::from_omega(omega)?,
    })
}

/// Sign-pattern SVD partition search.
pub fn svd_sgn(p: &TransitionMatrix, cfg: &SvdConfig) -> Result<SvdReport> {
    let basis = resolve_basis(p, cfg)?;
    svd_sgn_with_basis(&basis, cfg)
}

/// Sign-pattern search on a precomputed decomposition: states are grouped
/// by the +/-/0 pattern of their cropped vectors, entries below 1e-12 in
/// magnitude counting as zero.
pub fn svd_sgn_with_basis(basis: &SvdBasis, cfg: &SvdConfig) -> Result<SvdReport> {
    let n = basis.vt.ncols();
    cfg.check(n)?;
    let l = cfg
        .fixed_l
        .unwrap_or_else(|| basis.cutoff(cfg.eps))
        .min(basis.vt.nrows());
    let vectors = basis.cropped_canonical(l);

    let mut groups: HashMap<Vec<i8>, usize> = HashMap::new();
    let mut omega = vec![0usize; n];
    let mut m = 0usize;
    for s in 0..n {
        let pattern: Vec<i8> = (0..l)
            .map(|i| {
                let x = vectors[(i, s)];
                if x.abs() < 1e-12 {
                    0
                } else if x > 0.0 {
                    1
                } else {
                    -1
                }
            })
            .collect();
        let id = *groups.entry(pattern).or_insert_with(|| {
            let id = m;
            m += 1;
            id
        });
        omega[s] = id;
    }

    Ok(SvdReport {
        l,
        singular_values: basis.gamma[..l.min(basis.gamma.len())].to_vec(),
        vectors,
        partition: Partition::from_omega(omega)?,
    })
}

/// Clustering strategy for the refinement loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClusterStrategy {
    Hierarchical,
    Greedy,
    Auto,
}

/// Configuration of the almost-exact-lumpability refinement.
#[derive(Debug, Clone, Copy)]
pub struct RefineConfig {
    pub eps: f64,
    pub strategy: ClusterStrategy,
    /// Auto strategy switches to greedy clustering when `d^2 m` exceeds
    /// this, `d` being the number of vectors to cluster.
    pub auto_switch_threshold: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            eps: 0.0,
            strategy: ClusterStrategy::Auto,
            auto_switch_threshold: 4e6,
        }
    }
}

/// Partitions points so that the maximal intra-cluster pairwise L1 distance
/// is at most `eps`. Hierarchical complete linkage merges as long as the
/// closest pair of clusters is within `eps`; greedy assigns each point to
/// the first cluster whose anchor is within `eps / 2`.
pub fn cluster(points: &[DVector<f64>], eps: f64, strategy: ClusterStrategy) -> Vec<Vec<usize>> {
    match strategy {
        ClusterStrategy::Hierarchical => cluster_hierarchical(points, eps),
        ClusterStrategy::Greedy => cluster_greedy(points, eps),
        ClusterStrategy::Auto => cluster_hierarchical(points, eps),
    }
}

fn l1_dist(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum()
}

fn cluster_hierarchical(points: &[DVector<f64>], eps: f64) -> Vec<Vec<usize>> {
    let k = points.len();
    let mut clusters: Vec<Vec<usize>> = (0..k).map(|i| vec![i]).collect();
    // Complete-linkage distances, updated by the Lance-Williams max rule.
    let mut dist: Vec<Vec<f64>> = (0..k)
        .map(|i| (0..k).map(|j| l1_dist(&points[i], &points[j])).collect())
        .collect();
    let mut alive: Vec<bool> = vec![true; k];
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..k {
            if !alive[i] {
                continue;
            }
            for j in (i + 1)..k {
                if !alive[j] {
                    continue;
                }
                if best.map_or(true, |(bd, _, _)| dist[i][j] < bd) {
                    best = Some((dist[i][j], i, j));
                }
            }
        }
        match best {
            Some((d, i, j)) if d <= eps => {
                let merged = clusters[j].drain(..).collect::<Vec<_>>();
                clusters[i].extend(merged);
                alive[j] = false;
                for t in 0..k {
                    if alive[t] && t != i {
                        let m = dist[i][t].max(dist[j][t]);
                        dist[i][t] = m;
                        dist[t][i] = m;
                    }
                }
            }
            _ => break,
        }
    }
    (0..k)
        .filter(|&i| alive[i])
        .map(|i| std::mem::take(&mut clusters[i]))
        .collect()
}

fn cluster_greedy(points: &[DVector<f64>], eps: f64) -> Vec<Vec<usize>> {
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut anchors: Vec<usize> = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let found = anchors
            .iter()
            .position(|&a| l1_dist(&points[a], p) <= eps / 2.0);
        match found {
            Some(c) => clusters[c].push(i),
            None => {
                anchors.push(i);
                clusters.push(vec![i]);
            }
        }
    }
    clusters
}

/// Successive refinement towards an eps-almost exactly lumpable partition:
/// starting from the trivial partition, each aggregate is re-clustered by
/// the vectors of aggregate-summed incoming entries until nothing splits.
/// Works on the transition matrix of a DTMC or directly on the generator
/// entries of a CTMC.
pub fn refine_almost_exact(chain: &MarkovChain, cfg: &RefineConfig) -> Partition {
    let n = chain.n();
    let mut partition = Partition::single(n);
    loop {
        let m_old = partition.m();
        // inc(s): incoming entry sums from each current aggregate.
        let mut inc: Vec<DVector<f64>> = vec![DVector::zeros(m_old); n];
        for (r, s, v) in chain.matrix().iter() {
            inc[s][partition.aggregate_of(r)] += v;
        }
        let mut next_omega = vec![0usize; n];
        let mut next_m = 0usize;
        for block in partition.blocks() {
            let points: Vec<DVector<f64>> = block.iter().map(|&s| inc[s].clone()).collect();
            let strategy = match cfg.strategy {
                ClusterStrategy::Auto => {
                    let d = points.len() as f64;
                    if d * d * m_old as f64 > cfg.auto_switch_threshold {
                        ClusterStrategy::Greedy
                    } else {
                        ClusterStrategy::Hierarchical
                    }
                }
                other => other,
            };
            for members in cluster(&points, cfg.eps, strategy) {
                for idx in members {
                    next_omega[block[idx]] = next_m;
                }
                next_m += 1;
            }
        }
        if next_m == m_old {
            return partition;
        }
        partition = Partition::from_omega(next_omega).expect("clusters are nonempty");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::{
        build_partitioned, induced_dynamics, proportional_alpha, uniform_alpha,
    };
    use crate::benchlab::{builtin_fixture, gen_aggregatable, gen_exactly_lumpable, GenSpec};
    use crate::bounds::error_matrix_parts;
    use crate::lumpability::{almost_exact_eps, coarsest_exactly_lumpable};
    use approx::assert_relative_eq;

    #[test]
    fn vdist_examples() {
        let v1 = DVector::from_vec(vec![2.0, 0.0]);
        let v2 = DVector::from_vec(vec![1.0, 0.0]);
        assert_relative_eq!(vdist(&v1, &v2).unwrap(), 0.0, epsilon = 1e-15);

        let e1 = DVector::from_vec(vec![1.0, 0.0]);
        let half_e2 = DVector::from_vec(vec![0.0, 0.5]);
        assert_relative_eq!(vdist(&e1, &half_e2).unwrap(), 0.5, epsilon = 1e-15);

        let diag = DVector::from_vec(vec![1.0, 1.0]);
        assert_relative_eq!(
            vdist(&diag, &e1).unwrap(),
            std::f64::consts::FRAC_1_SQRT_2,
            epsilon = 1e-15
        );

        // Precondition: first argument at least as long.
        assert!(vdist(&v2, &v1).is_err());

        // Zero first vector degenerates to the plain length.
        let zero = DVector::from_vec(vec![0.0, 0.0]);
        assert_relative_eq!(vdist(&zero, &zero).unwrap(), 0.0);
    }

    #[test]
    fn svd_dir_recovers_planted_partition() {
        let spec = GenSpec {
            n: 60,
            m: 6,
            block_zero_prob: 0.4,
            perturb_magnitude: 0.0,
            seed: 42,
        };
        let (p, planted, _) = gen_aggregatable(&spec).unwrap();
        let report = svd_dir(
            &p,
            &SvdConfig {
                eps: 0.0,
                delta: 0.05,
                fixed_l: None,
            },
        )
        .unwrap();
        assert!(report.partition.same_grouping(&planted));

        // The proportional-alpha model on the recovered partition is
        // dynamic-exact up to roundoff.
        let chain = MarkovChain::Dtmc(p);
        let alpha = proportional_alpha(&chain, &report.partition, false).unwrap();
        let disagg = build_partitioned(&report.partition, &alpha).unwrap();
        let dynamics = induced_dynamics(&disagg, &chain).unwrap();
        let err = error_matrix_parts(disagg.a(), &dynamics, &chain).unwrap();
        assert!(err.inf_norm <= 1e-9, "residual {}", err.inf_norm);
    }

    #[test]
    fn svd_dir_eps_one_uses_single_direction() {
        let f = builtin_fixture("CHAIN_B").unwrap();
        let p = match &f.chain {
            MarkovChain::Dtmc(p) => p,
            _ => unreachable!(),
        };
        let report = svd_dir(
            p,
            &SvdConfig {
                eps: 1.0,
                delta: 0.05,
                fixed_l: None,
            },
        )
        .unwrap();
        assert_eq!(report.l, 1);
    }

    #[test]
    fn svd_cutoff_is_monotone_in_eps() {
        let spec = GenSpec {
            n: 40,
            m: 5,
            block_zero_prob: 0.5,
            perturb_magnitude: 0.002,
            seed: 1,
        };
        let (p, _, _) = gen_aggregatable(&spec).unwrap();
        let p = crate::benchlab::perturb(&p, 0.002, 2);
        let basis = SvdBasis::compute(&p).unwrap();
        let mut last = usize::MAX;
        for eps in [0.0, 0.05, 0.1, 0.2, 0.5, 1.0] {
            let l = basis.cutoff(eps);
            assert!(l <= last, "cutoff grew from {last} to {l} at eps {eps}");
            last = l;
        }
        assert_eq!(basis.cutoff(1.0), 1);
    }

    #[test]
    fn svd_dir_is_permutation_equivariant() {
        let spec = GenSpec {
            n: 18,
            m: 3,
            block_zero_prob: 0.3,
            perturb_magnitude: 0.0,
            seed: 10,
        };
        let (p, _, _) = gen_aggregatable(&spec).unwrap();
        let cfg = SvdConfig {
            eps: 0.0,
            delta: 0.05,
            fixed_l: None,
        };
        let base = svd_dir(&p, &cfg).unwrap();

        // Relabel states by a fixed permutation.
        let n = p.n();
        let perm: Vec<usize> = (0..n).map(|i| (i * 7 + 3) % n).collect();
        let dense = p.matrix().to_dense();
        let mut permuted = dense.clone();
        for r in 0..n {
            for c in 0..n {
                permuted[(perm[r], perm[c])] = dense[(r, c)];
            }
        }
        let pp =
            TransitionMatrix::new_unchecked(crate::sparse::SparseMatrix::from_dense(&permuted))
                .unwrap();
        let moved = svd_dir(&pp, &cfg).unwrap();
        let mut expected = vec![0usize; n];
        for s in 0..n {
            expected[perm[s]] = base.partition.aggregate_of(s);
        }
        let expected = Partition::from_omega(expected).unwrap();
        assert!(moved.partition.same_grouping(&expected));
    }

    #[test]
    fn svd_sgn_recovers_planted_partition_at_fixed_l() {
        let spec = GenSpec {
            n: 40,
            m: 4,
            block_zero_prob: 0.3,
            perturb_magnitude: 0.0,
            seed: 9,
        };
        let (p, planted, _) = gen_aggregatable(&spec).unwrap();
        let report = svd_sgn(
            &p,
            &SvdConfig {
                eps: 0.0,
                delta: 0.05,
                fixed_l: Some(4),
            },
        )
        .unwrap();
        assert!(report.partition.same_grouping(&planted));
    }

    #[test]
    fn svd_sgn_single_row_all_positive_is_one_aggregate() {
        let f = builtin_fixture("CHAIN_B").unwrap();
        let p = match &f.chain {
            MarkovChain::Dtmc(p) => p,
            _ => unreachable!(),
        };
        let report = svd_sgn(
            p,
            &SvdConfig {
                eps: 0.0,
                delta: 0.05,
                fixed_l: Some(1),
            },
        )
        .unwrap();
        // The leading right-singular vector of an irreducible chain has one
        // sign; canonicalization makes it positive.
        assert_eq!(report.partition.m(), 1);
    }

    #[test]
    fn cluster_contracts() {
        let points: Vec<DVector<f64>> = vec![DVector::from_vec(vec![0.0]); 4];
        assert_eq!(
            cluster(&points, 0.0, ClusterStrategy::Hierarchical).len(),
            1
        );
        assert_eq!(cluster(&points, 0.0, ClusterStrategy::Greedy).len(), 1);

        let two: Vec<DVector<f64>> =
            vec![DVector::from_vec(vec![0.0]), DVector::from_vec(vec![1.0])];
        // Exactly at distance eps: hierarchical merges, greedy may not.
        assert_eq!(cluster(&two, 1.0, ClusterStrategy::Hierarchical).len(), 1);
        assert_eq!(cluster(&two, 1.0, ClusterStrategy::Greedy).len(), 2);

        // Greedy output always satisfies the pairwise bound.
        let mut state = 3u64;
        let mut next = move || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let pts: Vec<DVector<f64>> = (0..40)
            .map(|_| DVector::from_vec(vec![next(), next()]))
            .collect();
        let eps = 0.4;
        for strategy in [ClusterStrategy::Hierarchical, ClusterStrategy::Greedy] {
            for members in cluster(&pts, eps, strategy) {
                for (i, &a) in members.iter().enumerate() {
                    for &b in &members[i + 1..] {
                        assert!(l1_dist(&pts[a], &pts[b]) <= eps + 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn refine_zero_eps_matches_coarsest_partition() {
        let (p, planted) = gen_exactly_lumpable(36, 6, 31).unwrap();
        let chain = MarkovChain::Dtmc(p);
        for strategy in [ClusterStrategy::Hierarchical, ClusterStrategy::Greedy] {
            let refined = refine_almost_exact(
                &chain,
                &RefineConfig {
                    eps: 0.0,
                    strategy,
                    ..RefineConfig::default()
                },
            );
            let coarsest = coarsest_exactly_lumpable(&chain);
            assert!(refined.same_grouping(&coarsest), "{strategy:?}");
            assert!(refined.is_coarsening_of(&planted) || refined.same_grouping(&planted));
            assert_eq!(almost_exact_eps(&chain, &refined), 0.0);
        }
    }

    #[test]
    fn refine_huge_eps_returns_trivial_partition() {
        let f = builtin_fixture("CHAIN_B").unwrap();
        let refined = refine_almost_exact(
            &f.chain,
            &RefineConfig {
                eps: 100.0,
                ..RefineConfig::default()
            },
        );
        assert_eq!(refined.m(), 1);
    }

    #[test]
    fn refine_zero_eps_on_cycle_is_whole_space() {
        let f = builtin_fixture("CHAIN_CYC").unwrap();
        let refined = refine_almost_exact(
            &f.chain,
            &RefineConfig {
                eps: 0.0,
                ..RefineConfig::default()
            },
        );
        assert_eq!(refined.m(), 1);
    }

    #[test]
    fn refine_output_satisfies_requested_eps() {
        let spec = GenSpec {
            n: 40,
            m: 5,
            block_zero_prob: 0.4,
            perturb_magnitude: 0.002,
            seed: 23,
        };
        let (p, _, _) = gen_aggregatable(&spec).unwrap();
        let p = crate::benchlab::perturb(&p, 0.002, 24);
        let chain = MarkovChain::Dtmc(p);
        for eps in [0.01, 0.05, 0.2] {
            for strategy in [ClusterStrategy::Hierarchical, ClusterStrategy::Greedy] {
                let refined = refine_almost_exact(
                    &chain,
                    &RefineConfig {
                        eps,
                        strategy,
                        ..RefineConfig::default()
                    },
                );
                let measured = almost_exact_eps(&chain, &refined);
                assert!(
                    measured <= eps + 1e-12,
                    "{strategy:?} eps {eps}: measured {measured}"
                );
            }
        }
    }

    #[test]
    fn refine_respects_almost_exact_error_bound() {
        // ||Pi A - A P||_inf <= |Omega| (max block - 1) / min block * eps
        // for uniform alpha on refinement outputs.
        let spec = GenSpec {
            n: 30,
            m: 4,
            block_zero_prob: 0.4,
            perturb_magnitude: 0.0,
            seed: 61,
        };
        let (p, _, _) = gen_aggregatable(&spec).unwrap();
        let p = crate::benchlab::perturb(&p, 0.01, 62);
        let chain = MarkovChain::Dtmc(p);
        for eps in [0.02, 0.1, 0.5] {
            let refined = refine_almost_exact(
                &chain,
                &RefineConfig {
                    eps,
                    ..RefineConfig::default()
                },
            );
            let alpha = uniform_alpha(&refined);
            let disagg = build_partitioned(&refined, &alpha).unwrap();
            let dynamics = induced_dynamics(&disagg, &chain).unwrap();
            let err = error_matrix_parts(disagg.a(), &dynamics, &chain).unwrap();
            let sizes = refined.sizes();
            let max_b = *sizes.iter().max().unwrap() as f64;
            let min_b = *sizes.iter().min().unwrap() as f64;
            let bound = refined.m() as f64 * (max_b - 1.0) / min_b * eps;
            assert!(
                err.inf_norm <= bound + 1e-12,
                "eps {eps}: {} > {bound}",
                err.inf_norm
            );
        }
    }
}
