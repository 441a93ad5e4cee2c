//! Dynamic-exact reductions to arbitrary dimension via the real Schur
//! decomposition, plus the trivial one-state stationary aggregation.
//!
//! The decomposition of the transposed transition (or generator) matrix
//! yields, after cutting the quasi-triangular factor, an abstract reduced
//! model with `Pi A = A P` up to roundoff at any requested dimension that
//! does not split a complex-pair block.

use nalgebra::{DMatrix, DVector};

use crate::bounds::error_matrix_parts;
use crate::chain::{stationary, MarkovChain};
use crate::error::{Error, Result};
use crate::linalg::inf_norm;

/// Where the diagonal blocks end up before cutting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BlockOrdering {
    /// Dominant transient modes first. Ties keep the as-computed order.
    #[default]
    DescendingModulus,
    /// Whatever the decomposition produced.
    AsComputed,
}

#[derive(Debug, Clone, Copy)]
pub struct SchurConfig {
    pub ordering: BlockOrdering,
    /// Within a tie of unit-modulus eigenvalues, move the real eigenvalue 1
    /// block behind the others (so the stationary mode is dropped first).
    pub drop_stationary: bool,
    /// Largest state count for which the dense decomposition is attempted.
    pub dense_cap: usize,
}

impl Default for SchurConfig {
    fn default() -> Self {
        Self {
            ordering: BlockOrdering::default(),
            drop_stationary: false,
            dense_cap: 2000,
        }
    }
}

/// An abstract dynamic-exact reduction.
#[derive(Debug, Clone)]
pub struct SchurReduction {
    /// k-by-n disaggregation matrix with orthonormal rows.
    pub a: DMatrix<f64>,
    /// k-by-k reduced dynamics (leading block of the transposed
    /// quasi-triangular factor).
    pub dynamics: DMatrix<f64>,
    /// k: the requested dimension, or one more when the cut would have
    /// split a complex-pair block.
    pub achieved_dim: usize,
    /// `||dynamics * A - A * P||_inf`, verified below 1e-8.
    pub residual: f64,
}

#[derive(Debug, Clone, Copy)]
struct Block {
    size: usize,
    modulus: f64,
    /// Eigenvalue of the block: a real value for 1x1 blocks, the upper-half
    /// member a + bi (b >= 0) for complex pairs.
    eig_re: f64,
    eig_im: f64,
}

/// Reduces the chain to (roughly) `m` abstract states with `Pi A = A P`
/// exactly, up to numerical residual.
pub fn schur_dynamic_exact(
    chain: &MarkovChain,
    m: usize,
    cfg: &SchurConfig,
) -> Result<SchurReduction> {
    let n = chain.n();
    if m == 0 || m >= n {
        return Err(Error::Precondition(format!(
            "need 1 <= m < n, got m={m}, n={n}"
        )));
    }
    if n > cfg.dense_cap {
        return Err(Error::Precondition(format!(
            "n={n} exceeds the dense decomposition cap {}",
            cfg.dense_cap
        )));
    }
    let transposed = chain.matrix().to_dense().transpose();
    let schur = nalgebra::linalg::Schur::try_new(transposed.clone(), 1e-14, 0)
        .ok_or_else(|| Error::NonConvergence("real Schur decomposition failed".into()))?;
    let (mut u, mut t) = schur.unpack();
    sanitize_quasi_triangular(&mut t);

    let mut blocks = scan_blocks(&t);
    if cfg.ordering == BlockOrdering::DescendingModulus {
        let mut target: Vec<usize> = (0..blocks.len()).collect();
        target.sort_by(|&a, &b| {
            blocks[b]
                .modulus
                .partial_cmp(&blocks[a].modulus)
                .unwrap()
                .then(a.cmp(&b))
        });
        if cfg.drop_stationary {
            push_stationary_back(&blocks, &mut target);
        }
        apply_block_order(&mut t, &mut u, &mut blocks, &target)?;
    }

    // Cut after whole blocks only; a split complex pair costs one extra row.
    let mut k = 0usize;
    for b in &blocks {
        if k >= m {
            break;
        }
        k += b.size;
    }
    let k = k.min(n);

    // Defective eigenvalue clusters straddling the cut limit the subspace
    // accuracy of the decomposition to about sqrt(machine epsilon); those
    // retained directions are rebuilt from eigen-structure, which is
    // well-conditioned again.
    let x = refine_split_clusters(&transposed, u.columns(0, k).into_owned(), &blocks, k);
    let (a, dynamics) = rebase_reduction(&transposed, x, cfg)?;

    let ortho = inf_norm(&(&a * a.transpose() - DMatrix::identity(k, k)));
    if ortho > 1e-10 {
        return Err(Error::NonConvergence(format!(
            "reduction rows lost orthonormality: {ortho:.3e}"
        )));
    }
    let residual = error_matrix_parts(&a, &dynamics, chain)?.inf_norm;
    if residual > 1e-8 {
        return Err(Error::NonConvergence(format!(
            "Schur reduction residual {residual:.3e} above 1e-8"
        )));
    }
    Ok(SchurReduction {
        a,
        dynamics,
        achieved_dim: k,
        residual,
    })
}

/// The always-available one-state dynamic-exact aggregation `A = p^T` with
/// dynamics `(1)` (DTMC) or `(0)` (CTMC).
pub fn trivial_stationary_aggregation(chain: &MarkovChain, tol: f64) -> Result<SchurReduction> {
    let p = stationary(chain, tol)?;
    let n = chain.n();
    let mut a = DMatrix::zeros(1, n);
    for i in 0..n {
        a[(0, i)] = p.values()[i];
    }
    let dynamics = DMatrix::from_element(1, 1, if chain.is_discrete() { 1.0 } else { 0.0 });
    let residual = error_matrix_parts(&a, &dynamics, chain)?.inf_norm;
    Ok(SchurReduction {
        a,
        dynamics,
        achieved_dim: 1,
        residual,
    })
}

/// Zeros everything below the subdiagonal and any negligible subdiagonal
/// entries, so the block scan sees a clean quasi-triangular matrix.
fn sanitize_quasi_triangular(t: &mut DMatrix<f64>) {
    let n = t.nrows();
    for i in 0..n {
        for j in 0..i.saturating_sub(1) {
            t[(i, j)] = 0.0;
        }
    }
    for i in 0..n.saturating_sub(1) {
        let scale = t[(i, i)].abs() + t[(i + 1, i + 1)].abs();
        if t[(i + 1, i)].abs() <= 1e-12 * scale.max(1e-300) {
            t[(i + 1, i)] = 0.0;
        }
    }
}

fn scan_blocks(t: &DMatrix<f64>) -> Vec<Block> {
    let n = t.nrows();
    let mut blocks = Vec::new();
    let mut i = 0;
    while i < n {
        if i + 1 < n && t[(i + 1, i)] != 0.0 {
            let (tr, det) = (t[(i, i)] + t[(i + 1, i + 1)], block_det(t, i));
            let disc = tr * tr / 4.0 - det;
            let (modulus, eig_im) = if disc < 0.0 {
                (det.sqrt(), (-disc).sqrt())
            } else {
                let root = disc.sqrt();
                ((tr / 2.0 + root).abs().max((tr / 2.0 - root).abs()), 0.0)
            };
            blocks.push(Block {
                size: 2,
                modulus,
                eig_re: tr / 2.0,
                eig_im,
            });
            i += 2;
        } else {
            blocks.push(Block {
                size: 1,
                modulus: t[(i, i)].abs(),
                eig_re: t[(i, i)],
                eig_im: 0.0,
            });
            i += 1;
        }
    }
    blocks
}

fn block_det(t: &DMatrix<f64>, i: usize) -> f64 {
    t[(i, i)] * t[(i + 1, i + 1)] - t[(i, i + 1)] * t[(i + 1, i)]
}

/// Within every run of (nearly) equal moduli, moves real-eigenvalue-one
/// blocks to the end of the run.
fn push_stationary_back(blocks: &[Block], target: &mut [usize]) {
    let mut run_start = 0;
    while run_start < target.len() {
        let mut run_end = run_start + 1;
        while run_end < target.len()
            && (blocks[target[run_end]].modulus - blocks[target[run_start]].modulus).abs() <= 1e-9
        {
            run_end += 1;
        }
        target[run_start..run_end].sort_by_key(|&b| {
            let is_one = blocks[b].size == 1
                && blocks[b].eig_im == 0.0
                && (blocks[b].eig_re - 1.0).abs() <= 1e-9;
            (is_one, b)
        });
        run_start = run_end;
    }
}

/// Realizes `target` (a permutation of block indices) by adjacent swaps.
fn apply_block_order(
    t: &mut DMatrix<f64>,
    u: &mut DMatrix<f64>,
    blocks: &mut Vec<Block>,
    target: &[usize],
) -> Result<()> {
    // current[pos] = original block id at position pos.
    let mut current: Vec<usize> = (0..blocks.len()).collect();
    for want_pos in 0..target.len() {
        let id = target[want_pos];
        let mut pos = current
            .iter()
            .position(|&x| x == id)
            .expect("block present");
        while pos > want_pos {
            // Swap blocks at positions pos-1, pos.
            let start = position_start(blocks, &current, pos - 1);
            let p = blocks[current[pos - 1]].size;
            let q = blocks[current[pos]].size;
            swap_adjacent_blocks(t, u, start, p, q)?;
            current.swap(pos - 1, pos);
            pos -= 1;
        }
    }
    // Recompute the block table from the final matrix.
    *blocks = scan_blocks(t);
    Ok(())
}

fn position_start(blocks: &[Block], current: &[usize], pos: usize) -> usize {
    current[..pos].iter().map(|&id| blocks[id].size).sum()
}

/// Swaps the adjacent diagonal blocks at rows `i..i+p` and `i+p..i+p+q`
/// by an orthogonal similarity confined to that window.
fn swap_adjacent_blocks(
    t: &mut DMatrix<f64>,
    u: &mut DMatrix<f64>,
    i: usize,
    p: usize,
    q: usize,
) -> Result<()> {
    let w = p + q;
    let a11 = t.view((i, i), (p, p)).into_owned();
    let a22 = t.view((i + p, i + p), (q, q)).into_owned();
    let a12 = t.view((i, i + p), (p, q)).into_owned();

    // Sylvester equation A11 X - X A22 = A12 in Kronecker form
    // (column-major stacking).
    let mut k_mat = DMatrix::zeros(p * q, p * q);
    for c in 0..q {
        for r in 0..p {
            let row = c * p + r;
            for cc in 0..p {
                k_mat[(row, c * p + cc)] += a11[(r, cc)];
            }
            for rr in 0..q {
                k_mat[(row, rr * p + r)] -= a22[(rr, c)];
            }
        }
    }
    let rhs = DVector::from_iterator(
        p * q,
        (0..q)
            .flat_map(|c| (0..p).map(move |r| (r, c)))
            .map(|(r, c)| a12[(r, c)]),
    );
    let x_vec = k_mat.lu().solve(&rhs).ok_or_else(|| {
        Error::NonConvergence("cannot swap Schur blocks sharing an eigenvalue".into())
    })?;
    let x = DMatrix::from_fn(p, q, |r, c| x_vec[c * p + r]);

    // Orthogonal basis whose leading q columns span [-X; I].
    let mut g = DMatrix::zeros(w, q);
    g.view_mut((0, 0), (p, q)).copy_from(&(-&x));
    for j in 0..q {
        g[(p + j, j)] = 1.0;
    }
    let q_full = full_orthogonal_from_columns(&g);

    // Similarity on the window, touching all of T's coupled rows/columns.
    let n = t.nrows();
    {
        let cols = t.view((0, i), (n, w)) * &q_full;
        t.view_mut((0, i), (n, w)).copy_from(&cols);
        let rows = q_full.transpose() * t.view((i, 0), (w, n));
        t.view_mut((i, 0), (w, n)).copy_from(&rows);
        let ucols = u.view((0, i), (n, w)) * &q_full;
        u.view_mut((0, i), (n, w)).copy_from(&ucols);
    }
    // The swapped configuration is block upper triangular by construction;
    // the part under the new leading block only holds roundoff.
    for r in q..w {
        for c in 0..q {
            t[(i + r, i + c)] = 0.0;
        }
    }
    Ok(())
}

/// A retained eigenvalue cluster, identified by (re, |im|) proximity so
/// conjugate pairs fall together.
struct EigCluster {
    re_mean: f64,
    im_max: f64,
    total: usize,
    retained: usize,
}

/// Rebuilds the leading invariant subspace from eigenvectors when the cut
/// splits a repeated-eigenvalue cluster. The QR iteration only locates such
/// subspaces to about sqrt(machine epsilon), while the cluster mean and the
/// null spaces below are accurate to working precision. Returns the input
/// basis untouched whenever the situation is out of scope or a conditioning
/// check fails.
fn refine_split_clusters(
    m: &DMatrix<f64>,
    x0: DMatrix<f64>,
    blocks: &[Block],
    k: usize,
) -> DMatrix<f64> {
    let n = m.nrows();
    let scale = 1.0 + inf_norm(m);
    let tol = 1e-7 * scale;

    // Eigenvalues as (re, |im|, retained), one entry per eigenvalue.
    let mut eigs: Vec<(f64, f64, bool)> = Vec::new();
    let mut offset = 0;
    for b in blocks {
        let retained = offset + b.size <= k;
        eigs.push((b.eig_re, b.eig_im.abs(), retained));
        if b.size == 2 {
            eigs.push((b.eig_re, b.eig_im.abs(), retained));
        }
        offset += b.size;
    }

    // Union-find clustering.
    let mut parent: Vec<usize> = (0..eigs.len()).collect();
    fn find(parent: &mut Vec<usize>, i: usize) -> usize {
        if parent[i] != i {
            let root = find(parent, parent[i]);
            parent[i] = root;
        }
        parent[i]
    }
    for i in 0..eigs.len() {
        for j in (i + 1)..eigs.len() {
            let d = ((eigs[i].0 - eigs[j].0).powi(2) + (eigs[i].1 - eigs[j].1).powi(2)).sqrt();
            if d <= tol {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri] = rj;
                }
            }
        }
    }
    let mut clusters: Vec<EigCluster> = Vec::new();
    let mut root_of: Vec<Option<usize>> = vec![None; eigs.len()];
    for i in 0..eigs.len() {
        let root = find(&mut parent, i);
        let idx = *root_of[root].get_or_insert_with(|| {
            clusters.push(EigCluster {
                re_mean: 0.0,
                im_max: 0.0,
                total: 0,
                retained: 0,
            });
            clusters.len() - 1
        });
        let c = &mut clusters[idx];
        c.re_mean += eigs[i].0;
        c.im_max = c.im_max.max(eigs[i].1);
        c.total += 1;
        c.retained += usize::from(eigs[i].2);
    }
    for c in &mut clusters {
        c.re_mean /= c.total as f64;
    }

    if !clusters
        .iter()
        .any(|c| 0 < c.retained && c.retained < c.total)
    {
        return x0; // nothing split; the decomposition is well-conditioned
    }

    // Assemble the retained subspace cluster by cluster.
    let mut columns: Vec<DVector<f64>> = Vec::new();
    for c in clusters.iter().filter(|c| c.retained > 0) {
        let piece = if c.im_max <= tol {
            // Real cluster. A split keeps geometric eigenvectors only; a
            // fully retained one needs the whole generalized eigenspace.
            let shifted = m - DMatrix::identity(n, n) * c.re_mean;
            if c.retained < c.total {
                null_vectors(&shifted, c.retained)
            } else if c.total == 1 {
                null_vectors(&shifted, 1)
            } else if c.total <= 3 {
                let mut power = shifted.clone();
                for _ in 1..c.total {
                    power = &power * &shifted;
                }
                null_vectors(&power, c.total)
            } else {
                None
            }
        } else if c.total == 2 && c.retained == 2 {
            // One simple complex pair: null space of the real quadratic.
            let quad = m * m - m * (2.0 * c.re_mean)
                + DMatrix::identity(n, n) * (c.re_mean * c.re_mean + c.im_max * c.im_max);
            null_vectors(&quad, 2)
        } else {
            None // split or compound complex clusters are out of scope
        };
        match piece {
            Some(vectors) => columns.extend(vectors),
            None => return x0,
        }
    }
    if columns.len() != k {
        return x0;
    }
    let mut assembled = DMatrix::zeros(n, k);
    for (j, col) in columns.iter().enumerate() {
        assembled.set_column(j, col);
    }
    let x = assembled.qr().q();
    let defect = inf_norm(&(m * &x - &x * (x.transpose() * m * &x)));
    if defect <= 1e-10 * scale {
        x
    } else {
        x0
    }
}

/// The `count` right-singular vectors of the smallest singular values,
/// provided they are cleanly separated from the rest of the spectrum.
fn null_vectors(m: &DMatrix<f64>, count: usize) -> Option<Vec<DVector<f64>>> {
    let n = m.nrows();
    if count >= n {
        return None;
    }
    let scale = 1.0 + inf_norm(m);
    let svd = m.clone().svd(false, true);
    let v_t = svd.v_t?;
    let s = &svd.singular_values;
    if s[n - 1 - count] < 1e-4 * scale {
        return None; // null direction not isolated
    }
    if s[n - count] > 1e-6 * scale {
        return None; // alleged null vectors are not null
    }
    Some((0..count).map(|i| v_t.row(n - 1 - i).transpose()).collect())
}

/// Restores a quasi-triangular reduced form on a refined subspace basis:
/// diagonalizes the restriction by a small Schur decomposition, reorders it
/// under the configured rule, and returns (A, dynamics).
fn rebase_reduction(
    m: &DMatrix<f64>,
    x: DMatrix<f64>,
    cfg: &SchurConfig,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let restriction = x.transpose() * m * &x;
    let small = nalgebra::linalg::Schur::try_new(restriction, 1e-14, 0)
        .ok_or_else(|| Error::NonConvergence("reduced Schur decomposition failed".into()))?;
    let (mut u_small, mut t_small) = small.unpack();
    sanitize_quasi_triangular(&mut t_small);
    let mut blocks = scan_blocks(&t_small);
    if cfg.ordering == BlockOrdering::DescendingModulus {
        let mut target: Vec<usize> = (0..blocks.len()).collect();
        target.sort_by(|&a, &b| {
            blocks[b]
                .modulus
                .partial_cmp(&blocks[a].modulus)
                .unwrap()
                .then(a.cmp(&b))
        });
        if cfg.drop_stationary {
            push_stationary_back(&blocks, &mut target);
        }
        apply_block_order(&mut t_small, &mut u_small, &mut blocks, &target)?;
    }
    let a = (x * u_small).transpose();
    Ok((a, t_small.transpose()))
}

/// Full (w x w) orthogonal matrix whose first q columns span the columns of
/// `g` (w x q, full column rank), by Householder QR.
fn full_orthogonal_from_columns(g: &DMatrix<f64>) -> DMatrix<f64> {
    let w = g.nrows();
    let q = g.ncols();
    let mut r = g.clone();
    let mut acc = DMatrix::identity(w, w);
    for j in 0..q {
        let mut v = DVector::zeros(w);
        for k in j..w {
            v[k] = r[(k, j)];
        }
        let norm = v.norm();
        if norm == 0.0 {
            continue;
        }
        let sign = if v[j] >= 0.0 { 1.0 } else { -1.0 };
        v[j] += sign * norm;
        let vn2 = v.norm_squared();
        if vn2 == 0.0 {
            continue;
        }
        // H = I - 2 v v^T / (v^T v), applied to R (left) and ACC (right).
        let vt_r = v.transpose() * &r;
        r -= &v * vt_r * (2.0 / vn2);
        let acc_v = &acc * &v;
        acc -= acc_v * v.transpose() * (2.0 / vn2);
    }
    acc
}

impl SchurReduction {
    /// Complex eigenvalues of the reduced dynamics.
    pub fn eigenvalues(&self) -> Vec<(f64, f64)> {
        self.dynamics
            .complex_eigenvalues()
            .iter()
            .map(|c| (c.re, c.im))
            .collect()
    }
}
