//! Dense helpers shared across modules: norms, the matrix exponential and a
//! small truncated SVD used when full decompositions are too expensive.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// `sum_i |v(i)|`.
pub fn l1_norm(v: &DVector<f64>) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// Maximum absolute row sum of a dense matrix.
pub fn inf_norm(m: &DMatrix<f64>) -> f64 {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `max_i |v(i)|`.
pub fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

/// Dense matrix exponential by scaling and squaring with a [13/13] Pade
/// approximant. Accurate to close to machine precision for the small
/// reduced matrices this library produces.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.nrows(), a.ncols(), "expm needs a square matrix");
    let n = a.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }

    const THETA_13: f64 = 5.371_920_351_148_152;
    #[rustfmt::skip]
    const B: [f64; 14] = [
        64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
        1187353796428800.0, 129060195264000.0, 10559470521600.0,
        670442572800.0, 33522128640.0, 1323241920.0, 40840800.0,
        960960.0, 16380.0, 182.0, 1.0,
    ];

    let norm = l1_op_norm(a);
    let s = if norm > THETA_13 {
        (norm / THETA_13).log2().ceil().max(0.0) as u32
    } else {
        0
    };
    let a = a / 2f64.powi(s as i32);

    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a2 * &a4;
    let id = DMatrix::identity(n, n);

    let u_inner = &a6 * (B[13] * &a6 + B[11] * &a4 + B[9] * &a2)
        + B[7] * &a6
        + B[5] * &a4
        + B[3] * &a2
        + B[1] * &id;
    let u = &a * u_inner;
    let v = &a6 * (B[12] * &a6 + B[10] * &a4 + B[8] * &a2)
        + B[6] * &a6
        + B[4] * &a4
        + B[2] * &a2
        + B[0] * &id;

    let p = &v + &u;
    let q = &v - &u;
    let mut r = q
        .lu()
        .solve(&p)
        .expect("Pade denominator is nonsingular after scaling");
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

fn l1_op_norm(m: &DMatrix<f64>) -> f64 {
    (0..m.ncols())
        .map(|j| (0..m.nrows()).map(|i| m[(i, j)].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Top-`l` singular triplets of a rectangular matrix by subspace iteration
/// on the Gram matrix. Returns singular values in descending order and the
/// corresponding right-singular vectors as the rows of an `l x n` matrix.
///
/// `apply` and `apply_t` multiply a dense block by the matrix and its
/// transpose so that sparse operators can be passed without materializing
/// them. Iterates until the subspace residual drops below `tol`.
pub fn truncated_svd(
    nrows: usize,
    ncols: usize,
    apply: impl Fn(&DMatrix<f64>) -> DMatrix<f64>,
    apply_t: impl Fn(&DMatrix<f64>) -> DMatrix<f64>,
    l: usize,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    if l == 0 || l > ncols.min(nrows) {
        return Err(Error::Precondition(format!(
            "truncated SVD rank {l} out of range for {nrows}x{ncols} matrix"
        )));
    }
    // Deterministic full-rank start: shifted cosines.
    let mut v = DMatrix::from_fn(ncols, l, |i, j| {
        (1.0 + (i as f64 + 1.0) * (j as f64 + 1.3)).cos() + if i == j { 1.0 } else { 0.0 }
    });
    let mut prev_sigma = vec![f64::INFINITY; l];
    for _ in 0..max_iter {
        let w = apply(&v); // nrows x l
        let z = apply_t(&w); // ncols x l, Gram product
        let qr = z.qr();
        v = qr.q();

        // Rayleigh-Ritz on the Gram matrix to extract singular values.
        let av = apply(&v);
        let small = av.transpose() * &av; // l x l, = V^T A^T A V
        let eig = small.symmetric_eigen();
        let mut order: Vec<usize> = (0..l).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
        let sigma: Vec<f64> = order
            .iter()
            .map(|&i| eig.eigenvalues[i].max(0.0).sqrt())
            .collect();

        let mut rot = DMatrix::zeros(l, l);
        for (new, &old) in order.iter().enumerate() {
            rot.set_column(new, &eig.eigenvectors.column(old));
        }
        v = &v * &rot;

        let drift = sigma
            .iter()
            .zip(prev_sigma.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        prev_sigma = sigma.clone();
        if drift <= tol {
            return Ok((sigma, v.transpose()));
        }
    }
    Err(Error::NonConvergence(format!(
        "truncated SVD did not converge in {max_iter} iterations"
    )))
}
