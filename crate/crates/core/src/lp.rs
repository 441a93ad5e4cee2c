//! Self-contained dense simplex for the least-absolute-deviations problems
//! this library needs. Problem sizes are a handful of aggregates plus one
//! slack pair per original state, so a tableau method is plenty.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Minimizes `||x^T A - b^T||_1` over `x` of length `m`, where `A` is `m x n`
/// and `b` has length `n`. With `constrain_probability`, additionally
/// requires `x >= 0` and `sum(x) = 1`.
///
/// Returns the minimizer and the objective value.
pub fn solve_lad(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    constrain_probability: bool,
) -> Result<(DVector<f64>, f64)> {
    let m = a.nrows();
    let n = a.ncols();
    if b.len() != n {
        return Err(Error::Dimension(format!(
            "LAD target length {} does not match matrix columns {n}",
            b.len()
        )));
    }
    if m == 0 {
        if constrain_probability {
            return Err(Error::Infeasible(
                "probability constraint with zero variables".into(),
            ));
        }
        return Ok((DVector::zeros(0), b.iter().map(|x| x.abs()).sum()));
    }

    // Residual split: x^T A - b^T = u - w with u, w >= 0.
    // Unconstrained x is split as x = xp - xm.
    // Columns: [xp(m) | xm(m or 0) | u(n) | w(n)], rows: n residual equations
    // (+ sum-to-one when constrained).
    let x_cols = if constrain_probability { m } else { 2 * m };
    let rows = if constrain_probability { n + 1 } else { n };
    let cols = x_cols + 2 * n;

    let mut tab = DMatrix::zeros(rows, cols);
    let mut rhs = DVector::zeros(rows);
    for j in 0..n {
        for i in 0..m {
            tab[(j, i)] = a[(i, j)];
            if !constrain_probability {
                tab[(j, m + i)] = -a[(i, j)];
            }
        }
        tab[(j, x_cols + j)] = -1.0; // u_j
        tab[(j, x_cols + n + j)] = 1.0; // w_j
        rhs[j] = b[j];
    }
    if constrain_probability {
        for i in 0..m {
            tab[(n, i)] = 1.0;
        }
        rhs[n] = 1.0;
    }

    let mut cost = DVector::zeros(cols);
    for j in 0..2 * n {
        cost[x_cols + j] = 1.0;
    }

    let solution = simplex(tab, rhs, cost)?;
    let x = if constrain_probability {
        DVector::from_iterator(m, (0..m).map(|i| solution[i]))
    } else {
        DVector::from_iterator(m, (0..m).map(|i| solution[i] - solution[m + i]))
    };
    let objective = (0..2 * n).map(|j| solution[x_cols + j]).sum();
    Ok((x, objective))
}

/// Two-phase tableau simplex for `min c^T z` s.t. `M z = d`, `z >= 0` with
/// Bland's rule. Rows with negative `d` are flipped first.
fn simplex(mut m: DMatrix<f64>, mut d: DVector<f64>, c: DVector<f64>) -> Result<DVector<f64>> {
    const EPS: f64 = 1e-11;
    let rows = m.nrows();
    let cols = m.ncols();

    for i in 0..rows {
        if d[i] < 0.0 {
            d[i] = -d[i];
            for j in 0..cols {
                m[(i, j)] = -m[(i, j)];
            }
        }
    }

    // Phase 1 with artificial variables to get a feasible basis.
    let total = cols + rows;
    let mut t = DMatrix::zeros(rows, total);
    t.view_mut((0, 0), (rows, cols)).copy_from(&m);
    for i in 0..rows {
        t[(i, cols + i)] = 1.0;
    }
    let mut basis: Vec<usize> = (cols..total).collect();
    let phase1_cost: Vec<f64> = (0..total)
        .map(|j| if j >= cols { 1.0 } else { 0.0 })
        .collect();
    run_simplex(&mut t, &mut d, &mut basis, &phase1_cost, EPS)?;

    let phase1_obj: f64 = basis
        .iter()
        .enumerate()
        .map(|(i, &bj)| if bj >= cols { d[i] } else { 0.0 })
        .sum();
    if phase1_obj > 1e-7 {
        return Err(Error::Infeasible(format!(
            "phase-1 objective {phase1_obj:.3e}"
        )));
    }

    // Drive any leftover artificials out of the basis.
    for i in 0..rows {
        if basis[i] >= cols {
            if let Some(j) = (0..cols).find(|&j| t[(i, j)].abs() > EPS) {
                pivot(&mut t, &mut d, &mut basis, i, j);
            }
            // A row with no eligible pivot is redundant; its artificial stays
            // basic at value zero, which is harmless.
        }
    }

    let phase2_cost: Vec<f64> = (0..total)
        .map(|j| if j < cols { c[j] } else { 1e30 })
        .collect();
    run_simplex(&mut t, &mut d, &mut basis, &phase2_cost, EPS)?;

    let mut z = DVector::zeros(cols);
    for (i, &bj) in basis.iter().enumerate() {
        if bj < cols {
            z[bj] = d[i];
        }
    }
    Ok(z)
}

fn run_simplex(
    t: &mut DMatrix<f64>,
    d: &mut DVector<f64>,
    basis: &mut [usize],
    cost: &[f64],
    eps: f64,
) -> Result<()> {
    let rows = t.nrows();
    let cols = t.ncols();
    let max_iter = 50 * (rows + cols).max(200);

    for _ in 0..max_iter {
        // Reduced costs: r_j = c_j - c_B^T B^-1 A_j (tableau is already B^-1 A).
        let mut entering = None;
        for j in 0..cols {
            if basis.contains(&j) {
                continue;
            }
            let mut rj = cost[j];
            for i in 0..rows {
                rj -= cost[basis[i]] * t[(i, j)];
            }
            if rj < -eps {
                entering = Some(j); // Bland: first eligible index
                break;
            }
        }
        let Some(j) = entering else { return Ok(()) };

        let mut leaving: Option<(usize, f64)> = None;
        for i in 0..rows {
            if t[(i, j)] > eps {
                let ratio = d[i] / t[(i, j)];
                match leaving {
                    Some((li, lr)) => {
                        if ratio < lr - eps || (ratio < lr + eps && basis[i] < basis[li]) {
                            leaving = Some((i, ratio));
                        }
                    }
                    None => leaving = Some((i, ratio)),
                }
            }
        }
        let Some((i, _)) = leaving else {
            return Err(Error::Infeasible("unbounded linear program".into()));
        };
        pivot(t, d, basis, i, j);
    }
    Err(Error::NonConvergence(
        "simplex iteration cap reached".into(),
    ))
}

fn pivot(t: &mut DMatrix<f64>, d: &mut DVector<f64>, basis: &mut [usize], row: usize, col: usize) {
    let rows = t.nrows();
    let cols = t.ncols();
    let pv = t[(row, col)];
    for j in 0..cols {
        t[(row, j)] /= pv;
    }
    d[row] /= pv;
    for i in 0..rows {
        if i == row {
            continue;
        }
        let factor = t[(i, col)];
        if factor == 0.0 {
            continue;
        }
        for j in 0..cols {
            t[(i, j)] -= factor * t[(row, j)];
        }
        d[i] -= factor * d[row];
    }
    basis[row] = col;
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exact_fit_has_zero_objective() {
        // b is in the row space of A.
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 2.0]);
        let x_true = DVector::from_vec(vec![0.3, -0.7]);
        let b = a.transpose() * &x_true;
        let (x, obj) = solve_lad(&a, &b, false).unwrap();
        assert!(obj < 1e-9, "objective {obj}");
        assert_relative_eq!(x[0], 0.3, epsilon = 1e-9);
        assert_relative_eq!(x[1], -0.7, epsilon = 1e-9);
    }

    #[test]
    fn scalar_lad_is_weighted_median_like() {
        // min over x of |x-1| + |x-2| + |x-5| has optimum at x=2, value 4.
        let a = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, 2.0, 5.0]);
        let (x, obj) = solve_lad(&a, &b, false).unwrap();
        assert_relative_eq!(x[0], 2.0, epsilon = 1e-9);
        assert_relative_eq!(obj, 4.0, epsilon = 1e-9);
    }

    #[test]
    fn probability_constraint_is_honored() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let b = DVector::from_vec(vec![3.0, -1.0]);
        let (x, obj) = solve_lad(&a, &b, true).unwrap();
        assert!(x[0] >= -1e-12 && x[1] >= -1e-12);
        assert_relative_eq!(x.sum(), 1.0, epsilon = 1e-9);
        // Best probability vector is (1, 0): objective |1-3| + |0+1| = 3.
        assert_relative_eq!(obj, 3.0, epsilon = 1e-9);
    }
}
