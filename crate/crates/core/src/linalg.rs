//! Dense direct solver for the kernel machines in this crate.
//!
//! Every trainer here ends in one dense, square, generally indefinite linear
//! system (the bordered least-squares-SVM system), at most a couple of
//! thousand rows. That is squarely LU-with-partial-pivoting territory, so the
//! crate carries its own compact factorization instead of an external solver
//! backend: factor once, then reuse for many right-hand sides and for
//! diagonal-of-inverse queries.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Pivots smaller than this (relative to the matrix scale) are treated as an
/// exactly singular system.
const PIVOT_TINY: f64 = 1e-280;

/// LU factorization with partial pivoting: `P·A = L·U` packed in one matrix.
#[derive(Debug, Clone)]
pub struct LuFactor {
    /// Strict lower triangle holds L (unit diagonal implied), upper holds U.
    lu: Array2<f64>,
    /// `perm[i]` = original row of `A` that ended up in position `i`.
    perm: Vec<usize>,
    n: usize,
}

impl LuFactor {
    /// Factors a square matrix, consuming it.
    ///
    /// Fails with a numeric error (including a pivot-ratio condition
    /// estimate) if a pivot collapses to zero, i.e. the matrix is singular to
    /// working precision.
    pub fn new(mut a: Array2<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Domain(format!(
                "LU factorization needs a square matrix, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        let mut perm: Vec<usize> = (0..n).collect();
        let mut row_k = vec![0.0f64; n];

        for k in 0..n {
            // Partial pivoting: largest magnitude in column k at or below row k.
            let mut pivot_row = k;
            let mut pivot_abs = a[[k, k]].abs();
            for i in (k + 1)..n {
                let v = a[[i, k]].abs();
                if v > pivot_abs {
                    pivot_abs = v;
                    pivot_row = i;
                }
            }
            if !pivot_abs.is_finite() || pivot_abs <= PIVOT_TINY * scale {
                return Err(Error::Numeric {
                    msg: format!("singular system: pivot {pivot_abs:.3e} at elimination step {k}"),
                    condition: Some(condition_from_pivots(&a, k)),
                });
            }
            if pivot_row != k {
                swap_rows(&mut a, k, pivot_row);
                perm.swap(k, pivot_row);
            }

            let pivot = a[[k, k]];
            row_k[k + 1..n].copy_from_slice(&a.row(k).as_slice().expect("row-major layout")[k + 1..n]);
            for i in (k + 1)..n {
                let row_i = a.row_mut(i).into_slice().expect("row-major layout");
                let l = row_i[k] / pivot;
                row_i[k] = l;
                if l != 0.0 {
                    for j in (k + 1)..n {
                        row_i[j] -= l * row_k[j];
                    }
                }
            }
        }

        Ok(LuFactor { lu: a, perm, n })
    }

    /// Dimension of the factored matrix.
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Ratio of the largest to smallest pivot magnitude — a cheap
    /// order-of-magnitude proxy for the condition number.
    pub fn pivot_ratio(&self) -> f64 {
        let mut max_p = 0.0f64;
        let mut min_p = f64::INFINITY;
        for i in 0..self.n {
            let p = self.lu[[i, i]].abs();
            max_p = max_p.max(p);
            min_p = min_p.min(p);
        }
        if min_p == 0.0 {
            f64::INFINITY
        } else {
            max_p / min_p
        }
    }

    /// Solves `A x = b` for one right-hand side.
    pub fn solve(&self, b: &Array1<f64>) -> Result<Array1<f64>> {
        if b.len() != self.n {
            return Err(Error::Domain(format!(
                "right-hand side length {} does not match system dimension {}",
                b.len(),
                self.n
            )));
        }
        let mut x = vec![0.0f64; self.n];
        for i in 0..self.n {
            x[i] = b[self.perm[i]];
        }
        self.solve_in_place(&mut x);
        Ok(Array1::from_vec(x))
    }

    /// Solves `A X = B` column by column; `B` is `n × m`.
    pub fn solve_columns(&self, b: &Array2<f64>) -> Result<Array2<f64>> {
        if b.nrows() != self.n {
            return Err(Error::Domain(format!(
                "right-hand side has {} rows, system dimension is {}",
                b.nrows(),
                self.n
            )));
        }
        let mut out = Array2::zeros((self.n, b.ncols()));
        let mut col = vec![0.0f64; self.n];
        for j in 0..b.ncols() {
            for i in 0..self.n {
                col[i] = b[[self.perm[i], j]];
            }
            self.solve_in_place(&mut col);
            for i in 0..self.n {
                out[[i, j]] = col[i];
            }
        }
        Ok(out)
    }

    /// Diagonal of `A⁻¹`, by solving one unit vector per column.
    pub fn inverse_diagonal(&self) -> Array1<f64> {
        let mut diag = Array1::zeros(self.n);
        let mut col = vec![0.0f64; self.n];
        for j in 0..self.n {
            col.fill(0.0);
            // Permuted unit vector e_j.
            for i in 0..self.n {
                if self.perm[i] == j {
                    col[i] = 1.0;
                    break;
                }
            }
            self.solve_in_place(&mut col);
            diag[j] = col[j];
        }
        diag
    }

    /// Forward/back substitution on an already permuted right-hand side.
    fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.n;
        let lu = self.lu.as_slice().expect("row-major layout");
        // L y = Pb (unit lower triangle).
        for i in 1..n {
            let row = &lu[i * n..i * n + i];
            let mut acc = 0.0;
            for (j, &l) in row.iter().enumerate() {
                acc += l * x[j];
            }
            x[i] -= acc;
        }
        // U x = y.
        for i in (0..n).rev() {
            let row = &lu[i * n..(i + 1) * n];
            let mut acc = 0.0;
            for j in (i + 1)..n {
                acc += row[j] * x[j];
            }
            x[i] = (x[i] - acc) / row[i];
        }
    }
}

/// Condition estimate for the singular-error path: ratio of largest to
/// smallest pivot seen before elimination step `k` broke down.
fn condition_from_pivots(a: &Array2<f64>, k: usize) -> f64 {
    let mut max_p = 0.0f64;
    for i in 0..k {
        max_p = max_p.max(a[[i, i]].abs());
    }
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    if k == 0 {
        scale / PIVOT_TINY
    } else {
        max_p / (PIVOT_TINY * scale)
    }
}

fn swap_rows(a: &mut Array2<f64>, r1: usize, r2: usize) {
    if r1 == r2 {
        return;
    }
    let n = a.ncols();
    let data = a.as_slice_mut().expect("row-major layout");
    let (lo, hi) = if r1 < r2 { (r1, r2) } else { (r2, r1) };
    let (head, tail) = data.split_at_mut(hi * n);
    head[lo * n..(lo + 1) * n].swap_with_slice(&mut tail[..n]);
}

/// Assembles the bordered training system of a least-squares SVM:
///
/// ```text
/// | K + I/C   1 |
/// | 1ᵀ        0 |
/// ```
///
/// where `K` is the kernel Gram matrix of the training set and `C > 0` the
/// regularization trade-off.
pub fn bordered_system(gram: &Array2<f64>, c: f64) -> Result<Array2<f64>> {
    let n = gram.nrows();
    if gram.ncols() != n {
        return Err(Error::Domain(format!(
            "Gram matrix must be square, got {}x{}",
            gram.nrows(),
            gram.ncols()
        )));
    }
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::Config(format!("regularization C must be positive and finite, got {c}")));
    }
    let mut m = Array2::zeros((n + 1, n + 1));
    let inv_c = 1.0 / c;
    for i in 0..n {
        for j in 0..n {
            m[[i, j]] = gram[[i, j]];
        }
        m[[i, i]] += inv_c;
        m[[i, n]] = 1.0;
        m[[n, i]] = 1.0;
    }
    m[[n, n]] = 0.0;
    Ok(m)
}

/// Residual-checked convenience: solves `A x = b` and verifies
/// `‖A x − b‖∞ ≤ tol · max(‖b‖∞, 1)`, returning a numeric error otherwise.
pub fn solve_checked(a: &Array2<f64>, b: &Array1<f64>, tol: f64) -> Result<Array1<f64>> {
    let factor = LuFactor::new(a.clone())?;
    let x = factor.solve(b)?;
    let mut resid = 0.0f64;
    for i in 0..a.nrows() {
        let mut acc = 0.0;
        for j in 0..a.ncols() {
            acc += a[[i, j]] * x[j];
        }
        resid = resid.max((acc - b[i]).abs());
    }
    let b_scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    if resid > tol * b_scale {
        return Err(Error::Numeric {
            msg: format!("solution residual {resid:.3e} exceeds tolerance {tol:.3e}"),
            condition: Some(factor.pivot_ratio()),
        });
    }
    Ok(x)
}
