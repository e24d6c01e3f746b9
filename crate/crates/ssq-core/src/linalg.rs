//! Dense matrix kernels shared by the regression and variance machinery.
//!
//! Systems here are small (tens of columns), so plain partial-pivot LU with an
//! explicit 1-norm condition estimate is enough. Rank-deficient least squares
//! goes through a pivoted Cholesky of the Gram matrix because stacked design
//! blocks may repeat columns by construction.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Reciprocal condition estimate below this is treated as singular.
pub const RCOND_THRESHOLD: f64 = 1e-12;

/// Relative pivot tolerance for rank detection in least-squares solves.
const RANK_TOL: f64 = 1e-10;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Matrix { rows: r, cols: c, data }
    }

    /// Builds a matrix column-by-column; all columns must share a length.
    pub fn from_cols(cols: &[Vec<f64>]) -> Self {
        let c = cols.len();
        let r = cols.first().map_or(0, Vec::len);
        let mut m = Matrix::zeros(r, c);
        for (j, col) in cols.iter().enumerate() {
            assert_eq!(col.len(), r, "ragged columns");
            for (i, v) in col.iter().enumerate() {
                m.set(i, j, *v);
            }
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    /// Keeps `keep` rows of `self` (by index), preserving order.
    pub fn select_rows(&self, keep: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(keep.len(), self.cols);
        for (r, &i) in keep.iter().enumerate() {
            out.row_mut(r).copy_from_slice(self.row(i));
        }
        out
    }

    /// Horizontal concatenation `[self | other]`.
    pub fn hcat(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "hcat: row mismatch");
        let mut out = Matrix::zeros(self.rows, self.cols + other.cols);
        for i in 0..self.rows {
            out.row_mut(i)[..self.cols].copy_from_slice(self.row(i));
            out.row_mut(i)[self.cols..].copy_from_slice(other.row(i));
        }
        out
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len(), "matvec: dim mismatch");
        self.data
            .chunks_exact(self.cols)
            .map(|row| dot(row, x))
            .collect()
    }

    /// `selfᵀ · x` without forming the transpose.
    pub fn t_matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, x.len(), "t_matvec: dim mismatch");
        let mut out = vec![0.0; self.cols];
        for (row, &xi) in self.data.chunks_exact(self.cols).zip(x) {
            for (o, &r) in out.iter_mut().zip(row) {
                *o += r * xi;
            }
        }
        out
    }

    /// Gram matrix `selfᵀ·self / scale`.
    pub fn gram(&self, scale: f64) -> Matrix {
        let mut g = Matrix::zeros(self.cols, self.cols);
        for row in self.data.chunks_exact(self.cols) {
            for i in 0..self.cols {
                let ri = row[i];
                if ri == 0.0 {
                    continue;
                }
                for j in i..self.cols {
                    g.data[i * self.cols + j] += ri * row[j];
                }
            }
        }
        for i in 0..self.cols {
            for j in 0..i {
                g.data[i * self.cols + j] = g.data[j * self.cols + i];
            }
        }
        for v in &mut g.data {
            *v /= scale;
        }
        g
    }

    /// `selfᵀ · other / scale` (cross-moment matrix).
    pub fn t_mul(&self, other: &Matrix, scale: f64) -> Matrix {
        assert_eq!(self.rows, other.rows, "t_mul: row mismatch");
        let mut out = Matrix::zeros(self.cols, other.cols);
        for i in 0..self.rows {
            let a = self.row(i);
            let b = other.row(i);
            for (p, &av) in a.iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                let orow = &mut out.data[p * other.cols..(p + 1) * other.cols];
                for (o, &bv) in orow.iter_mut().zip(b) {
                    *o += av * bv;
                }
            }
        }
        for v in &mut out.data {
            *v /= scale;
        }
        out
    }

    pub fn scale_rows(&self, w: &[f64]) -> Matrix {
        assert_eq!(self.rows, w.len());
        let mut out = self.clone();
        for (i, &wi) in w.iter().enumerate() {
            for v in out.row_mut(i) {
                *v *= wi;
            }
        }
        out
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.rows != self.cols {
            return false;
        }
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                if (self.get(i, j) - self.get(j, i)).abs() > tol {
                    return false;
                }
            }
        }
        true
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).collect()
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

struct Lu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

fn lu_decompose(a: &Matrix) -> Option<Lu> {
    let n = a.rows();
    let mut lu = a.data.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let mut p = k;
        let mut best = lu[k * n + k].abs();
        for i in (k + 1)..n {
            let v = lu[i * n + k].abs();
            if v > best {
                best = v;
                p = i;
            }
        }
        if best == 0.0 {
            return None;
        }
        if p != k {
            for j in 0..n {
                lu.swap(k * n + j, p * n + j);
            }
            perm.swap(k, p);
        }
        let pivot = lu[k * n + k];
        for i in (k + 1)..n {
            let f = lu[i * n + k] / pivot;
            lu[i * n + k] = f;
            for j in (k + 1)..n {
                lu[i * n + j] -= f * lu[k * n + j];
            }
        }
    }
    Some(Lu { n, lu, perm })
}

impl Lu {
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 1..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lu[i * n + j] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in (i + 1)..n {
                s -= self.lu[i * n + j] * x[j];
            }
            x[i] = s / self.lu[i * n + i];
        }
        x
    }
}

fn norm1(a: &Matrix) -> f64 {
    let mut best: f64 = 0.0;
    for j in 0..a.cols() {
        let s: f64 = (0..a.rows()).map(|i| a.get(i, j).abs()).sum();
        best = best.max(s);
    }
    best
}

/// Solves `A x = b` with partial-pivot LU.
///
/// Errors with a [`Error::SingularSystem`] naming `context` when the matrix is
/// exactly singular or the reciprocal 1-norm condition estimate falls below
/// [`RCOND_THRESHOLD`]. The inverse norm is computed exactly by back-solving
/// for each unit vector; systems here are small enough that this is cheap.
pub fn solve_linear(a: &Matrix, b: &[f64], context: &str) -> Result<Vec<f64>> {
    assert_eq!(a.rows(), a.cols(), "solve_linear: matrix not square");
    assert_eq!(a.rows(), b.len(), "solve_linear: rhs length mismatch");
    if a.rows() == 0 {
        return Ok(Vec::new());
    }
    let lu = lu_decompose(a).ok_or_else(|| Error::SingularSystem {
        context: String::from(context),
        rcond: 0.0,
    })?;
    let n = a.rows();
    let mut inv_norm: f64 = 0.0;
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        let col = lu.solve(&e);
        e[j] = 0.0;
        let s: f64 = col.iter().map(|v| v.abs()).sum();
        inv_norm = inv_norm.max(s);
    }
    let rcond = 1.0 / (norm1(a) * inv_norm);
    if !rcond.is_finite() || rcond < RCOND_THRESHOLD {
        return Err(Error::SingularSystem { context: String::from(context), rcond });
    }
    Ok(lu.solve(b))
}

/// Solves `A X = B` column-by-column under the same conditioning checks.
pub fn solve_matrix(a: &Matrix, b: &Matrix, context: &str) -> Result<Matrix> {
    let mut out = Matrix::zeros(b.rows(), b.cols());
    for j in 0..b.cols() {
        let col = solve_linear(a, &b.column(j), context)?;
        for (i, v) in col.iter().enumerate() {
            out.set(i, j, *v);
        }
    }
    Ok(out)
}

/// Minimum-rank least squares `argmin ‖D c − y‖` via pivoted Cholesky on the
/// Gram matrix. Columns that are (numerically) linear combinations of already
/// pivoted ones get a zero coefficient, so fitted values are the unique
/// projection even when the design repeats columns.
pub fn solve_least_squares(design: &Matrix, y: &[f64], context: &str) -> Result<Vec<f64>> {
    assert_eq!(design.rows(), y.len(), "solve_least_squares: length mismatch");
    let p = design.cols();
    let g = design.gram(1.0);
    let c = design.t_matvec(y);
    let max_diag = g.diag().into_iter().fold(0.0_f64, f64::max);
    if p == 0 || max_diag <= 0.0 {
        return Err(Error::SingularSystem { context: String::from(context), rcond: 0.0 });
    }

    // Pivoted Cholesky: G[perm, perm] = L Lᵀ truncated at rank r.
    let mut gw = g.clone();
    let mut perm: Vec<usize> = (0..p).collect();
    let tol = RANK_TOL * max_diag;
    let mut rank = p;
    for k in 0..p {
        let (mut best_j, mut best) = (k, gw.get(k, k));
        for j in (k + 1)..p {
            if gw.get(j, j) > best {
                best = gw.get(j, j);
                best_j = j;
            }
        }
        if best <= tol {
            rank = k;
            break;
        }
        if best_j != k {
            perm.swap(k, best_j);
            for i in 0..p {
                let a = gw.get(i, k);
                let b = gw.get(i, best_j);
                gw.set(i, k, b);
                gw.set(i, best_j, a);
            }
            for j in 0..p {
                let a = gw.get(k, j);
                let b = gw.get(best_j, j);
                gw.set(k, j, b);
                gw.set(best_j, j, a);
            }
        }
        let piv = libm::sqrt(gw.get(k, k));
        gw.set(k, k, piv);
        for i in (k + 1)..p {
            gw.set(i, k, gw.get(i, k) / piv);
        }
        for j in (k + 1)..p {
            let ljk = gw.get(j, k);
            for i in j..p {
                let v = gw.get(i, j) - gw.get(i, k) * ljk;
                gw.set(i, j, v);
            }
        }
    }
    if rank == 0 {
        return Err(Error::SingularSystem { context: String::from(context), rcond: 0.0 });
    }

    // Solve L Lᵀ z = c[perm[..rank]] on the pivoted subset.
    let mut z: Vec<f64> = (0..rank).map(|i| c[perm[i]]).collect();
    for i in 0..rank {
        let mut s = z[i];
        for j in 0..i {
            s -= gw.get(i, j) * z[j];
        }
        z[i] = s / gw.get(i, i);
    }
    for i in (0..rank).rev() {
        let mut s = z[i];
        for j in (i + 1)..rank {
            s -= gw.get(j, i) * z[j];
        }
        z[i] = s / gw.get(i, i);
    }
    let mut coef = vec![0.0; p];
    for i in 0..rank {
        coef[perm[i]] = z[i];
    }
    Ok(coef)
}

/// Convenience: ‖A x − b‖∞ used by residual checks.
pub fn residual_inf_norm(a: &Matrix, x: &[f64], b: &[f64]) -> f64 {
    a.matvec(x)
        .iter()
        .zip(b)
        .map(|(ax, bi)| (ax - bi).abs())
        .fold(0.0, f64::max)
}

pub fn format_dims(m: &Matrix) -> String {
    format!("{}x{}", m.rows(), m.cols())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::Rng;

    // Independent oracle: plain Gaussian elimination without pivot logic reuse.
    fn gauss_eliminate(a: &Matrix, b: &[f64]) -> Vec<f64> {
        let n = a.rows();
        let mut m = a.clone();
        let mut rhs = b.to_vec();
        for k in 0..n {
            let mut p = k;
            for i in (k + 1)..n {
                if m.get(i, k).abs() > m.get(p, k).abs() {
                    p = i;
                }
            }
            for j in 0..n {
                let t = m.get(k, j);
                m.set(k, j, m.get(p, j));
                m.set(p, j, t);
            }
            rhs.swap(k, p);
            for i in (k + 1)..n {
                let f = m.get(i, k) / m.get(k, k);
                for j in k..n {
                    let v = m.get(i, j) - f * m.get(k, j);
                    m.set(i, j, v);
                }
                rhs[i] -= f * rhs[k];
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = rhs[i];
            for j in (i + 1)..n {
                s -= m.get(i, j) * x[j];
            }
            x[i] = s / m.get(i, i);
        }
        x
    }

    #[test]
    fn identity_solve() {
        let a = Matrix::identity(2);
        let x = solve_linear(&a, &[3.0, -1.0], "test").unwrap();
        assert_eq!(x, vec![3.0, -1.0]);
    }

    #[test]
    fn diagonal_solve() {
        let a = Matrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 4.0]]);
        let x = solve_linear(&a, &[2.0, 8.0], "test").unwrap();
        assert_eq!(x, vec![1.0, 2.0]);
    }

    #[test]
    fn random_system_matches_elimination_oracle() {
        let mut rng = Rng::stream(031_337, 0);
        for _ in 0..20 {
            let n = 5;
            let mut a = Matrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    a.set(i, j, rng.standard_normal());
                }
                // diagonal dominance keeps the draw well conditioned
                a.set(i, i, a.get(i, i) + 4.0);
            }
            let b: Vec<f64> = (0..n).map(|_| rng.standard_normal()).collect();
            let x = solve_linear(&a, &b, "test").unwrap();
            let x_oracle = gauss_eliminate(&a, &b);
            for (u, v) in x.iter().zip(&x_oracle) {
                assert!((u - v).abs() < 1e-10, "{u} vs {v}");
            }
        }
    }

    #[test]
    fn singular_matrix_rejected() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]);
        let err = solve_linear(&a, &[1.0, 2.0], "gram of x").unwrap_err();
        let msg = alloc::format!("{err}");
        assert!(msg.contains("gram of x"), "{msg}");
    }

    #[test]
    fn least_squares_handles_duplicated_columns() {
        // [1 | x | x] — second copy must not break the projection.
        let x = vec![0.5, 1.5, -0.3, 2.0, 0.9];
        let ones = vec![1.0; 5];
        let d = Matrix::from_cols(&[ones.clone(), x.clone(), x.clone()]);
        let y: Vec<f64> = x.iter().map(|v| 2.0 + 3.0 * v).collect();
        let c = solve_least_squares(&d, &y, "test").unwrap();
        let fitted = d.matvec(&c);
        for (f, t) in fitted.iter().zip(&y) {
            assert!((f - t).abs() < 1e-9);
        }
        // residuals orthogonal to every column, including the duplicate
        let resid: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
        let m = d.t_matvec(&resid);
        for v in m {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn least_squares_matches_strict_solve_when_full_rank() {
        let mut rng = Rng::stream(7, 1);
        let n = 40;
        let p = 4;
        let mut d = Matrix::zeros(n, p);
        for i in 0..n {
            d.set(i, 0, 1.0);
            for j in 1..p {
                d.set(i, j, rng.standard_normal());
            }
        }
        let y: Vec<f64> = (0..n).map(|_| rng.standard_normal()).collect();
        let via_ls = solve_least_squares(&d, &y, "test").unwrap();
        let via_ne = solve_linear(&d.gram(1.0), &d.t_matvec(&y), "test").unwrap();
        for (a, b) in via_ls.iter().zip(&via_ne) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
