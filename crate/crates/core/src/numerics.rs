//! Dense linear algebra on row-major `f64` matrices.
//!
//! Only what the GP layers need: a small [`Matrix`] type, GEMM (backed by
//! `matrixmultiply`), Cholesky with escalating diagonal jitter, triangular
//! solves, log-determinants and a Jacobi eigensolver for small symmetric
//! matrices (PCA).

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Number of factorization attempts before giving up.
pub const JITTER_ATTEMPTS: usize = 6;
/// Multiplier applied to the jitter after each failed attempt.
pub const JITTER_GROWTH: f64 = 10.0;
/// Relative base jitter used by the model layers (times the mean diagonal).
pub const DEFAULT_RELATIVE_JITTER: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    /// Fills entries in row-major order from `f(row, col)`.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::dims(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from nested rows. Panics on ragged input; intended for
    /// literals in tests and examples.
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

    pub fn column(values: &[f64]) -> Self {
        Matrix {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn row_vector(values: &[f64]) -> Self {
        Matrix {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
    }

    pub fn scalar(value: f64) -> Self {
        Matrix {
            rows: 1,
            cols: 1,
            data: vec![value],
        }
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = *v;
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
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    /// Scalar value of a 1×1 matrix.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
        debug_assert_eq!(self.shape(), other.shape());
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|v| v * s)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(idx.len(), self.cols);
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).copy_from_slice(self.row(i));
        }
        out
    }

    pub fn select_cols(&self, start: usize, end: usize) -> Matrix {
        let mut out = Matrix::zeros(self.rows, end - start);
        for i in 0..self.rows {
            out.row_mut(i).copy_from_slice(&self.row(i)[start..end]);
        }
        out
    }

    pub fn hcat(parts: &[&Matrix]) -> Result<Matrix> {
        let rows = parts.first().map_or(0, |p| p.rows);
        if parts.iter().any(|p| p.rows != rows) {
            return Err(Error::dims("hcat: row counts differ"));
        }
        let cols = parts.iter().map(|p| p.cols).sum();
        let mut out = Matrix::zeros(rows, cols);
        for i in 0..rows {
            let mut offset = 0;
            for p in parts {
                out.row_mut(i)[offset..offset + p.cols].copy_from_slice(p.row(i));
                offset += p.cols;
            }
        }
        Ok(out)
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        gemm(self, false, other, false)
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// `op(a) · op(b)` where `op` optionally transposes.
pub fn gemm(a: &Matrix, ta: bool, b: &Matrix, tb: bool) -> Result<Matrix> {
    let (m, k) = if ta { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (k2, n) = if tb { (b.cols, b.rows) } else { (b.rows, b.cols) };
    if k != k2 {
        return Err(Error::dims(format!(
            "gemm: inner dimensions {k} and {k2} differ"
        )));
    }
    let mut c = Matrix::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return Ok(c);
    }
    let (rsa, csa) = if ta { (1, a.cols as isize) } else { (a.cols as isize, 1) };
    let (rsb, csb) = if tb { (1, b.cols as isize) } else { (b.cols as isize, 1) };
    // SAFETY: strides describe the owned buffers exactly; c is m×n row-major.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            0.0,
            c.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    Ok(c)
}

/// Lower Cholesky factor of `A + jitter_used·I`.
#[derive(Clone, Debug, PartialEq)]
pub struct CholFactor {
    pub lower: Matrix,
    pub jitter_used: f64,
}

impl CholFactor {
    pub fn dim(&self) -> usize {
        self.lower.rows
    }

    /// Reconstructs `lower · lowerᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        gemm(&self.lower, false, &self.lower, true).expect("square factor")
    }
}

fn relative_asymmetry(a: &Matrix) -> f64 {
    let n = a.rows;
    let mut num = 0.0f64;
    let mut scale = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            num = num.max((a[(i, j)] - a[(j, i)]).abs());
            scale = scale.max(a[(i, j)].abs());
        }
    }
    if scale == 0.0 {
        0.0
    } else {
        num / scale
    }
}

/// Plain Cholesky of `a + jitter·I`; `None` on a non-positive pivot.
fn try_cholesky(a: &Matrix, jitter: f64) -> Option<Matrix> {
    let n = a.rows;
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)] + jitter;
        let lj = &l.data[j * n..j * n + j];
        d -= lj.iter().map(|v| v * v).sum::<f64>();
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        l.data[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            let (head, tail) = l.data.split_at(i * n);
            let li = &tail[..j];
            let lj = &head[j * n..j * n + j];
            s -= li.iter().zip(lj).map(|(x, y)| x * y).sum::<f64>();
            l.data[i * n + j] = s / d;
        }
    }
    Some(l)
}

/// Cholesky factorization with escalating diagonal jitter.
///
/// The first attempt adds `base_jitter`; each failure multiplies it by
/// [`JITTER_GROWTH`], for at most [`JITTER_ATTEMPTS`] attempts. A zero base
/// escalates from `1e-6 × mean diagonal` after the first failure.
pub fn cholesky_jitter(a: &Matrix, base_jitter: f64) -> Result<CholFactor> {
    if a.rows != a.cols {
        return Err(Error::dims(format!(
            "cholesky: matrix is {}x{}, not square",
            a.rows, a.cols
        )));
    }
    if !a.is_finite() {
        return Err(Error::FactorizationFailure {
            attempts: 0,
            last_jitter: base_jitter,
        });
    }
    let asym = relative_asymmetry(a);
    if asym > 1e-8 {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    let mut jitter = base_jitter.max(0.0);
    for attempt in 0..JITTER_ATTEMPTS {
        if let Some(lower) = try_cholesky(a, jitter) {
            return Ok(CholFactor {
                lower,
                jitter_used: jitter,
            });
        }
        if attempt + 1 == JITTER_ATTEMPTS {
            break;
        }
        jitter = if jitter == 0.0 {
            let n = a.rows.max(1) as f64;
            let mean_diag = a.diagonal().iter().map(|v| v.abs()).sum::<f64>() / n;
            DEFAULT_RELATIVE_JITTER * mean_diag.max(f64::MIN_POSITIVE)
        } else {
            jitter * JITTER_GROWTH
        };
    }
    Err(Error::FactorizationFailure {
        attempts: JITTER_ATTEMPTS,
        last_jitter: jitter,
    })
}

/// Base jitter used by model layers: `1e-6 ×` the mean diagonal of `a`.
pub fn default_jitter(a: &Matrix) -> f64 {
    let n = a.rows.max(1) as f64;
    DEFAULT_RELATIVE_JITTER * a.diagonal().iter().map(|v| v.abs()).sum::<f64>() / n
}

/// Solves `L·X = B`, or `Lᵀ·X = B` when `transposed`.
pub fn tri_solve(l: &CholFactor, b: &Matrix, transposed: bool) -> Result<Matrix> {
    solve_lower(&l.lower, b, transposed)
}

/// Triangular solve against a raw lower-triangular matrix.
pub fn solve_lower(l: &Matrix, b: &Matrix, transposed: bool) -> Result<Matrix> {
    let n = l.rows;
    if l.cols != n || b.rows != n {
        return Err(Error::dims(format!(
            "tri_solve: factor is {}x{}, right-hand side has {} rows",
            l.rows, l.cols, b.rows
        )));
    }
    let k = b.cols;
    let mut x = b.clone();
    if !transposed {
        for i in 0..n {
            let (done, rest) = x.data.split_at_mut(i * k);
            let xi = &mut rest[..k];
            for p in 0..i {
                let lip = l.data[i * n + p];
                if lip != 0.0 {
                    let xp = &done[p * k..(p + 1) * k];
                    for (a, b) in xi.iter_mut().zip(xp) {
                        *a -= lip * b;
                    }
                }
            }
            let d = l.data[i * n + i];
            for a in xi.iter_mut() {
                *a /= d;
            }
        }
    } else {
        for i in (0..n).rev() {
            let (head, done) = x.data.split_at_mut((i + 1) * k);
            let xi = &mut head[i * k..];
            for p in i + 1..n {
                let lpi = l.data[p * n + i];
                if lpi != 0.0 {
                    let xp = &done[(p - i - 1) * k..(p - i) * k];
                    for (a, b) in xi.iter_mut().zip(xp) {
                        *a -= lpi * b;
                    }
                }
            }
            let d = l.data[i * n + i];
            for a in xi.iter_mut() {
                *a /= d;
            }
        }
    }
    Ok(x)
}

/// `A⁻¹ B` given the factor of `A`.
pub fn chol_solve(l: &CholFactor, b: &Matrix) -> Result<Matrix> {
    let y = tri_solve(l, b, false)?;
    tri_solve(l, &y, true)
}

/// Log-determinant of the factored matrix: `2 Σ ln Lᵢᵢ`.
pub fn logdet_chol(l: &CholFactor) -> f64 {
    2.0 * l.lower.diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Eigen-decomposition of a small symmetric matrix by cyclic Jacobi
/// rotations. Returns eigenvalues in descending order and the matching
/// eigenvectors as columns.
pub fn symmetric_eigen(a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let n = a.rows;
    if a.cols != n {
        return Err(Error::dims("symmetric_eigen: matrix not square"));
    }
    let mut m = a.clone();
    let mut v = Matrix::identity(n);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (new, &old) in order.iter().enumerate() {
        for k in 0..n {
            vectors[(k, new)] = v[(k, old)];
        }
    }
    Ok((values, vectors))
}
