//! Dense row-major `f64` matrices and vectors, plus the three softmax
//! variants used by the attention and prediction stages.
//!
//! Everything here is immutable after construction and every operation is a
//! pure function, so values can be shared freely across threads. With the
//! `parallel` feature (default) the larger kernels run on rayon; results are
//! bit-identical to the sequential fallback because each output row is
//! computed independently and combined in a fixed order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum estimated flop count before an operation is worth splitting
/// across threads; coarse crossover measured with the `parallelism`
/// bench suite.
#[cfg(feature = "parallel")]
pub(crate) const PAR_MIN_FLOPS: usize = 1 << 21;

/// Dense matrix, row-major, all entries finite.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major data. Rejects empty shapes, length
    /// mismatches and non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        let m = Matrix { rows, cols, data };
        m.check_finite("matrix construction")?;
        Ok(m)
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Shape("matrix needs at least one row".into()));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("matrix rows have unequal lengths".into()));
        }
        Matrix::new(rows.len(), cols, rows.into_iter().flatten().collect())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "zero-sized matrix");
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Fills a matrix by calling `f(row, col)`; the caller guarantees `f`
    /// yields finite values.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(rows > 0 && cols > 0, "zero-sized matrix");
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        assert!(i < self.rows && j < self.cols, "index out of bounds");
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.cols)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.iter_rows().map(|r| r.to_vec()).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// Standard matrix product `self * rhs`.
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs_rows: self.rows,
                lhs_cols: self.cols,
                rhs_rows: rhs.rows,
                rhs_cols: rhs.cols,
            });
        }
        let out = matmul_dispatch(self, rhs);
        out.check_finite("matmul result")?;
        Ok(out)
    }

    /// Elementwise sum; shapes must match.
    pub fn add(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.rows != rhs.rows || self.cols != rhs.cols {
            return Err(Error::ShapeMismatch {
                op: "add",
                lhs_rows: self.rows,
                lhs_cols: self.cols,
                rhs_rows: rhs.rows,
                rhs_cols: rhs.cols,
            });
        }
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(a, b)| a + b)
            .collect();
        let out = Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        };
        out.check_finite("add result")?;
        Ok(out)
    }

    /// Multiplies every entry by `factor`.
    pub fn scale(&self, factor: f64) -> Result<Matrix> {
        let out = Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * factor).collect(),
        };
        out.check_finite("scale result")?;
        Ok(out)
    }

    /// First `n` rows as a new matrix.
    pub fn top_rows(&self, n: usize) -> Matrix {
        assert!(n >= 1 && n <= self.rows, "row slice out of bounds");
        Matrix {
            rows: n,
            cols: self.cols,
            data: self.data[..n * self.cols].to_vec(),
        }
    }

    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Matrix {
        debug_assert_eq!(data.len(), rows * cols);
        Matrix { rows, cols, data }
    }

    pub(crate) fn check_finite(&self, context: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite {
                context: context.to_string(),
            })
        }
    }
}

/// Dense vector, all entries finite.
#[derive(Clone, Debug, PartialEq)]
pub struct Vector {
    data: Vec<f64>,
}

impl Vector {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "vector construction".into(),
            });
        }
        Ok(Vector { data })
    }

    pub fn zeros(len: usize) -> Self {
        Vector {
            data: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.data[i]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Multiplies every entry by `factor`.
    pub fn scale(&self, factor: f64) -> Result<Vector> {
        Vector::new(self.data.iter().map(|v| v * factor).collect())
    }

    pub(crate) fn from_raw(data: Vec<f64>) -> Vector {
        Vector { data }
    }
}

impl From<Vector> for Vec<f64> {
    fn from(v: Vector) -> Vec<f64> {
        v.data
    }
}

/// Normalization scheme for the masked softmax.
///
/// `PaperGlobal` divides every unmasked exponential by the sum over all
/// unmasked positions of the whole matrix; `RowWise` normalizes each row
/// over its own unmasked prefix, which is the conventional attention
/// softmax. `PaperGlobal` is the default everywhere.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SoftmaxMode {
    #[serde(rename = "paper")]
    PaperGlobal,
    #[serde(rename = "rowwise")]
    RowWise,
}

impl std::fmt::Display for SoftmaxMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SoftmaxMode::PaperGlobal => write!(f, "paper"),
            SoftmaxMode::RowWise => write!(f, "rowwise"),
        }
    }
}

impl std::str::FromStr for SoftmaxMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(SoftmaxMode::PaperGlobal),
            "rowwise" => Ok(SoftmaxMode::RowWise),
            other => Err(Error::Config(format!(
                "unknown softmax mode {other:?} (expected \"paper\" or \"rowwise\")"
            ))),
        }
    }
}

/// Softmax over all entries of a matrix: every output entry is
/// `exp(a_ij)` divided by the sum of `exp` over the whole matrix.
pub fn softmax_matrix(a: &Matrix) -> Matrix {
    let mx = a.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = a.data.iter().map(|v| (v - mx).exp()).collect();
    let denom: f64 = exps.iter().sum();
    Matrix::from_raw(a.rows, a.cols, exps.iter().map(|e| e / denom).collect())
}

/// Masked softmax: entries above the diagonal (`i < j`) are exactly zero.
///
/// Masking is implemented by excluding the masked positions from the
/// exponential sums, not by adding `-inf` scores; subtracting the maximum
/// unmasked entry first keeps the exponentials in range without changing
/// the result.
pub fn masked_softmax(a: &Matrix, mode: SoftmaxMode) -> Result<Matrix> {
    if a.rows != a.cols {
        return Err(Error::Shape(format!(
            "masked softmax requires a square matrix, got {}x{}",
            a.rows, a.cols
        )));
    }
    let n = a.rows;
    let mut out = vec![0.0; n * n];
    match mode {
        SoftmaxMode::PaperGlobal => {
            let mut mx = f64::NEG_INFINITY;
            for i in 0..n {
                for j in 0..=i {
                    mx = mx.max(a.data[i * n + j]);
                }
            }
            let mut denom = 0.0;
            for i in 0..n {
                for j in 0..=i {
                    denom += (a.data[i * n + j] - mx).exp();
                }
            }
            for i in 0..n {
                for j in 0..=i {
                    out[i * n + j] = (a.data[i * n + j] - mx).exp() / denom;
                }
            }
        }
        SoftmaxMode::RowWise => {
            for i in 0..n {
                let row = &a.data[i * n..i * n + i + 1];
                let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let denom: f64 = row.iter().map(|v| (v - mx).exp()).sum();
                for j in 0..=i {
                    out[i * n + j] = (a.data[i * n + j] - mx).exp() / denom;
                }
            }
        }
    }
    Ok(Matrix::from_raw(n, n, out))
}

/// Softmax of a vector; the entries sum to one.
pub fn softmax_vector(x: &Vector) -> Result<Vector> {
    if x.is_empty() {
        return Err(Error::Domain("softmax of an empty vector".into()));
    }
    let mx = x.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.data.iter().map(|v| (v - mx).exp()).collect();
    let denom: f64 = exps.iter().sum();
    Ok(Vector::from_raw(exps.iter().map(|e| e / denom).collect()))
}

fn matmul_row(a_row: &[f64], b: &Matrix, out: &mut [f64]) {
    for (k, &aik) in a_row.iter().enumerate() {
        let b_row = b.row(k);
        for (o, &bkj) in out.iter_mut().zip(b_row) {
            *o += aik * bkj;
        }
    }
}

pub(crate) fn matmul_seq_impl(a: &Matrix, b: &Matrix) -> Matrix {
    debug_assert_eq!(a.cols, b.rows);
    let mut data = vec![0.0; a.rows * b.cols];
    for (i, out_row) in data.chunks_mut(b.cols).enumerate() {
        matmul_row(a.row(i), b, out_row);
    }
    Matrix::from_raw(a.rows, b.cols, data)
}

#[cfg(feature = "parallel")]
pub(crate) fn matmul_par_impl(a: &Matrix, b: &Matrix) -> Matrix {
    use rayon::prelude::*;
    debug_assert_eq!(a.cols, b.rows);
    let mut data = vec![0.0; a.rows * b.cols];
    data.par_chunks_mut(b.cols)
        .enumerate()
        .for_each(|(i, out_row)| matmul_row(a.row(i), b, out_row));
    Matrix::from_raw(a.rows, b.cols, data)
}

fn matmul_dispatch(a: &Matrix, b: &Matrix) -> Matrix {
    #[cfg(feature = "parallel")]
    {
        if a.rows * a.cols * b.cols >= PAR_MIN_FLOPS {
            return matmul_par_impl(a, b);
        }
    }
    matmul_seq_impl(a, b)
}
