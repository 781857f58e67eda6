//! Dense row-major matrices, the column softmax and ReLU used by the
//! Transformer block, column permutations, and a central-difference gradient
//! oracle.
//!
//! Everything here is 64-bit floating point and allocation-per-result; the
//! sizes in this crate are tiny and reproducibility matters more than speed.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("matrix dimensions must be positive, got {rows}x{cols}")]
    EmptyShape { rows: usize, cols: usize },
    #[error("expected {expected} entries for the shape, got {actual}")]
    EntryCount { expected: usize, actual: usize },
    #[error("non-finite entry {value} at ({row}, {col})")]
    NonFinite { row: usize, col: usize, value: f64 },
    #[error("mapping is not a bijection on 0..{size}")]
    NotAPermutation { size: usize },
    #[error("non-finite function value while perturbing coordinate {coordinate}")]
    NonFiniteEvaluation { coordinate: usize },
    #[error("finite-difference step must be positive and finite, got {0}")]
    BadStep(f64),
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, NumericError>;

/// A dense real matrix stored row-major.
///
/// Construction through [`Matrix::new`] enforces positive dimensions and
/// finite entries. Results of arithmetic on finite inputs are not re-checked;
/// use [`Matrix::is_finite`] where overflow is a concern.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(NumericError::EmptyShape { rows, cols });
        }
        if data.len() != rows * cols {
            return Err(NumericError::EntryCount {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        if let Some(k) = data.iter().position(|v| !v.is_finite()) {
            return Err(NumericError::NonFinite {
                row: k / cols,
                col: k % cols,
                value: data[k],
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|row| row.len() != c) {
            return Err(NumericError::EntryCount {
                expected: c,
                actual: bad.len(),
            });
        }
        Self::new(r, c, rows.concat())
    }

    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_fn(rows, cols, |_, _| 0.0)
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(NumericError::ShapeMismatch {
                op: "add",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Matrix::from_raw(self.rows, self.cols, data))
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(NumericError::ShapeMismatch {
                op: "sub",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Matrix::from_raw(self.rows, self.cols, data))
    }

    pub fn scale(&self, k: f64) -> Matrix {
        Matrix::from_raw(self.rows, self.cols, self.data.iter().map(|v| v * k).collect())
    }

    /// Adds `bias[i]` to every entry of row `i` (the `b 1ᵀ` broadcast).
    pub fn add_row_bias(&self, bias: &[f64]) -> Result<Matrix> {
        if bias.len() != self.rows {
            return Err(NumericError::ShapeMismatch {
                op: "add_row_bias",
                left: self.shape(),
                right: (bias.len(), 1),
            });
        }
        Ok(Matrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j) + bias[i]))
    }

    /// Largest absolute entry of `self - other`.
    pub fn max_abs_diff(&self, other: &Matrix) -> Result<f64> {
        Ok(self
            .sub(other)?
            .data
            .iter()
            .fold(0.0_f64, |m, v| m.max(v.abs())))
    }

    /// Parses the text form written by [`fmt::Display`].
    pub fn parse_lines<'a>(lines: &mut impl Iterator<Item = (usize, &'a str)>) -> Result<Matrix> {
        let (line_no, header) = lines.next().ok_or(NumericError::Parse {
            line: 0,
            message: "missing matrix header".into(),
        })?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| NumericError::Parse {
                line: line_no,
                message: format!("bad matrix header {header:?}: {e}"),
            })?;
        let [rows, cols] = dims[..] else {
            return Err(NumericError::Parse {
                line: line_no,
                message: format!("matrix header needs `rows cols`, got {header:?}"),
            });
        };
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (line_no, row) = lines.next().ok_or(NumericError::Parse {
                line: line_no,
                message: "truncated matrix".into(),
            })?;
            let before = data.len();
            for tok in row.split_whitespace() {
                data.push(tok.parse::<f64>().map_err(|e| NumericError::Parse {
                    line: line_no,
                    message: format!("bad number {tok:?}: {e}"),
                })?);
            }
            if data.len() - before != cols {
                return Err(NumericError::Parse {
                    line: line_no,
                    message: format!("expected {cols} entries, got {}", data.len() - before),
                });
            }
        }
        Matrix::new(rows, cols, data)
    }
}

impl fmt::Display for Matrix {
    /// `rows cols` header, then one row per line. `f64`'s `Display` is the
    /// shortest representation that round-trips, so the text form is exact.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} {}", self.rows, self.cols)?;
        for i in 0..self.rows {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(f, "{}", line.join(" "))?;
        }
        Ok(())
    }
}

impl FromStr for Matrix {
    type Err = NumericError;

    fn from_str(s: &str) -> Result<Self> {
        let mut lines = s
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        Matrix::parse_lines(&mut lines)
    }
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(NumericError::ShapeMismatch {
            op: "matmul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut data = vec![0.0; a.rows * b.cols];
    for i in 0..a.rows {
        let out = &mut data[i * b.cols..(i + 1) * b.cols];
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            if aik == 0.0 {
                continue;
            }
            let brow = &b.data[k * b.cols..(k + 1) * b.cols];
            for (o, bkj) in out.iter_mut().zip(brow) {
                *o += aik * bkj;
            }
        }
    }
    Ok(Matrix::from_raw(a.rows, b.cols, data))
}

/// Column-wise softmax with max subtraction.
pub fn softmax_columns(s: &Matrix) -> Matrix {
    let mut out = s.clone();
    for j in 0..s.cols {
        let max = (0..s.rows).map(|i| s.get(i, j)).fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for i in 0..s.rows {
            let e = (s.get(i, j) - max).exp();
            out.data[i * s.cols + j] = e;
            total += e;
        }
        for i in 0..s.rows {
            out.data[i * s.cols + j] /= total;
        }
    }
    out
}

pub fn relu(m: &Matrix) -> Matrix {
    Matrix::from_raw(m.rows, m.cols, m.data.iter().map(|v| v.max(0.0)).collect())
}

/// A bijection on `0..n`, acting on matrices as right multiplication by the
/// permutation matrix `P` with `P[p(j), j] = 1`. Column `j` of `XP` is
/// column `p(j)` of `X`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    map: Vec<usize>,
}

impl Permutation {
    pub fn new(map: Vec<usize>) -> Result<Self> {
        let n = map.len();
        let mut seen = vec![false; n];
        for &m in &map {
            if m >= n || std::mem::replace(&mut seen[m], true) {
                return Err(NumericError::NotAPermutation { size: n });
            }
        }
        if n == 0 {
            return Err(NumericError::NotAPermutation { size: 0 });
        }
        Ok(Self { map })
    }

    pub fn identity(n: usize) -> Self {
        Self { map: (0..n).collect() }
    }

    /// The cycle `0 → 1 → … → n-1 → 0`.
    pub fn cycle(n: usize) -> Self {
        Self {
            map: (0..n).map(|i| (i + 1) % n).collect(),
        }
    }

    pub fn random(n: usize, rng: &mut impl rand::Rng) -> Self {
        use rand::seq::SliceRandom;
        let mut map: Vec<usize> = (0..n).collect();
        map.shuffle(rng);
        Self { map }
    }

    pub fn size(&self) -> usize {
        self.map.len()
    }

    pub fn apply(&self, j: usize) -> usize {
        self.map[j]
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.map.len()];
        for (j, &m) in self.map.iter().enumerate() {
            inv[m] = j;
        }
        Self { map: inv }
    }

    /// The 0/1 matrix `P`.
    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_fn(self.size(), self.size(), |i, j| {
            if self.map[j] == i {
                1.0
            } else {
                0.0
            }
        })
    }
}

/// Computes `XP`.
pub fn apply_permutation(x: &Matrix, p: &Permutation) -> Result<Matrix> {
    if x.cols != p.size() {
        return Err(NumericError::ShapeMismatch {
            op: "apply_permutation",
            left: x.shape(),
            right: (p.size(), p.size()),
        });
    }
    Ok(Matrix::from_fn(x.rows, x.cols, |i, j| x.get(i, p.map[j])))
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn finite_difference_gradient(
    f: impl Fn(&[f64]) -> f64,
    at: &[f64],
    step: f64,
) -> Result<Vec<f64>> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(NumericError::BadStep(step));
    }
    let mut x = at.to_vec();
    let mut grad = Vec::with_capacity(at.len());
    for i in 0..at.len() {
        x[i] = at[i] + step;
        let plus = f(&x);
        x[i] = at[i] - step;
        let minus = f(&x);
        x[i] = at[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(NumericError::NonFiniteEvaluation { coordinate: i });
        }
        grad.push((plus - minus) / (2.0 * step));
    }
    Ok(grad)
}

/// Central-difference Jacobian of a vector-valued map, returned row-major
/// as `out_dim × at.len()`.
pub fn finite_difference_jacobian(
    f: impl Fn(&[f64]) -> Vec<f64>,
    at: &[f64],
    step: f64,
) -> Result<(usize, Vec<f64>)> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(NumericError::BadStep(step));
    }
    let out_dim = f(at).len();
    let n = at.len();
    let mut jac = vec![0.0; out_dim * n];
    let mut x = at.to_vec();
    for i in 0..n {
        x[i] = at[i] + step;
        let plus = f(&x);
        x[i] = at[i] - step;
        let minus = f(&x);
        x[i] = at[i];
        for r in 0..out_dim {
            let d = (plus[r] - minus[r]) / (2.0 * step);
            if !d.is_finite() {
                return Err(NumericError::NonFiniteEvaluation { coordinate: i });
            }
            jac[r * n + i] = d;
        }
    }
    Ok((out_dim, jac))
}
