//! Semiseparable-matrix primitives.
//!
//! Indices are zero-based throughout: row/column `t` here is row/column
//! `t + 1` in the usual mathematical notation.
//!
//! Semiseparable rank is computed from the `T` maximal blocks `M[t.., ..=t]`.
//! Any submatrix taken on or below the diagonal has column set `C` and row
//! set `R` with `max(C) ≤ min(R)`, so it sits inside `M[min(R).., ..=max(C)]`
//! and hence inside `M[min(R).., ..=min(R)]`; the maximal blocks dominate.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SsdError};
use crate::linalg;

/// Dense `T × T` matrix with identically zero strictly-upper part.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerTriangularMatrix {
    inner: DMatrix<f64>,
}

impl LowerTriangularMatrix {
    /// Validates squareness, `T ≥ 1`, finiteness and exact upper zeros.
    pub fn new(inner: DMatrix<f64>) -> Result<Self> {
        let (rows, cols) = inner.shape();
        if rows == 0 {
            return Err(SsdError::EmptyDimension { what: "T" });
        }
        if rows != cols {
            return Err(SsdError::ShapeMismatch {
                what: "lower-triangular matrix",
                expected: format!("{rows}x{rows}"),
                got: format!("{rows}x{cols}"),
            });
        }
        if inner.iter().any(|v| !v.is_finite()) {
            return Err(SsdError::NonFinite { what: "matrix" });
        }
        for col in 1..cols {
            for row in 0..col {
                let value = inner[(row, col)];
                if value != 0.0 {
                    return Err(SsdError::NotLowerTriangular { row, col, value });
                }
            }
        }
        Ok(Self { inner })
    }

    /// Builds from a closure evaluated only on `row ≥ col`.
    pub fn from_fn(size: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(size > 0, "lower-triangular matrix needs T >= 1");
        let inner = DMatrix::from_fn(size, size, |i, j| if i >= j { f(i, j) } else { 0.0 });
        Self { inner }
    }

    /// Keeps the on-or-below-diagonal part of `m` and discards the rest.
    pub fn lower_part_of(m: &DMatrix<f64>) -> Result<Self> {
        let (rows, cols) = m.shape();
        if rows != cols || rows == 0 {
            return Err(SsdError::ShapeMismatch {
                what: "lower-triangular matrix",
                expected: "square with T >= 1".into(),
                got: format!("{rows}x{cols}"),
            });
        }
        Ok(Self::from_fn(rows, |i, j| m[(i, j)]))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let size = rows.len();
        if size == 0 {
            return Err(SsdError::EmptyDimension { what: "T" });
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != size {
                return Err(SsdError::ShapeMismatch {
                    what: "matrix row",
                    expected: size.to_string(),
                    got: format!("{} (row {})", row.len(), i + 1),
                });
            }
        }
        Self::new(DMatrix::from_fn(size, size, |i, j| rows[i][j]))
    }

    pub fn identity(size: usize) -> Self {
        Self::from_fn(size, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn zeros(size: usize) -> Self {
        Self::from_fn(size, |_, _| 0.0)
    }

    pub fn size(&self) -> usize {
        self.inner.nrows()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.inner[(row, col)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.inner
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.inner
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.inner
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.inner.norm()
    }

    pub fn max_abs(&self) -> f64 {
        self.inner.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// The square diagonal block covering `range`.
    pub fn diagonal_block(&self, range: Range<usize>) -> LowerTriangularMatrix {
        let len = range.end - range.start;
        Self {
            inner: self.inner.view((range.start, range.start), (len, len)).into_owned(),
        }
    }
}

/// Gain vector `a` of the 1SS operator; `a[0]` is carried but never read.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskVector {
    a: Vec<f64>,
}

impl MaskVector {
    pub fn new(a: Vec<f64>) -> Result<Self> {
        if a.is_empty() {
            return Err(SsdError::EmptyDimension { what: "T" });
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(SsdError::NonFinite { what: "mask vector" });
        }
        Ok(Self { a })
    }

    pub fn ones(len: usize) -> Self {
        Self { a: vec![1.0; len] }
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.a
    }
}

/// `M[t][s] = a[t]·a[t-1]···a[s+1]` for `t ≥ s`, ones on the diagonal.
pub fn one_ss(a: &MaskVector) -> LowerTriangularMatrix {
    let size = a.len();
    let gains = a.as_slice();
    let mut inner = DMatrix::zeros(size, size);
    for s in 0..size {
        let mut running = 1.0;
        inner[(s, s)] = 1.0;
        for t in s + 1..size {
            running *= gains[t];
            inner[(t, s)] = running;
        }
    }
    LowerTriangularMatrix { inner }
}

/// Maximum numerical rank over the blocks `M[t.., ..=t]`.
pub fn semiseparable_rank(m: &LowerTriangularMatrix, eps: f64) -> usize {
    (0..m.size())
        .map(|t| linalg::numerical_rank(&lower_block(m, t), eps))
        .max()
        .unwrap_or(0)
}

/// The block `M[t.., ..=t]`, i.e. rows `t..T`, columns `0..=t`.
pub fn lower_block(m: &LowerTriangularMatrix, t: usize) -> DMatrix<f64> {
    let size = m.size();
    m.as_matrix().view((t, 0), (size - t, t + 1)).into_owned()
}

/// Largest matrix size accepted by [`submatrix_rank_oracle`].
pub const ORACLE_MAX_T: usize = 12;

/// Brute-force semiseparable rank: the maximal numerical rank over every
/// row set `R` and column set `C` with `max(C) ≤ min(R)`.
///
/// Exponential in `T`; intended as a test oracle.
pub fn submatrix_rank_oracle(m: &LowerTriangularMatrix, eps: f64) -> Result<usize> {
    let size = m.size();
    if size > ORACLE_MAX_T {
        return Err(SsdError::SizeExceeded {
            what: "submatrix rank oracle",
            size,
            limit: ORACLE_MAX_T,
        });
    }
    let full = m.as_matrix();
    let mut best = 0;
    for min_row in 0..size {
        let extra_rows = size - 1 - min_row;
        for row_mask in 0u32..(1 << extra_rows) {
            let mut rows = vec![min_row];
            rows.extend((0..extra_rows).filter(|k| row_mask >> k & 1 == 1).map(|k| min_row + 1 + k));
            for col_mask in 1u32..(1 << (min_row + 1)) {
                let cols: Vec<usize> = (0..=min_row).filter(|k| col_mask >> k & 1 == 1).collect();
                let sub = DMatrix::from_fn(rows.len(), cols.len(), |i, j| full[(rows[i], cols[j])]);
                best = best.max(linalg::numerical_rank(&sub, eps));
            }
        }
    }
    Ok(best)
}

/// Span-membership verdict for one column.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnVerdict {
    pub index: usize,
    /// Least-squares residual of `M[t.., t]` on the columns of `M[t.., ..t]`.
    pub residual: f64,
    pub norm: f64,
    pub is_new: bool,
}

impl ColumnVerdict {
    /// Residual within a factor of ten of the decision threshold.
    pub fn is_borderline(&self, eps: f64) -> bool {
        let threshold = eps * self.norm;
        threshold > 0.0 && self.residual > threshold / 10.0 && self.residual <= threshold * 10.0
    }
}

pub fn column_verdicts(m: &LowerTriangularMatrix, eps: f64) -> Vec<ColumnVerdict> {
    let size = m.size();
    let full = m.as_matrix();
    (0..size)
        .map(|t| {
            let column: DVector<f64> = full.view((t, t), (size - t, 1)).column(0).into_owned();
            let basis = full.view((t, 0), (size - t, t)).into_owned();
            let norm = column.norm();
            let (_, residual) = linalg::least_squares(&basis, &column, eps);
            ColumnVerdict {
                index: t,
                residual,
                norm,
                is_new: residual > eps * norm,
            }
        })
        .collect()
}

/// Indices `t` whose lower part `M[t.., t]` is outside the span of
/// `M[t.., ..t]`. A nonzero first column is always new.
pub fn new_columns(m: &LowerTriangularMatrix, eps: f64) -> Vec<usize> {
    column_verdicts(m, eps)
        .into_iter()
        .filter(|v| v.is_new)
        .map(|v| v.index)
        .collect()
}

/// Finest split of a lower-triangular matrix into diagonal blocks that
/// contain every entry above `eps · max|M|`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPartition {
    /// Positions `t` (in `1..T`) with a cut between rows `t - 1` and `t`.
    pub cuts: Vec<usize>,
    pub blocks: Vec<Range<usize>>,
}

pub fn diagonal_block_partition(m: &LowerTriangularMatrix, eps: f64) -> BlockPartition {
    let size = m.size();
    let threshold = eps * m.max_abs();
    let full = m.as_matrix();
    // reach[j]: last row holding a significant entry of column j (at least j).
    let mut cuts = Vec::new();
    let mut reach = 0usize;
    for col in 0..size {
        if col > 0 && reach < col {
            cuts.push(col);
        }
        let last = (col..size).rev().find(|&row| full[(row, col)].abs() > threshold).unwrap_or(col);
        reach = reach.max(last);
    }
    let mut blocks = Vec::with_capacity(cuts.len() + 1);
    let mut start = 0;
    for &cut in &cuts {
        blocks.push(start..cut);
        start = cut;
    }
    blocks.push(start..size);
    BlockPartition { cuts, blocks }
}

/// A mask is fine when every gain that enters a mask entry, `a[1..]`, is
/// nonzero.
pub fn is_fine_mask(a: &MaskVector) -> bool {
    a.as_slice().iter().skip(1).all(|&v| v != 0.0)
}
