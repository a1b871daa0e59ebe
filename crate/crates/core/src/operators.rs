//! Sparse matrices in compressed-row form and the finite-difference
//! building blocks assembled from them.
//!
//! Images are vectorized column by column: pixel `(x, y)` of an
//! `n_x × n_y` frame (row `x`, column `y`) lives at index `x + n_x * y`.
//! The `x` direction is vertical (down the rows), `y` is horizontal.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Immutable sparse matrix stored row by row.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseOperator {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseOperator {
    /// Assembles a matrix from `(row, col, value)` triplets. Duplicate
    /// coordinates are summed; explicit zeros are kept out of the pattern.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut entries: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        if let Some(&(r, c, _)) = entries.iter().find(|&&(r, c, _)| r >= n_rows || c >= n_cols) {
            return Err(Error::Shape(format!(
                "triplet ({r}, {c}) outside a {n_rows}x{n_cols} operator"
            )));
        }
        entries.sort_unstable_by_key(|&(r, c, _)| (r, c));

        let mut row_ptr = vec![0usize; n_rows + 1];
        let mut col_idx = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        let mut rows = Vec::with_capacity(entries.len());
        for (r, c, v) in entries {
            if let (Some(&last_r), Some(&last_c)) = (rows.last(), col_idx.last()) {
                if last_r == r && last_c == c {
                    *values.last_mut().unwrap() += v;
                    continue;
                }
            }
            rows.push(r);
            col_idx.push(c);
            values.push(v);
        }
        // drop entries that cancelled to zero
        let mut keep_rows = Vec::with_capacity(rows.len());
        let mut keep_cols = Vec::with_capacity(rows.len());
        let mut keep_vals = Vec::with_capacity(rows.len());
        for ((r, c), v) in rows.into_iter().zip(col_idx).zip(values) {
            if v != 0.0 {
                keep_rows.push(r);
                keep_cols.push(c);
                keep_vals.push(v);
            }
        }
        for &r in &keep_rows {
            row_ptr[r + 1] += 1;
        }
        for i in 0..n_rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(Self {
            n_rows,
            n_cols,
            row_ptr,
            col_idx: keep_cols,
            values: keep_vals,
        })
    }

    /// Builds a matrix directly from per-row entry lists. Column indices in a
    /// row must be distinct; they are sorted here.
    pub(crate) fn from_rows(n_cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n_rows = rows.len();
        let nnz = rows.iter().map(Vec::len).sum();
        let mut row_ptr = Vec::with_capacity(n_rows + 1);
        let mut col_idx = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        row_ptr.push(0);
        for mut row in rows {
            row.sort_unstable_by_key(|&(c, _)| c);
            for (c, v) in row {
                debug_assert!(c < n_cols);
                if v != 0.0 {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n_rows: n,
            n_cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            row_ptr: vec![0; n_rows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Square diagonal matrix.
    pub fn diagonal(diag: &[f64]) -> Self {
        let rows = diag.iter().enumerate().map(|(i, &d)| vec![(i, d)]).collect();
        Self::from_rows(diag.len(), rows)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_rows, self.n_cols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values stored in row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[span.clone()], &self.values[span])
    }

    /// Iterates over all stored `(row, col, value)` entries in row order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&c, &v)| (i, c, v))
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `y = A x`.
    pub fn multiply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_rows];
        self.multiply_into(x, &mut y);
        y
    }

    pub fn multiply_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n_cols, "multiply: input length");
        assert_eq!(y.len(), self.n_rows, "multiply: output length");
        for (i, yi) in y.iter_mut().enumerate() {
            let span = self.row_ptr[i]..self.row_ptr[i + 1];
            *yi = self.col_idx[span.clone()]
                .iter()
                .zip(&self.values[span])
                .map(|(&c, &v)| v * x[c])
                .sum();
        }
    }

    /// `x = Aᵀ y`.
    pub fn transpose_multiply(&self, y: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.n_cols];
        self.transpose_multiply_add(y, 1.0, &mut x);
        x
    }

    /// `x += alpha · Aᵀ y`.
    pub fn transpose_multiply_add(&self, y: &[f64], alpha: f64, x: &mut [f64]) {
        assert_eq!(y.len(), self.n_rows, "transpose_multiply: input length");
        assert_eq!(x.len(), self.n_cols, "transpose_multiply: output length");
        for (i, &yi) in y.iter().enumerate() {
            if yi == 0.0 {
                continue;
            }
            let s = alpha * yi;
            let span = self.row_ptr[i]..self.row_ptr[i + 1];
            for (&c, &v) in self.col_idx[span.clone()].iter().zip(&self.values[span]) {
                x[c] += s * v;
            }
        }
    }

    pub fn transpose(&self) -> Self {
        let mut rows = vec![Vec::new(); self.n_cols];
        for (r, c, v) in self.triplets() {
            rows[c].push((r, v));
        }
        Self::from_rows(self.n_rows, rows)
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= alpha);
        out
    }

    /// Scales row `i` by `weights[i]`.
    pub fn row_scaled(&self, weights: &[f64]) -> Self {
        assert_eq!(weights.len(), self.n_rows);
        let mut out = self.clone();
        for (i, &w) in weights.iter().enumerate() {
            let span = out.row_ptr[i]..out.row_ptr[i + 1];
            out.values[span].iter_mut().for_each(|v| *v *= w);
        }
        out
    }

    /// Dense row-major copy; intended for small operators and tests.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut dense = vec![vec![0.0; self.n_cols]; self.n_rows];
        for (r, c, v) in self.triplets() {
            dense[r][c] = v;
        }
        dense
    }

    /// Writes one `row,col,value` line per stored entry (0-based indices).
    pub fn write_triplets(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        for (r, c, v) in self.triplets() {
            writeln!(out, "{r},{c},{v:e}").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }
}

/// Forward-difference matrix of shape `(n-1) × n` with rows `[…, -1, 1, …]`.
pub fn first_difference(n: usize) -> Result<SparseOperator> {
    if n < 2 {
        return Err(Error::InvalidDimension(format!(
            "first difference needs n >= 2, got {n}"
        )));
    }
    let rows = (0..n - 1).map(|i| vec![(i, -1.0), (i + 1, 1.0)]).collect();
    Ok(SparseOperator::from_rows(n, rows))
}

/// Kronecker product `A ⊗ B`.
pub fn kron(a: &SparseOperator, b: &SparseOperator) -> SparseOperator {
    let (br, bc) = b.shape();
    let mut rows = Vec::with_capacity(a.n_rows * br);
    for ia in 0..a.n_rows {
        let (acols, avals) = a.row(ia);
        for ib in 0..br {
            let (bcols, bvals) = b.row(ib);
            let mut row = Vec::with_capacity(acols.len() * bcols.len());
            for (&ca, &va) in acols.iter().zip(avals) {
                for (&cb, &vb) in bcols.iter().zip(bvals) {
                    row.push((ca * bc + cb, va * vb));
                }
            }
            rows.push(row);
        }
    }
    SparseOperator::from_rows(a.n_cols * bc, rows)
}

/// Discrete gradient of an `n_x × n_y` frame: vertical differences
/// (`I_{n_y} ⊗ L_x`, along `x`) stacked on horizontal differences
/// (`L_y ⊗ I_{n_x}`, along `y`).
///
/// The result has `n_y(n_x-1) + (n_y-1)n_x` rows.
pub fn spatial_gradient(n_x: usize, n_y: usize) -> Result<SparseOperator> {
    if n_x < 2 || n_y < 2 {
        return Err(Error::InvalidDimension(format!(
            "spatial gradient needs both dims >= 2, got {n_x}x{n_y}"
        )));
    }
    let vertical = kron(&SparseOperator::identity(n_y), &first_difference(n_x)?);
    let horizontal = kron(&first_difference(n_y)?, &SparseOperator::identity(n_x));
    vstack(&[vertical, horizontal])
}

/// Block-diagonal concatenation.
pub fn block_diagonal(blocks: &[SparseOperator]) -> Result<SparseOperator> {
    if blocks.is_empty() {
        return Err(Error::InvalidArgument("block_diagonal of an empty list".into()));
    }
    let n_cols = blocks.iter().map(|b| b.n_cols).sum();
    let mut rows = Vec::with_capacity(blocks.iter().map(|b| b.n_rows).sum());
    let mut col_offset = 0;
    for block in blocks {
        for i in 0..block.n_rows {
            let (cols, vals) = block.row(i);
            rows.push(cols.iter().zip(vals).map(|(&c, &v)| (c + col_offset, v)).collect());
        }
        col_offset += block.n_cols;
    }
    Ok(SparseOperator::from_rows(n_cols, rows))
}

/// Vertical concatenation `[A; B; …]`.
pub fn vstack(blocks: &[SparseOperator]) -> Result<SparseOperator> {
    let first = blocks
        .first()
        .ok_or_else(|| Error::InvalidArgument("vstack of an empty list".into()))?;
    let n_cols = first.n_cols;
    if let Some(bad) = blocks.iter().find(|b| b.n_cols != n_cols) {
        return Err(Error::Shape(format!(
            "vstack column mismatch: {} vs {}",
            bad.n_cols, n_cols
        )));
    }
    let n_rows: usize = blocks.iter().map(|b| b.n_rows).sum();
    let mut row_ptr = Vec::with_capacity(n_rows + 1);
    let mut col_idx = Vec::new();
    let mut values = Vec::new();
    row_ptr.push(0);
    for block in blocks {
        let base = col_idx.len();
        col_idx.extend_from_slice(&block.col_idx);
        values.extend_from_slice(&block.values);
        row_ptr.extend(block.row_ptr[1..].iter().map(|p| p + base));
    }
    Ok(SparseOperator {
        n_rows,
        n_cols,
        row_ptr,
        col_idx,
        values,
    })
}
