//! Compressed sparse row operator with complex entries.

use std::io::Write;

use faer::c64;

use crate::error::{LodError, Result};

pub const ZERO: c64 = c64 { re: 0.0, im: 0.0 };
pub const ONE: c64 = c64 { re: 1.0, im: 0.0 };

pub fn re(x: f64) -> c64 {
    c64 { re: x, im: 0.0 }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SparseOperator {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<c64>,
    /// Set by assembly routines that produce symmetric matrices.
    pub symmetric: bool,
}

impl SparseOperator {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        SparseOperator {
            nrows,
            ncols,
            row_ptr: vec![0; nrows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
            symmetric: false,
        }
    }

    pub fn identity(n: usize) -> Self {
        SparseOperator {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![ONE; n],
            symmetric: true,
        }
    }

    /// Duplicates are summed in input order, so assembly is deterministic.
    /// Explicit zeros produced by cancellation are kept.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        mut triplets: Vec<(usize, usize, c64)>,
    ) -> Result<Self> {
        if let Some(&(i, j, _)) = triplets.iter().find(|(i, j, _)| *i >= nrows || *j >= ncols) {
            return Err(LodError::DimensionMismatch(format!(
                "entry ({i}, {j}) outside a {nrows}x{ncols} matrix"
            )));
        }
        triplets.sort_by_key(|&(i, j, _)| (i, j));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<c64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in triplets {
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(j);
                values.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(SparseOperator { nrows, ncols, row_ptr, col_idx, values, symmetric: false })
    }

    pub fn from_real_triplets(
        nrows: usize,
        ncols: usize,
        triplets: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        Self::from_triplets(nrows, ncols, triplets.into_iter().map(|(i, j, v)| (i, j, re(v))).collect())
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn with_symmetric(mut self, flag: bool) -> Self {
        self.symmetric = flag;
        self
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, c64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, c64)> + '_ {
        (0..self.nrows).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn get(&self, i: usize, j: usize) -> c64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[r.clone()].binary_search(&j) {
            Ok(k) => self.values[r.start + k],
            Err(_) => ZERO,
        }
    }

    pub fn is_real(&self) -> bool {
        self.values.iter().all(|v| v.im == 0.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn matvec(&self, x: &[c64]) -> Vec<c64> {
        assert_eq!(x.len(), self.ncols, "matvec dimension mismatch");
        (0..self.nrows).map(|i| self.row(i).map(|(j, v)| v * x[j]).sum()).collect()
    }

    pub fn matvec_real(&self, x: &[f64]) -> Vec<c64> {
        assert_eq!(x.len(), self.ncols, "matvec dimension mismatch");
        (0..self.nrows).map(|i| self.row(i).map(|(j, v)| v * x[j]).sum()).collect()
    }

    pub fn transpose(&self) -> SparseOperator {
        let mut counts = vec![0usize; self.ncols + 1];
        for &j in &self.col_idx {
            counts[j + 1] += 1;
        }
        for j in 0..self.ncols {
            counts[j + 1] += counts[j];
        }
        let mut next = counts.clone();
        let mut col_idx = vec![0usize; self.nnz()];
        let mut values = vec![ZERO; self.nnz()];
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                let k = next[j];
                col_idx[k] = i;
                values[k] = v;
                next[j] += 1;
            }
        }
        SparseOperator {
            nrows: self.ncols,
            ncols: self.nrows,
            row_ptr: counts,
            col_idx,
            values,
            symmetric: self.symmetric,
        }
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> SparseOperator {
        let mut t = self.transpose();
        for v in &mut t.values {
            *v = v.conj();
        }
        t
    }

    pub fn scale(&self, s: c64) -> SparseOperator {
        let mut out = self.clone();
        for v in &mut out.values {
            *v *= s;
        }
        out
    }

    /// `self + alpha * other`.
    pub fn add_scaled(&self, alpha: c64, other: &SparseOperator) -> Result<SparseOperator> {
        self.check_same_shape(other)?;
        let mut trip: Vec<(usize, usize, c64)> = self.iter().collect();
        trip.extend(other.iter().map(|(i, j, v)| (i, j, alpha * v)));
        Ok(SparseOperator::from_triplets(self.nrows, self.ncols, trip)?
            .with_symmetric(self.symmetric && other.symmetric))
    }

    pub fn matmul(&self, other: &SparseOperator) -> Result<SparseOperator> {
        if self.ncols != other.nrows {
            return Err(LodError::DimensionMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.nrows, self.ncols, other.nrows, other.ncols
            )));
        }
        let mut acc = vec![ZERO; other.ncols];
        let mut marker = vec![usize::MAX; other.ncols];
        let mut row_ptr = vec![0usize; self.nrows + 1];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for i in 0..self.nrows {
            let start = col_idx.len();
            for (k, a) in self.row(i) {
                for (j, b) in other.row(k) {
                    if marker[j] != i {
                        marker[j] = i;
                        acc[j] = ZERO;
                        col_idx.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            col_idx[start..].sort_unstable();
            values.extend(col_idx[start..].iter().map(|&j| acc[j]));
            row_ptr[i + 1] = col_idx.len();
        }
        Ok(SparseOperator { nrows: self.nrows, ncols: other.ncols, row_ptr, col_idx, values, symmetric: false })
    }

    /// Submatrix on the given (global) row and column index lists.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> SparseOperator {
        let mut col_map = vec![usize::MAX; self.ncols];
        for (k, &j) in cols.iter().enumerate() {
            col_map[j] = k;
        }
        let mut row_ptr = vec![0usize; rows.len() + 1];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for (r, &i) in rows.iter().enumerate() {
            let start = col_idx.len();
            let mut entries: Vec<(usize, c64)> =
                self.row(i).filter(|(j, _)| col_map[*j] != usize::MAX).map(|(j, v)| (col_map[j], v)).collect();
            entries.sort_by_key(|e| e.0);
            for (j, v) in entries {
                col_idx.push(j);
                values.push(v);
            }
            row_ptr[r + 1] = start + (col_idx.len() - start);
        }
        SparseOperator {
            nrows: rows.len(),
            ncols: cols.len(),
            row_ptr,
            col_idx,
            values,
            symmetric: self.symmetric && rows == cols,
        }
    }

    /// `max |A_ij - A_ji|` over stored entries.
    pub fn symmetry_defect(&self) -> f64 {
        if self.nrows != self.ncols {
            return f64::INFINITY;
        }
        self.iter().map(|(i, j, v)| (v - self.get(j, i)).norm()).fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> Vec<Vec<c64>> {
        let mut out = vec![vec![ZERO; self.ncols]; self.nrows];
        for (i, j, v) in self.iter() {
            out[i][j] += v;
        }
        out
    }

    /// One line per stored entry: `row col re im`.
    pub fn write_coordinate<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{} {} {}", self.nrows, self.ncols, self.nnz())?;
        for (i, j, v) in self.iter() {
            writeln!(out, "{} {} {:.17e} {:.17e}", i, j, v.re, v.im)?;
        }
        Ok(())
    }

    fn check_same_shape(&self, other: &SparseOperator) -> Result<()> {
        if self.nrows != other.nrows || self.ncols != other.ncols {
            return Err(LodError::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.nrows, self.ncols, other.nrows, other.ncols
            )));
        }
        Ok(())
    }
}

/// `x^H y`.
pub fn dotc(x: &[c64], y: &[c64]) -> c64 {
    x.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
}

pub fn norm2(x: &[c64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

pub fn max_abs(x: &[c64]) -> f64 {
    x.iter().map(|v| v.norm()).fold(0.0, f64::max)
}

pub fn axpy(alpha: c64, x: &[c64], y: &mut [c64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn sub_vec(x: &[c64], y: &[c64]) -> Vec<c64> {
    x.iter().zip(y).map(|(a, b)| a - b).collect()
}

/// Hermitian form `x^H A x` (real part).
pub fn energy(a: &SparseOperator, x: &[c64]) -> f64 {
    dotc(x, &a.matvec(x)).re
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small() -> SparseOperator {
        SparseOperator::from_real_triplets(
            3,
            4,
            vec![(0, 1, 2.0), (2, 3, -1.0), (0, 1, 1.0), (1, 0, 4.0), (2, 0, 0.5)],
        )
        .unwrap()
    }

    #[test]
    fn duplicates_summed() {
        let a = small();
        assert_eq!(a.nnz(), 4);
        assert_eq!(a.get(0, 1), re(3.0));
        assert_eq!(a.get(1, 1), ZERO);
    }

    #[test]
    fn out_of_range_rejected() {
        assert!(SparseOperator::from_real_triplets(2, 2, vec![(2, 0, 1.0)]).is_err());
    }

    #[test]
    fn select_and_transpose() {
        let a = small();
        let s = a.select(&[2, 0], &[3, 1]);
        assert_eq!(s.to_dense(), vec![vec![re(-1.0), ZERO], vec![ZERO, re(3.0)]]);
        let t = a.transpose();
        assert_eq!(t.get(3, 2), re(-1.0));
        assert_eq!(t.transpose(), a);
    }

    #[test]
    fn matmul_matches_dense() {
        let a = small();
        let b = a.transpose();
        let c = a.matmul(&b).unwrap();
        let da = a.to_dense();
        for i in 0..3 {
            for j in 0..3 {
                let expect: c64 = (0..4).map(|k| da[i][k] * da[j][k]).sum();
                assert_eq!(c.get(i, j), expect);
            }
        }
        assert!(a.matmul(&a).is_err());
    }

    proptest! {
        #[test]
        fn matvec_is_linear_and_adjoint_consistent(
            entries in proptest::collection::vec((0usize..5, 0usize..6, -3.0f64..3.0, -3.0f64..3.0), 0..30),
            x in proptest::collection::vec(-2.0f64..2.0, 6),
            y in proptest::collection::vec(-2.0f64..2.0, 5),
        ) {
            let a = SparseOperator::from_triplets(5, 6, entries.into_iter().map(|(i, j, r, m)| (i, j, c64::new(r, m))).collect()).unwrap();
            let x: Vec<c64> = x.into_iter().map(|v| c64::new(v, -0.5 * v)).collect();
            let y: Vec<c64> = y.into_iter().map(re).collect();
            let lhs = dotc(&y, &a.matvec(&x));
            let rhs = dotc(&a.adjoint().matvec(&y), &x);
            prop_assert!((lhs - rhs).norm() <= 1e-12 * (1.0 + lhs.norm()));
        }
    }
}
