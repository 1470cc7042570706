//! Minimal compressed-row sparse matrices.
//!
//! All operators here are small (a few hundred thousand nonzeros at most)
//! and their assembly must be bit-reproducible, so we use a plain CSR layout
//! built from sorted triplets instead of pulling in a sparse-algebra crate.

use nalgebra::DMatrix;

/// Square sparse matrix in compressed-row form. Column indices within each
/// row are strictly increasing. `symmetric` and `null_vector_one` record
/// structural facts established at assembly time (e.g. a stiffness matrix
/// annihilates the constant vector).
#[derive(Debug, Clone)]
pub struct SparseOperator {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    pub symmetric: bool,
    pub null_vector_one: bool,
}

impl SparseOperator {
    /// Builds an `n x n` operator from (row, col, value) triplets. Duplicate
    /// positions are summed in sorted order, which makes assembly
    /// deterministic for a fixed triplet sequence. Entries that sum to an
    /// exact zero are kept only if `keep_zeros` callers need them; here they
    /// are dropped.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals = Vec::with_capacity(triplets.len());
        let mut it = triplets.into_iter().peekable();
        while let Some((r, c, mut v)) = it.next() {
            assert!(r < n && c < n, "triplet ({r}, {c}) out of range for n = {n}");
            while let Some(&(r2, c2, v2)) = it.peek() {
                if r2 == r && c2 == c {
                    v += v2;
                    it.next();
                } else {
                    break;
                }
            }
            if v != 0.0 {
                row_ptr[r + 1] += 1;
                cols.push(c);
                vals.push(v);
            }
        }
        for r in 0..n {
            row_ptr[r + 1] += row_ptr[r];
        }
        SparseOperator { n, row_ptr, cols, vals, symmetric: false, null_vector_one: false }
    }

    /// Diagonal matrix with entries `d`.
    pub fn from_diag(d: &[f64]) -> Self {
        let triplets = d.iter().enumerate().map(|(i, &v)| (i, i, v)).collect();
        let mut m = SparseOperator::from_triplets(d.len(), triplets);
        m.symmetric = true;
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Column indices and values of row `i`.
    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.cols[lo..hi], &self.vals[lo..hi])
    }

    /// Entry `(i, j)`, zero if not stored.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    /// `y = A x`.
    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            let mut acc = 0.0;
            for (c, v) in cols.iter().zip(vals) {
                acc += v * x[*c];
            }
            y[i] = acc;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).1.iter().sum()).collect()
    }

    /// Iterates stored entries as (row, col, value).
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&c, &v)| (i, c, v))
        })
    }

    /// Largest absolute entry value.
    pub fn max_abs(&self) -> f64 {
        self.vals.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest symmetry defect `|a_ij - a_ji|`.
    pub fn symmetry_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for (i, j, v) in self.entries() {
            if j > i {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// New operator with every row `i` scaled by `d[i]`.
    pub fn scale_rows(&self, d: &[f64]) -> Self {
        assert_eq!(d.len(), self.n);
        let mut out = self.clone();
        for i in 0..self.n {
            let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
            for v in &mut out.vals[lo..hi] {
                *v *= d[i];
            }
        }
        out.symmetric = false;
        out
    }

    /// Sparse product `A * B`; metadata flags are reset.
    pub fn multiply(&self, other: &SparseOperator) -> SparseOperator {
        assert_eq!(self.n, other.n);
        let mut triplets = Vec::new();
        let mut acc: Vec<f64> = vec![0.0; self.n];
        let mut touched: Vec<usize> = Vec::new();
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&k, &aik) in cols.iter().zip(vals) {
                let (bcols, bvals) = other.row(k);
                for (&j, &bkj) in bcols.iter().zip(bvals) {
                    if acc[j] == 0.0 && !touched.contains(&j) {
                        touched.push(j);
                    }
                    acc[j] += aik * bkj;
                }
            }
            touched.sort_unstable();
            for &j in &touched {
                triplets.push((i, j, acc[j]));
                acc[j] = 0.0;
            }
            touched.clear();
        }
        SparseOperator::from_triplets(self.n, triplets)
    }

    /// Dense copy, for oracle-style verification on small problems.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for (i, j, v) in self.entries() {
            m[(i, j)] += v;
        }
        m
    }

    /// Writes the operator as text triplets `row col value`, one per line,
    /// with enough digits to round-trip f64 exactly.
    pub fn write_triplets<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        for (i, j, v) in self.entries() {
            writeln!(w, "{i} {j} {v:.16e}")?;
        }
        Ok(())
    }
}
