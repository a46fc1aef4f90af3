//! Compressed sparse row matrices and a sparse direct LU solver.
//!
//! The factorization eliminates columns in approximate-minimum-degree order
//! (computed on the pattern of `A + A^T`) and chooses row pivots by threshold
//! partial pivoting, preferring the diagonal entry whenever it is within
//! [`PIVOT_THRESHOLD`] of the largest candidate. This keeps symmetric
//! quasi-definite systems close to their symmetric elimination order while
//! still handling zero diagonal blocks.

use std::io::{self, Write};
use std::sync::Arc;

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::sparse::linalg::amd;
use faer::sparse::SymbolicSparseColMatRef;
use thiserror::Error;

/// Diagonal pivots are kept if at least this fraction of the column maximum.
pub const PIVOT_THRESHOLD: f64 = 1e-3;
/// Relative residual every solve must reach.
pub const RESIDUAL_TOLERANCE: f64 = 1e-10;
const REFINEMENT_STEPS: usize = 3;
const NONE: usize = usize::MAX;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("matrix is singular: no usable pivot at elimination step {step} (column {column})")]
    Singular { step: usize, column: usize },
    #[error("solve reached relative residual {residual:.3e}, above tolerance {tolerance:.0e}")]
    NotConverged { residual: f64, tolerance: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("matrix is not square ({nrows} x {ncols})")]
    NotSquare { nrows: usize, ncols: usize },
    #[error("fill-reducing ordering failed: {0}")]
    Ordering(String),
}

/// Sparse matrix in compressed sparse row layout with sorted, unique column
/// indices in every row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, row_ptr: vec![0; nrows + 1], col_idx: Vec::new(), values: Vec::new() }
    }

    pub fn identity(n: usize) -> Self {
        Self { nrows: n, ncols: n, row_ptr: (0..=n).collect(), col_idx: (0..n).collect(), values: vec![1.0; n] }
    }

    /// Builds a matrix from coordinate triplets; duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; nrows + 1];
        for &(r, c, _) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) outside {nrows} x {ncols}");
            counts[r + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(r, c, v) in triplets {
            cols[next[r]] = c;
            vals[next[r]] = v;
            next[r] += 1;
        }
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        row_ptr.push(0);
        let mut order: Vec<usize> = Vec::new();
        for r in 0..nrows {
            let (s, e) = (counts[r], counts[r + 1]);
            order.clear();
            order.extend(s..e);
            order.sort_by_key(|&p| cols[p]);
            for &p in &order {
                if col_idx.len() > row_ptr[r] && *col_idx.last().unwrap() == cols[p] {
                    *values.last_mut().unwrap() += vals[p];
                } else {
                    col_idx.push(cols[p]);
                    values.push(vals[p]);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self { nrows, ncols, row_ptr, col_idx, values }
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let ncols = rows.first().map_or(0, Vec::len);
        let triplets: Vec<_> = rows
            .iter()
            .enumerate()
            .flat_map(|(i, r)| r.iter().enumerate().filter(|(_, v)| **v != 0.0).map(move |(j, v)| (i, j, *v)))
            .collect();
        Self::from_triplets(rows.len(), ncols, &triplets)
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

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).map_or(0.0, |p| vals[p])
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            let (c, v) = self.row(i);
            c.iter().zip(v).map(move |(&j, &x)| (i, j, x))
        })
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        for (i, yi) in y.iter_mut().enumerate().take(self.nrows) {
            let (c, v) = self.row(i);
            *yi = c.iter().zip(v).map(|(&j, &a)| a * x[j]).sum();
        }
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut counts = vec![0usize; self.ncols + 1];
        for &c in &self.col_idx {
            counts[c + 1] += 1;
        }
        for j in 0..self.ncols {
            counts[j + 1] += counts[j];
        }
        let mut next = counts.clone();
        let mut col_idx = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for i in 0..self.nrows {
            let (c, v) = self.row(i);
            for (&j, &a) in c.iter().zip(v) {
                col_idx[next[j]] = i;
                values[next[j]] = a;
                next[j] += 1;
            }
        }
        CsrMatrix { nrows: self.ncols, ncols: self.nrows, row_ptr: counts, col_idx, values }
    }

    pub fn scaled(&self, s: f64) -> CsrMatrix {
        let mut m = self.clone();
        m.values.iter_mut().for_each(|v| *v *= s);
        m
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max |A - A^T|` over all entries.
    pub fn symmetry_defect(&self) -> f64 {
        if self.nrows != self.ncols {
            return f64::INFINITY;
        }
        self.triplets().fold(0.0, |m, (i, j, v)| m.max((v - self.get(j, i)).abs()))
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (i, j, v) in self.triplets() {
            d[i][j] = v;
        }
        d
    }

    /// Matrix Market coordinate format, one-based indices.
    pub fn write_matrix_market<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(out, "{} {} {}", self.nrows, self.ncols, self.nnz())?;
        for (i, j, v) in self.triplets() {
            writeln!(out, "{} {} {:e}", i + 1, j + 1, v)?;
        }
        Ok(())
    }
}

/// Accumulates coordinate entries, including whole blocks at offsets.
#[derive(Debug, Clone)]
pub struct TripletBuilder {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, entries: Vec::new() }
    }

    pub fn with_capacity(nrows: usize, ncols: usize, cap: usize) -> Self {
        Self { nrows, ncols, entries: Vec::with_capacity(cap) }
    }

    pub fn push(&mut self, i: usize, j: usize, v: f64) {
        self.entries.push((i, j, v));
    }

    /// Adds `scale * block` with its top-left corner at `(row_off, col_off)`.
    pub fn add_block(&mut self, block: &CsrMatrix, row_off: usize, col_off: usize, scale: f64) {
        self.entries.extend(block.triplets().map(|(i, j, v)| (i + row_off, j + col_off, scale * v)));
    }

    /// Adds `scale * block^T` with its top-left corner at `(row_off, col_off)`.
    pub fn add_block_transposed(&mut self, block: &CsrMatrix, row_off: usize, col_off: usize, scale: f64) {
        self.entries.extend(block.triplets().map(|(i, j, v)| (j + row_off, i + col_off, scale * v)));
    }

    pub fn build(self) -> CsrMatrix {
        CsrMatrix::from_triplets(self.nrows, self.ncols, &self.entries)
    }
}

/// LU factors of a square sparse matrix, `P A Q = L U`.
///
/// Immutable once built; any number of threads may call [`Factorization::solve`].
#[derive(Debug, Clone)]
pub struct Factorization {
    matrix: Arc<CsrMatrix>,
    n: usize,
    /// Column elimination order: step `k` eliminates column `col_order[k]`.
    col_order: Vec<usize>,
    /// `row_of_step[k]` is the row pivoted at step `k`.
    row_of_step: Vec<usize>,
    l_ptr: Vec<usize>,
    l_idx: Vec<u32>,
    l_val: Vec<f64>,
    u_ptr: Vec<usize>,
    u_idx: Vec<u32>,
    u_val: Vec<f64>,
}

fn amd_order(csc_ptr: &[usize], csc_idx: &[usize], n: usize) -> Result<Vec<usize>, SolveError> {
    let mut perm = vec![0usize; n];
    let mut perm_inv = vec![0usize; n];
    let sym = SymbolicSparseColMatRef::new_checked(n, n, csc_ptr, None, csc_idx);
    let req = amd::order_scratch::<usize>(n, csc_idx.len());
    let mut buf = MemBuffer::try_new(req).map_err(|e| SolveError::Ordering(format!("{e:?}")))?;
    amd::order(&mut perm, &mut perm_inv, sym, amd::Control::default(), MemStack::new(&mut buf))
        .map_err(|e| SolveError::Ordering(format!("{e:?}")))?;
    Ok(perm)
}

/// Factorizes `a` for repeated solves.
pub fn factorize(a: &CsrMatrix) -> Result<Factorization, SolveError> {
    factorize_shared(Arc::new(a.clone()))
}

/// Like [`factorize`], without copying a matrix that is already shared.
pub fn factorize_shared(a: Arc<CsrMatrix>) -> Result<Factorization, SolveError> {
    factorize_with_threshold(a, PIVOT_THRESHOLD)
}

/// Like [`factorize_shared`] with a custom diagonal preference in `[0, 1]`.
/// Small values suit matrices known to be quasi-definite.
pub fn factorize_with_threshold(a: Arc<CsrMatrix>, threshold: f64) -> Result<Factorization, SolveError> {
    if a.nrows != a.ncols {
        return Err(SolveError::NotSquare { nrows: a.nrows, ncols: a.ncols });
    }
    let n = a.nrows;
    // column-major view of A
    let csc = a.transpose();
    let col_order = if n > 0 { amd_order(&csc.row_ptr, &csc.col_idx, n)? } else { Vec::new() };

    let mut pinv = vec![NONE; n];
    let mut l_ptr = Vec::with_capacity(n + 1);
    let mut u_ptr = Vec::with_capacity(n + 1);
    let est = 4 * a.nnz() + n;
    let mut l_idx: Vec<u32> = Vec::with_capacity(est);
    let mut l_val: Vec<f64> = Vec::with_capacity(est);
    let mut u_idx: Vec<u32> = Vec::with_capacity(est);
    let mut u_val: Vec<f64> = Vec::with_capacity(est);

    let mut x = vec![0.0; n];
    let mut reach = vec![0usize; n];
    let mut stack = vec![0usize; n];
    let mut pstack = vec![0usize; n];
    let mut mark = vec![NONE; n];

    for k in 0..n {
        l_ptr.push(l_val.len());
        u_ptr.push(u_val.len());
        let col = col_order[k];
        let (bi, bx) = csc.row(col);

        // nonzero pattern of L \ A(:, col), topologically ordered
        let mut top = n;
        for &i in bi {
            if mark[i] == k {
                continue;
            }
            let mut head = 0usize;
            stack[0] = i;
            loop {
                let j = stack[head];
                let jl = pinv[j];
                if mark[j] != k {
                    mark[j] = k;
                    pstack[head] = if jl == NONE { 0 } else { l_ptr[jl] };
                }
                let end = if jl == NONE { 0 } else { l_ptr[jl + 1] };
                let mut descended = false;
                let mut p = pstack[head];
                while p < end {
                    let child = l_idx[p] as usize;
                    p += 1;
                    if mark[child] != k {
                        pstack[head] = p;
                        head += 1;
                        stack[head] = child;
                        descended = true;
                        break;
                    }
                }
                if !descended {
                    top -= 1;
                    reach[top] = j;
                    if head == 0 {
                        break;
                    }
                    head -= 1;
                }
            }
        }

        // sparse triangular solve
        for &i in &reach[top..] {
            x[i] = 0.0;
        }
        let mut col_max = 0.0f64;
        for (&i, &v) in bi.iter().zip(bx) {
            x[i] = v;
            col_max = col_max.max(v.abs());
        }
        for &j in &reach[top..] {
            let jl = pinv[j];
            if jl == NONE {
                continue;
            }
            let xj = x[j];
            // first entry of each L column is the unit diagonal
            for p in l_ptr[jl] + 1..l_ptr[jl + 1] {
                x[l_idx[p] as usize] -= l_val[p] * xj;
            }
        }

        // pivot selection
        let mut ipiv = NONE;
        let mut best = -1.0;
        for &i in &reach[top..] {
            if pinv[i] == NONE {
                let t = x[i].abs();
                if t > best {
                    best = t;
                    ipiv = i;
                }
            } else {
                u_idx.push(pinv[i] as u32);
                u_val.push(x[i]);
            }
        }
        if ipiv == NONE || !(best > 1e-14 * col_max) {
            return Err(SolveError::Singular { step: k, column: col });
        }
        if pinv[col] == NONE && mark[col] == k && x[col].abs() >= threshold * best {
            ipiv = col;
        }
        let pivot = x[ipiv];
        u_idx.push(k as u32);
        u_val.push(pivot);
        pinv[ipiv] = k;
        l_idx.push(ipiv as u32);
        l_val.push(1.0);
        for &i in &reach[top..] {
            if pinv[i] == NONE {
                l_idx.push(i as u32);
                l_val.push(x[i] / pivot);
            }
            x[i] = 0.0;
        }
    }
    l_ptr.push(l_val.len());
    u_ptr.push(u_val.len());
    for li in l_idx.iter_mut() {
        *li = pinv[*li as usize] as u32;
    }
    let mut row_of_step = vec![0usize; n];
    for (row, &step) in pinv.iter().enumerate() {
        row_of_step[step] = row;
    }
    l_idx.shrink_to_fit();
    l_val.shrink_to_fit();
    u_idx.shrink_to_fit();
    u_val.shrink_to_fit();
    Ok(Factorization { matrix: a, n, col_order, row_of_step, l_ptr, l_idx, l_val, u_ptr, u_idx, u_val })
}

impl Factorization {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    /// Stored entries in `L` and `U` together.
    pub fn factor_nnz(&self) -> usize {
        self.l_val.len() + self.u_val.len()
    }

    fn solve_factors(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = self.row_of_step.iter().map(|&r| b[r]).collect();
        for j in 0..n {
            let xj = x[j];
            if xj != 0.0 {
                for p in self.l_ptr[j] + 1..self.l_ptr[j + 1] {
                    x[self.l_idx[p] as usize] -= self.l_val[p] * xj;
                }
            }
        }
        for j in (0..n).rev() {
            let diag = self.u_ptr[j + 1] - 1;
            x[j] /= self.u_val[diag];
            let xj = x[j];
            if xj != 0.0 {
                for p in self.u_ptr[j]..diag {
                    x[self.u_idx[p] as usize] -= self.u_val[p] * xj;
                }
            }
        }
        let mut out = vec![0.0; n];
        for (k, &c) in self.col_order.iter().enumerate() {
            out[c] = x[k];
        }
        out
    }

    /// Solves `A x = rhs` to relative residual below [`RESIDUAL_TOLERANCE`],
    /// applying a few steps of iterative refinement when needed.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>, SolveError> {
        if rhs.len() != self.n {
            return Err(SolveError::DimensionMismatch { expected: self.n, got: rhs.len() });
        }
        let bnorm = norm2(rhs);
        if bnorm == 0.0 {
            return Ok(vec![0.0; self.n]);
        }
        let mut x = self.solve_factors(rhs);
        let mut ax = vec![0.0; self.n];
        let mut residual = f64::INFINITY;
        for step in 0..=REFINEMENT_STEPS {
            self.matrix.mul_vec_into(&x, &mut ax);
            let r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
            residual = norm2(&r) / bnorm;
            if residual < 0.01 * RESIDUAL_TOLERANCE || step == REFINEMENT_STEPS {
                break;
            }
            let dx = self.solve_factors(&r);
            x.iter_mut().zip(&dx).for_each(|(xi, d)| *xi += d);
        }
        if residual.is_finite() && residual < RESIDUAL_TOLERANCE {
            Ok(x)
        } else {
            Err(SolveError::NotConverged { residual, tolerance: RESIDUAL_TOLERANCE })
        }
    }
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
