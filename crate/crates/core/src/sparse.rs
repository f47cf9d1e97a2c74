//! Sparse Cholesky factorization of symmetric positive definite matrices.
//!
//! Up-looking factorization driven by the elimination tree, in natural
//! ordering (no fill-reducing permutation). The symbolic analysis is kept so
//! that matrices sharing a sparsity pattern can be refactored cheaply.

use nalgebra::{DMatrix, DVector};

use crate::error::{AghqError, Result};

/// Upper triangle (including the diagonal) of a symmetric matrix, stored by
/// columns.
#[derive(Debug, Clone, PartialEq)]
struct UpperCsc {
    n: usize,
    colptr: Vec<usize>,
    rows: Vec<usize>,
    values: Vec<f64>,
}

impl UpperCsc {
    fn from_dense(a: &DMatrix<f64>) -> Self {
        let n = a.nrows();
        let mut colptr = Vec::with_capacity(n + 1);
        let mut rows = Vec::new();
        let mut values = Vec::new();
        colptr.push(0);
        for j in 0..n {
            for i in 0..=j {
                let v = a[(i, j)];
                if v != 0.0 || i == j {
                    rows.push(i);
                    values.push(v);
                }
            }
            colptr.push(rows.len());
        }
        UpperCsc {
            n,
            colptr,
            rows,
            values,
        }
    }

    fn same_pattern(&self, other: &UpperCsc) -> bool {
        self.n == other.n && self.colptr == other.colptr && self.rows == other.rows
    }
}

#[derive(Debug, Clone)]
struct Symbolic {
    pattern: UpperCsc,
    parent: Vec<Option<usize>>,
    /// Column pointers of L.
    lp: Vec<usize>,
}

/// Lower Cholesky factor `L` with `A = L Lᵀ`, columns stored compressed with
/// the diagonal entry first.
#[derive(Debug, Clone)]
pub struct SparseCholesky {
    symbolic: Symbolic,
    li: Vec<usize>,
    lx: Vec<f64>,
}

fn elimination_tree(a: &UpperCsc) -> Vec<Option<usize>> {
    let n = a.n;
    let mut parent = vec![None; n];
    let mut ancestor: Vec<Option<usize>> = vec![None; n];
    for k in 0..n {
        for p in a.colptr[k]..a.colptr[k + 1] {
            let mut i = Some(a.rows[p]);
            while let Some(node) = i {
                if node >= k {
                    break;
                }
                let next = ancestor[node];
                ancestor[node] = Some(k);
                if next.is_none() {
                    parent[node] = Some(k);
                }
                i = next;
            }
        }
    }
    parent
}

/// Nonzero pattern of row `k` of L (excluding the diagonal), written to
/// `stack[top..]` in topological order. Returns `top`.
fn row_pattern(a: &UpperCsc, k: usize, parent: &[Option<usize>], stack: &mut [usize], marked: &mut [bool]) -> usize {
    let n = a.n;
    let mut top = n;
    marked[k] = true;
    let mut path = Vec::new();
    for p in a.colptr[k]..a.colptr[k + 1] {
        let mut i = a.rows[p];
        if i > k {
            continue;
        }
        path.clear();
        while !marked[i] {
            path.push(i);
            marked[i] = true;
            match parent[i] {
                Some(next) => i = next,
                None => break,
            }
        }
        while let Some(node) = path.pop() {
            top -= 1;
            stack[top] = node;
        }
    }
    for &i in &stack[top..n] {
        marked[i] = false;
    }
    marked[k] = false;
    top
}

fn analyze(pattern: UpperCsc) -> Symbolic {
    let n = pattern.n;
    let parent = elimination_tree(&pattern);
    let mut counts = vec![1usize; n];
    let mut stack = vec![0usize; n];
    let mut marked = vec![false; n];
    for k in 0..n {
        let top = row_pattern(&pattern, k, &parent, &mut stack, &mut marked);
        for &i in &stack[top..n] {
            counts[i] += 1;
        }
    }
    let mut lp = Vec::with_capacity(n + 1);
    lp.push(0);
    for c in counts {
        lp.push(lp.last().unwrap() + c);
    }
    Symbolic { pattern, parent, lp }
}

impl SparseCholesky {
    /// Factors the symmetric matrix `a`; only its upper triangle is read.
    pub fn factor(a: &DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(AghqError::DimensionMismatch {
                expected: a.nrows(),
                got: a.ncols(),
            });
        }
        let symbolic = analyze(UpperCsc::from_dense(a));
        Self::numeric(symbolic)
    }

    /// Factors `a`, reusing the symbolic analysis when the pattern matches.
    pub fn refactor(self, a: &DMatrix<f64>) -> Result<Self> {
        let pattern = UpperCsc::from_dense(a);
        let symbolic = if pattern.same_pattern(&self.symbolic.pattern) {
            Symbolic {
                pattern,
                ..self.symbolic
            }
        } else {
            analyze(pattern)
        };
        Self::numeric(symbolic)
    }

    fn numeric(symbolic: Symbolic) -> Result<Self> {
        let a = &symbolic.pattern;
        let n = a.n;
        let lp = &symbolic.lp;
        let nnz = lp[n];
        let mut li = vec![0usize; nnz];
        let mut lx = vec![0.0; nnz];
        let mut next: Vec<usize> = lp[..n].to_vec();
        let mut x = vec![0.0; n];
        let mut stack = vec![0usize; n];
        let mut marked = vec![false; n];

        for k in 0..n {
            let top = row_pattern(a, k, &symbolic.parent, &mut stack, &mut marked);
            for p in a.colptr[k]..a.colptr[k + 1] {
                let i = a.rows[p];
                if i <= k {
                    x[i] = a.values[p];
                }
            }
            let mut d = x[k];
            x[k] = 0.0;
            for &i in &stack[top..n] {
                let lki = x[i] / lx[lp[i]];
                x[i] = 0.0;
                for p in (lp[i] + 1)..next[i] {
                    x[li[p]] -= lx[p] * lki;
                }
                d -= lki * lki;
                let p = next[i];
                next[i] += 1;
                li[p] = k;
                lx[p] = lki;
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(AghqError::NotPositiveDefinite(format!(
                    "non-positive pivot {d:e} at column {k}"
                )));
            }
            let p = next[k];
            next[k] += 1;
            li[p] = k;
            lx[p] = d.sqrt();
        }
        Ok(SparseCholesky { symbolic, li, lx })
    }

    pub fn dim(&self) -> usize {
        self.symbolic.pattern.n
    }

    /// Number of stored entries in L.
    pub fn nnz(&self) -> usize {
        self.lx.len()
    }

    pub fn log_det(&self) -> f64 {
        let lp = &self.symbolic.lp;
        2.0 * (0..self.dim()).map(|j| self.lx[lp[j]].ln()).sum::<f64>()
    }

    /// Solves `L y = b` in place.
    pub fn solve_lower_in_place(&self, b: &mut DVector<f64>) {
        let lp = &self.symbolic.lp;
        for j in 0..self.dim() {
            b[j] /= self.lx[lp[j]];
            let bj = b[j];
            for p in (lp[j] + 1)..lp[j + 1] {
                b[self.li[p]] -= self.lx[p] * bj;
            }
        }
    }

    /// Solves `Lᵀ x = b` in place.
    pub fn solve_upper_in_place(&self, b: &mut DVector<f64>) {
        let lp = &self.symbolic.lp;
        for j in (0..self.dim()).rev() {
            let mut acc = b[j];
            for p in (lp[j] + 1)..lp[j + 1] {
                acc -= self.lx[p] * b[self.li[p]];
            }
            b[j] = acc / self.lx[lp[j]];
        }
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        self.solve_lower_in_place(&mut x);
        self.solve_upper_in_place(&mut x);
        x
    }

    pub fn to_dense_lower(&self) -> DMatrix<f64> {
        let n = self.dim();
        let lp = &self.symbolic.lp;
        let mut l = DMatrix::zeros(n, n);
        for j in 0..n {
            for p in lp[j]..lp[j + 1] {
                l[(self.li[p], j)] = self.lx[p];
            }
        }
        l
    }
}
