//! Sparse matrices and symmetric positive definite solvers.
//!
//! Storage is CSR with sorted, duplicate-free column indices. The direct
//! solver is an LDL^T factorization under a reverse Cuthill-McKee ordering;
//! the iterative fallback is conjugate gradients with Jacobi preconditioning.
//! Every operation is deterministic: identical inputs produce bit-identical
//! results.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SparseError {
    #[error("dimension mismatch: {0}")]
    ShapeMismatch(String),
    #[error("matrix is not symmetric: max |A - A^T| = {max_asym:.3e} exceeds tolerance {tol:.3e}")]
    NotSymmetric { max_asym: f64, tol: f64 },
    #[error("matrix is not positive definite: pivot {pivot} has value {value:.6e}")]
    NotSpd { pivot: usize, value: f64 },
    #[error("iterative solver reached {iterations} iterations with relative residual {residual:.3e} (target {tol:.1e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        tol: f64,
    },
    #[error("matrix or right-hand side contains non-finite values")]
    NotFinite,
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

/// Triplet accumulator; duplicates sum on finalize.
#[derive(Debug)]
pub struct CooBuilder {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl CooBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        CooBuilder {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        self.entries.push((row, col, value));
    }

    /// Sorts, sums duplicates, and drops entries that sum to exactly zero.
    pub fn finalize(self) -> SparseMatrix {
        let CooBuilder {
            nrows,
            ncols,
            mut entries,
        } = self;
        entries.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        let mut it = entries.into_iter().peekable();
        while let Some((r, c, mut v)) = it.next() {
            while let Some(&(r2, c2, v2)) = it.peek() {
                if r2 == r && c2 == c {
                    v += v2;
                    it.next();
                } else {
                    break;
                }
            }
            if v != 0.0 {
                indptr[r + 1] += 1;
                indices.push(c);
                values.push(v);
            }
        }
        for r in 0..nrows {
            indptr[r + 1] += indptr[r];
        }
        SparseMatrix {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        }
    }
}

impl SparseMatrix {
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lo = self.indptr[r];
        let hi = self.indptr[r + 1];
        self.indices[lo..hi]
            .iter()
            .copied()
            .zip(self.values[lo..hi].iter().copied())
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        let mut y = vec![0.0; self.nrows];
        for (r, yr) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for idx in self.indptr[r]..self.indptr[r + 1] {
                acc += self.values[idx] * x[self.indices[idx]];
            }
            *yr = acc;
        }
        y
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut indptr = vec![0usize; self.ncols + 1];
        for &c in &self.indices {
            indptr[c + 1] += 1;
        }
        for c in 0..self.ncols {
            indptr[c + 1] += indptr[c];
        }
        let mut cursor = indptr.clone();
        let mut indices = vec![0usize; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for r in 0..self.nrows {
            for idx in self.indptr[r]..self.indptr[r + 1] {
                let c = self.indices[idx];
                let pos = cursor[c];
                indices[pos] = r;
                values[pos] = self.values[idx];
                cursor[c] += 1;
            }
        }
        SparseMatrix {
            nrows: self.ncols,
            ncols: self.nrows,
            indptr,
            indices,
            values,
        }
    }

    /// Row-by-row product with a dense accumulator; output rows sorted.
    pub fn matmul(&self, other: &SparseMatrix) -> SparseMatrix {
        assert_eq!(self.ncols, other.nrows, "matmul shape mismatch");
        let n = other.ncols;
        let mut acc = vec![0.0f64; n];
        let mut marker = vec![usize::MAX; n];
        let mut touched: Vec<usize> = Vec::new();
        let mut indptr = Vec::with_capacity(self.nrows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for r in 0..self.nrows {
            touched.clear();
            for idx in self.indptr[r]..self.indptr[r + 1] {
                let k = self.indices[idx];
                let a = self.values[idx];
                for jdx in other.indptr[k]..other.indptr[k + 1] {
                    let j = other.indices[jdx];
                    if marker[j] != r {
                        marker[j] = r;
                        acc[j] = 0.0;
                        touched.push(j);
                    }
                    acc[j] += a * other.values[jdx];
                }
            }
            touched.sort_unstable();
            for &j in &touched {
                indices.push(j);
                values.push(acc[j]);
            }
            indptr.push(indices.len());
        }
        SparseMatrix {
            nrows: self.nrows,
            ncols: n,
            indptr,
            indices,
            values,
        }
    }

    pub fn diag(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.nrows.min(self.ncols)];
        for (r, dr) in d.iter_mut().enumerate() {
            for idx in self.indptr[r]..self.indptr[r + 1] {
                if self.indices[idx] == r {
                    *dr = self.values[idx];
                }
            }
        }
        d
    }

    /// Largest absolute entry of A - A^T.
    pub fn max_asymmetry(&self) -> f64 {
        if self.nrows != self.ncols {
            return f64::INFINITY;
        }
        let t = self.transpose();
        let mut max = 0.0f64;
        for r in 0..self.nrows {
            let mut a = self.row(r).peekable();
            let mut b = t.row(r).peekable();
            loop {
                match (a.peek().copied(), b.peek().copied()) {
                    (Some((ca, va)), Some((cb, vb))) => {
                        if ca == cb {
                            max = max.max((va - vb).abs());
                            a.next();
                            b.next();
                        } else if ca < cb {
                            max = max.max(va.abs());
                            a.next();
                        } else {
                            max = max.max(vb.abs());
                            b.next();
                        }
                    }
                    (Some((_, va)), None) => {
                        max = max.max(va.abs());
                        a.next();
                    }
                    (None, Some((_, vb))) => {
                        max = max.max(vb.abs());
                        b.next();
                    }
                    (None, None) => break,
                }
            }
        }
        max
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.nrows, self.ncols);
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                m[(r, c)] = v;
            }
        }
        m
    }
}

/// R^T A R for a square A and conforming R.
pub fn triple_product(a: &SparseMatrix, r: &SparseMatrix) -> SparseMatrix {
    assert_eq!(a.nrows, a.ncols, "triple_product needs square A");
    assert_eq!(a.ncols, r.nrows, "triple_product shape mismatch");
    r.transpose().matmul(&a.matmul(r))
}

/// Reverse Cuthill-McKee ordering of a structurally symmetric matrix.
/// Returns perm with perm[new] = old.
pub fn rcm_ordering(a: &SparseMatrix) -> Vec<usize> {
    let n = a.nrows;
    let degree: Vec<usize> = (0..n)
        .map(|r| a.row(r).filter(|&(c, _)| c != r).count())
        .collect();
    let neighbors = |v: usize| a.row(v).map(|(c, _)| c).filter(move |&c| c != v);

    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut level_of = vec![usize::MAX; n];
    while let Some(start) = (0..n)
        .filter(|&v| !visited[v])
        .min_by_key(|&v| (degree[v], v))
    {
        // Pseudo-peripheral refinement: walk to a deepest min-degree node.
        let mut root = start;
        let mut ecc = 0usize;
        for _ in 0..4 {
            level_of.iter_mut().for_each(|l| *l = usize::MAX);
            let mut frontier = vec![root];
            level_of[root] = 0;
            let mut depth = 0;
            let mut last = vec![root];
            while !frontier.is_empty() {
                last = frontier.clone();
                let mut next = Vec::new();
                for &v in &frontier {
                    for w in neighbors(v) {
                        if !visited[w] && level_of[w] == usize::MAX {
                            level_of[w] = level_of[v] + 1;
                            next.push(w);
                        }
                    }
                }
                if next.is_empty() {
                    depth = level_of[last[0]];
                    break;
                }
                frontier = next;
            }
            let candidate = *last.iter().min_by_key(|&&v| (degree[v], v)).unwrap();
            if depth > ecc {
                ecc = depth;
                root = candidate;
            } else {
                break;
            }
        }
        // Component BFS, neighbors by ascending (degree, id).
        let mut queue = std::collections::VecDeque::new();
        visited[root] = true;
        queue.push_back(root);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nb: Vec<usize> = neighbors(v).filter(|&w| !visited[w]).collect();
            nb.sort_unstable_by_key(|&w| (degree[w], w));
            for w in nb {
                if !visited[w] {
                    visited[w] = true;
                    queue.push_back(w);
                }
            }
        }
    }
    order.reverse();
    order
}

/// LDL^T factorization of a sparse SPD matrix under an RCM ordering.
pub struct LdlFactor {
    n: usize,
    /// perm[new] = old.
    perm: Vec<usize>,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
}

impl LdlFactor {
    pub fn factor(a: &SparseMatrix) -> Result<Self, SparseError> {
        let n = a.nrows;
        if a.ncols != n {
            return Err(SparseError::ShapeMismatch(format!(
                "{}x{} is not square",
                a.nrows, a.ncols
            )));
        }
        if !a.values.iter().all(|v| v.is_finite()) {
            return Err(SparseError::NotFinite);
        }
        let perm = rcm_ordering(a);
        let mut iperm = vec![0usize; n];
        for (newi, &old) in perm.iter().enumerate() {
            iperm[old] = newi;
        }

        // Permuted upper triangle in CSC: column j holds rows i <= j.
        // Keeping only entries with iperm[r] <= iperm[c] takes each symmetric
        // pair once and the diagonal once.
        let mut colcnt = vec![0usize; n + 1];
        for r in 0..n {
            for (c, _) in a.row(r) {
                let (i, j) = (iperm[r], iperm[c]);
                if i <= j {
                    colcnt[j + 1] += 1;
                }
            }
        }
        for j in 0..n {
            colcnt[j + 1] += colcnt[j];
        }
        let bp = colcnt.clone();
        let mut cursor = colcnt;
        let nz = bp[n];
        let mut bi = vec![0usize; nz];
        let mut bx = vec![0.0f64; nz];
        for r in 0..n {
            for (c, v) in a.row(r) {
                let (i, j) = (iperm[r], iperm[c]);
                if i <= j {
                    let pos = cursor[j];
                    bi[pos] = i;
                    bx[pos] = v;
                    cursor[j] += 1;
                }
            }
        }

        // Symbolic pass: elimination tree and column counts of L.
        const NONE: usize = usize::MAX;
        let mut parent = vec![NONE; n];
        let mut flag = vec![NONE; n];
        let mut lnz = vec![0usize; n];
        for j in 0..n {
            flag[j] = j;
            for &row in &bi[bp[j]..bp[j + 1]] {
                let mut i = row;
                while flag[i] != j {
                    if parent[i] == NONE {
                        parent[i] = j;
                    }
                    lnz[i] += 1;
                    flag[i] = j;
                    i = parent[i];
                }
            }
        }
        let mut lp = vec![0usize; n + 1];
        for j in 0..n {
            lp[j + 1] = lp[j] + lnz[j];
        }
        let mut li = vec![0usize; lp[n]];
        let mut lx = vec![0.0f64; lp[n]];
        let mut d = vec![0.0f64; n];

        // Numeric pass, one row of L at a time (up-looking).
        let mut y = vec![0.0f64; n];
        let mut pattern = vec![0usize; n];
        let mut used = vec![0usize; n];
        let mut flag = vec![NONE; n];
        let mut segment = Vec::with_capacity(n);
        for j in 0..n {
            let mut top = n;
            flag[j] = j;
            y[j] = 0.0;
            for p in bp[j]..bp[j + 1] {
                let entry = bi[p];
                y[entry] += bx[p];
                segment.clear();
                let mut i = entry;
                while flag[i] != j {
                    segment.push(i);
                    flag[i] = j;
                    i = parent[i];
                }
                for &s in segment.iter().rev() {
                    top -= 1;
                    pattern[top] = s;
                }
            }
            d[j] = y[j];
            y[j] = 0.0;
            for &k in &pattern[top..n] {
                let yk = y[k];
                y[k] = 0.0;
                let lkj = yk / d[k];
                for p in lp[k]..lp[k] + used[k] {
                    y[li[p]] -= lx[p] * yk;
                }
                let p = lp[k] + used[k];
                li[p] = j;
                lx[p] = lkj;
                used[k] += 1;
                d[j] -= lkj * yk;
            }
            // d[j].is_nan() must fail here too, hence no plain <= comparison.
            if d[j].partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
                return Err(SparseError::NotSpd {
                    pivot: perm[j],
                    value: d[j],
                });
            }
        }

        Ok(LdlFactor {
            n,
            perm,
            lp,
            li,
            lx,
            d,
        })
    }

    pub fn nnz(&self) -> usize {
        self.li.len() + self.n
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let mut z: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        for j in 0..self.n {
            for p in self.lp[j]..self.lp[j + 1] {
                z[self.li[p]] -= self.lx[p] * z[j];
            }
        }
        for (zj, dj) in z.iter_mut().zip(&self.d) {
            *zj /= dj;
        }
        for j in (0..self.n).rev() {
            for p in self.lp[j]..self.lp[j + 1] {
                z[j] -= self.lx[p] * z[self.li[p]];
            }
        }
        let mut x = vec![0.0; self.n];
        for (newi, &old) in self.perm.iter().enumerate() {
            x[old] = z[newi];
        }
        x
    }
}

/// Jacobi-preconditioned conjugate gradients.
/// Returns the solution, iteration count, and final true relative residual.
pub fn pcg_jacobi(
    a: &SparseMatrix,
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, usize, f64), SparseError> {
    let n = a.nrows;
    assert_eq!(b.len(), n);
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok((vec![0.0; n], 0, 0.0));
    }
    let diag = a.diag();
    // NaN diagonals must be caught as well, hence the partial_cmp form.
    let bad = |v: f64| v.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater);
    if let Some(i) = diag.iter().position(|&v| bad(v)) {
        return Err(SparseError::NotSpd {
            pivot: i,
            value: diag[i],
        });
    }
    let minv: Vec<f64> = diag.iter().map(|&v| 1.0 / v).collect();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&minv).map(|(ri, mi)| ri * mi).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut iterations = 0;
    while iterations < max_iter {
        let q = a.matvec(&p);
        let pq = dot(&p, &q);
        if bad(pq) {
            return Err(SparseError::NotSpd {
                pivot: iterations,
                value: pq,
            });
        }
        let alpha = rz / pq;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        iterations += 1;
        if norm2(&r) <= tol * bnorm {
            break;
        }
        for i in 0..n {
            z[i] = r[i] * minv[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let true_res = {
        let ax = a.matvec(&x);
        let res: Vec<f64> = ax.iter().zip(b).map(|(axi, bi)| bi - axi).collect();
        norm2(&res) / bnorm
    };
    if true_res > tol {
        return Err(SparseError::NoConvergence {
            iterations,
            residual: true_res,
            tol,
        });
    }
    Ok((x, iterations, true_res))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    Direct,
    Iterative,
}

#[derive(Debug, Clone)]
pub struct SolveStats {
    pub method: SolverKind,
    pub iterations: usize,
    pub rel_residual: f64,
    /// Nonzeros of the factor, 0 for iterative solves.
    pub factor_nnz: usize,
}

/// Solves A x = b for symmetric positive definite A.
pub fn spd_solve(
    a: &SparseMatrix,
    b: &[f64],
    tol: f64,
    prefer: SolverKind,
) -> Result<(Vec<f64>, SolveStats), SparseError> {
    if a.nrows != a.ncols {
        return Err(SparseError::ShapeMismatch(format!(
            "{}x{} is not square",
            a.nrows, a.ncols
        )));
    }
    if b.len() != a.nrows {
        return Err(SparseError::ShapeMismatch(format!(
            "rhs length {} does not match {} rows",
            b.len(),
            a.nrows
        )));
    }
    if !b.iter().all(|v| v.is_finite()) || !a.values.iter().all(|v| v.is_finite()) {
        return Err(SparseError::NotFinite);
    }
    let sym_tol = 1e-10 * a.max_abs().max(1e-300);
    let asym = a.max_asymmetry();
    if asym > sym_tol {
        return Err(SparseError::NotSymmetric {
            max_asym: asym,
            tol: sym_tol,
        });
    }
    match prefer {
        SolverKind::Direct => {
            let f = LdlFactor::factor(a)?;
            let x = f.solve(b);
            let bnorm = norm2(b).max(1e-300);
            let ax = a.matvec(&x);
            let res: Vec<f64> = ax.iter().zip(b).map(|(axi, bi)| bi - axi).collect();
            let rel = norm2(&res) / bnorm;
            Ok((
                x,
                SolveStats {
                    method: SolverKind::Direct,
                    iterations: 0,
                    rel_residual: rel,
                    factor_nnz: f.nnz(),
                },
            ))
        }
        SolverKind::Iterative => {
            let max_iter = 200 + 50 * a.nrows;
            let (x, iterations, rel) = pcg_jacobi(a, b, tol, max_iter)?;
            Ok((
                x,
                SolveStats {
                    method: SolverKind::Iterative,
                    iterations,
                    rel_residual: rel,
                    factor_nnz: 0,
                },
            ))
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
