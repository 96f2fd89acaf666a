//! Dense and sparse linear-algebra helpers shared by the FE, filter and
//! stability modules.
//!
//! Sparse matrices use [`nalgebra_sparse::CsrMatrix`]; symmetric positive
//! definite sparse systems are factored with an envelope (skyline) Cholesky
//! after a reverse Cuthill-McKee renumbering, which keeps the profile of FE
//! matrices on structured meshes narrow.

use std::collections::VecDeque;

use nalgebra::{Complex, DMatrix, DVector};
use nalgebra_sparse::{CooMatrix, CsrMatrix};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;
pub type SparseMatrix = CsrMatrix<f64>;

/// Builds a CSR matrix from `(row, col, value)` triplets, summing duplicates.
/// Triplets are accumulated in the given order, so a fixed traversal yields
/// bit-identical values.
pub fn csr_from_triplets(
    nrows: usize,
    ncols: usize,
    triplets: impl IntoIterator<Item = (usize, usize, f64)>,
) -> SparseMatrix {
    let mut coo = CooMatrix::new(nrows, ncols);
    for (i, j, v) in triplets {
        coo.push(i, j, v);
    }
    CsrMatrix::from(&coo)
}

pub fn csr_to_dense(a: &SparseMatrix) -> Matrix {
    let mut out = Matrix::zeros(a.nrows(), a.ncols());
    for (i, j, v) in a.triplet_iter() {
        out[(i, j)] += *v;
    }
    out
}

pub fn csr_mul_vec(a: &SparseMatrix, x: &Vector) -> Vector {
    let mut y = Vector::zeros(a.nrows());
    csr_mul_vec_into(a, x.as_slice(), y.as_mut_slice());
    y
}

pub fn csr_mul_vec_into(a: &SparseMatrix, x: &[f64], y: &mut [f64]) {
    let (offsets, cols, vals) = a.csr_data();
    for (i, yi) in y.iter_mut().enumerate() {
        let mut acc = 0.0;
        for k in offsets[i]..offsets[i + 1] {
            acc += vals[k] * x[cols[k]];
        }
        *yi = acc;
    }
}

/// `alpha * a + beta * b` for matrices of identical shape.
pub fn csr_axpby(alpha: f64, a: &SparseMatrix, beta: f64, b: &SparseMatrix) -> SparseMatrix {
    let triplets = a
        .triplet_iter()
        .map(|(i, j, v)| (i, j, alpha * v))
        .chain(b.triplet_iter().map(|(i, j, v)| (i, j, beta * v)));
    csr_from_triplets(a.nrows(), a.ncols(), triplets)
}

/// Sparse copy of a dense matrix, keeping only nonzero entries.
pub fn dense_to_csr(a: &Matrix) -> SparseMatrix {
    let mut t = Vec::new();
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            if a[(i, j)] != 0.0 {
                t.push((i, j, a[(i, j)]));
            }
        }
    }
    csr_from_triplets(a.nrows(), a.ncols(), t)
}

/// Dense copy of the submatrix `a[rows, cols]`.
pub fn csr_submatrix(a: &SparseMatrix, rows: &[usize], cols: &[usize]) -> Matrix {
    let mut col_pos = vec![usize::MAX; a.ncols()];
    for (k, &c) in cols.iter().enumerate() {
        col_pos[c] = k;
    }
    let mut out = Matrix::zeros(rows.len(), cols.len());
    for (r, &i) in rows.iter().enumerate() {
        let row = a.row(i);
        for (&j, &v) in row.col_indices().iter().zip(row.values()) {
            let c = col_pos[j];
            if c != usize::MAX {
                out[(r, c)] += v;
            }
        }
    }
    out
}

/// Number of stored entries whose magnitude is nonzero.
pub fn csr_nnz(a: &SparseMatrix) -> usize {
    a.values().iter().filter(|v| **v != 0.0).count()
}

pub fn max_abs(a: &Matrix) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

pub fn symmetrize(a: &mut Matrix) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// Solves `a x = b` for symmetric positive definite `a` with a dense Cholesky
/// factorization.
pub fn spd_solve(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::numerical("matrix is not symmetric positive definite"))?;
    Ok(chol.solve(b))
}

/// `(m + dt*s)^{-1} * rhs` for symmetric positive definite `m + dt*s`.
pub fn implicit_solve(m: &Matrix, s: &Matrix, dt: f64, rhs: &Matrix) -> Result<Matrix> {
    let k = m + s * dt;
    spd_solve(&k, rhs)
}

/// All eigenvalues of a general real square matrix (real Schur form).
pub fn eigenvalues(a: &Matrix) -> Result<Vec<Complex<f64>>> {
    if a.nrows() == 0 {
        return Ok(Vec::new());
    }
    let schur = nalgebra::Schur::try_new(a.clone(), 1e-14, 100_000)
        .ok_or_else(|| Error::numerical("Schur decomposition did not converge"))?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

pub fn spectral_radius(a: &Matrix) -> Result<f64> {
    Ok(eigenvalues(a)?.iter().map(|z| z.norm()).fold(0.0_f64, f64::max))
}

/// Largest eigenvalue of a symmetric matrix.
pub fn sym_max_eigenvalue(a: &Matrix) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    let eig = nalgebra::SymmetricEigen::new(a.clone());
    eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

pub fn sym_min_eigenvalue(a: &Matrix) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    let eig = nalgebra::SymmetricEigen::new(a.clone());
    eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Reverse Cuthill-McKee ordering of the symmetric sparsity graph of `a`.
/// Returns `perm` with `perm[new] = old`.
pub fn reverse_cuthill_mckee(a: &SparseMatrix) -> Vec<usize> {
    let n = a.nrows();
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let mut nb: Vec<usize> = a.row(i).col_indices().iter().copied().filter(|&j| j != i).collect();
            nb.sort_unstable();
            nb.dedup();
            nb
        })
        .collect();
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);

    while order.len() < n {
        let start = (0..n)
            .filter(|&i| !visited[i])
            .min_by_key(|&i| (degree[i], i))
            .expect("unvisited vertex exists");
        let start = pseudo_peripheral(start, &adj, &degree);
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            next.sort_unstable_by_key(|&w| (degree[w], w));
            for w in next {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

fn bfs_levels(start: usize, adj: &[Vec<usize>]) -> Vec<usize> {
    let mut level = vec![usize::MAX; adj.len()];
    level[start] = 0;
    let mut queue = VecDeque::from([start]);
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if level[w] == usize::MAX {
                level[w] = level[v] + 1;
                queue.push_back(w);
            }
        }
    }
    level
}

fn pseudo_peripheral(mut start: usize, adj: &[Vec<usize>], degree: &[usize]) -> usize {
    let mut ecc = 0;
    loop {
        let level = bfs_levels(start, adj);
        let max_level = level.iter().filter(|&&l| l != usize::MAX).max().copied().unwrap_or(0);
        if max_level <= ecc {
            return start;
        }
        ecc = max_level;
        start = (0..adj.len())
            .filter(|&i| level[i] == max_level)
            .min_by_key(|&i| (degree[i], i))
            .expect("last level is nonempty");
    }
}

/// Envelope Cholesky factorization `P A Pᵀ = L Lᵀ` of a sparse symmetric
/// positive definite matrix.
#[derive(Debug, Clone)]
pub struct SparseCholesky {
    n: usize,
    /// `perm[new] = old`
    perm: Vec<usize>,
    /// First stored column of each row of `L`.
    first: Vec<usize>,
    /// Start of each row inside `values`.
    start: Vec<usize>,
    values: Vec<f64>,
}

impl SparseCholesky {
    pub fn new(a: &SparseMatrix) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::invalid("Cholesky needs a square matrix"));
        }
        let n = a.nrows();
        let perm = reverse_cuthill_mckee(a);
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }

        let mut first: Vec<usize> = (0..n).collect();
        for (i, j, _) in a.triplet_iter() {
            let (pi, pj) = (inv[i], inv[j]);
            let (r, c) = if pi >= pj { (pi, pj) } else { (pj, pi) };
            first[r] = first[r].min(c);
        }
        let mut start = Vec::with_capacity(n + 1);
        let mut total = 0;
        for (i, &f) in first.iter().enumerate() {
            start.push(total);
            total += i - f + 1;
        }
        start.push(total);

        let mut values = vec![0.0; total];
        for (i, j, v) in a.triplet_iter() {
            let (pi, pj) = (inv[i], inv[j]);
            if pi >= pj {
                values[start[pi] + pj - first[pi]] += *v;
            }
        }

        for i in 0..n {
            let fi = first[i];
            for j in fi..=i {
                let fj = first[j];
                let lo = fi.max(fj);
                let mut s = values[start[i] + j - fi];
                let row_i = &values[start[i] + lo - fi..start[i] + j - fi];
                let row_j = &values[start[j] + lo - fj..start[j] + j - fj];
                for (x, y) in row_i.iter().zip(row_j) {
                    s -= x * y;
                }
                if j < i {
                    let djj = values[start[j] + j - fj];
                    values[start[i] + j - fi] = s / djj;
                } else {
                    if s <= 0.0 || !s.is_finite() {
                        return Err(Error::numerical(format!(
                            "matrix is not positive definite (pivot {s:e} at row {})",
                            perm[i]
                        )));
                    }
                    values[start[i] + i - fi] = s.sqrt();
                }
            }
        }
        Ok(Self {
            n,
            perm,
            first,
            start,
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of stored entries of the factor.
    pub fn envelope_size(&self) -> usize {
        self.values.len()
    }

    pub fn solve(&self, b: &Vector) -> Vector {
        let mut x = b.clone();
        self.solve_in_place(x.as_mut_slice());
        x
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        let mut y: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.values[self.start[i]..self.start[i + 1]];
            let mut s = y[i];
            for (k, l) in (fi..i).zip(row) {
                s -= l * y[k];
            }
            y[i] = s / row[i - fi];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let row = &self.values[self.start[i]..self.start[i + 1]];
            y[i] /= row[i - fi];
            let yi = y[i];
            for (k, l) in (fi..i).zip(row) {
                y[k] -= l * yi;
            }
        }
        for (new, &old) in self.perm.iter().enumerate() {
            b[old] = y[new];
        }
    }

    pub fn solve_matrix(&self, b: &Matrix) -> Matrix {
        let mut out = b.clone();
        for mut col in out.column_iter_mut() {
            self.solve_in_place(col.as_mut_slice());
        }
        out
    }
}
