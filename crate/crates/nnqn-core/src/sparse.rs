//! Sparse symmetric matrices and a skyline (envelope) Cholesky solver.
//!
//! Two-dimensional FEM systems and graph-Laplacian priors have small envelopes
//! after reverse Cuthill-McKee reordering, so a packed-column skyline `LLᵀ`
//! factorization is both simple and fast. All matrices here are symmetric with
//! only the upper triangle stored.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Symmetric sparse matrix in upper-triangle CSR form (row-sorted columns,
/// `col >= row` for every stored entry).
#[derive(Debug, Clone)]
pub struct SparseSym {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseSym {
    /// Builds from (row, col, value) triplets; duplicates are summed and
    /// entries are mirrored into the upper triangle.
    pub fn from_triplets(n: usize, triplets: impl IntoIterator<Item = (usize, usize, f64)>) -> Self {
        let mut per_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (i, j, v) in triplets {
            let (r, c) = if i <= j { (i, j) } else { (j, i) };
            per_row[r].push((c, v));
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for row in per_row.iter_mut() {
            row.sort_by_key(|&(c, _)| c);
            let mut last: Option<usize> = None;
            for &(c, v) in row.iter() {
                if last == Some(c) {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(cols.len());
        }
        SparseSym { n, row_ptr, cols, vals }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Iterates over stored upper-triangle entries as (row, col, value).
    pub fn upper_entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| {
            (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (i, self.cols[k], self.vals[k]))
        })
    }

    pub fn trace(&self) -> f64 {
        self.upper_entries().filter(|&(i, j, _)| i == j).map(|(_, _, v)| v).sum()
    }

    /// y = A x, expanding the symmetric storage.
    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.n);
        let mut y = DVector::zeros(self.n);
        for i in 0..self.n {
            let xi = x[i];
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.cols[k];
                let v = self.vals[k];
                acc += v * x[j];
                if j != i {
                    y[j] += v * xi;
                }
            }
            y[i] += acc;
        }
        y
    }

    /// Dense expansion (small systems and test oracles).
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n, self.n);
        for (i, j, v) in self.upper_entries() {
            a[(i, j)] += v;
            if i != j {
                a[(j, i)] += v;
            }
        }
        a
    }

    /// Adds `shift` to every diagonal entry, returning a new matrix.
    pub fn shifted_diagonal(&self, shift: f64) -> SparseSym {
        let mut out = self.clone();
        let mut seen_diag = vec![false; self.n];
        for i in 0..out.n {
            for k in out.row_ptr[i]..out.row_ptr[i + 1] {
                if out.cols[k] == i {
                    out.vals[k] += shift;
                    seen_diag[i] = true;
                }
            }
        }
        if seen_diag.iter().all(|&d| d) {
            return out;
        }
        // Rebuild when some diagonal entries were structurally absent.
        let mut triplets: Vec<(usize, usize, f64)> = self.upper_entries().collect();
        for (i, seen) in seen_diag.iter().enumerate() {
            if !seen {
                triplets.push((i, i, 0.0));
            }
        }
        let mut rebuilt = SparseSym::from_triplets(self.n, triplets);
        for i in 0..rebuilt.n {
            for k in rebuilt.row_ptr[i]..rebuilt.row_ptr[i + 1] {
                if rebuilt.cols[k] == i {
                    rebuilt.vals[k] += shift;
                }
            }
        }
        rebuilt
    }

    /// Symmetric adjacency (neighbor lists excluding the diagonal).
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for (i, j, _) in self.upper_entries() {
            if i != j {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
        adj
    }
}

/// Reverse Cuthill-McKee ordering of an undirected graph given as neighbor
/// lists. Returns `perm` with `perm[new] = old`.
pub fn reverse_cuthill_mckee(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let degree: Vec<usize> = adj.iter().map(|a| a.len()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    loop {
        // Lowest-degree unvisited node seeds the next component.
        let start = match (0..n).filter(|&i| !visited[i]).min_by_key(|&i| degree[i]) {
            Some(s) => s,
            None => break,
        };
        let mut queue = std::collections::VecDeque::new();
        visited[start] = true;
        queue.push_back(start);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            let mut nbrs: Vec<usize> = adj[u].iter().copied().filter(|&v| !visited[v]).collect();
            nbrs.sort_by_key(|&v| degree[v]);
            for v in nbrs {
                if !visited[v] {
                    visited[v] = true;
                    queue.push_back(v);
                }
            }
        }
    }
    order.reverse();
    order
}

/// Symmetric positive definite skyline (envelope) Cholesky factorization.
///
/// Columns of the upper triangle are stored packed from their first nonzero
/// row down to the diagonal. The factorization is in-place `A = LᵀL` on that
/// envelope (fill-in stays inside the envelope).
#[derive(Debug, Clone)]
pub struct SkylineFactor {
    n: usize,
    /// first stored row of each column
    col_top: Vec<usize>,
    /// start offset of each column in `vals`; column j occupies
    /// `vals[off[j]..off[j] + (j - col_top[j] + 1)]`, diagonal last.
    off: Vec<usize>,
    vals: Vec<f64>,
}

/// Mutable skyline storage prior to factorization.
#[derive(Debug, Clone)]
pub struct SkylineMatrix {
    n: usize,
    col_top: Vec<usize>,
    off: Vec<usize>,
    pub vals: Vec<f64>,
}

impl SkylineMatrix {
    /// Allocates storage for a symmetric matrix whose column envelopes cover
    /// all (row, col) pairs produced by `pattern` (upper triangle, row <= col).
    pub fn from_pattern(n: usize, pattern: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut col_top: Vec<usize> = (0..n).collect();
        for (r, c) in pattern {
            let (r, c) = if r <= c { (r, c) } else { (c, r) };
            if r < col_top[c] {
                col_top[c] = r;
            }
        }
        let mut off = Vec::with_capacity(n + 1);
        let mut total = 0;
        for j in 0..n {
            off.push(total);
            total += j - col_top[j] + 1;
        }
        off.push(total);
        SkylineMatrix { n, col_top, off, vals: vec![0.0; total] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Storage offset of entry (row, col) with row <= col; the entry must lie
    /// inside the envelope.
    #[inline]
    pub fn pos(&self, row: usize, col: usize) -> usize {
        debug_assert!(row <= col && row >= self.col_top[col]);
        self.off[col] + (row - self.col_top[col])
    }

    pub fn clear(&mut self) {
        self.vals.iter_mut().for_each(|v| *v = 0.0);
    }

    #[inline]
    pub fn add(&mut self, row: usize, col: usize, v: f64) {
        let (r, c) = if row <= col { (row, col) } else { (col, row) };
        let p = self.pos(r, c);
        self.vals[p] += v;
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.vals[self.off[j + 1] - 1]).collect()
    }

    /// Dense expansion of the stored envelope (tests and small oracles).
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n, self.n);
        for j in 0..self.n {
            for (k, i) in (self.col_top[j]..=j).enumerate() {
                let v = self.vals[self.off[j] + k];
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
        }
        a
    }

    /// In-place Cholesky. Fails with a numerical error if a pivot falls below
    /// 1e-14 of the largest initial diagonal entry (matrix not SPD to working
    /// precision).
    pub fn factorize(mut self) -> Result<SkylineFactor> {
        let n = self.n;
        let scale = (0..n)
            .map(|j| self.vals[self.off[j + 1] - 1].abs())
            .fold(0.0_f64, f64::max)
            .max(f64::MIN_POSITIVE);
        let pivot_floor = 1e-14 * scale;
        for j in 0..n {
            let top_j = self.col_top[j];
            // Update column j with previously computed columns.
            for i in top_j..j {
                let top_i = self.col_top[i];
                let lo = top_i.max(top_j);
                // dot of L[lo..i, i] and L[lo..i, j]
                let (ci, cj) = (self.off[i] + (lo - top_i), self.off[j] + (lo - top_j));
                let len = i - lo;
                let mut s = 0.0;
                for k in 0..len {
                    s += self.vals[ci + k] * self.vals[cj + k];
                }
                let dii = self.vals[self.off[i + 1] - 1];
                let p = self.off[j] + (i - top_j);
                self.vals[p] = (self.vals[p] - s) / dii;
            }
            // Diagonal pivot.
            let cj = self.off[j];
            let len = j - top_j;
            let mut s = 0.0;
            for k in 0..len {
                let v = self.vals[cj + k];
                s += v * v;
            }
            let p = self.off[j + 1] - 1;
            let d = self.vals[p] - s;
            if !(d > pivot_floor) || !d.is_finite() {
                return Err(Error::numerical(format!(
                    "skyline Cholesky pivot {d:.3e} at column {j} (matrix not SPD to working precision)"
                )));
            }
            self.vals[p] = d.sqrt();
        }
        Ok(SkylineFactor { n, col_top: self.col_top, off: self.off, vals: self.vals })
    }
}

impl SkylineFactor {
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves A x = b in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n);
        // Forward: Lᵀ is the stored columns read as rows of L. Solve L y = b
        // where L[j, i] = vals[pos(i, j)] for i < j.
        for j in 0..self.n {
            let top = self.col_top[j];
            let base = self.off[j];
            let mut s = b[j];
            for (k, bi) in b[top..j].iter().enumerate() {
                s -= self.vals[base + k] * bi;
            }
            b[j] = s / self.vals[self.off[j + 1] - 1];
        }
        // Backward: solve Lᵀ x = y.
        for j in (0..self.n).rev() {
            let top = self.col_top[j];
            let base = self.off[j];
            let xj = b[j] / self.vals[self.off[j + 1] - 1];
            b[j] = xj;
            for (k, bi) in b[top..j].iter_mut().enumerate() {
                *bi -= self.vals[base + k] * xj;
            }
        }
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        self.solve_in_place(x.as_mut_slice());
        x
    }

    /// Solves for every column of `b` (column-major dense RHS block).
    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(b.nrows(), self.n);
        let mut x = b.clone();
        for mut col in x.column_iter_mut() {
            // Column storage is contiguous in nalgebra.
            self.solve_in_place(col.as_mut_slice());
        }
        x
    }
}

/// Factorizes a `SparseSym` after filling a skyline envelope from its pattern.
/// `perm[new] = old` reorders the matrix symmetrically before factorization;
/// solutions are returned in the original ordering.
pub struct OrderedFactor {
    factor: SkylineFactor,
    perm: Vec<usize>,
    inv: Vec<usize>,
}

impl OrderedFactor {
    pub fn new(a: &SparseSym, perm: Vec<usize>) -> Result<Self> {
        let n = a.dim();
        assert_eq!(perm.len(), n);
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut sky = SkylineMatrix::from_pattern(
            n,
            a.upper_entries().map(|(i, j, _)| (inv[i], inv[j])),
        );
        for (i, j, v) in a.upper_entries() {
            sky.add(inv[i], inv[j], v);
        }
        let factor = sky.factorize()?;
        Ok(OrderedFactor { factor, perm, inv })
    }

    /// RCM-ordered factorization of `a`.
    pub fn with_rcm(a: &SparseSym) -> Result<Self> {
        let perm = reverse_cuthill_mckee(&a.adjacency());
        Self::new(a, perm)
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.factor.dim();
        let mut pb = DVector::zeros(n);
        for new in 0..n {
            pb[new] = b[self.perm[new]];
        }
        self.factor.solve_in_place(pb.as_mut_slice());
        let mut x = DVector::zeros(n);
        for old in 0..n {
            x[old] = pb[self.inv[old]];
        }
        x
    }

    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.factor.dim();
        let mut out = DMatrix::zeros(n, b.ncols());
        let mut work = vec![0.0f64; n];
        for (src, mut dst) in b.column_iter().zip(out.column_iter_mut()) {
            for new in 0..n {
                work[new] = src[self.perm[new]];
            }
            self.factor.solve_in_place(&mut work);
            for old in 0..n {
                dst[old] = work[self.inv[old]];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, seed: u64) -> (SparseSym, DMatrix<f64>) {
        // Banded random SPD: diagonally dominant.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut triplets = Vec::new();
        for i in 0..n {
            triplets.push((i, i, 4.0 + rng.gen::<f64>()));
            for w in 1..=3usize {
                if i + w < n {
                    triplets.push((i, i + w, rng.gen::<f64>() * 0.5 - 0.25));
                }
            }
        }
        let a = SparseSym::from_triplets(n, triplets);
        let dense = a.to_dense();
        (a, dense)
    }

    #[test]
    fn skyline_solves_match_dense() {
        let (a, dense) = random_spd(40, 7);
        let f = OrderedFactor::with_rcm(&a).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = DVector::from_fn(40, |_, _| rng.gen::<f64>() - 0.5);
        let x = f.solve(&b);
        let res = &dense * &x - &b;
        assert!(res.norm() < 1e-10 * b.norm());
    }

    #[test]
    fn solve_matrix_matches_vector_solves() {
        let (a, _) = random_spd(25, 3);
        let f = OrderedFactor::with_rcm(&a).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let b = DMatrix::from_fn(25, 4, |_, _| rng.gen::<f64>() - 0.5);
        let xs = f.solve_matrix(&b);
        for c in 0..4 {
            let x = f.solve(&b.column(c).into_owned());
            assert_relative_eq!(xs.column(c).into_owned(), x, epsilon = 1e-13);
        }
    }

    #[test]
    fn non_spd_matrix_is_rejected() {
        let a = SparseSym::from_triplets(2, vec![(0, 0, 1.0), (1, 1, -1.0)]);
        let err = OrderedFactor::with_rcm(&a);
        assert!(err.is_err());
    }

    #[test]
    fn matvec_matches_dense() {
        let (a, dense) = random_spd(30, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = DVector::from_fn(30, |_, _| rng.gen::<f64>() - 0.5);
        assert_relative_eq!(a.mul_vec(&x), &dense * &x, epsilon = 1e-12);
    }

    #[test]
    fn rcm_is_a_permutation() {
        let (a, _) = random_spd(50, 5);
        let mut perm = reverse_cuthill_mckee(&a.adjacency());
        perm.sort_unstable();
        assert_eq!(perm, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn shifted_diagonal_adds_shift() {
        let a = SparseSym::from_triplets(3, vec![(0, 0, 1.0), (0, 2, 0.5), (1, 1, 2.0)]);
        let s = a.shifted_diagonal(0.25);
        let d = s.to_dense();
        assert_relative_eq!(d[(0, 0)], 1.25);
        assert_relative_eq!(d[(1, 1)], 2.25);
        assert_relative_eq!(d[(2, 2)], 0.25); // structurally absent before
        assert_relative_eq!(d[(0, 2)], 0.5);
    }
}
