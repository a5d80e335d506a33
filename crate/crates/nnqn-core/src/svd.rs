//! Thin SVD anchoring and spectral-norm estimation.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Fixed singular triplets of the Jacobian at the linearization point:
/// J(f₀) = U₀ diag(S₀) V₀ᵀ with U₀ (m×m) and V₀ (n×m) orthonormal and S₀
/// non-negative descending.
#[derive(Debug, Clone)]
pub struct SVDAnchor {
    u0: DMatrix<f64>,
    s0: DVector<f64>,
    /// stored transposed: m×n
    v0t: DMatrix<f64>,
}

impl SVDAnchor {
    pub fn u0(&self) -> &DMatrix<f64> {
        &self.u0
    }

    pub fn s0(&self) -> &DVector<f64> {
        &self.s0
    }

    pub fn v0t(&self) -> &DMatrix<f64> {
        &self.v0t
    }

    /// Measurement dimension m.
    pub fn m(&self) -> usize {
        self.u0.nrows()
    }

    /// Parameter dimension n.
    pub fn n(&self) -> usize {
        self.v0t.ncols()
    }

    /// Dense U₀ diag(s) V₀ᵀ for a given singular-value vector.
    pub fn reconstruct_with(&self, s: &DVector<f64>) -> DMatrix<f64> {
        let mut us = self.u0.clone();
        for (j, mut col) in us.column_iter_mut().enumerate() {
            col *= s[j];
        }
        &us * &self.v0t
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.reconstruct_with(&self.s0)
    }
}

/// Thin SVD with singular values sorted in descending order. Requires
/// m <= n (wide matrices; the EIT Jacobian is 256 × N_el).
pub fn thin_svd(j: &DMatrix<f64>) -> Result<SVDAnchor> {
    let (m, n) = j.shape();
    if m > n {
        return Err(Error::contract(format!("thin_svd expects m <= n, got {m}x{n}")));
    }
    if j.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("thin_svd input contains non-finite entries"));
    }
    let svd = j.clone().svd(true, true);
    let u = svd.u.ok_or_else(|| Error::numerical("SVD did not produce U"))?;
    let vt = svd.v_t.ok_or_else(|| Error::numerical("SVD did not produce Vᵀ"))?;
    let s = svd.singular_values;

    // Defensive descending sort (kept stable for reproducibility).
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).unwrap_or(std::cmp::Ordering::Equal));
    let sorted = order.iter().map(|&i| s[i]).collect::<Vec<_>>();
    let mut u0 = DMatrix::zeros(m, m);
    let mut v0t = DMatrix::zeros(m, n);
    for (new, &old) in order.iter().enumerate() {
        u0.set_column(new, &u.column(old));
        v0t.set_row(new, &vt.row(old));
    }
    Ok(SVDAnchor { u0, s0: DVector::from_vec(sorted), v0t })
}

/// Singular values only (descending), skipping the vectors.
pub fn singular_values(j: &DMatrix<f64>) -> DVector<f64> {
    let mut s: Vec<f64> = j.clone().singular_values().iter().cloned().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    DVector::from_vec(s)
}

/// Spectral norm ‖A‖₂ by power iteration on AᵀA (50 iterations, relative
/// tolerance 1e-6, deterministic start).
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    let n = a.ncols();
    if n == 0 || a.nrows() == 0 {
        return 0.0;
    }
    // Deterministic pseudo-random start avoids adversarial orthogonality.
    let mut v = DVector::from_fn(n, |i, _| {
        let x = (i as f64 + 1.0) * 0.754877666246693;
        2.0 * (x - x.floor()) - 1.0
    });
    v /= v.norm();
    let mut sigma = 0.0;
    for _ in 0..50 {
        let av = a * &v;
        let atav = a.transpose() * &av;
        let norm = atav.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let new_sigma = av.norm();
        v = atav / norm;
        if (new_sigma - sigma).abs() <= 1e-6 * new_sigma.max(1e-300) {
            return new_sigma;
        }
        sigma = new_sigma;
    }
    sigma
}
