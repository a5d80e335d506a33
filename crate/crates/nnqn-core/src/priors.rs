//! Regularization terms for the quasi-Newton update: smoothed total variation
//! and graph-Laplacian smoothness, plus the measurement noise weighting.
//!
//! Each prior evaluation returns the value R(σ), its exact gradient ∂R, and a
//! positive semi-definite curvature approximation Γ_R used in the regularized
//! normal equations.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::fem::ConductivityField;
use crate::mesh::{element_adjacency_laplacian, Mesh};
use crate::sparse::SparseSym;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegularizerKind {
    Tv,
    LaplacianSmoothness,
}

/// Prior configuration. `tv_smoothing_beta` is the smoothing parameter of the
/// TV edge penalty √((σ_i-σ_j)² + β) and is ignored by the Laplacian kind.
#[derive(Debug, Clone, Copy)]
pub struct Regularizer {
    pub kind: RegularizerKind,
    pub weight: f64,
    pub tv_smoothing_beta: f64,
}

impl Regularizer {
    pub fn tv(weight: f64, beta: f64) -> Result<Self> {
        let reg = Regularizer { kind: RegularizerKind::Tv, weight, tv_smoothing_beta: beta };
        reg.validate()?;
        Ok(reg)
    }

    pub fn laplacian(weight: f64) -> Result<Self> {
        let reg = Regularizer {
            kind: RegularizerKind::LaplacianSmoothness,
            weight,
            tv_smoothing_beta: 1e-4,
        };
        reg.validate()?;
        Ok(reg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.weight > 0.0) {
            return Err(Error::domain("regularizer weight must be positive"));
        }
        if self.kind == RegularizerKind::Tv && !(self.tv_smoothing_beta > 0.0) {
            return Err(Error::domain("TV smoothing beta must be positive"));
        }
        Ok(())
    }

    /// Whether Γ_R is independent of the current iterate (Laplacian prior).
    pub fn constant_curvature(&self) -> bool {
        self.kind == RegularizerKind::LaplacianSmoothness
    }

    /// Evaluates value, gradient, and curvature at `sigma`. `sigma_ref` is the
    /// reference field of the Laplacian smoothness penalty.
    pub fn evaluate(
        &self,
        mesh: &Mesh,
        sigma: &ConductivityField,
        sigma_ref: &ConductivityField,
    ) -> Result<PriorEval> {
        match self.kind {
            RegularizerKind::Tv => tv_value_and_gradient(mesh, sigma, self),
            RegularizerKind::LaplacianSmoothness => {
                laplacian_value_and_gradient(mesh, sigma, sigma_ref, self)
            }
        }
    }

    /// R(σ) alone, skipping gradient and curvature (line-search probes).
    pub fn value(
        &self,
        mesh: &Mesh,
        sigma: &ConductivityField,
        sigma_ref: &ConductivityField,
    ) -> Result<f64> {
        match self.kind {
            RegularizerKind::Tv => {
                let s = sigma.values();
                let (w, beta) = (self.weight, self.tv_smoothing_beta);
                Ok(mesh
                    .interior_edges()
                    .iter()
                    .map(|e| {
                        let d = s[e.a] - s[e.b];
                        w * e.length * (d * d + beta).sqrt()
                    })
                    .sum())
            }
            RegularizerKind::LaplacianSmoothness => {
                let lap = element_adjacency_laplacian(mesh);
                let r = lap.mul_vec(&(sigma.values() - sigma_ref.values()));
                Ok(self.weight * r.dot(&r))
            }
        }
    }
}

/// Value, exact gradient, and PSD curvature of a prior at one iterate.
#[derive(Debug, Clone)]
pub struct PriorEval {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub curvature: SparseSym,
}

/// Smoothed TV over interior edges:
/// R(σ) = weight · Σ_e ℓ_e √((σ_i-σ_j)² + β), with the Gauss-Newton-style
/// curvature weight · Dᵀ Λ_β D where Λ_β = diag(ℓ_e / √((σ_i-σ_j)² + β)).
pub fn tv_value_and_gradient(
    mesh: &Mesh,
    sigma: &ConductivityField,
    reg: &Regularizer,
) -> Result<PriorEval> {
    if reg.kind != RegularizerKind::Tv {
        return Err(Error::contract("tv_value_and_gradient requires a TV regularizer"));
    }
    reg.validate()?;
    let n = mesh.n_elements();
    if sigma.len() != n {
        return Err(Error::contract("sigma length does not match element count"));
    }
    let s = sigma.values();
    let (w, beta) = (reg.weight, reg.tv_smoothing_beta);
    let mut value = 0.0;
    let mut gradient = DVector::zeros(n);
    let mut triplets = Vec::with_capacity(3 * mesh.interior_edges().len());
    for edge in mesh.interior_edges() {
        let d = s[edge.a] - s[edge.b];
        let root = (d * d + beta).sqrt();
        value += w * edge.length * root;
        let g = w * edge.length * d / root;
        gradient[edge.a] += g;
        gradient[edge.b] -= g;
        let c = w * edge.length / root;
        triplets.push((edge.a, edge.a, c));
        triplets.push((edge.b, edge.b, c));
        triplets.push((edge.a, edge.b, -c));
    }
    Ok(PriorEval { value, gradient, curvature: SparseSym::from_triplets(n, triplets) })
}

/// Quadratic Laplacian smoothness:
/// R(σ) = weight · ‖L(σ - σ_ref)‖², ∂R = 2·weight·LᵀL(σ - σ_ref),
/// Γ_R = 2·weight·LᵀL with L the element-adjacency Laplacian.
pub fn laplacian_value_and_gradient(
    mesh: &Mesh,
    sigma: &ConductivityField,
    sigma_ref: &ConductivityField,
    reg: &Regularizer,
) -> Result<PriorEval> {
    if reg.kind != RegularizerKind::LaplacianSmoothness {
        return Err(Error::contract("laplacian_value_and_gradient requires a Laplacian regularizer"));
    }
    reg.validate()?;
    let n = mesh.n_elements();
    if sigma.len() != n || sigma_ref.len() != n {
        return Err(Error::contract("sigma length does not match element count"));
    }
    let lap = element_adjacency_laplacian(mesh);
    let diff = sigma.values() - sigma_ref.values();
    let r = lap.mul_vec(&diff);
    let value = reg.weight * r.dot(&r);
    let gradient = lap.mul_vec(&r) * (2.0 * reg.weight);
    let curvature = laplacian_curvature(&lap, reg.weight);
    Ok(PriorEval { value, gradient, curvature })
}

/// 2·weight·LᵀL assembled sparsely (entries couple elements within two hops).
fn laplacian_curvature(lap: &SparseSym, weight: f64) -> SparseSym {
    let n = lap.dim();
    // Full row representation of the symmetric L.
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (i, j, v) in lap.upper_entries() {
        rows[i].push((j, v));
        if i != j {
            rows[j].push((i, v));
        }
    }
    let mut triplets = Vec::new();
    for row in rows.iter() {
        for (a, &(i, vi)) in row.iter().enumerate() {
            for &(j, vj) in row.iter().skip(a) {
                triplets.push((i.min(j), i.max(j), 2.0 * weight * vi * vj));
            }
        }
    }
    SparseSym::from_triplets(n, triplets)
}

/// Measurement weighting built from noise standard deviations:
/// W = diag(1/std²) enters the normal equations; L_e = diag(std) satisfies
/// L_eᵀL_e = W⁻¹.
#[derive(Debug, Clone)]
pub struct NoiseWeighting {
    w: DVector<f64>,
    l_e: DVector<f64>,
}

impl NoiseWeighting {
    pub fn identity(m: usize) -> Self {
        NoiseWeighting { w: DVector::from_element(m, 1.0), l_e: DVector::from_element(m, 1.0) }
    }

    /// Diagonal of W.
    pub fn w_diag(&self) -> &DVector<f64> {
        &self.w
    }

    /// Diagonal of the factor L_e (L_eᵀL_e = W⁻¹).
    pub fn l_e_diag(&self) -> &DVector<f64> {
        &self.l_e
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }
}

pub fn build_noise_weighting(noise_std: &DVector<f64>) -> Result<NoiseWeighting> {
    if noise_std.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::domain("noise standard deviations must be strictly positive"));
    }
    let w = noise_std.map(|s| 1.0 / (s * s));
    Ok(NoiseWeighting { w, l_e: noise_std.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_disk_mesh, build_square_mesh, Mesh};
    use approx::assert_relative_eq;
    use nalgebra::DVector;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// Two triangles sharing the unit-length edge (0,0)-(0,1).
    fn two_element_mesh() -> Mesh {
        let nodes = vec![[0.0, 0.0], [0.0, 1.0], [1.0, 0.5], [-1.0, 0.5]];
        let elements = vec![[0, 2, 1], [0, 1, 3]];
        let boundary = vec![[0, 2], [2, 1], [1, 3], [3, 0]];
        Mesh::new(nodes, elements, boundary).unwrap()
    }

    #[test]
    fn tv_hand_computed_two_elements() {
        // R = ℓ √((1-2)² + 1) = √2, ∂R = (-1/√2, 1/√2).
        let mesh = two_element_mesh();
        let reg = Regularizer::tv(1.0, 1.0).unwrap();
        let sigma = ConductivityField::new(DVector::from_vec(vec![1.0, 2.0])).unwrap();
        let eval = tv_value_and_gradient(&mesh, &sigma, &reg).unwrap();
        assert_relative_eq!(eval.value, 2.0_f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(eval.gradient[0], -1.0 / 2.0_f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(eval.gradient[1], 1.0 / 2.0_f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn tv_constant_field_has_zero_gradient() {
        let (mesh, _) = build_disk_mesh(1.0, 150, 4, 0.5).unwrap();
        let reg = Regularizer::tv(2.5, 1e-4).unwrap();
        let sigma = ConductivityField::homogeneous(mesh.n_elements(), 3.2).unwrap();
        let eval = tv_value_and_gradient(&mesh, &sigma, &reg).unwrap();
        let total_len: f64 = mesh.interior_edges().iter().map(|e| e.length).sum();
        assert_relative_eq!(eval.value, 2.5 * total_len * 1e-2, epsilon = 1e-10);
        assert_eq!(eval.gradient.amax(), 0.0);
    }

    fn fd_gradient<F: Fn(&DVector<f64>) -> f64>(f: F, x: &DVector<f64>, h: f64) -> DVector<f64> {
        let mut g = DVector::zeros(x.len());
        for i in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            g[i] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        g
    }

    #[test]
    fn tv_gradient_matches_finite_differences() {
        let (mesh, _) = build_disk_mesh(1.0, 100, 4, 0.5).unwrap();
        let reg = Regularizer::tv(1.7, 1e-3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = DVector::from_fn(mesh.n_elements(), |_, _| 1.0 + rng.gen::<f64>());
        let f = |v: &DVector<f64>| {
            let s = ConductivityField::new(v.clone()).unwrap();
            tv_value_and_gradient(&mesh, &s, &reg).unwrap().value
        };
        let analytic =
            tv_value_and_gradient(&mesh, &ConductivityField::new(x.clone()).unwrap(), &reg)
                .unwrap()
                .gradient;
        let numeric = fd_gradient(f, &x, 1e-6);
        let rel = (&analytic - &numeric).norm() / analytic.norm();
        assert!(rel < 1e-6, "TV gradient FD mismatch {rel:.3e}");
    }

    #[test]
    fn laplacian_reference_and_constant_shift_vanish() {
        let (mesh, _) = build_disk_mesh(1.0, 120, 4, 0.5).unwrap();
        let n = mesh.n_elements();
        let reg = Regularizer::laplacian(3.0).unwrap();
        let sref = ConductivityField::homogeneous(n, 2.0).unwrap();
        let eval = laplacian_value_and_gradient(&mesh, &sref, &sref, &reg).unwrap();
        assert_eq!(eval.value, 0.0);
        assert_eq!(eval.gradient.amax(), 0.0);
        // Constant shift lies in the Laplacian null space.
        let shifted = ConductivityField::homogeneous(n, 2.7).unwrap();
        let eval = laplacian_value_and_gradient(&mesh, &shifted, &sref, &reg).unwrap();
        assert!(eval.value.abs() < 1e-18);
    }

    #[test]
    fn laplacian_gradient_matches_finite_differences() {
        let (mesh, _) = build_disk_mesh(1.0, 100, 4, 0.5).unwrap();
        let n = mesh.n_elements();
        let reg = Regularizer::laplacian(0.8).unwrap();
        let sref = ConductivityField::homogeneous(n, 1.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = DVector::from_fn(n, |_, _| 1.0 + rng.gen::<f64>());
        let f = |v: &DVector<f64>| {
            let s = ConductivityField::new(v.clone()).unwrap();
            laplacian_value_and_gradient(&mesh, &s, &sref, &reg).unwrap().value
        };
        let analytic = laplacian_value_and_gradient(
            &mesh,
            &ConductivityField::new(x.clone()).unwrap(),
            &sref,
            &reg,
        )
        .unwrap()
        .gradient;
        let numeric = fd_gradient(f, &x, 1e-5);
        let rel = (&analytic - &numeric).norm() / analytic.norm();
        assert!(rel < 1e-8, "Laplacian gradient FD mismatch {rel:.3e}");
    }

    #[test]
    fn curvatures_are_positive_semidefinite() {
        let (mesh, _) = build_disk_mesh(1.0, 180, 4, 0.5).unwrap();
        let n = mesh.n_elements();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let sigma =
            ConductivityField::new(DVector::from_fn(n, |_, _| 0.5 + rng.gen::<f64>())).unwrap();
        let sref = ConductivityField::homogeneous(n, 1.0).unwrap();
        for reg in [Regularizer::tv(1.3, 1e-4).unwrap(), Regularizer::laplacian(1.3).unwrap()] {
            let eval = reg.evaluate(&mesh, &sigma, &sref).unwrap();
            let dense = eval.curvature.to_dense();
            let eig = dense.symmetric_eigen();
            let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
            let scale = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
            assert!(min >= -1e-10 * scale.max(1.0), "{:?} curvature min eig {min}", reg.kind);
        }
    }

    #[test]
    fn laplacian_curvature_matches_dense_product() {
        let (mesh, _) = build_disk_mesh(1.0, 60, 4, 0.5).unwrap();
        let lap = crate::mesh::element_adjacency_laplacian(&mesh);
        let dense = lap.to_dense();
        let oracle = 2.0 * 0.9 * &dense * &dense;
        let fast = laplacian_curvature(&lap, 0.9).to_dense();
        assert_relative_eq!(fast, oracle, epsilon = 1e-11);
    }

    #[test]
    fn tv_approaches_perimeter_times_jump() {
        // Piecewise-constant split of the square: R -> weight * perimeter * jump.
        let (mesh, _) = build_square_mesh(2.0, 256, 4, 0.5).unwrap();
        let n = mesh.n_elements();
        let values = DVector::from_fn(n, |e, _| {
            if mesh.element_centroid(e)[0] < 1.0 {
                1.0
            } else {
                2.0
            }
        });
        let sigma = ConductivityField::new(values.clone()).unwrap();
        let reg = Regularizer::tv(1.4, 1e-8).unwrap();
        let eval = tv_value_and_gradient(&mesh, &sigma, &reg).unwrap();
        let interface_len: f64 = mesh
            .interior_edges()
            .iter()
            .filter(|e| (values[e.a] - values[e.b]).abs() > 0.5)
            .map(|e| e.length)
            .sum();
        let expected = 1.4 * interface_len * 1.0;
        assert!(
            (eval.value - expected).abs() / expected < 0.01,
            "TV {} vs perimeter limit {expected}",
            eval.value
        );
    }

    #[test]
    fn noise_weighting_contracts() {
        let ones = DVector::from_element(3, 1.0);
        let nw = build_noise_weighting(&ones).unwrap();
        assert_eq!(nw.w_diag(), &ones);
        assert_eq!(nw.l_e_diag(), &ones);

        let nw = build_noise_weighting(&DVector::from_vec(vec![2.0])).unwrap();
        assert_relative_eq!(nw.w_diag()[0], 0.25);
        assert_relative_eq!(nw.l_e_diag()[0], 2.0);
        assert_relative_eq!(nw.l_e_diag()[0] * nw.l_e_diag()[0] * nw.w_diag()[0], 1.0);

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let stds = DVector::from_fn(40, |_, _| 0.1 + rng.gen::<f64>());
        let nw = build_noise_weighting(&stds).unwrap();
        let worst = (0..40)
            .map(|i| (nw.l_e_diag()[i] * nw.l_e_diag()[i] * nw.w_diag()[i] - 1.0).abs())
            .fold(0.0_f64, f64::max);
        assert!(worst < 1e-12, "L_eᵀL_e · W deviates from identity by {worst:.3e}");

        assert!(build_noise_weighting(&DVector::from_vec(vec![1.0, 0.0])).is_err());
    }
}
