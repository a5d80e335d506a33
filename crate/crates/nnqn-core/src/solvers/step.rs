//! Search-direction computation: the regularized normal-equations step for
//! dense and factored (learned) Jacobians, the reduced unregularized update,
//! and Broyden's rank-one secant update.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::priors::NoiseWeighting;
use crate::sparse::{OrderedFactor, SparseSym};
use crate::svd::SVDAnchor;

/// Jacobian operand for `qn_step`: either an explicit dense matrix or the
/// anchored factored form U₀ diag(s) V₀ᵀ, which is solved without
/// materializing J or JᵀWJ.
pub enum Jacobian<'a> {
    Dense(&'a DMatrix<f64>),
    Factored { anchor: &'a SVDAnchor, s: &'a DVector<f64> },
}

/// Learned Jacobian J_Λ = U₀ diag(s) V₀ᵀ in factored form.
pub struct LearnedJacobian<'a> {
    pub anchor: &'a SVDAnchor,
    pub s: DVector<f64>,
}

impl<'a> LearnedJacobian<'a> {
    pub fn as_jacobian(&self) -> Jacobian<'_> {
        Jacobian::Factored { anchor: self.anchor, s: &self.s }
    }

    /// Dense materialization (diagnostics only; consumers should prefer the
    /// factored form).
    pub fn dense(&self) -> DMatrix<f64> {
        self.anchor.reconstruct_with(&self.s)
    }

    /// Spectral norm of an orthogonally-factored matrix is its largest
    /// singular value.
    pub fn spectral_norm(&self) -> f64 {
        self.s.iter().cloned().fold(0.0, f64::max)
    }
}

/// Forms the learned Jacobian from predicted singular values. Predictions
/// must be non-negative and match the anchor's measurement dimension.
pub fn assemble_learned_jacobian<'a>(
    anchor: &'a SVDAnchor,
    s_pred: &DVector<f64>,
) -> Result<LearnedJacobian<'a>> {
    if s_pred.len() != anchor.m() {
        return Err(Error::contract(format!(
            "predicted {} singular values for anchor dimension {}",
            s_pred.len(),
            anchor.m()
        )));
    }
    if s_pred.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::contract("predicted singular values must be non-negative and finite"));
    }
    Ok(LearnedJacobian { anchor, s: s_pred.clone() })
}

/// Outcome of one normal-equations solve.
#[derive(Debug, Clone)]
pub struct QnStepOutcome {
    pub delta: DVector<f64>,
    /// diagonal lift ε·I was required (near-singular system)
    pub lifted: bool,
    /// iterative-refinement sweeps used by the factored path
    pub refinement_iters: usize,
    /// the factored path fell back to the dense solve
    pub dense_fallback: bool,
}

/// Solves (JᵀWJ + Γ_R) Δf = JᵀW r − ∂R.
///
/// The dense path forms the normal matrix explicitly and factorizes it
/// (symmetric positive definite Cholesky). The factored path never forms J:
/// it uses a sparse factorization of Γ_R plus a low-rank correction, with
/// iterative refinement down to machine-level residuals. If either system is
/// singular to working precision, a diagonal lift ε·I with
/// ε = 1e-12·trace/N is applied and reported in the outcome.
pub fn qn_step(
    jac: Jacobian<'_>,
    weighting: &NoiseWeighting,
    curvature: &SparseSym,
    grad_r: &DVector<f64>,
    residual: &DVector<f64>,
) -> Result<QnStepOutcome> {
    if residual.iter().chain(grad_r.iter()).any(|v| !v.is_finite()) {
        return Err(Error::numerical("qn_step inputs contain non-finite values"));
    }
    match jac {
        Jacobian::Dense(j) => qn_step_dense(j, weighting, curvature, grad_r, residual),
        Jacobian::Factored { anchor, s } => {
            qn_step_factored(anchor, s, weighting, curvature, grad_r, residual)
        }
    }
}

fn scale_rows(m: &DMatrix<f64>, d: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        row *= d[i];
    }
    out
}

fn add_sparse_to_dense(s: &SparseSym, dest: &mut DMatrix<f64>) {
    for (i, j, v) in s.upper_entries() {
        dest[(i, j)] += v;
        if i != j {
            dest[(j, i)] += v;
        }
    }
}

fn qn_step_dense(
    j: &DMatrix<f64>,
    weighting: &NoiseWeighting,
    curvature: &SparseSym,
    grad_r: &DVector<f64>,
    residual: &DVector<f64>,
) -> Result<QnStepOutcome> {
    if j.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("qn_step Jacobian contains non-finite values"));
    }
    let n = j.ncols();
    let wj = scale_rows(j, weighting.w_diag());
    let mut h = j.tr_mul(&wj);
    add_sparse_to_dense(curvature, &mut h);
    let rhs = j.tr_mul(&weighting.w_diag().component_mul(residual)) - grad_r;

    let trace: f64 = (0..n).map(|i| h[(i, i)]).sum();
    let mut lift = 1e-12 * trace.max(f64::MIN_POSITIVE) / n as f64;
    let mut lifted = false;
    for attempt in 0..4 {
        let sys = if attempt == 0 {
            h.clone()
        } else {
            lifted = true;
            let mut s = h.clone();
            for i in 0..n {
                s[(i, i)] += lift;
            }
            lift *= 100.0;
            s
        };
        if let Some(chol) = sys.cholesky() {
            let delta = chol.solve(&rhs);
            return Ok(QnStepOutcome { delta, lifted, refinement_iters: 0, dense_fallback: false });
        }
    }
    Err(Error::numerical("normal equations not SPD even after diagonal lift"))
}

fn qn_step_factored(
    anchor: &SVDAnchor,
    s: &DVector<f64>,
    weighting: &NoiseWeighting,
    curvature: &SparseSym,
    grad_r: &DVector<f64>,
    residual: &DVector<f64>,
) -> Result<QnStepOutcome> {
    let (m, n) = (anchor.m(), anchor.n());
    if s.len() != m || curvature.dim() != n || grad_r.len() != n || residual.len() != m {
        return Err(Error::contract("qn_step factored operand dimensions disagree"));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("qn_step singular values contain non-finite values"));
    }

    // M = S (U₀ᵀ W U₀) S = RᵀR with R = chol(T)ᵀ · diag(s).
    let wu = scale_rows(anchor.u0(), weighting.w_diag());
    let t = anchor.u0().tr_mul(&wu);
    let chol_t = t
        .cholesky()
        .ok_or_else(|| Error::numerical("weighting Gram matrix is not SPD"))?;
    let mut r_factor = chol_t.l().transpose();
    for (j, mut col) in r_factor.column_iter_mut().enumerate() {
        col *= s[j];
    }
    let trace_m: f64 = r_factor.iter().map(|v| v * v).sum();

    // b = V₀ S U₀ᵀ W r − ∂R.
    let wr = weighting.w_diag().component_mul(residual);
    let c = s.component_mul(&anchor.u0().tr_mul(&wr));
    let b = anchor.v0t().tr_mul(&c) - grad_r;

    let scale = (curvature.trace() + trace_m).max(f64::MIN_POSITIVE) / n as f64;
    // First pass targets the exact system (VMVᵀ + Γ); if iterative refinement
    // cannot contract (full system singular to working precision), the spec'd
    // diagonal lift ε·I is applied to the system itself and reported.
    let lift_eps = 1e-12 * scale;
    for (attempt, system_shift) in [0.0, lift_eps].into_iter().enumerate() {
        let lifted = attempt > 0;
        let system_curv =
            if lifted { curvature.shifted_diagonal(system_shift) } else { curvature.clone() };

        // Preconditioner B ≈ Γ(+lift): shifted further only as needed to make
        // the factorization succeed. The shift does not change the refinement
        // target; it only slows refinement slightly.
        let mut factor: Option<OrderedFactor> = None;
        let mut precond_shift = 1e-12 * scale;
        for p_attempt in 0..6 {
            let b_matrix = if p_attempt == 0 {
                system_curv.clone()
            } else {
                let shifted = system_curv.shifted_diagonal(precond_shift);
                precond_shift *= 100.0;
                shifted
            };
            if let Ok(f) = OrderedFactor::with_rcm(&b_matrix) {
                factor = Some(f);
                break;
            }
        }
        let factor = match factor {
            Some(f) => f,
            None => break, // fall through to the dense route
        };

        // Low-rank correction: X = B⁻¹V₀, C = I + R (V₀ᵀ X) Rᵀ.
        let v0 = anchor.v0t().transpose();
        let x = factor.solve_matrix(&v0);
        let hm = anchor.v0t() * &x;
        let mut c_inner = &r_factor * &hm * r_factor.transpose();
        for i in 0..m {
            c_inner[(i, i)] += 1.0;
        }
        let chol_c = match c_inner.cholesky() {
            Some(c) => c,
            None => break,
        };

        let apply = |y: &DVector<f64>| -> DVector<f64> {
            let x0 = factor.solve(y);
            let p = &r_factor * (anchor.v0t() * &x0);
            let q = chol_c.solve(&p);
            &x0 - &x * (r_factor.tr_mul(&q))
        };
        let full_matvec = |v: &DVector<f64>| -> DVector<f64> {
            let rv = &r_factor * (anchor.v0t() * v);
            system_curv.mul_vec(v) + anchor.v0t().tr_mul(&(r_factor.tr_mul(&rv)))
        };

        let mut delta = apply(&b);
        let b_norm = b.norm().max(f64::MIN_POSITIVE);
        let mut refinement_iters = 0;
        let mut last_res = f64::INFINITY;
        let mut stalled = false;
        for _ in 0..30 {
            let rho = &b - full_matvec(&delta);
            let res = rho.norm() / b_norm;
            if res < 1e-13 {
                break;
            }
            if !res.is_finite() || res > 0.5 * last_res {
                stalled = true;
                break;
            }
            last_res = res;
            delta += apply(&rho);
            refinement_iters += 1;
        }
        if !stalled {
            return Ok(QnStepOutcome { delta, lifted, refinement_iters, dense_fallback: false });
        }
    }

    // Refinement could not contract on either system: dense route.
    let dense = anchor.reconstruct_with(s);
    let mut out = qn_step_dense(&dense, weighting, curvature, grad_r, residual)?;
    out.dense_fallback = true;
    Ok(out)
}

/// Unregularized reduced update Δf = V₀ S⁻¹ U₀ᵀ (g − A(f_k)) applied in
/// factored form. Singular values below 1e-8·max(s) are truncated; the count
/// of truncated values is returned.
pub fn reduced_update(
    anchor: &SVDAnchor,
    s_pred: &DVector<f64>,
    residual: &DVector<f64>,
) -> Result<(DVector<f64>, usize)> {
    if s_pred.len() != anchor.m() || residual.len() != anchor.m() {
        return Err(Error::contract("reduced_update dimensions disagree"));
    }
    let smax = s_pred.iter().cloned().fold(0.0, f64::max);
    if !(smax > 0.0) {
        return Err(Error::contract("reduced_update needs at least one positive singular value"));
    }
    let threshold = 1e-8 * smax;
    let mut coeff = anchor.u0().tr_mul(residual);
    let mut truncated = 0;
    for i in 0..coeff.len() {
        if s_pred[i] > threshold {
            coeff[i] /= s_pred[i];
        } else {
            coeff[i] = 0.0;
            truncated += 1;
        }
    }
    Ok((anchor.v0t().tr_mul(&coeff), truncated))
}

/// Broyden's rank-one secant update:
/// J' = J + (Δg − JΔf)Δfᵀ / (ΔfᵀΔf); J'Δf = Δg holds by construction.
pub fn broyden_update(
    jac: &DMatrix<f64>,
    delta_f: &DVector<f64>,
    delta_g: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let mut out = jac.clone();
    broyden_update_in_place(&mut out, delta_f, delta_g)?;
    Ok(out)
}

pub fn broyden_update_in_place(
    jac: &mut DMatrix<f64>,
    delta_f: &DVector<f64>,
    delta_g: &DVector<f64>,
) -> Result<()> {
    if jac.ncols() != delta_f.len() || jac.nrows() != delta_g.len() {
        return Err(Error::contract("broyden_update dimensions disagree"));
    }
    let denom = delta_f.dot(delta_f);
    if !(denom > 0.0) {
        return Err(Error::contract("broyden_update requires a nonzero step"));
    }
    let correction = (delta_g - &*jac * delta_f) / denom;
    jac.ger(1.0, &correction, delta_f, 1.0);
    Ok(())
}
