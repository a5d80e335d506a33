//! Reconstruction drivers: Gauss-Newton with perturbation Jacobians,
//! Broyden's secant method, and the learned quasi-Newton method with a fixed
//! singular-vector anchor.

mod drivers;
mod step;

pub use drivers::{
    compute_anchor, run_broyden, run_gauss_newton, run_nnqn, DriverOptions, OracleSvdPredictor,
    SingularValuePredictor,
};
pub use step::{
    assemble_learned_jacobian, broyden_update, broyden_update_in_place, qn_step, reduced_update,
    Jacobian, LearnedJacobian, QnStepOutcome,
};

pub use crate::svd::{singular_values, spectral_norm, thin_svd, SVDAnchor};

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::fem::{ConductivityField, ForwardModel, MeasurementFrame};
use crate::mesh::Mesh;
use crate::priors::{NoiseWeighting, Regularizer};

/// Everything needed to run one reconstruction.
pub struct InverseProblemSpec<'a, F: ForwardModel> {
    pub model: &'a F,
    /// mesh backing the prior (element adjacency and edge lengths)
    pub mesh: &'a Mesh,
    pub data: MeasurementFrame,
    pub weighting: NoiseWeighting,
    pub regularizer: Regularizer,
    /// prior reference field (σ_exp)
    pub sigma_ref: ConductivityField,
    /// initial iterate σ₀ (homogeneous σ_exp in the reference setup)
    pub sigma0: ConductivityField,
    pub max_iterations: usize,
    /// stopping tolerance for ‖f_{k+1}−f_k‖²/‖f_k‖²
    pub tolerance: f64,
    /// iterates are clamped below at this value after each update
    pub positivity_floor: f64,
}

impl<'a, F: ForwardModel> InverseProblemSpec<'a, F> {
    pub fn validate(&self) -> Result<()> {
        if self.data.len() != self.model.output_dim()
            || self.weighting.dim() != self.model.output_dim()
        {
            return Err(Error::contract("data/weighting dimension does not match the model"));
        }
        if self.sigma0.len() != self.model.param_dim()
            || self.sigma_ref.len() != self.model.param_dim()
        {
            return Err(Error::contract("initial field dimension does not match the model"));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::contract("stopping tolerance must be positive"));
        }
        if !(self.positivity_floor > 0.0) {
            return Err(Error::contract("positivity floor must be positive"));
        }
        self.regularizer.validate()
    }

    /// Weighted objective L(σ) = (g−A(σ))ᵀ W (g−A(σ)) + R(σ), evaluated from
    /// a precomputed model output.
    pub fn objective_from_output(&self, sigma: &ConductivityField, output: &DVector<f64>) -> Result<f64> {
        let r = &self.data.values - output;
        let data_term = r.component_mul(self.weighting.w_diag()).dot(&r);
        let prior = self.regularizer.evaluate(self.mesh, sigma, &self.sigma_ref)?;
        Ok(data_term + prior.value)
    }

    pub fn objective(&self, sigma: &ConductivityField) -> Result<f64> {
        let output = self.model.eval(sigma)?;
        self.objective_from_output(sigma, &output)
    }
}

/// Relative squared step size ‖f_next − f_curr‖² / ‖f_curr‖².
pub fn stopping_criterion(f_next: &DVector<f64>, f_curr: &DVector<f64>) -> Result<f64> {
    let denom = f_curr.norm_squared();
    if !(denom > 0.0) {
        return Err(Error::contract("stopping criterion needs a nonzero current iterate"));
    }
    Ok((f_next - f_curr).norm_squared() / denom)
}

/// Fixed step-length grid searched by the drivers, largest first.
pub const LINE_SEARCH_GRID: [f64; 7] = [2.0, 1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125];

#[derive(Debug, Clone, Copy)]
pub struct LineSearchOutcome {
    pub lambda: f64,
    pub objective: f64,
    /// the chosen point does not increase the objective
    pub descent: bool,
    pub evaluations: usize,
}

/// Coarse grid line search: evaluates the objective at every grid step in
/// parallel and picks the best. If no grid point avoids an increase, the
/// smallest step is returned with `descent = false`. Errors only when the
/// objective is non-finite at every grid point.
pub fn line_search<E>(evaluate: E, current_objective: f64) -> Result<LineSearchOutcome>
where
    E: Fn(f64) -> Result<f64> + Sync,
{
    use rayon::prelude::*;
    let values: Vec<(f64, Option<f64>)> = LINE_SEARCH_GRID
        .par_iter()
        .map(|&lambda| {
            let v = evaluate(lambda).ok().filter(|v| v.is_finite());
            (lambda, v)
        })
        .collect();
    let evaluations = values.len();
    let best = values
        .iter()
        .filter_map(|&(l, v)| v.map(|v| (l, v)))
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
    match best {
        None => Err(Error::numerical("objective non-finite at every line-search step")),
        Some((lambda, objective)) => {
            if objective <= current_objective {
                Ok(LineSearchOutcome { lambda, objective, descent: true, evaluations })
            } else {
                let (l_min, v_min) = values
                    .iter()
                    .rev()
                    .find_map(|&(l, v)| v.map(|v| (l, v)))
                    .expect("at least one finite value exists");
                Ok(LineSearchOutcome {
                    lambda: l_min,
                    objective: v_min,
                    descent: false,
                    evaluations,
                })
            }
        }
    }
}

/// Why a reconstruction run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIterations,
    /// no line-search step decreased the objective
    NonDescent,
    NumericalFailure,
}

/// One accepted iteration.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub iteration: usize,
    /// objective at the accepted iterate σ_{k+1}
    pub objective: f64,
    pub step_length: f64,
    /// stopping-criterion value for this step
    pub criterion: f64,
    /// cumulative wall-clock milliseconds since the run started (after
    /// initialization)
    pub wall_ms: f64,
    /// ‖J_accurate − J_method‖₂ at σ_k (diagnostics mode only)
    pub jacobian_error_spectral: Option<f64>,
}

/// Per-run record: iterates, per-iteration diagnostics, and bookkeeping
/// counters for forward evaluations.
#[derive(Debug, Clone)]
pub struct SolverTrace {
    pub records: Vec<IterationRecord>,
    /// iterates σ_0 .. σ_K (records.len() + 1 entries)
    pub iterates: Vec<DVector<f64>>,
    pub termination: Termination,
    /// wall-clock spent after initialization (ms)
    pub total_ms: f64,
    /// forward evaluations driving the iterations (one per iteration)
    pub forward_evals_main: usize,
    /// forward evaluations spent in line-search objective probes
    pub forward_evals_linesearch: usize,
    /// forward evaluations spent building perturbation Jacobians
    pub forward_evals_jacobian: usize,
    /// diagonal lifts reported by qn_step
    pub lifted_steps: usize,
}

impl SolverTrace {
    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }

    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn final_criterion(&self) -> Option<f64> {
        self.records.last().map(|r| r.criterion)
    }

    pub fn validate(&self) -> Result<()> {
        let mut last_ms = 0.0;
        for r in &self.records {
            if r.criterion < 0.0 {
                return Err(Error::contract("negative stopping-criterion value in trace"));
            }
            if r.wall_ms + 1e-9 < last_ms {
                return Err(Error::contract("trace wall-clock times must be non-decreasing"));
            }
            last_ms = r.wall_ms;
        }
        Ok(())
    }

    /// CSV export: iteration, objective, step_length, criterion, wall_ms,
    /// jac_err_spectral (empty when diagnostics were off).
    pub fn to_csv(&self, w: &mut impl std::io::Write) -> Result<()> {
        writeln!(w, "iteration,objective,step_length,criterion,wall_ms,jac_err_spectral")?;
        for r in &self.records {
            let jac = r.jacobian_error_spectral.map(|v| format!("{v:.17e}")).unwrap_or_default();
            writeln!(
                w,
                "{},{:.17e},{:.17e},{:.17e},{:.3},{}",
                r.iteration, r.objective, r.step_length, r.criterion, r.wall_ms, jac
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn stopping_criterion_arithmetic() {
        let f = DVector::from_vec(vec![3.0, 4.0]);
        assert_relative_eq!(stopping_criterion(&f, &f).unwrap(), 0.0);
        let doubled = &f * 2.0;
        assert_relative_eq!(stopping_criterion(&doubled, &f).unwrap(), 1.0);
        // f_curr = (3,4), f_next = (3,5) -> 1/25.
        let next = DVector::from_vec(vec![3.0, 5.0]);
        assert_relative_eq!(stopping_criterion(&next, &f).unwrap(), 0.04);
        assert!(stopping_criterion(&f, &DVector::zeros(2)).is_err());
    }

    #[test]
    fn line_search_hits_quadratic_minimum_on_grid() {
        // 1D quadratic with minimizer at λ = 0.5 (a grid member).
        let eval = |l: f64| Ok((l - 0.5) * (l - 0.5));
        let out = line_search(eval, 10.0).unwrap();
        assert_eq!(out.lambda, 0.5);
        assert!(out.descent);
        assert_eq!(out.evaluations, 7);
    }

    #[test]
    fn line_search_monotone_decrease_on_descent_direction() {
        let eval = |l: f64| Ok(1.0 - 0.9 * l + 0.3 * l * l);
        let current = 1.0;
        let out = line_search(eval, current).unwrap();
        assert!(out.objective <= current);
        assert!(out.descent);
    }

    #[test]
    fn line_search_flags_non_descent_and_failure() {
        let eval = |l: f64| Ok(5.0 + l);
        let out = line_search(eval, 1.0).unwrap();
        assert!(!out.descent);
        assert_eq!(out.lambda, LINE_SEARCH_GRID[6]);

        let eval = |_: f64| Ok(f64::NAN);
        assert!(line_search(eval, 1.0).is_err());
    }
}
