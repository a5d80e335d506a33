//! Full reconstruction drivers sharing one iteration loop: per iteration they
//! evaluate the model once, build a method-specific Jacobian, solve the
//! regularized step, line-search on the weighted objective, project onto the
//! positivity bound, and test the relative-step stopping criterion.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fem::{jacobian_perturbation, ConductivityField, ForwardModel, PerturbationStep};
use crate::svd::{spectral_norm, thin_svd, SVDAnchor};

use super::step::{
    assemble_learned_jacobian, broyden_update_in_place, qn_step, Jacobian,
};
use super::{
    line_search, stopping_criterion, InverseProblemSpec, IterationRecord, SolverTrace, Termination,
};

/// Predicts the Jacobian singular values at the current iterate. The trained
/// network uses only the model output; test oracles may use the iterate
/// itself.
pub trait SingularValuePredictor: Sync {
    fn predict(
        &self,
        model_output: &DVector<f64>,
        sigma: &ConductivityField,
    ) -> Result<DVector<f64>>;
}

impl SingularValuePredictor for crate::mlp::MLPModel {
    fn predict(&self, model_output: &DVector<f64>, _sigma: &ConductivityField) -> Result<DVector<f64>> {
        self.predict_singular_values(model_output)
    }
}

/// Oracle predictor returning the exact singular values of the accurate
/// Jacobian at the iterate (ablation baseline for the learned predictor).
pub struct OracleSvdPredictor<'a, F: ForwardModel> {
    pub model: &'a F,
}

impl<'a, F: ForwardModel> SingularValuePredictor for OracleSvdPredictor<'a, F> {
    fn predict(&self, _model_output: &DVector<f64>, sigma: &ConductivityField) -> Result<DVector<f64>> {
        let jac = self.model.accurate_jacobian(sigma)?;
        Ok(crate::svd::singular_values(&jac))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DriverOptions {
    pub jacobian_step: PerturbationStep,
    /// record ‖J_accurate − J_method‖₂ at every iterate (costly: one adjoint
    /// Jacobian and a power iteration per iteration)
    pub diagnostics: bool,
}

impl Default for DriverOptions {
    fn default() -> Self {
        DriverOptions { jacobian_step: PerturbationStep::default(), diagnostics: false }
    }
}

/// Computes the SVD anchor at the initial iterate from the accurate Jacobian.
pub fn compute_anchor<F: ForwardModel>(model: &F, sigma0: &ConductivityField) -> Result<SVDAnchor> {
    let jac = model.accurate_jacobian(sigma0)?;
    thin_svd(&jac)
}

enum MethodState<'a> {
    GaussNewton,
    Broyden { jac: DMatrix<f64> },
    Nnqn { anchor: &'a SVDAnchor, predictor: &'a dyn SingularValuePredictor },
}

fn clamp_field(values: DVector<f64>, floor: f64) -> ConductivityField {
    ConductivityField::new(values.map(|v| v.max(floor))).expect("clamped field is positive")
}

fn run_driver<F: ForwardModel>(
    spec: &InverseProblemSpec<'_, F>,
    opts: &DriverOptions,
    mut method: MethodState<'_>,
) -> Result<(ConductivityField, SolverTrace)> {
    spec.validate()?;
    let start = Instant::now();
    let mut sigma = clamp_field(spec.sigma0.values().clone(), spec.positivity_floor);
    let mut iterates = vec![sigma.values().clone()];
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut termination = Termination::MaxIterations;
    let mut prev_output: Option<DVector<f64>> = None;
    let mut prev_step: Option<DVector<f64>> = None;
    let mut forward_evals_main = 0usize;
    let mut forward_evals_linesearch = 0usize;
    let mut forward_evals_jacobian = 0usize;
    let mut lifted_steps = 0usize;

    for k in 0..spec.max_iterations {
        let output = spec.model.eval(&sigma)?;
        forward_evals_main += 1;

        // Broyden: fold in the secant information from the accepted step.
        if let MethodState::Broyden { jac } = &mut method {
            if let (Some(prev_g), Some(step)) = (&prev_output, &prev_step) {
                if step.norm() > 0.0 {
                    let delta_g = &output - prev_g;
                    broyden_update_in_place(jac, step, &delta_g)?;
                }
            }
        }

        let prior = spec.regularizer.evaluate(spec.mesh, &sigma, &spec.sigma_ref)?;
        let residual = &spec.data.values - &output;
        let current_objective =
            residual.component_mul(spec.weighting.w_diag()).dot(&residual) + prior.value;

        let (step_out, jac_err) = match &method {
            MethodState::GaussNewton => {
                let jac = jacobian_perturbation(spec.model, &sigma, opts.jacobian_step)?;
                forward_evals_jacobian += spec.model.param_dim() + 1;
                let err = if opts.diagnostics {
                    let acc = spec.model.accurate_jacobian(&sigma)?;
                    Some(spectral_norm(&(&acc - &jac)))
                } else {
                    None
                };
                (
                    qn_step(Jacobian::Dense(&jac), &spec.weighting, &prior.curvature, &prior.gradient, &residual)?,
                    err,
                )
            }
            MethodState::Broyden { jac } => {
                let err = if opts.diagnostics {
                    let acc = spec.model.accurate_jacobian(&sigma)?;
                    Some(spectral_norm(&(&acc - jac)))
                } else {
                    None
                };
                (
                    qn_step(Jacobian::Dense(jac), &spec.weighting, &prior.curvature, &prior.gradient, &residual)?,
                    err,
                )
            }
            MethodState::Nnqn { anchor, predictor } => {
                let s_pred = predictor.predict(&output, &sigma)?;
                let learned = assemble_learned_jacobian(anchor, &s_pred)?;
                let err = if opts.diagnostics {
                    let acc = spec.model.accurate_jacobian(&sigma)?;
                    Some(spectral_norm(&(&acc - learned.dense())))
                } else {
                    None
                };
                (
                    qn_step(learned.as_jacobian(), &spec.weighting, &prior.curvature, &prior.gradient, &residual)?,
                    err,
                )
            }
        };
        if step_out.lifted {
            lifted_steps += 1;
        }
        let delta = step_out.delta;
        if delta.iter().any(|v| !v.is_finite()) {
            termination = Termination::NumericalFailure;
            break;
        }

        // Candidate evaluation on the positivity-projected points.
        let ls = line_search(
            |lambda| {
                let cand = clamp_field(sigma.values() + &delta * lambda, spec.positivity_floor);
                let out = spec.model.eval(&cand)?;
                let prior_value = spec.regularizer.value(spec.mesh, &cand, &spec.sigma_ref)?;
                let r = &spec.data.values - &out;
                Ok(r.component_mul(spec.weighting.w_diag()).dot(&r) + prior_value)
            },
            current_objective,
        )?;
        forward_evals_linesearch += ls.evaluations;
        if !ls.descent {
            termination = Termination::NonDescent;
            break;
        }

        let next = clamp_field(sigma.values() + &delta * ls.lambda, spec.positivity_floor);
        let criterion = stopping_criterion(next.values(), sigma.values())?;
        records.push(IterationRecord {
            iteration: k,
            objective: ls.objective,
            step_length: ls.lambda,
            criterion,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
            jacobian_error_spectral: jac_err,
        });
        prev_output = Some(output);
        prev_step = Some(next.values() - sigma.values());
        sigma = next;
        iterates.push(sigma.values().clone());
        if criterion <= spec.tolerance {
            termination = Termination::Converged;
            break;
        }
    }

    let trace = SolverTrace {
        records,
        iterates,
        termination,
        total_ms: start.elapsed().as_secs_f64() * 1e3,
        forward_evals_main,
        forward_evals_linesearch,
        forward_evals_jacobian,
        lifted_steps,
    };
    trace.validate()?;
    Ok((sigma, trace))
}

/// Gauss-Newton with the Jacobian recomputed by forward differencing at every
/// iteration.
pub fn run_gauss_newton<F: ForwardModel>(
    spec: &InverseProblemSpec<'_, F>,
    opts: &DriverOptions,
) -> Result<(ConductivityField, SolverTrace)> {
    run_driver(spec, opts, MethodState::GaussNewton)
}

/// Broyden's method: the Jacobian is initialized once at σ₀ (accurate
/// Jacobian) and then updated by the rank-one secant formula.
pub fn run_broyden<F: ForwardModel>(
    spec: &InverseProblemSpec<'_, F>,
    opts: &DriverOptions,
) -> Result<(ConductivityField, SolverTrace)> {
    spec.validate()?;
    let jac = spec.model.accurate_jacobian(&spec.sigma0)?;
    run_driver(spec, opts, MethodState::Broyden { jac })
}

/// Learned quasi-Newton: per iteration one forward evaluation, a
/// singular-value prediction, and the factored-form regularized step. No
/// Jacobian recomputation happens after initialization.
pub fn run_nnqn<F: ForwardModel>(
    spec: &InverseProblemSpec<'_, F>,
    opts: &DriverOptions,
    anchor: &SVDAnchor,
    predictor: &dyn SingularValuePredictor,
) -> Result<(ConductivityField, SolverTrace)> {
    if anchor.m() != spec.model.output_dim() || anchor.n() != spec.model.param_dim() {
        return Err(Error::contract("anchor dimensions do not match the model"));
    }
    run_driver(spec, opts, MethodState::Nnqn { anchor, predictor })
}
