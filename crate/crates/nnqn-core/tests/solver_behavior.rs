//! Driver-level behavior: fixed points, cross-method equivalence on linear
//! problems, objective monotonicity, reconstruction quality, and the
//! forward-evaluation bookkeeping contract.

use nalgebra::{DMatrix, DVector};
use nnqn_core::fem::{
    add_noise, CEMProblem, ConductivityField, ForwardModel, DEFAULT_CONTACT_IMPEDANCE,
};
use nnqn_core::mesh::{build_disk_mesh, Mesh};
use nnqn_core::phantom::{Inclusion, InclusionSize, Phantom};
use nnqn_core::priors::{build_noise_weighting, NoiseWeighting, Regularizer};
use nnqn_core::solvers::{
    compute_anchor, run_broyden, run_gauss_newton, run_nnqn, DriverOptions, InverseProblemSpec,
    OracleSvdPredictor, Termination,
};
use nnqn_core::Error;

fn disk_setup(target: usize) -> (Mesh, CEMProblem) {
    let (mesh, layout) = build_disk_mesh(14.0, target, 16, 0.5).unwrap();
    let problem = CEMProblem::adjacent_protocol(
        mesh.clone(),
        layout,
        vec![DEFAULT_CONTACT_IMPEDANCE; 16],
        1.0,
    )
    .unwrap();
    (mesh, problem)
}

fn reference_phantom() -> Phantom {
    Phantom {
        background: 1.0,
        inclusions: vec![Inclusion {
            shape: "disk".into(),
            center: [5.0, 3.0],
            size: InclusionSize::Scalar(4.5),
            value: 0.1,
        }],
    }
}

fn spec_for<'a>(
    problem: &'a CEMProblem,
    mesh: &'a Mesh,
    data: nnqn_core::fem::MeasurementFrame,
    weighting: NoiseWeighting,
    weight: f64,
) -> InverseProblemSpec<'a, CEMProblem> {
    let n = problem.n_elements();
    InverseProblemSpec {
        model: problem,
        mesh,
        data,
        weighting,
        regularizer: Regularizer::tv(weight, 1e-4).unwrap(),
        sigma_ref: ConductivityField::homogeneous(n, 1.0).unwrap(),
        sigma0: ConductivityField::homogeneous(n, 1.0).unwrap(),
        max_iterations: 100,
        tolerance: 1e-2,
        positivity_floor: 0.05,
    }
}

#[test]
fn gauss_newton_stops_immediately_at_truth() {
    // Zero-noise data generated at σ* = σ₀: the first step is zero and the
    // run converges at iteration 1 with criterion ≈ 0.
    let (mesh, problem) = disk_setup(200);
    let n = problem.n_elements();
    let truth = ConductivityField::homogeneous(n, 1.0).unwrap();
    let clean = problem.solve_forward(&truth).unwrap().frame();
    let weighting = NoiseWeighting::identity(clean.len());
    let spec = spec_for(&problem, &mesh, clean, weighting, 1.0);
    let (rec, trace) = run_gauss_newton(&spec, &DriverOptions::default()).unwrap();
    assert_eq!(trace.iterations(), 1);
    assert!(trace.converged());
    assert!(trace.final_criterion().unwrap() < 1e-12);
    assert!((rec.values() - truth.values()).norm() < 1e-10);
}

/// Affine forward model with exact Jacobian M.
struct AffineModel {
    m: DMatrix<f64>,
    offset: DVector<f64>,
}

impl ForwardModel for AffineModel {
    fn output_dim(&self) -> usize {
        self.m.nrows()
    }
    fn param_dim(&self) -> usize {
        self.m.ncols()
    }
    fn eval(&self, sigma: &ConductivityField) -> Result<DVector<f64>, Error> {
        Ok(&self.m * sigma.values() + &self.offset)
    }
    fn accurate_jacobian(&self, _sigma: &ConductivityField) -> Result<DMatrix<f64>, Error> {
        Ok(self.m.clone())
    }
}

#[test]
fn methods_agree_on_linear_problem() {
    // For an affine model with exact J supplied, GN, Broyden, and NN-QN with
    // oracle singular values reach the same regularized minimizer.
    let (mesh, _) = build_disk_mesh(1.0, 120, 4, 0.5).unwrap();
    let n = mesh.n_elements();
    let m_rows = 16;
    let mat = DMatrix::from_fn(m_rows, n, |i, j| ((i * 13 + j * 7) % 19) as f64 / 19.0 - 0.4);
    let model = AffineModel { m: mat.clone(), offset: DVector::from_element(m_rows, 0.3) };
    let truth = ConductivityField::new(DVector::from_fn(n, |i, _| {
        1.0 + 0.4 * ((i % 7) as f64 / 7.0)
    }))
    .unwrap();
    let data = nnqn_core::fem::MeasurementFrame::noiseless(model.eval(&truth).unwrap());
    let weighting = NoiseWeighting::identity(m_rows);
    let n_field = n;
    let make_spec = || InverseProblemSpec {
        model: &model,
        mesh: &mesh,
        data: data.clone(),
        weighting: weighting.clone(),
        regularizer: Regularizer::laplacian(0.05).unwrap(),
        sigma_ref: ConductivityField::homogeneous(n_field, 1.0).unwrap(),
        sigma0: ConductivityField::homogeneous(n_field, 1.0).unwrap(),
        max_iterations: 200,
        tolerance: 1e-12,
        positivity_floor: 1e-6,
    };
    let opts = DriverOptions::default();
    let spec = make_spec();
    let (gn, _) = run_gauss_newton(&spec, &opts).unwrap();
    let (br, _) = run_broyden(&spec, &opts).unwrap();
    let anchor = compute_anchor(&model, &spec.sigma0).unwrap();
    let oracle = OracleSvdPredictor { model: &model };
    let (nn, _) = run_nnqn(&spec, &opts, &anchor, &oracle).unwrap();
    let rel_br = (gn.values() - br.values()).norm() / gn.values().norm();
    let rel_nn = (gn.values() - nn.values()).norm() / gn.values().norm();
    assert!(rel_br < 1e-6, "Broyden deviates from GN by {rel_br:.3e}");
    assert!(rel_nn < 1e-6, "NN-QN deviates from GN by {rel_nn:.3e}");
}

#[test]
fn broyden_secant_holds_on_linear_surrogate() {
    // On an affine model the Broyden Jacobian reproduces the action of the
    // true matrix along every visited direction, so updates are no-ops.
    let mat = DMatrix::from_fn(6, 10, |i, j| ((i + 2 * j) % 5) as f64 * 0.3 - 0.5);
    let df = DVector::from_fn(10, |i, _| 0.1 * (i as f64 + 1.0));
    let dg = &mat * &df;
    let updated = nnqn_core::solvers::broyden_update(&mat, &df, &dg).unwrap();
    assert!((&updated - &mat).norm() <= 1e-12 * mat.norm());
    assert!((&updated * &df - &dg).norm() <= 1e-12 * dg.norm());
}

#[test]
fn gauss_newton_reconstructs_disk_phantom() {
    // 1% noise, one low-conductivity inclusion: RMS error under 25% of the
    // background value, monotone objective, converged criterion.
    let (mesh, problem) = disk_setup(450);
    let truth = reference_phantom().to_field(&mesh).unwrap();
    let clean = problem.solve_forward(&truth).unwrap().frame();
    let noisy = add_noise(&clean, 0.01, 7).unwrap();
    let weighting = build_noise_weighting(noisy.noise_std.as_ref().unwrap()).unwrap();
    let spec = spec_for(&problem, &mesh, noisy, weighting, 1.0);
    let (rec, trace) = run_gauss_newton(&spec, &DriverOptions::default()).unwrap();
    assert!(trace.converged(), "GN did not converge: {:?}", trace.termination);
    assert!(trace.final_criterion().unwrap() <= 1e-2);
    let rms = ((rec.values() - truth.values()).norm_squared() / truth.len() as f64).sqrt();
    assert!(rms < 0.25, "reconstruction RMS error {rms:.3} vs background 1.0");
    // Objective monotonicity over recorded iterations.
    for w in trace.records.windows(2) {
        assert!(
            w[1].objective <= w[0].objective + 1e-9 * w[0].objective.abs(),
            "objective increased between iterations"
        );
    }
    trace.validate().unwrap();
}

#[test]
fn nnqn_with_oracle_predictor_tracks_gauss_newton() {
    let (mesh, problem) = disk_setup(300);
    let truth = reference_phantom().to_field(&mesh).unwrap();
    let clean = problem.solve_forward(&truth).unwrap().frame();
    let weighting = NoiseWeighting::identity(clean.len());
    let spec = spec_for(&problem, &mesh, clean, weighting, 1e-4);
    let opts = DriverOptions::default();
    let (gn, _) = run_gauss_newton(&spec, &opts).unwrap();
    let anchor = compute_anchor(&problem, &spec.sigma0).unwrap();
    let oracle = OracleSvdPredictor { model: &problem };
    let (nn, trace) = run_nnqn(&spec, &opts, &anchor, &oracle).unwrap();
    let truth_v = truth.values();
    let err_gn = (gn.values() - truth_v).norm();
    let err_nn = (nn.values() - truth_v).norm();
    assert!(
        err_nn <= 1.10 * err_gn + 1e-12,
        "oracle-predictor NN-QN error {err_nn:.4} exceeds GN {err_gn:.4} by more than 10%"
    );
    // Bookkeeping: one driving forward evaluation per iteration, line-search
    // probes counted separately, and no Jacobian recomputation.
    assert_eq!(trace.forward_evals_main, trace.iterations());
    assert_eq!(trace.forward_evals_jacobian, 0);
    assert_eq!(trace.forward_evals_linesearch, 7 * trace.iterations());
}

#[test]
fn trace_csv_has_expected_columns() {
    let (mesh, problem) = disk_setup(150);
    let n = problem.n_elements();
    let truth = ConductivityField::homogeneous(n, 1.0).unwrap();
    let clean = problem.solve_forward(&truth).unwrap().frame();
    let spec = spec_for(&problem, &mesh, clean.clone(), NoiseWeighting::identity(clean.len()), 1.0);
    let (_, trace) = run_gauss_newton(&spec, &DriverOptions::default()).unwrap();
    let mut out = Vec::new();
    trace.to_csv(&mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "iteration,objective,step_length,criterion,wall_ms,jac_err_spectral"
    );
    assert_eq!(lines.count(), trace.iterations());
}

#[test]
fn positivity_floor_is_enforced() {
    let (mesh, problem) = disk_setup(200);
    let truth = reference_phantom().to_field(&mesh).unwrap();
    let clean = problem.solve_forward(&truth).unwrap().frame();
    let weighting = NoiseWeighting::identity(clean.len());
    // Weak regularization pushes hard toward the (near-zero) inclusion.
    let spec = spec_for(&problem, &mesh, clean, weighting, 1e-6);
    let (rec, trace) = run_gauss_newton(&spec, &DriverOptions::default()).unwrap();
    for iterate in &trace.iterates {
        assert!(iterate.min() >= 0.05 - 1e-15, "iterate fell below the positivity floor");
    }
    assert!(rec.values().min() >= 0.05 - 1e-15);
    assert!(matches!(
        trace.termination,
        Termination::Converged | Termination::MaxIterations | Termination::NonDescent
    ));
}
