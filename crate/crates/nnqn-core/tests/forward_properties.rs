//! Cross-cutting forward-model properties: reciprocity on arbitrary fields,
//! Jacobian consistency between the adjoint formula and forward differencing,
//! derivative convergence order, and discrete rotational symmetry.

use nalgebra::DVector;
use nnqn_core::fem::{
    jacobian_perturbation, CEMProblem, ConductivityField, ForwardModel, PerturbationStep,
    DEFAULT_CONTACT_IMPEDANCE,
};
use nnqn_core::mesh::build_disk_mesh;
use nnqn_core::sampler::{FieldSampler, FieldSamplerConfig};

fn disk_problem(target: usize, n_electrodes: usize) -> CEMProblem {
    let (mesh, layout) = build_disk_mesh(14.0, target, n_electrodes, 0.5).unwrap();
    CEMProblem::adjacent_protocol(
        mesh,
        layout,
        vec![DEFAULT_CONTACT_IMPEDANCE; n_electrodes],
        1.0,
    )
    .unwrap()
}

#[test]
fn reciprocity_holds_for_random_fields() {
    let problem = disk_problem(300, 16);
    let config = FieldSamplerConfig::for_background(1.0, 3.0, 41);
    let sampler = FieldSampler::new(problem.mesh(), config).unwrap();
    let ell = 16;
    for draw in 0..10 {
        let sigma = sampler.sample(draw);
        let g = problem.solve_forward(&sigma).unwrap().measurements;
        let scale = g.amax();
        for p in 0..ell {
            for k in 0..ell {
                let v1 = g[p * ell + k];
                let v2 = g[k * ell + p];
                assert!(
                    (v1 - v2).abs() <= 1e-8 * scale,
                    "draw {draw}: reciprocity broken at ({p},{k})"
                );
            }
        }
    }
}

#[test]
fn adjoint_matches_perturbation_jacobian() {
    // 1e-3 relative Frobenius agreement on a small disk.
    let problem = disk_problem(200, 8);
    let sigma = ConductivityField::homogeneous(problem.n_elements(), 1.3).unwrap();
    let j_adj = problem.jacobian_adjoint(&sigma).unwrap();
    let j_pert = jacobian_perturbation(&problem, &sigma, PerturbationStep::default()).unwrap();
    let rel = (&j_adj - &j_pert).norm() / j_adj.norm();
    assert!(rel < 1e-3, "adjoint vs perturbation Frobenius mismatch {rel:.3e}");

    // And on a heterogeneous field.
    let config = FieldSamplerConfig::for_background(1.0, 3.0, 17);
    let sampler = FieldSampler::new(problem.mesh(), config).unwrap();
    let sigma = sampler.sample(2);
    let j_adj = problem.jacobian_adjoint(&sigma).unwrap();
    let j_pert = jacobian_perturbation(&problem, &sigma, PerturbationStep::default()).unwrap();
    let rel = (&j_adj - &j_pert).norm() / j_adj.norm();
    assert!(rel < 1e-3, "heterogeneous mismatch {rel:.3e}");
}

#[test]
fn directional_derivative_first_order_decay() {
    // (A(σ+tδ) − A(σ))/t → Jδ with first-order error in t.
    let problem = disk_problem(220, 8);
    let n = problem.n_elements();
    let sigma = ConductivityField::homogeneous(n, 1.0).unwrap();
    let jac = problem.jacobian_adjoint(&sigma).unwrap();
    let direction = DVector::from_fn(n, |i, _| ((i * 37 % 11) as f64 - 5.0) / 11.0);
    let jd = &jac * &direction;
    let base = problem.eval(&sigma).unwrap();
    let mut errors = Vec::new();
    for t in [1e-2, 1e-3, 1e-4] {
        let pert = ConductivityField::new(sigma.values() + &direction * t).unwrap();
        let diff = (problem.eval(&pert).unwrap() - &base) / t;
        errors.push((diff - &jd).norm() / jd.norm());
    }
    // Each tenfold step reduction shrinks the error close to tenfold.
    assert!(
        errors[1] < 0.2 * errors[0] && errors[2] < 0.2 * errors[1],
        "directional derivative not first order: {errors:?}"
    );
}

#[test]
fn adjoint_jacobian_respects_rotational_symmetry() {
    // The disk mesh is exactly invariant under rotation by one electrode
    // station; rotating both the field indexing and the protocol indexing
    // must permute the Jacobian.
    let ell = 8;
    let (mesh, layout) = build_disk_mesh(1.0, 400, ell, 0.5).unwrap();
    let problem =
        CEMProblem::adjacent_protocol(mesh, layout, vec![DEFAULT_CONTACT_IMPEDANCE; ell], 1.0)
            .unwrap();
    let n = problem.n_elements();
    let sigma = ConductivityField::homogeneous(n, 1.0).unwrap();
    let jac = problem.jacobian_adjoint(&sigma).unwrap();

    // Element permutation: rotate centroids by one station.
    let mesh = problem.mesh();
    let ang = 2.0 * std::f64::consts::PI / ell as f64;
    let (s, c) = ang.sin_cos();
    let mut perm = vec![usize::MAX; n];
    for e in 0..n {
        let p = mesh.element_centroid(e);
        let q = [c * p[0] - s * p[1], s * p[0] + c * p[1]];
        let mut best = (f64::INFINITY, usize::MAX);
        for f in 0..n {
            let r = mesh.element_centroid(f);
            let d = (r[0] - q[0]).powi(2) + (r[1] - q[1]).powi(2);
            if d < best.0 {
                best = (d, f);
            }
        }
        assert!(best.0 < 1e-16, "element {e} has no rotated image");
        perm[e] = best.1;
    }
    // Measurement row permutation: drive and measurement pairs shift by one.
    let row = |p: usize, k: usize| p * ell + k;
    let scale = jac.amax();
    let mut worst: f64 = 0.0;
    for p in 0..ell {
        for k in 0..ell {
            for e in 0..n {
                let a = jac[(row(p, k), e)];
                let b = jac[(row((p + 1) % ell, (k + 1) % ell), perm[e])];
                worst = worst.max((a - b).abs());
            }
        }
    }
    assert!(worst <= 1e-6 * scale, "rotational symmetry violated: {worst:.3e} vs scale {scale:.3e}");
}
