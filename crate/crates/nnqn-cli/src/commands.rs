//! Command implementations behind the CLI surface.

use std::path::Path;
use std::time::Instant;

use nalgebra::DVector;

use nnqn_core::error::{Error, Result};
use nnqn_core::fem::{add_noise, CEMProblem, ConductivityField, ForwardModel, MeasurementFrame};
use nnqn_core::mesh::{build_disk_mesh, build_square_mesh, mesh_from_json, mesh_to_json, Mesh};
use nnqn_core::metrics::predictor_median_errors;
use nnqn_core::mlp::{history_to_csv, load_weights, save_weights, MLPModel};
use nnqn_core::phantom::Phantom;
use nnqn_core::priors::{build_noise_weighting, NoiseWeighting};
use nnqn_core::sampler::{build_dataset, dataset_to_csv, read_dataset, write_dataset, FieldSamplerConfig};
use nnqn_core::solvers::{
    compute_anchor, run_broyden, run_gauss_newton, run_nnqn, singular_values, DriverOptions,
    InverseProblemSpec, SolverTrace,
};

use crate::config::RunConfig;
use crate::io;
use crate::render;

fn load_mesh(path: &Path) -> Result<(Mesh, nnqn_core::mesh::ElectrodeLayout)> {
    mesh_from_json(&io::read_to_string(path)?)
}

fn build_problem(cfg: &RunConfig, mesh: Mesh, layout: nnqn_core::mesh::ElectrodeLayout) -> Result<CEMProblem> {
    let n_el = layout.n_electrodes();
    CEMProblem::adjacent_protocol(mesh, layout, vec![cfg.contact_impedance(); n_el], cfg.amplitude())
}

fn sampler_config(cfg: &RunConfig) -> FieldSamplerConfig {
    let sigma_exp = cfg.sigma_exp();
    FieldSamplerConfig {
        sigma_exp,
        kernel_length_scale: cfg.sampler.kernel_length_scale,
        amplitude_std: cfg.sampler.amplitude_std,
        lower_bound: cfg.sampler.lower_bound_factor * sigma_exp,
        rng_seed: cfg.sampler.rng_seed,
    }
}

pub fn cmd_mesh(cfg: &RunConfig, out: &Path) -> Result<()> {
    let g = &cfg.geometry;
    let (mesh, layout) = match g.kind.as_str() {
        "disk" => build_disk_mesh(g.size, g.target_elements, g.n_electrodes, g.electrode_coverage)?,
        "square" => {
            build_square_mesh(g.size, g.target_elements, g.n_electrodes, g.electrode_coverage)?
        }
        other => return Err(Error::config(format!("unknown geometry {other:?}"))),
    };
    let path = out.join("mesh.json");
    io::write_text(&path, &mesh_to_json(&mesh, &layout))?;
    println!(
        "mesh: {} elements, {} nodes, {} electrodes -> {}",
        mesh.n_elements(),
        mesh.n_nodes(),
        layout.n_electrodes(),
        path.display()
    );
    Ok(())
}

pub fn cmd_simulate(
    cfg: &RunConfig,
    mesh_path: &Path,
    phantom_path: &Path,
    export_jacobian: bool,
    out: &Path,
) -> Result<()> {
    let (mesh, layout) = load_mesh(mesh_path)?;
    let phantom = Phantom::from_json(&io::read_to_string(phantom_path)?)?;
    let truth = phantom.to_field(&mesh)?;
    let ell = layout.n_electrodes();
    let problem = build_problem(cfg, mesh, layout)?;
    let clean = problem.solve_forward(&truth)?.frame();
    let noisy = add_noise(&clean, cfg.noise.level, cfg.noise.seed)?;

    // Reciprocity check on the clean frame (adjacent protocol).
    let mut worst: f64 = 0.0;
    let scale = clean.values.amax();
    for p in 0..ell {
        for k in 0..ell {
            worst = worst.max((clean.values[p * ell + k] - clean.values[k * ell + p]).abs());
        }
    }
    let echo = cfg.echo();
    io::write_measurements(&out.join("measurements_clean.csv"), &clean, &echo)?;
    io::write_measurements(&out.join("measurements_noisy.csv"), &noisy, &echo)?;
    io::write_field(&out.join("truth_sigma.csv"), truth.values(), &echo)?;
    if export_jacobian {
        let jac = problem.jacobian_adjoint(&truth)?;
        io::write_matrix(&out.join("jacobian.csv"), &jac, &echo)?;
    }
    println!(
        "simulated {} measurements (noise level {}, seed {}); reciprocity residual {:.3e}",
        clean.len(),
        cfg.noise.level,
        cfg.noise.seed,
        worst / scale
    );
    Ok(())
}

pub fn cmd_dataset(cfg: &RunConfig, mesh_path: &Path, csv: bool, out: &Path) -> Result<()> {
    let (mesh, layout) = load_mesh(mesh_path)?;
    let problem = build_problem(cfg, mesh, layout)?;
    let sampler = sampler_config(cfg);
    let t = Instant::now();
    let set = build_dataset(&problem, &sampler, cfg.dataset.n_train, cfg.dataset.n_val)?;
    let secs = t.elapsed().as_secs_f64();
    let path = out.join("dataset.bin");
    let mut w = io::create(&path)?;
    write_dataset(&set, &mut w)?;
    drop(w);
    if csv {
        let mut w = io::create(&out.join("dataset.csv"))?;
        dataset_to_csv(&set, &mut w)?;
    }
    println!(
        "dataset: {} train + {} val rows of dimension {} in {:.1}s -> {}",
        cfg.dataset.n_train,
        cfg.dataset.n_val,
        set.dim(),
        secs,
        path.display()
    );
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig, dataset_path: &Path, out: &Path) -> Result<()> {
    let file = std::fs::File::open(dataset_path)
        .map_err(|e| Error::config(format!("cannot open {}: {e}", dataset_path.display())))?;
    let set = read_dataset(&mut std::io::BufReader::new(file))?;
    let training = cfg.training_config();
    let model = MLPModel::reference(set.dim(), training.rng_seed);
    let t = Instant::now();
    let trained = nnqn_core::mlp::train(model, &set, &training)?;
    let secs = t.elapsed().as_secs_f64();
    let weights_path = out.join("weights.nnqn");
    let mut w = io::create(&weights_path)?;
    save_weights(&trained.model, Some(&training), &mut w)?;
    drop(w);
    let mut w = io::create(&out.join("history.csv"))?;
    history_to_csv(&trained.history, &mut w)?;
    let (top32, all) = predictor_median_errors(&trained.model, &set, 32)?;
    let last = trained.history.last().expect("training produced at least one epoch");
    println!(
        "trained {} epochs in {:.1}s: train {:.4e}, val {:.4e}; median rel err top-32 {:.2}%, all {:.2}% -> {}",
        trained.history.len(),
        secs,
        last.train_loss,
        last.val_loss,
        100.0 * top32,
        100.0 * all,
        weights_path.display()
    );
    Ok(())
}

struct ReconstructionSetup<'a> {
    problem: &'a CEMProblem,
    mesh: &'a Mesh,
    data: MeasurementFrame,
    weighting: NoiseWeighting,
}

fn make_spec<'a>(
    cfg: &RunConfig,
    setup: &'a ReconstructionSetup<'a>,
) -> Result<InverseProblemSpec<'a, CEMProblem>> {
    let n = setup.problem.n_elements();
    let sigma_exp = cfg.sigma_exp();
    Ok(InverseProblemSpec {
        model: setup.problem,
        mesh: setup.mesh,
        data: setup.data.clone(),
        weighting: setup.weighting.clone(),
        regularizer: cfg.prior.to_regularizer()?,
        sigma_ref: ConductivityField::homogeneous(n, sigma_exp)?,
        sigma0: ConductivityField::homogeneous(n, sigma_exp)?,
        max_iterations: cfg.solver.max_iterations,
        tolerance: cfg.solver.tolerance,
        positivity_floor: cfg.solver.positivity_floor_factor * sigma_exp,
    })
}

fn load_predictor(weights: Option<&Path>, m: usize) -> Result<MLPModel> {
    let path = weights
        .ok_or_else(|| Error::config("method nnqn requires --weights <trained predictor>"))?;
    let file = std::fs::File::open(path)
        .map_err(|e| Error::config(format!("cannot open {}: {e}", path.display())))?;
    let model = load_weights(&mut std::io::BufReader::new(file))?;
    if model.input_dim() != m || model.output_dim() != m {
        return Err(Error::config(format!(
            "predictor dimension {} does not match the problem ({m} measurements)",
            model.input_dim()
        )));
    }
    Ok(model)
}

pub fn cmd_reconstruct(
    cfg: &RunConfig,
    mesh_path: &Path,
    measurements: &Path,
    weights: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let (mesh, layout) = load_mesh(mesh_path)?;
    let problem = build_problem(cfg, mesh.clone(), layout)?;
    let data = io::read_measurements(measurements)?;
    if data.len() != problem.n_measurements() {
        return Err(Error::config(format!(
            "measurement file has {} rows, problem expects {}",
            data.len(),
            problem.n_measurements()
        )));
    }
    let weighting = match &data.noise_std {
        Some(std) => build_noise_weighting(std)?,
        None => NoiseWeighting::identity(data.len()),
    };
    let setup = ReconstructionSetup { problem: &problem, mesh: &mesh, data, weighting };
    let spec = make_spec(cfg, &setup)?;
    let opts = DriverOptions {
        diagnostics: cfg.solver.diagnostics,
        ..DriverOptions::default()
    };
    let method = cfg.solver.method.as_str();
    let t = Instant::now();
    let (rec, trace) = match method {
        "gn" => run_gauss_newton(&spec, &opts)?,
        "broyden" => run_broyden(&spec, &opts)?,
        "nnqn" => {
            let predictor = load_predictor(weights, problem.n_measurements())?;
            let anchor = compute_anchor(&problem, &spec.sigma0)?;
            run_nnqn(&spec, &opts, &anchor, &predictor)?
        }
        other => return Err(Error::config(format!("unknown method {other:?}"))),
    };
    let secs = t.elapsed().as_secs_f64();
    write_reconstruction(cfg, mesh_path, &rec, &trace, method, out)?;
    println!(
        "{} finished: {} iterations, criterion {:.3e}, {:?}, {:.2}s -> {}",
        method,
        trace.iterations(),
        trace.final_criterion().unwrap_or(f64::NAN),
        trace.termination,
        secs,
        out.display()
    );
    Ok(())
}

fn write_reconstruction(
    cfg: &RunConfig,
    mesh_path: &Path,
    rec: &ConductivityField,
    trace: &SolverTrace,
    method: &str,
    out: &Path,
) -> Result<()> {
    let echo = cfg.echo();
    io::write_field(&out.join(format!("recon_{method}.csv")), rec.values(), &echo)?;
    let json = serde_json::json!({
        "mesh": mesh_path.display().to_string(),
        "method": method,
        "values": rec.values().as_slice(),
    });
    io::write_text(&out.join(format!("recon_{method}.json")), &json.to_string())?;
    let mut w = io::create(&out.join(format!("trace_{method}.csv")))?;
    writeln!(w, "# config: {echo}")
        .map_err(Error::Io)?;
    trace.to_csv(&mut w)?;
    Ok(())
}

use std::io::Write;

pub fn cmd_benchmark(
    cfg: &RunConfig,
    mesh_path: &Path,
    phantom_path: &Path,
    weights: &Path,
    out: &Path,
) -> Result<()> {
    let (mesh, layout) = load_mesh(mesh_path)?;
    let phantom = Phantom::from_json(&io::read_to_string(phantom_path)?)?;
    let truth = phantom.to_field(&mesh)?;
    let problem = build_problem(cfg, mesh.clone(), layout)?;
    let clean = problem.solve_forward(&truth)?.frame();
    let noisy = add_noise(&clean, cfg.noise.level, cfg.noise.seed)?;
    let weighting = match &noisy.noise_std {
        Some(std) => build_noise_weighting(std)?,
        None => NoiseWeighting::identity(noisy.len()),
    };
    let predictor = load_predictor(Some(weights), problem.n_measurements())?;
    let setup = ReconstructionSetup { problem: &problem, mesh: &mesh, data: noisy, weighting };
    let spec = make_spec(cfg, &setup)?;

    // NN-QN initialization (shared by timing and diagnostics runs).
    let anchor = compute_anchor(&problem, &spec.sigma0)?;

    let opts_fast = DriverOptions::default();
    let repeats = cfg.benchmark.repeats.max(1);
    let mut rows: Vec<(String, f64, f64)> = Vec::new();
    let mut recons: Vec<(String, ConductivityField, SolverTrace)> = Vec::new();
    for method in ["gn", "broyden", "nnqn"] {
        let mut times = Vec::new();
        let mut iters = Vec::new();
        let mut last = None;
        for _ in 0..repeats {
            let (rec, trace) = match method {
                "gn" => run_gauss_newton(&spec, &opts_fast)?,
                "broyden" => run_broyden(&spec, &opts_fast)?,
                _ => run_nnqn(&spec, &opts_fast, &anchor, &predictor)?,
            };
            times.push(trace.total_ms / 1e3);
            iters.push(trace.iterations() as f64);
            last = Some((rec, trace));
        }
        let mean_time = times.iter().sum::<f64>() / times.len() as f64;
        let mean_iters = iters.iter().sum::<f64>() / iters.len() as f64;
        rows.push((method.to_string(), mean_time, mean_iters));
        let (rec, trace) = last.unwrap();
        recons.push((method.to_string(), rec, trace));
    }

    // Diagnostics runs: per-iteration Jacobian accuracy for Broyden and NN-QN.
    let opts_diag = DriverOptions { diagnostics: true, ..DriverOptions::default() };
    let (_, trace_nn_diag) = run_nnqn(&spec, &opts_diag, &anchor, &predictor)?;
    let (_, trace_br_diag) = run_broyden(&spec, &opts_diag)?;

    let echo = cfg.echo();
    let mut w = io::create(&out.join("comparison.csv"))?;
    writeln!(w, "# config: {echo}").map_err(Error::Io)?;
    writeln!(w, "method,mean_time_after_init_s,mean_iterations").map_err(Error::Io)?;
    for (m, t, k) in &rows {
        writeln!(w, "{m},{t:.3},{k:.1}").map_err(Error::Io)?;
    }
    drop(w);

    let mut w = io::create(&out.join("jacobian_error.csv"))?;
    writeln!(w, "# config: {echo}").map_err(Error::Io)?;
    writeln!(w, "iteration,nnqn,broyden").map_err(Error::Io)?;
    let k_max = trace_nn_diag.iterations().max(trace_br_diag.iterations());
    for k in 0..k_max {
        let nn = trace_nn_diag
            .records
            .get(k)
            .and_then(|r| r.jacobian_error_spectral)
            .map(|v| format!("{v:.17e}"))
            .unwrap_or_default();
        let br = trace_br_diag
            .records
            .get(k)
            .and_then(|r| r.jacobian_error_spectral)
            .map(|v| format!("{v:.17e}"))
            .unwrap_or_default();
        writeln!(w, "{k},{nn},{br}").map_err(Error::Io)?;
    }
    drop(w);

    // Singular-value comparison at the configured snapshot iterations.
    let mut columns: Vec<(String, DVector<f64>)> = Vec::new();
    for &snap in &cfg.benchmark.sv_snapshots {
        let k = snap.min(trace_nn_diag.iterates.len() - 1);
        let sigma = ConductivityField::new(trace_nn_diag.iterates[k].clone())?;
        let jac = problem.accurate_jacobian(&sigma)?;
        let s_acc = singular_values(&jac);
        let output = problem.eval(&sigma)?;
        let s_pred = predictor.predict_singular_values(&output)?;
        columns.push((format!("accurate_it{k}"), s_acc));
        columns.push((format!("predicted_it{k}"), s_pred));
    }
    let mut w = io::create(&out.join("singular_values.csv"))?;
    writeln!(w, "# config: {echo}").map_err(Error::Io)?;
    let header: Vec<String> = columns.iter().map(|(n, _)| n.clone()).collect();
    writeln!(w, "index,{}", header.join(",")).map_err(Error::Io)?;
    let m = problem.n_measurements();
    for i in 0..m {
        let vals: Vec<String> = columns.iter().map(|(_, c)| format!("{:.17e}", c[i])).collect();
        writeln!(w, "{i},{}", vals.join(",")).map_err(Error::Io)?;
    }
    drop(w);

    for (method, rec, trace) in &recons {
        write_reconstruction(cfg, mesh_path, rec, trace, method, out)?;
    }
    io::write_field(&out.join("truth_sigma.csv"), truth.values(), &echo)?;

    println!("method       mean_time_after_init_s   mean_iterations");
    for (m, t, k) in &rows {
        println!("{m:<12} {t:<24.3} {k:.1}");
    }
    let gn_time = rows.iter().find(|r| r.0 == "gn").map(|r| r.1).unwrap_or(f64::NAN);
    let nn_time = rows.iter().find(|r| r.0 == "nnqn").map(|r| r.1).unwrap_or(f64::NAN);
    println!("speedup (gn / nnqn): {:.1}x", gn_time / nn_time);
    Ok(())
}

pub fn cmd_plot(
    mesh: Option<&Path>,
    field: Option<&Path>,
    traces: &[std::path::PathBuf],
    sv: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let mut produced = 0;
    if let Some(field_path) = field {
        let mesh_path =
            mesh.ok_or_else(|| Error::config("--field rendering requires --mesh"))?;
        let (mesh, _) = load_mesh(mesh_path)?;
        let values = io::read_field(field_path)?;
        let stem = field_path.file_stem().and_then(|s| s.to_str()).unwrap_or("field");
        let path = out.join(format!("{stem}.png"));
        render::render_heatmap(&mesh, &values, 512, &path)?;
        println!("wrote {}", path.display());
        produced += 1;
    }
    if !traces.is_empty() {
        let mut series = Vec::new();
        for path in traces {
            let text = io::read_to_string(path)?;
            let mut points = Vec::new();
            for line in text.lines() {
                if line.starts_with('#') || line.starts_with("iteration") {
                    continue;
                }
                let parts: Vec<&str> = line.split(',').collect();
                if parts.len() >= 6 {
                    if let (Ok(i), Ok(err)) = (parts[0].parse::<f64>(), parts[5].parse::<f64>()) {
                        points.push((i, err));
                    }
                }
            }
            if points.is_empty() {
                return Err(Error::config(format!(
                    "{} has no Jacobian-error entries (diagnostics disabled?)",
                    path.display()
                )));
            }
            series.push(render::Series { points });
        }
        let path = out.join("jacobian_error.png");
        render::render_series(&series, true, (640, 420), &path)?;
        println!("wrote {}", path.display());
        produced += 1;
    }
    if let Some(sv_path) = sv {
        let text = io::read_to_string(sv_path)?;
        let mut names: Vec<String> = Vec::new();
        let mut cols: Vec<Vec<(f64, f64)>> = Vec::new();
        for line in text.lines() {
            if line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if names.is_empty() {
                names = parts.iter().skip(1).map(|s| s.to_string()).collect();
                cols = vec![Vec::new(); names.len()];
                continue;
            }
            if let Ok(i) = parts[0].parse::<f64>() {
                for (c, part) in parts.iter().skip(1).enumerate() {
                    if let Ok(v) = part.parse::<f64>() {
                        cols[c].push((i, v));
                    }
                }
            }
        }
        let series: Vec<render::Series> =
            cols.into_iter().map(|points| render::Series { points }).collect();
        drop(names);
        let path = out.join("singular_values.png");
        render::render_series(&series, true, (640, 420), &path)?;
        println!("wrote {}", path.display());
        produced += 1;
    }
    if produced == 0 {
        return Err(Error::config("plot: provide --field (with --mesh), --trace, or --sv"));
    }
    Ok(())
}
