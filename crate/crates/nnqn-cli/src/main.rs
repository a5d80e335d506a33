//! `nnqn` — mesh/phantom generation, synthetic EIT simulation, dataset and
//! predictor training, reconstruction with three solvers, benchmarking, and
//! plot emission.
//!
//! Exit codes: 0 success, 2 usage/validation error, 3 numerical failure.

mod commands;
mod config;
mod io;
mod render;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use nnqn_core::error::Error;

#[derive(Parser)]
#[command(name = "nnqn", about = "Learned quasi-Newton reconstruction for 2D EIT")]
struct Cli {
    /// JSON configuration file (all sections optional)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override every RNG seed in the configuration
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output directory
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a mesh with boundary electrodes and write it as JSON
    Mesh {
        #[arg(long)]
        geometry: Option<String>,
        #[arg(long)]
        size: Option<f64>,
        #[arg(long)]
        target: Option<usize>,
        #[arg(long)]
        electrodes: Option<usize>,
        #[arg(long)]
        coverage: Option<f64>,
    },
    /// Solve the forward problem for a phantom and write measurement files
    Simulate {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        phantom: PathBuf,
        #[arg(long)]
        noise: Option<f64>,
        /// also export the adjoint Jacobian at the truth as CSV
        #[arg(long)]
        export_jacobian: bool,
    },
    /// Generate the supervised (model output → singular values) dataset
    Dataset {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        n_train: Option<usize>,
        #[arg(long)]
        n_val: Option<usize>,
        /// also export the dataset as CSV
        #[arg(long)]
        csv: bool,
    },
    /// Train the singular-value predictor on a dataset
    Train {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Reconstruct conductivity from a measurement file
    Reconstruct {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        measurements: PathBuf,
        /// gn | broyden | nnqn
        #[arg(long)]
        method: Option<String>,
        /// trained predictor weights (required for nnqn)
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Run all three methods on one phantom and emit comparison tables
    Benchmark {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        phantom: PathBuf,
        #[arg(long)]
        weights: PathBuf,
    },
    /// Render heatmaps and line charts from result files
    Plot {
        #[arg(long)]
        mesh: Option<PathBuf>,
        /// per-element field CSV to render as a heatmap
        #[arg(long)]
        field: Option<PathBuf>,
        /// trace CSVs (comma-separated) for the Jacobian-error chart
        #[arg(long, value_delimiter = ',')]
        trace: Vec<PathBuf>,
        /// singular-value comparison CSV
        #[arg(long)]
        sv: Option<PathBuf>,
    },
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Numerical(_) | Error::TrainingDiverged { .. } => 3,
        _ => 2,
    }
}

fn main() {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        // Ignore the error if a pool already exists (tests, repeated init).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    let mut cfg = match config::RunConfig::load(cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("nnqn: {e}");
            std::process::exit(2);
        }
    };
    if let Some(seed) = cli.seed {
        cfg.sampler.rng_seed = seed;
        cfg.noise.seed = seed;
        let mut training = cfg.training_config();
        training.rng_seed = seed;
        cfg.training = Some(training);
    }

    let result = match cli.command {
        Command::Mesh { geometry, size, target, electrodes, coverage } => {
            if let Some(g) = geometry {
                cfg.geometry.kind = g;
            }
            if let Some(s) = size {
                cfg.geometry.size = s;
            }
            if let Some(t) = target {
                cfg.geometry.target_elements = t;
            }
            if let Some(e) = electrodes {
                cfg.geometry.n_electrodes = e;
            }
            if let Some(c) = coverage {
                cfg.geometry.electrode_coverage = c;
            }
            commands::cmd_mesh(&cfg, &cli.out)
        }
        Command::Simulate { mesh, phantom, noise, export_jacobian } => {
            if let Some(n) = noise {
                cfg.noise.level = n;
            }
            commands::cmd_simulate(&cfg, &mesh, &phantom, export_jacobian, &cli.out)
        }
        Command::Dataset { mesh, n_train, n_val, csv } => {
            if let Some(n) = n_train {
                cfg.dataset.n_train = n;
            }
            if let Some(n) = n_val {
                cfg.dataset.n_val = n;
            }
            commands::cmd_dataset(&cfg, &mesh, csv, &cli.out)
        }
        Command::Train { dataset } => commands::cmd_train(&cfg, &dataset, &cli.out),
        Command::Reconstruct { mesh, measurements, method, weights } => {
            if let Some(m) = method {
                cfg.solver.method = m;
            }
            commands::cmd_reconstruct(&cfg, &mesh, &measurements, weights.as_deref(), &cli.out)
        }
        Command::Benchmark { mesh, phantom, weights } => {
            commands::cmd_benchmark(&cfg, &mesh, &phantom, &weights, &cli.out)
        }
        Command::Plot { mesh, field, trace, sv } => {
            commands::cmd_plot(mesh.as_deref(), field.as_deref(), &trace, sv.as_deref(), &cli.out)
        }
    };

    if let Err(e) = result {
        eprintln!("nnqn: {e}");
        std::process::exit(exit_code(&e));
    }
}
