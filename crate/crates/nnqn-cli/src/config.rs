//! Run configuration: one JSON file with per-command sections, every field
//! optional with defaults, overridable from the command line.

use serde::{Deserialize, Serialize};

use nnqn_core::error::{Error, Result};
use nnqn_core::fem::DEFAULT_CONTACT_IMPEDANCE;
use nnqn_core::mlp::TrainingConfig;
use nnqn_core::priors::Regularizer;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GeometryConfig {
    /// "disk" or "square"
    pub kind: String,
    /// disk radius or square width (cm)
    pub size: f64,
    pub target_elements: usize,
    pub n_electrodes: usize,
    pub electrode_coverage: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            kind: "disk".into(),
            size: 14.0,
            target_elements: 2034,
            n_electrodes: 16,
            electrode_coverage: 0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerSection {
    pub kernel_length_scale: f64,
    pub amplitude_std: f64,
    /// relative to sigma_exp
    pub lower_bound_factor: f64,
    pub rng_seed: u64,
}

impl Default for SamplerSection {
    fn default() -> Self {
        SamplerSection {
            kernel_length_scale: 3.0,
            amplitude_std: 2.0,
            lower_bound_factor: 0.1,
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSection {
    pub n_train: usize,
    pub n_val: usize,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection { n_train: 5000, n_val: 1000 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorSection {
    /// "tv" or "laplacian"
    pub kind: String,
    pub weight: f64,
    pub beta: f64,
}

impl Default for PriorSection {
    fn default() -> Self {
        PriorSection { kind: "tv".into(), weight: 1.0, beta: 1e-4 }
    }
}

impl PriorSection {
    pub fn to_regularizer(&self) -> Result<Regularizer> {
        match self.kind.as_str() {
            "tv" => Regularizer::tv(self.weight, self.beta),
            "laplacian" => Regularizer::laplacian(self.weight),
            other => Err(Error::config(format!("unknown prior kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSection {
    /// "gn", "broyden", or "nnqn"
    pub method: String,
    pub max_iterations: usize,
    pub tolerance: f64,
    /// positivity floor as a fraction of sigma_exp
    pub positivity_floor_factor: f64,
    /// record ‖J_accurate − J_method‖₂ per iteration
    pub diagnostics: bool,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            method: "nnqn".into(),
            max_iterations: 100,
            tolerance: 1e-2,
            positivity_floor_factor: 0.05,
            diagnostics: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSection {
    pub level: f64,
    pub seed: u64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        NoiseSection { level: 0.01, seed: 1 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkSection {
    pub repeats: usize,
    /// iterations at which the singular-value comparison is exported
    pub sv_snapshots: Vec<usize>,
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        BenchmarkSection { repeats: 1, sv_snapshots: vec![5, 15] }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RunConfig {
    pub geometry: GeometryConfig,
    pub contact_impedance: Option<f64>,
    pub injection_amplitude_ma: Option<f64>,
    pub sigma_exp: Option<f64>,
    pub sampler: SamplerSection,
    pub dataset: DatasetSection,
    pub training: Option<TrainingConfig>,
    pub prior: PriorSection,
    pub solver: SolverSection,
    pub noise: NoiseSection,
    pub benchmark: BenchmarkSection,
}

impl RunConfig {
    pub fn load(path: Option<&std::path::Path>) -> Result<RunConfig> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    Error::config(format!("cannot read config {}: {e}", p.display()))
                })?;
                Ok(serde_json::from_str(&text)?)
            }
        }
    }

    pub fn contact_impedance(&self) -> f64 {
        self.contact_impedance.unwrap_or(DEFAULT_CONTACT_IMPEDANCE)
    }

    pub fn amplitude(&self) -> f64 {
        self.injection_amplitude_ma.unwrap_or(1.0)
    }

    pub fn sigma_exp(&self) -> f64 {
        self.sigma_exp.unwrap_or(1.0)
    }

    pub fn training_config(&self) -> TrainingConfig {
        self.training.unwrap_or_default()
    }

    /// Compact JSON echo embedded in output headers.
    pub fn echo(&self) -> String {
        serde_json::to_string(self).expect("config serialization cannot fail")
    }
}
