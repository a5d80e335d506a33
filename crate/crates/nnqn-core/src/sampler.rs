//! Randomized conductivity fields and supervised training-set generation.
//!
//! Samples follow σ_rand = G⁻¹ r + σ_exp with r elementwise zero-mean
//! Gaussian and G a sparse smoothing operator G = I + (ℓ²/h̄²) L built from
//! the element-adjacency Laplacian, giving fields with correlation length ≈ ℓ
//! centered at σ_exp. Dataset targets are the singular values of the adjoint
//! Jacobian at each sample.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{CEMProblem, ConductivityField};
use crate::mesh::{element_adjacency_laplacian, Mesh};
use crate::sparse::OrderedFactor;
use crate::svd::singular_values;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FieldSamplerConfig {
    /// expected (background) conductivity σ_exp
    pub sigma_exp: f64,
    /// spatial correlation length of the sampled fields (cm)
    pub kernel_length_scale: f64,
    /// std of the white-noise perturbation before smoothing
    pub amplitude_std: f64,
    /// positivity clamp (must be below σ_exp)
    pub lower_bound: f64,
    pub rng_seed: u64,
}

impl FieldSamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_exp > self.lower_bound && self.lower_bound > 0.0) {
            return Err(Error::config("need sigma_exp > lower_bound > 0"));
        }
        if !(self.kernel_length_scale > 0.0) || !(self.amplitude_std >= 0.0) {
            return Err(Error::config("kernel length scale must be positive and amplitude non-negative"));
        }
        Ok(())
    }

    /// Default sampler for a given background: correlation length `scale`,
    /// amplitude that keeps fields positive after clamping at 0.1 σ_exp.
    pub fn for_background(sigma_exp: f64, length_scale: f64, seed: u64) -> Self {
        FieldSamplerConfig {
            sigma_exp,
            kernel_length_scale: length_scale,
            amplitude_std: 2.0 * sigma_exp,
            lower_bound: 0.1 * sigma_exp,
            rng_seed: seed,
        }
    }
}

/// Reusable sampler: the smoothing solve G⁻¹ is factorized once per mesh.
pub struct FieldSampler<'m> {
    mesh: &'m Mesh,
    config: FieldSamplerConfig,
    factor: OrderedFactor,
}

impl<'m> FieldSampler<'m> {
    pub fn new(mesh: &'m Mesh, config: FieldSamplerConfig) -> Result<Self> {
        config.validate()?;
        let lap = element_adjacency_laplacian(mesh);
        let h = mesh.mean_element_diameter();
        let ratio = (config.kernel_length_scale / h).powi(2);
        // G = I + (ℓ/h̄)² L is SPD.
        let g = lap_scaled_plus_identity(&lap, ratio);
        let factor = OrderedFactor::with_rcm(&g)?;
        Ok(FieldSampler { mesh, config, factor })
    }

    pub fn config(&self) -> &FieldSamplerConfig {
        &self.config
    }

    /// Draws the sample with the given index; streams are independent per
    /// index so parallel generation is order-independent.
    pub fn sample(&self, index: u64) -> ConductivityField {
        let seed = self.config.rng_seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.mesh.n_elements();
        let r = DVector::from_fn(n, |_, _| {
            let x: f64 = StandardNormal.sample(&mut rng);
            self.config.amplitude_std * x
        });
        let smooth = self.factor.solve(&r);
        let values = smooth.map(|v| (self.config.sigma_exp + v).max(self.config.lower_bound));
        ConductivityField::new(values).expect("clamped field is positive")
    }
}

fn lap_scaled_plus_identity(lap: &crate::sparse::SparseSym, scale: f64) -> crate::sparse::SparseSym {
    let n = lap.dim();
    let mut triplets: Vec<(usize, usize, f64)> =
        lap.upper_entries().map(|(i, j, v)| (i, j, scale * v)).collect();
    for i in 0..n {
        triplets.push((i, i, 1.0));
    }
    crate::sparse::SparseSym::from_triplets(n, triplets)
}

/// Draws one random conductivity field (convenience wrapper; use
/// `FieldSampler` when drawing many samples from the same mesh).
pub fn sample_conductivity(mesh: &Mesh, config: &FieldSamplerConfig) -> Result<ConductivityField> {
    Ok(FieldSampler::new(mesh, *config)?.sample(0))
}

/// Supervised dataset: rows of model outputs A(σ_rand) and descending
/// singular-value targets, with a train/validation split. `split[i]` is 0 for
/// training rows and 1 for validation rows.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub inputs: DMatrix<f64>,
    pub targets: DMatrix<f64>,
    pub split: Vec<u8>,
    pub seed: u64,
}

impl TrainingSet {
    pub fn n_rows(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn train_indices(&self) -> Vec<usize> {
        self.split.iter().enumerate().filter(|(_, &s)| s == 0).map(|(i, _)| i).collect()
    }

    pub fn val_indices(&self) -> Vec<usize> {
        self.split.iter().enumerate().filter(|(_, &s)| s == 1).map(|(i, _)| i).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.nrows() != self.targets.nrows() || self.split.len() != self.inputs.nrows() {
            return Err(Error::contract("dataset row counts disagree"));
        }
        for (r, row) in self.targets.row_iter().enumerate() {
            let mut prev = f64::INFINITY;
            for &v in row.iter() {
                if v < 0.0 {
                    return Err(Error::contract(format!("negative target in row {r}")));
                }
                if v > prev {
                    return Err(Error::contract(format!("targets not sorted descending in row {r}")));
                }
                prev = v;
            }
        }
        Ok(())
    }
}

/// Builds the supervised dataset: for each sample, σ_rand is drawn, the input
/// row is A(σ_rand), and the target row holds the singular values of the
/// adjoint Jacobian at σ_rand (descending). Samples are generated in parallel;
/// results are deterministic for a fixed seed regardless of thread count.
pub fn build_dataset(
    problem: &CEMProblem,
    config: &FieldSamplerConfig,
    n_train: usize,
    n_val: usize,
) -> Result<TrainingSet> {
    if n_train < 1 || n_val < 1 {
        return Err(Error::config("need at least one training and one validation sample"));
    }
    let total = n_train + n_val;
    let sampler = FieldSampler::new(problem.mesh(), *config)?;
    let m = problem.n_measurements();

    let rows: Vec<Result<(DVector<f64>, DVector<f64>)>> = (0..total)
        .into_par_iter()
        .map(|i| {
            let sigma = sampler.sample(i as u64);
            let (sol, jac) = problem
                .solve_with_jacobian(&sigma)
                .map_err(|e| Error::numerical(format!("sample {i}: {e}")))?;
            let s = singular_values(&jac);
            Ok((sol.measurements, s))
        })
        .collect();

    let mut inputs = DMatrix::zeros(total, m);
    let mut targets = DMatrix::zeros(total, m);
    for (i, row) in rows.into_iter().enumerate() {
        let (g, s) = row?;
        inputs.set_row(i, &g.transpose());
        targets.set_row(i, &s.transpose());
    }
    let mut split = vec![0u8; total];
    for s in split.iter_mut().skip(n_train) {
        *s = 1;
    }
    let set = TrainingSet { inputs, targets, split, seed: config.rng_seed };
    set.validate()?;
    Ok(set)
}

// --- Dataset container I/O ----------------------------------------------------

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    n: usize,
    m: usize,
    seed: u64,
    split: Vec<u8>,
}

/// Binary container: little-endian u32 header length, JSON header
/// {n, m, seed, split}, then row-major f64 blocks for inputs and targets.
pub fn write_dataset(set: &TrainingSet, w: &mut impl std::io::Write) -> Result<()> {
    let header = DatasetHeader {
        n: set.n_rows(),
        m: set.dim(),
        seed: set.seed,
        split: set.split.clone(),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    w.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    for block in [&set.inputs, &set.targets] {
        for r in 0..block.nrows() {
            for c in 0..block.ncols() {
                w.write_all(&block[(r, c)].to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read_dataset(r: &mut impl std::io::Read) -> Result<TrainingSet> {
    let mut len_bytes = [0u8; 4];
    r.read_exact(&mut len_bytes).map_err(|_| Error::format("dataset header truncated"))?;
    let len = u32::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; len];
    r.read_exact(&mut header_bytes).map_err(|_| Error::format("dataset header truncated"))?;
    let header: DatasetHeader = serde_json::from_slice(&header_bytes)?;
    if header.split.len() != header.n {
        return Err(Error::format("dataset split length disagrees with row count"));
    }
    let mut read_block = |n: usize, m: usize| -> Result<DMatrix<f64>> {
        let mut buf = vec![0u8; n * m * 8];
        r.read_exact(&mut buf).map_err(|_| Error::format("dataset payload truncated"))?;
        let mut out = DMatrix::zeros(n, m);
        for i in 0..n {
            for j in 0..m {
                let off = (i * m + j) * 8;
                out[(i, j)] = f64::from_le_bytes(buf[off..off + 8].try_into().unwrap());
            }
        }
        Ok(out)
    };
    let inputs = read_block(header.n, header.m)?;
    let targets = read_block(header.n, header.m)?;
    let set = TrainingSet { inputs, targets, split: header.split, seed: header.seed };
    set.validate()?;
    Ok(set)
}

/// CSV export for inspection: one row per sample, inputs then targets.
pub fn dataset_to_csv(set: &TrainingSet, w: &mut impl std::io::Write) -> Result<()> {
    write!(w, "# n={} m={} seed={}\nrow,split", set.n_rows(), set.dim(), set.seed)?;
    for j in 0..set.dim() {
        write!(w, ",in{j}")?;
    }
    for j in 0..set.dim() {
        write!(w, ",sv{j}")?;
    }
    writeln!(w)?;
    for i in 0..set.n_rows() {
        write!(w, "{i},{}", set.split[i])?;
        for j in 0..set.dim() {
            write!(w, ",{:.17e}", set.inputs[(i, j)])?;
        }
        for j in 0..set.dim() {
            write!(w, ",{:.17e}", set.targets[(i, j)])?;
        }
        writeln!(w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::DEFAULT_CONTACT_IMPEDANCE;
    use crate::mesh::build_disk_mesh;

    fn small_problem() -> CEMProblem {
        let (mesh, layout) = build_disk_mesh(1.0, 60, 4, 0.5).unwrap();
        CEMProblem::adjacent_protocol(mesh, layout, vec![DEFAULT_CONTACT_IMPEDANCE; 4], 1.0).unwrap()
    }

    #[test]
    fn zero_amplitude_returns_background() {
        let (mesh, _) = build_disk_mesh(1.0, 100, 4, 0.5).unwrap();
        let config = FieldSamplerConfig {
            sigma_exp: 1.4,
            kernel_length_scale: 0.3,
            amplitude_std: 0.0,
            lower_bound: 0.14,
            rng_seed: 1,
        };
        let field = sample_conductivity(&mesh, &config).unwrap();
        for &v in field.values().iter() {
            assert_eq!(v, 1.4);
        }
    }

    #[test]
    fn sample_mean_centered_at_sigma_exp() {
        // Monte-Carlo oracle over many samples.
        let (mesh, _) = build_disk_mesh(1.0, 80, 4, 0.5).unwrap();
        let config = FieldSamplerConfig {
            sigma_exp: 1.0,
            kernel_length_scale: 0.25,
            amplitude_std: 0.8,
            lower_bound: 0.1,
            rng_seed: 3,
        };
        let sampler = FieldSampler::new(&mesh, config).unwrap();
        let n = mesh.n_elements();
        let draws = 2000usize;
        let mut mean = DVector::<f64>::zeros(n);
        let mut m2 = DVector::<f64>::zeros(n);
        for i in 0..draws {
            let f = sampler.sample(i as u64);
            mean += f.values();
            m2 += f.values().component_mul(f.values());
        }
        mean /= draws as f64;
        let var = m2 / draws as f64 - mean.component_mul(&mean);
        for e in 0..n {
            let se = (var[e] / draws as f64).sqrt();
            assert!(
                (mean[e] - 1.0).abs() < 3.5 * se + 1e-3,
                "element {e}: mean {} se {se}",
                mean[e]
            );
        }
    }

    #[test]
    fn correlation_decays_with_distance() {
        let (mesh, _) = build_disk_mesh(2.0, 300, 4, 0.5).unwrap();
        let ell = 0.4;
        let config = FieldSamplerConfig {
            sigma_exp: 1.0,
            kernel_length_scale: ell,
            amplitude_std: 1.0,
            lower_bound: 0.1,
            rng_seed: 9,
        };
        let sampler = FieldSampler::new(&mesh, config).unwrap();
        // Reference element near the center; partners near 0.5ℓ and 3ℓ away.
        let center = (0..mesh.n_elements())
            .min_by(|&a, &b| {
                let ca = mesh.element_centroid(a);
                let cb = mesh.element_centroid(b);
                (ca[0] * ca[0] + ca[1] * ca[1])
                    .partial_cmp(&(cb[0] * cb[0] + cb[1] * cb[1]))
                    .unwrap()
            })
            .unwrap();
        let c0 = mesh.element_centroid(center);
        let nearest_to = |d: f64| {
            (0..mesh.n_elements())
                .min_by(|&a, &b| {
                    let da = dist(mesh.element_centroid(a), c0) - d;
                    let db = dist(mesh.element_centroid(b), c0) - d;
                    da.abs().partial_cmp(&db.abs()).unwrap()
                })
                .unwrap()
        };
        fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
            ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
        }
        let near = nearest_to(0.5 * ell);
        let far = nearest_to(3.0 * ell);
        let draws = 1500;
        let (mut s0, mut sn, mut sf) = (Vec::new(), Vec::new(), Vec::new());
        for i in 0..draws {
            let f = sampler.sample(i as u64);
            s0.push(f.values()[center]);
            sn.push(f.values()[near]);
            sf.push(f.values()[far]);
        }
        let corr = |a: &[f64], b: &[f64]| {
            let ma = a.iter().sum::<f64>() / a.len() as f64;
            let mb = b.iter().sum::<f64>() / b.len() as f64;
            let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
            let va: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum();
            let vb: f64 = b.iter().map(|y| (y - mb) * (y - mb)).sum();
            cov / (va * vb).sqrt()
        };
        let c_near = corr(&s0, &sn);
        let c_far = corr(&s0, &sf);
        assert!(
            c_far < c_near,
            "correlation should decay with distance: near {c_near:.3} far {c_far:.3}"
        );
    }

    #[test]
    fn dataset_shapes_and_invariants() {
        let problem = small_problem();
        let config = FieldSamplerConfig::for_background(1.0, 0.3, 7);
        let set = build_dataset(&problem, &config, 2, 1).unwrap();
        assert_eq!(set.n_rows(), 3);
        assert_eq!(set.dim(), 16);
        set.validate().unwrap();
        assert_eq!(set.train_indices(), vec![0, 1]);
        assert_eq!(set.val_indices(), vec![2]);
    }

    #[test]
    fn dataset_deterministic_and_roundtrips() {
        let problem = small_problem();
        let config = FieldSamplerConfig::for_background(1.0, 0.3, 11);
        let a = build_dataset(&problem, &config, 3, 2).unwrap();
        let b = build_dataset(&problem, &config, 3, 2).unwrap();
        assert_eq!(a.inputs, b.inputs);
        assert_eq!(a.targets, b.targets);

        let mut buf = Vec::new();
        write_dataset(&a, &mut buf).unwrap();
        let back = read_dataset(&mut buf.as_slice()).unwrap();
        assert_eq!(back.inputs, a.inputs);
        assert_eq!(back.targets, a.targets);
        assert_eq!(back.split, a.split);

        // Truncated payload is rejected.
        let short = &buf[..buf.len() - 9];
        assert!(read_dataset(&mut &short[..]).is_err());
    }

    #[test]
    fn homogeneous_sample_targets_match_exact_jacobian() {
        let problem = small_problem();
        let mut config = FieldSamplerConfig::for_background(1.0, 0.3, 5);
        config.amplitude_std = 0.0;
        let set = build_dataset(&problem, &config, 1, 1).unwrap();
        let sigma = ConductivityField::homogeneous(problem.n_elements(), 1.0).unwrap();
        let jac = problem.jacobian_adjoint(&sigma).unwrap();
        let s = singular_values(&jac);
        for j in 0..set.dim() {
            assert!((set.targets[(0, j)] - s[j]).abs() <= 1e-12 * s[0]);
        }
    }

    #[test]
    fn perturbation_targets_close_to_adjoint_targets() {
        // Cross-check propagated through the SVD.
        let problem = small_problem();
        let config = FieldSamplerConfig::for_background(1.0, 0.3, 13);
        let sampler = FieldSampler::new(problem.mesh(), config).unwrap();
        let sigma = sampler.sample(0);
        let j_adj = problem.jacobian_adjoint(&sigma).unwrap();
        let j_pert = crate::fem::jacobian_perturbation(
            &problem,
            &sigma,
            crate::fem::PerturbationStep::default(),
        )
        .unwrap();
        let s_adj = singular_values(&j_adj);
        let s_pert = singular_values(&j_pert);
        let rel = (&s_adj - &s_pert).norm() / s_adj.norm();
        assert!(rel < 1e-3, "singular-value cross-check {rel:.3e}");
    }

    #[test]
    fn two_sigma_range_property() {
        let (mesh, _) = build_disk_mesh(1.0, 100, 4, 0.5).unwrap();
        let config = FieldSamplerConfig::for_background(1.0, 0.3, 17);
        let sampler = FieldSampler::new(&mesh, config).unwrap();
        let mut values = Vec::new();
        for i in 0..1000u64 {
            let f = sampler.sample(i);
            values.extend(f.values().iter().cloned());
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let std = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / values.len() as f64)
            .sqrt();
        let inside = values
            .iter()
            .filter(|&&v| (v - config.sigma_exp).abs() <= 2.0 * std)
            .count() as f64
            / values.len() as f64;
        assert!(inside >= 0.95, "only {:.2}% within two std", 100.0 * inside);
    }
}
