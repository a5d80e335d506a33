//! Complete Electrode Model forward map A(σ) on P1 triangles.
//!
//! The CEM couples an interior potential u with per-electrode voltages U
//! through contact impedances z_l:
//!
//!   ∫ σ ∇u·∇v dΩ + Σ_l (1/z_l) ∫_{E_l} (u − U_l)(v − V_l) ds = Σ_l I_l V_l
//!
//! The assembled system is symmetric positive semi-definite with a constant
//! null vector; a rank-one grounding term γ (Σ_l U_l)(Σ_l V_l) fixes the gauge
//! exactly (the discrete solution satisfies Σ_l U_l = 0 because the injected
//! currents sum to zero) and makes the matrix SPD.
//!
//! One factorization is reused across all injection patterns at a fixed σ.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::mesh::{ElectrodeLayout, Mesh};
use crate::sparse::{reverse_cuthill_mckee, SkylineMatrix};

/// Default contact impedance (nominal Ω·cm) for synthetic studies. Large
/// enough that the contact length scale z·σ is resolvable on meshes of a few
/// hundred elements; in the near-shunt limit the electrode-edge current
/// concentration would dominate the P1 discretization error.
pub const DEFAULT_CONTACT_IMPEDANCE: f64 = 10.0;

/// Per-element conductivity vector (strictly positive, nominal mS/cm).
#[derive(Debug, Clone, PartialEq)]
pub struct ConductivityField {
    values: DVector<f64>,
}

impl ConductivityField {
    pub fn new(values: DVector<f64>) -> Result<Self> {
        if values.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::domain("conductivity entries must be strictly positive"));
        }
        Ok(ConductivityField { values })
    }

    pub fn homogeneous(n: usize, value: f64) -> Result<Self> {
        Self::new(DVector::from_element(n, value))
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Stacked electrode voltage data (nominal mV) with an optional noise model.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementFrame {
    pub values: DVector<f64>,
    pub noise_std: Option<DVector<f64>>,
}

impl MeasurementFrame {
    pub fn noiseless(values: DVector<f64>) -> Self {
        MeasurementFrame { values, noise_std: None }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// One voltage measurement: U[pos] - U[neg] under injection `pattern`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeasurementSpec {
    pub pattern: usize,
    pub pos: usize,
    pub neg: usize,
}

#[derive(Debug, Clone)]
struct ElementGeometry {
    dofs: [usize; 3],
    /// (b_i · b_j) / (4A) for upper pairs (00, 01, 02, 11, 12, 22)
    stiffness: [f64; 6],
    /// ∇φ_i = grad[i], rows of the P1 gradient operator
    grad: [[f64; 2]; 3],
    area: f64,
    /// skyline storage offsets matching `stiffness`
    scatter: [usize; 6],
}

/// Immutable CEM problem: mesh, electrodes, protocol, and the precomputed
/// assembly machinery. Safe to share across threads; forward solves allocate
/// their own factorization state.
pub struct CEMProblem {
    mesh: Mesh,
    layout: ElectrodeLayout,
    contact_impedances: Vec<f64>,
    injection_patterns: DMatrix<f64>,
    measurements: Vec<MeasurementSpec>,
    n_dof: usize,
    dof_of_node: Vec<usize>,
    electrode_dof: Vec<usize>,
    elements: Vec<ElementGeometry>,
    /// σ-independent electrode/contact contributions (storage offset, value)
    electrode_terms: Vec<(usize, f64)>,
    /// storage offsets of the grounding block (all electrode-pair entries)
    grounding: Vec<usize>,
    /// diagonal storage offsets (for the grounding scale γ)
    diag_offsets: Vec<usize>,
    template: SkylineMatrix,
}

impl CEMProblem {
    /// Builds a problem with explicit injection patterns (rows must sum to
    /// zero) and measurement selections.
    pub fn new(
        mesh: Mesh,
        layout: ElectrodeLayout,
        contact_impedances: Vec<f64>,
        injection_patterns: DMatrix<f64>,
        measurements: Vec<MeasurementSpec>,
    ) -> Result<Self> {
        let n_electrodes = layout.n_electrodes();
        if contact_impedances.len() != n_electrodes {
            return Err(Error::config("one contact impedance per electrode required"));
        }
        if contact_impedances.iter().any(|&z| !(z > 0.0)) {
            return Err(Error::domain("contact impedances must be strictly positive"));
        }
        if injection_patterns.ncols() != n_electrodes {
            return Err(Error::config("injection pattern width must equal electrode count"));
        }
        for (p, row) in injection_patterns.row_iter().enumerate() {
            let s: f64 = row.iter().sum();
            if s.abs() > 1e-12 {
                return Err(Error::domain(format!(
                    "injection pattern {p} sums to {s:.3e}; currents must be conserved"
                )));
            }
        }
        for m in &measurements {
            if m.pattern >= injection_patterns.nrows() || m.pos >= n_electrodes || m.neg >= n_electrodes {
                return Err(Error::config("measurement references out-of-range pattern/electrode"));
            }
        }

        let n_nodes = mesh.n_nodes();
        let n_dof = n_nodes + n_electrodes;

        // Node ordering: RCM on the FEM connectivity graph, electrode voltage
        // dofs appended last.
        let mut adj = vec![Vec::new(); n_nodes];
        for tri in mesh.elements() {
            for a in 0..3 {
                for b in a + 1..3 {
                    adj[tri[a]].push(tri[b]);
                    adj[tri[b]].push(tri[a]);
                }
            }
        }
        let perm = reverse_cuthill_mckee(&adj);
        let mut dof_of_node = vec![0usize; n_nodes];
        for (new, &old) in perm.iter().enumerate() {
            dof_of_node[old] = new;
        }
        let electrode_dof: Vec<usize> = (0..n_electrodes).map(|l| n_nodes + l).collect();

        // Envelope pattern: element couplings, electrode-node couplings, and
        // the (dense) electrode-electrode grounding block.
        let mut pattern: Vec<(usize, usize)> = Vec::new();
        for tri in mesh.elements() {
            let d = [dof_of_node[tri[0]], dof_of_node[tri[1]], dof_of_node[tri[2]]];
            for a in 0..3 {
                for b in a..3 {
                    pattern.push((d[a], d[b]));
                }
            }
        }
        for (l, edges) in layout.electrodes().iter().enumerate() {
            for &e in edges {
                let [n1, n2] = mesh.boundary_edges()[e];
                pattern.push((dof_of_node[n1], electrode_dof[l]));
                pattern.push((dof_of_node[n2], electrode_dof[l]));
                pattern.push((dof_of_node[n1], dof_of_node[n2]));
            }
        }
        for a in 0..n_electrodes {
            for b in a..n_electrodes {
                pattern.push((electrode_dof[a], electrode_dof[b]));
            }
        }
        let template = SkylineMatrix::from_pattern(n_dof, pattern);

        // Element geometry and scatter offsets.
        let mut elements = Vec::with_capacity(mesh.n_elements());
        for (e, tri) in mesh.elements().iter().enumerate() {
            let p = [mesh.nodes()[tri[0]], mesh.nodes()[tri[1]], mesh.nodes()[tri[2]]];
            let area = mesh.element_area(e);
            let b = [
                [p[1][1] - p[2][1], p[2][0] - p[1][0]],
                [p[2][1] - p[0][1], p[0][0] - p[2][0]],
                [p[0][1] - p[1][1], p[1][0] - p[0][0]],
            ];
            let pairs = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];
            let mut stiffness = [0.0; 6];
            for (k, &(i, j)) in pairs.iter().enumerate() {
                stiffness[k] = (b[i][0] * b[j][0] + b[i][1] * b[j][1]) / (4.0 * area);
            }
            let dofs = [dof_of_node[tri[0]], dof_of_node[tri[1]], dof_of_node[tri[2]]];
            let mut scatter = [0usize; 6];
            for (k, &(i, j)) in pairs.iter().enumerate() {
                let (r, c) = (dofs[i].min(dofs[j]), dofs[i].max(dofs[j]));
                scatter[k] = template.pos(r, c);
            }
            let inv2a = 1.0 / (2.0 * area);
            let grad = [
                [b[0][0] * inv2a, b[0][1] * inv2a],
                [b[1][0] * inv2a, b[1][1] * inv2a],
                [b[2][0] * inv2a, b[2][1] * inv2a],
            ];
            elements.push(ElementGeometry { dofs, stiffness, grad, area, scatter });
        }

        // σ-independent electrode terms: edge mass (1/z) [s/3, s/6; s/6, s/3],
        // node-electrode coupling -(1/z) s/2, and electrode diagonal |E_l|/z.
        let mut electrode_terms: Vec<(usize, f64)> = Vec::new();
        for (l, edges) in layout.electrodes().iter().enumerate() {
            let zi = 1.0 / contact_impedances[l];
            let mut total_len = 0.0;
            for &e in edges {
                let [n1, n2] = mesh.boundary_edges()[e];
                let (p1, p2) = (mesh.nodes()[n1], mesh.nodes()[n2]);
                let s = ((p1[0] - p2[0]).powi(2) + (p1[1] - p2[1]).powi(2)).sqrt();
                total_len += s;
                let (d1, d2) = (dof_of_node[n1], dof_of_node[n2]);
                electrode_terms.push((template.pos(d1, d1), zi * s / 3.0));
                electrode_terms.push((template.pos(d2, d2), zi * s / 3.0));
                electrode_terms.push((template.pos(d1.min(d2), d1.max(d2)), zi * s / 6.0));
                electrode_terms.push((template.pos(d1, electrode_dof[l]), -zi * s / 2.0));
                electrode_terms.push((template.pos(d2, electrode_dof[l]), -zi * s / 2.0));
            }
            electrode_terms.push((template.pos(electrode_dof[l], electrode_dof[l]), zi * total_len));
        }

        let mut grounding = Vec::new();
        for a in 0..n_electrodes {
            for b in a..n_electrodes {
                grounding.push(template.pos(electrode_dof[a], electrode_dof[b]));
            }
        }
        let diag_offsets: Vec<usize> = (0..n_dof).map(|j| template.pos(j, j)).collect();

        Ok(CEMProblem {
            mesh,
            layout,
            contact_impedances,
            injection_patterns,
            measurements,
            n_dof,
            dof_of_node,
            electrode_dof,
            elements,
            electrode_terms,
            grounding,
            diag_offsets,
            template,
        })
    }

    /// Standard adjacent-adjacent protocol: L injections between neighboring
    /// electrode pairs at `amplitude_ma`, and for each injection all L
    /// adjacent voltage differences (measurements on injecting electrodes are
    /// retained), giving L² measurements.
    pub fn adjacent_protocol(
        mesh: Mesh,
        layout: ElectrodeLayout,
        contact_impedances: Vec<f64>,
        amplitude_ma: f64,
    ) -> Result<Self> {
        let ell = layout.n_electrodes();
        let mut injections = DMatrix::zeros(ell, ell);
        for p in 0..ell {
            injections[(p, p)] = amplitude_ma;
            injections[(p, (p + 1) % ell)] = -amplitude_ma;
        }
        let mut measurements = Vec::with_capacity(ell * ell);
        for p in 0..ell {
            for k in 0..ell {
                measurements.push(MeasurementSpec { pattern: p, pos: k, neg: (k + 1) % ell });
            }
        }
        Self::new(mesh, layout, contact_impedances, injections, measurements)
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    /// System dof index of a mesh node (after reordering).
    pub fn node_dof(&self, node: usize) -> usize {
        self.dof_of_node[node]
    }

    /// System dof index of an electrode voltage unknown.
    pub fn electrode_voltage_dof(&self, electrode: usize) -> usize {
        self.electrode_dof[electrode]
    }

    pub fn layout(&self) -> &ElectrodeLayout {
        &self.layout
    }

    pub fn contact_impedances(&self) -> &[f64] {
        &self.contact_impedances
    }

    pub fn injection_patterns(&self) -> &DMatrix<f64> {
        &self.injection_patterns
    }

    pub fn measurements(&self) -> &[MeasurementSpec] {
        &self.measurements
    }

    /// Number of measurements m.
    pub fn n_measurements(&self) -> usize {
        self.measurements.len()
    }

    pub fn n_elements(&self) -> usize {
        self.mesh.n_elements()
    }

    fn n_patterns(&self) -> usize {
        self.injection_patterns.nrows()
    }

    /// Assembles the grounded CEM system for `sigma`, returning the skyline
    /// matrix and the dense right-hand-side block (one column per injection).
    pub fn assemble_system(&self, sigma: &ConductivityField) -> Result<(SkylineMatrix, DMatrix<f64>)> {
        if sigma.len() != self.mesh.n_elements() {
            return Err(Error::contract(format!(
                "conductivity has {} entries for {} elements",
                sigma.len(),
                self.mesh.n_elements()
            )));
        }
        let mut k = self.template.clone();
        k.clear();
        let sv = sigma.values();
        for (e, geo) in self.elements.iter().enumerate() {
            let s = sv[e];
            for t in 0..6 {
                k.vals[geo.scatter[t]] += s * geo.stiffness[t];
            }
        }
        for &(pos, v) in &self.electrode_terms {
            k.vals[pos] += v;
        }
        // Grounding scale from the current diagonal keeps the term
        // proportional under global rescaling of (σ, 1/z).
        let mut trace = 0.0;
        for &p in &self.diag_offsets {
            trace += k.vals[p];
        }
        let gamma = trace / self.n_dof as f64;
        for &p in &self.grounding {
            k.vals[p] += gamma;
        }

        let mut rhs = DMatrix::zeros(self.n_dof, self.n_patterns());
        for p in 0..self.n_patterns() {
            for l in 0..self.layout.n_electrodes() {
                rhs[(self.electrode_dof[l], p)] = self.injection_patterns[(p, l)];
            }
        }
        Ok((k, rhs))
    }

    /// Solves the forward problem: measurements plus cached nodal potentials
    /// (one column per injection pattern, in mesh node order then electrodes).
    pub fn solve_forward(&self, sigma: &ConductivityField) -> Result<ForwardSolution> {
        let (k, rhs) = self.assemble_system(sigma)?;
        let factor = k.factorize().map_err(|e| {
            Error::numerical(format!("CEM system factorization failed ({e}); mesh may be degenerate"))
        })?;
        let potentials = factor.solve_matrix(&rhs);
        let mut values = DVector::zeros(self.measurements.len());
        for (i, m) in self.measurements.iter().enumerate() {
            values[i] = potentials[(self.electrode_dof[m.pos], m.pattern)]
                - potentials[(self.electrode_dof[m.neg], m.pattern)];
        }
        Ok(ForwardSolution { measurements: values, potentials })
    }

    /// Electrode voltages for a pattern from a cached solution.
    pub fn electrode_voltages(&self, sol: &ForwardSolution, pattern: usize) -> DVector<f64> {
        DVector::from_fn(self.layout.n_electrodes(), |l, _| {
            sol.potentials[(self.electrode_dof[l], pattern)]
        })
    }

    /// Per-element potential gradients for one pattern column.
    fn element_gradients(&self, potentials: &DMatrix<f64>, pattern: usize) -> Vec<[f64; 2]> {
        let col = potentials.column(pattern);
        self.elements
            .iter()
            .map(|geo| {
                let mut g = [0.0, 0.0];
                for i in 0..3 {
                    let u = col[geo.dofs[i]];
                    g[0] += u * geo.grad[i][0];
                    g[1] += u * geo.grad[i][1];
                }
                g
            })
            .collect()
    }

    /// Jacobian by the adjoint formula: J[row][e] = -A_e ∇u_drive · ∇w_meas,
    /// where w_meas is the potential of a unit current injected at the
    /// measurement pair.
    pub fn jacobian_adjoint(&self, sigma: &ConductivityField) -> Result<DMatrix<f64>> {
        Ok(self.solve_with_jacobian(sigma)?.1)
    }

    /// Forward solve and adjoint Jacobian sharing a single factorization.
    pub fn solve_with_jacobian(
        &self,
        sigma: &ConductivityField,
    ) -> Result<(ForwardSolution, DMatrix<f64>)> {
        // Distinct measurement pairs -> unit-current fields.
        let mut pair_index: std::collections::HashMap<(usize, usize), usize> =
            std::collections::HashMap::new();
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        for m in &self.measurements {
            pair_index.entry((m.pos, m.neg)).or_insert_with(|| {
                pairs.push((m.pos, m.neg));
                pairs.len() - 1
            });
        }
        let (k, rhs_drive) = self.assemble_system(sigma)?;
        let factor = k.factorize().map_err(|e| {
            Error::numerical(format!("CEM system factorization failed ({e}); mesh may be degenerate"))
        })?;
        let potentials = factor.solve_matrix(&rhs_drive);
        let mut values = DVector::zeros(self.measurements.len());
        for (i, m) in self.measurements.iter().enumerate() {
            values[i] = potentials[(self.electrode_dof[m.pos], m.pattern)]
                - potentials[(self.electrode_dof[m.neg], m.pattern)];
        }

        let mut rhs = DMatrix::zeros(self.n_dof, pairs.len());
        for (c, &(pos, neg)) in pairs.iter().enumerate() {
            rhs[(self.electrode_dof[pos], c)] = 1.0;
            rhs[(self.electrode_dof[neg], c)] = -1.0;
        }
        let meas_fields = factor.solve_matrix(&rhs);

        let drive_grads: Vec<Vec<[f64; 2]>> =
            (0..self.n_patterns()).map(|p| self.element_gradients(&potentials, p)).collect();
        let meas_grads: Vec<Vec<[f64; 2]>> =
            (0..pairs.len()).map(|c| self.element_gradients(&meas_fields, c)).collect();

        let n_el = self.mesh.n_elements();
        let mut jac = DMatrix::zeros(self.measurements.len(), n_el);
        for (row, m) in self.measurements.iter().enumerate() {
            let gd = &drive_grads[m.pattern];
            let gm = &meas_grads[pair_index[&(m.pos, m.neg)]];
            for e in 0..n_el {
                let a = self.elements[e].area;
                jac[(row, e)] = -a * (gd[e][0] * gm[e][0] + gd[e][1] * gm[e][1]);
            }
        }
        Ok((ForwardSolution { measurements: values, potentials }, jac))
    }
}

/// Forward solution with cached nodal potentials (per-call state).
pub struct ForwardSolution {
    pub measurements: DVector<f64>,
    pub potentials: DMatrix<f64>,
}

impl ForwardSolution {
    pub fn frame(&self) -> MeasurementFrame {
        MeasurementFrame::noiseless(self.measurements.clone())
    }
}

// --- Forward-model abstraction ----------------------------------------------

/// A differentiable forward map used by the reconstruction drivers. The CEM
/// problem is the production implementation; tests substitute affine stubs.
pub trait ForwardModel: Sync {
    fn output_dim(&self) -> usize;
    fn param_dim(&self) -> usize;
    fn eval(&self, sigma: &ConductivityField) -> Result<DVector<f64>>;
    /// Best-available Jacobian (adjoint formula for the CEM).
    fn accurate_jacobian(&self, sigma: &ConductivityField) -> Result<DMatrix<f64>>;
}

impl ForwardModel for CEMProblem {
    fn output_dim(&self) -> usize {
        self.n_measurements()
    }

    fn param_dim(&self) -> usize {
        self.mesh.n_elements()
    }

    fn eval(&self, sigma: &ConductivityField) -> Result<DVector<f64>> {
        Ok(self.solve_forward(sigma)?.measurements)
    }

    fn accurate_jacobian(&self, sigma: &ConductivityField) -> Result<DMatrix<f64>> {
        self.jacobian_adjoint(sigma)
    }
}

/// Relative/absolute step rule for forward differencing.
#[derive(Debug, Clone, Copy)]
pub struct PerturbationStep {
    pub relative: f64,
    pub absolute: f64,
}

impl Default for PerturbationStep {
    fn default() -> Self {
        PerturbationStep { relative: 1e-4, absolute: 1e-8 }
    }
}

impl PerturbationStep {
    pub fn step_for(&self, sigma_j: f64) -> f64 {
        (self.relative * sigma_j).max(self.absolute)
    }
}

/// Jacobian by forward differences: column j = (A(σ + h_j e_j) - A(σ)) / h_j
/// with h_j = max(h_rel σ_j, h_abs). Columns are evaluated in parallel on the
/// current rayon pool.
pub fn jacobian_perturbation<F: ForwardModel>(
    model: &F,
    sigma: &ConductivityField,
    step: PerturbationStep,
) -> Result<DMatrix<f64>> {
    use rayon::prelude::*;
    let base = model.eval(sigma)?;
    let n = model.param_dim();
    let columns: Vec<Result<DVector<f64>>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut pert = sigma.values().clone();
            let h = step.step_for(pert[j]);
            pert[j] += h;
            let out = model.eval(&ConductivityField::new(pert)?)?;
            Ok((out - &base) / h)
        })
        .collect();
    let mut jac = DMatrix::zeros(model.output_dim(), n);
    for (j, col) in columns.into_iter().enumerate() {
        jac.set_column(j, &col?);
    }
    Ok(jac)
}

// --- Noise model --------------------------------------------------------------

/// Adds zero-mean Gaussian noise with per-entry std `level·|g_i| + floor`,
/// where the floor is 1% of the level times the mean |g|. Deterministic under
/// a fixed seed; a zero level returns the input unchanged.
pub fn add_noise(frame: &MeasurementFrame, noise_level: f64, rng_seed: u64) -> Result<MeasurementFrame> {
    if noise_level < 0.0 {
        return Err(Error::domain("noise level must be non-negative"));
    }
    if noise_level == 0.0 {
        return Ok(frame.clone());
    }
    let mean_abs = frame.values.iter().map(|v| v.abs()).sum::<f64>() / frame.len().max(1) as f64;
    let floor = 0.01 * noise_level * mean_abs;
    let std = DVector::from_fn(frame.len(), |i, _| noise_level * frame.values[i].abs() + floor);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(rng_seed);
    let mut values = frame.values.clone();
    for i in 0..values.len() {
        let draw: f64 = StandardNormal.sample(&mut rng);
        values[i] += std[i] * draw;
    }
    Ok(MeasurementFrame { values, noise_std: Some(std) })
}
