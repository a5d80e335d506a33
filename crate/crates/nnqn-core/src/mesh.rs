//! 2D triangulated domains (disk and square) with boundary electrodes.
//!
//! Meshes are immutable after construction: linear (P1) triangles, counter-
//! clockwise orientation, explicit boundary edges, and element-adjacency
//! connectivity used by the graph-Laplacian prior and the field sampler.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::SparseSym;

/// Interior edge shared by two elements, with its physical length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InteriorEdge {
    pub a: usize,
    pub b: usize,
    pub length: f64,
}

/// Conforming triangle mesh. Coordinates are in cm.
#[derive(Debug, Clone)]
pub struct Mesh {
    nodes: Vec<[f64; 2]>,
    elements: Vec<[usize; 3]>,
    boundary_edges: Vec<[usize; 2]>,
    element_neighbors: Vec<Vec<usize>>,
    interior_edges: Vec<InteriorEdge>,
}

/// Electrodes as lists of indices into `Mesh::boundary_edges`.
#[derive(Debug, Clone)]
pub struct ElectrodeLayout {
    electrodes: Vec<Vec<usize>>,
}

impl ElectrodeLayout {
    pub fn n_electrodes(&self) -> usize {
        self.electrodes.len()
    }

    pub fn electrode_edges(&self, l: usize) -> &[usize] {
        &self.electrodes[l]
    }

    pub fn electrodes(&self) -> &[Vec<usize>] {
        &self.electrodes
    }
}

impl Mesh {
    /// Builds a mesh from raw node/element/boundary data, deriving adjacency
    /// and checking every structural invariant.
    pub fn new(
        nodes: Vec<[f64; 2]>,
        elements: Vec<[usize; 3]>,
        boundary_edges: Vec<[usize; 2]>,
    ) -> Result<Self> {
        let mut mesh = Mesh {
            nodes,
            elements,
            boundary_edges,
            element_neighbors: Vec::new(),
            interior_edges: Vec::new(),
        };
        mesh.derive_connectivity()?;
        mesh.validate()?;
        Ok(mesh)
    }

    fn derive_connectivity(&mut self) -> Result<()> {
        use std::collections::HashMap;
        let mut edge_owners: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (e, tri) in self.elements.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                edge_owners.entry(key).or_default().push(e);
            }
        }
        let mut neighbors = vec![Vec::new(); self.elements.len()];
        let mut interior = Vec::new();
        for (&(a, b), owners) in edge_owners.iter() {
            match owners.as_slice() {
                [e1, e2] => {
                    neighbors[*e1].push(*e2);
                    neighbors[*e2].push(*e1);
                    let pa = self.nodes[a];
                    let pb = self.nodes[b];
                    let len = ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2)).sqrt();
                    interior.push(InteriorEdge { a: *e1.min(e2), b: *e1.max(e2), length: len });
                }
                [_] => {}
                _ => {
                    return Err(Error::domain(format!(
                        "edge ({a},{b}) is shared by {} elements",
                        owners.len()
                    )))
                }
            }
        }
        for n in neighbors.iter_mut() {
            n.sort_unstable();
        }
        interior.sort_by_key(|e| (e.a, e.b));
        self.element_neighbors = neighbors;
        self.interior_edges = interior;
        Ok(())
    }

    /// Checks the mesh invariants: positive CCW areas, boundary edges owned by
    /// exactly one element, symmetric element adjacency.
    pub fn validate(&self) -> Result<()> {
        for (e, _) in self.elements.iter().enumerate() {
            let a = self.signed_area(e);
            if !(a > 0.0) {
                return Err(Error::domain(format!("element {e} has signed area {a:.3e}")));
            }
        }
        use std::collections::HashMap;
        let mut count: HashMap<(usize, usize), usize> = HashMap::new();
        for tri in &self.elements {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                *count.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        for be in &self.boundary_edges {
            let key = (be[0].min(be[1]), be[0].max(be[1]));
            match count.get(&key) {
                Some(1) => {}
                Some(c) => {
                    return Err(Error::domain(format!(
                        "boundary edge {key:?} belongs to {c} elements"
                    )))
                }
                None => {
                    return Err(Error::domain(format!(
                        "boundary edge {key:?} is not an element edge"
                    )))
                }
            }
        }
        let n_boundary_derived = count.values().filter(|&&c| c == 1).count();
        if n_boundary_derived != self.boundary_edges.len() {
            return Err(Error::domain(format!(
                "boundary edge list has {} entries but the mesh has {n_boundary_derived}",
                self.boundary_edges.len()
            )));
        }
        for (i, nbrs) in self.element_neighbors.iter().enumerate() {
            for &j in nbrs {
                if !self.element_neighbors[j].contains(&i) {
                    return Err(Error::domain(format!("asymmetric adjacency {i} <-> {j}")));
                }
            }
        }
        Ok(())
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn elements(&self) -> &[[usize; 3]] {
        &self.elements
    }

    pub fn boundary_edges(&self) -> &[[usize; 2]] {
        &self.boundary_edges
    }

    pub fn element_neighbors(&self) -> &[Vec<usize>] {
        &self.element_neighbors
    }

    /// Interior edges with shared-edge lengths (TV prior support).
    pub fn interior_edges(&self) -> &[InteriorEdge] {
        &self.interior_edges
    }

    fn signed_area(&self, e: usize) -> f64 {
        let [a, b, c] = self.elements[e];
        let (pa, pb, pc) = (self.nodes[a], self.nodes[b], self.nodes[c]);
        0.5 * ((pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1]))
    }

    pub fn element_area(&self, e: usize) -> f64 {
        self.signed_area(e)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.n_elements()).map(|e| self.element_area(e)).sum()
    }

    pub fn element_centroid(&self, e: usize) -> [f64; 2] {
        let [a, b, c] = self.elements[e];
        let (pa, pb, pc) = (self.nodes[a], self.nodes[b], self.nodes[c]);
        [(pa[0] + pb[0] + pc[0]) / 3.0, (pa[1] + pb[1] + pc[1]) / 3.0]
    }

    /// Mean element diameter (longest edge), used to scale smoothing lengths.
    pub fn mean_element_diameter(&self) -> f64 {
        let mut total = 0.0;
        for tri in &self.elements {
            let mut longest: f64 = 0.0;
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                let (pa, pb) = (self.nodes[a], self.nodes[b]);
                let len = ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2)).sqrt();
                longest = longest.max(len);
            }
            total += longest;
        }
        total / self.n_elements() as f64
    }
}

/// Graph Laplacian of element adjacency: `L[i][i] = degree(i)`,
/// `L[i][j] = -1` for elements sharing an edge.
pub fn element_adjacency_laplacian(mesh: &Mesh) -> SparseSym {
    let n = mesh.n_elements();
    let mut triplets = Vec::with_capacity(4 * n);
    for (i, nbrs) in mesh.element_neighbors().iter().enumerate() {
        triplets.push((i, i, nbrs.len() as f64));
        for &j in nbrs {
            if j > i {
                triplets.push((i, j, -1.0));
            }
        }
    }
    SparseSym::from_triplets(n, triplets)
}

// --- JSON serialization -----------------------------------------------------

#[derive(Serialize, Deserialize)]
struct MeshFile {
    nodes: Vec<[f64; 2]>,
    elements: Vec<[usize; 3]>,
    boundary_edges: Vec<[usize; 2]>,
    electrodes: Vec<Vec<usize>>,
}

/// Serializes a mesh and electrode layout to the JSON interchange format
/// (0-based indices; electrode entries index `boundary_edges`).
pub fn mesh_to_json(mesh: &Mesh, layout: &ElectrodeLayout) -> String {
    let file = MeshFile {
        nodes: mesh.nodes.clone(),
        elements: mesh.elements.clone(),
        boundary_edges: mesh.boundary_edges.clone(),
        electrodes: layout.electrodes.clone(),
    };
    serde_json::to_string(&file).expect("mesh serialization cannot fail")
}

pub fn mesh_from_json(text: &str) -> Result<(Mesh, ElectrodeLayout)> {
    let file: MeshFile = serde_json::from_str(text)?;
    let mesh = Mesh::new(file.nodes, file.elements, file.boundary_edges)?;
    let layout = ElectrodeLayout { electrodes: file.electrodes };
    validate_layout(&mesh, &layout)?;
    Ok((mesh, layout))
}

/// Checks electrode invariants: pairwise-disjoint edge sets, each forming a
/// connected boundary arc.
pub fn validate_layout(mesh: &Mesh, layout: &ElectrodeLayout) -> Result<()> {
    let mut seen = vec![false; mesh.boundary_edges().len()];
    for (l, edges) in layout.electrodes.iter().enumerate() {
        if edges.is_empty() {
            return Err(Error::domain(format!("electrode {l} has no edges")));
        }
        for &e in edges {
            if e >= seen.len() {
                return Err(Error::domain(format!("electrode {l} references edge {e}")));
            }
            if seen[e] {
                return Err(Error::domain(format!("electrode edge {e} used twice")));
            }
            seen[e] = true;
        }
        // Connectivity: the edges must chain through shared nodes.
        use std::collections::HashMap;
        let mut node_uses: HashMap<usize, usize> = HashMap::new();
        for &e in edges {
            for &n in &mesh.boundary_edges()[e] {
                *node_uses.entry(n).or_insert(0) += 1;
            }
        }
        let endpoints = node_uses.values().filter(|&&c| c == 1).count();
        let interior_ok = node_uses.values().all(|&c| c <= 2);
        if endpoints != 2 || !interior_ok {
            return Err(Error::domain(format!("electrode {l} edges do not form an arc")));
        }
    }
    Ok(())
}

// --- Disk builder -------------------------------------------------------------

/// Builds a conforming disk triangulation with `n_electrodes` equi-spaced
/// boundary arcs covering `electrode_coverage` of the circumference.
///
/// The construction is ring-based with per-ring node counts divisible by the
/// electrode count, so the mesh is exactly invariant under rotation by one
/// electrode station.
pub fn build_disk_mesh(
    radius: f64,
    target_elements: usize,
    n_electrodes: usize,
    electrode_coverage: f64,
) -> Result<(Mesh, ElectrodeLayout)> {
    check_common(radius, target_elements, n_electrodes, electrode_coverage)?;
    let ell = n_electrodes;
    let cov = electrode_coverage;

    // Search the boundary resolution and radial growth factor for the plan
    // whose element count lands nearest the target. Rings are thin near the
    // boundary (where the injected fields vary fastest) and coarsen inward.
    let min_per_station = (24.0 / ell as f64).ceil() as usize; // area deficit < 2%
    let span = 8 + 2 * ((target_elements as f64 / ell as f64).sqrt().ceil() as usize);
    let mut best: Option<(DiskPlan, usize)> = None;
    for per_station in min_per_station.max(2)..=(min_per_station.max(2) + span) {
        for &growth in &[1.15, 1.25, 1.35, 1.5] {
            let plan = plan_disk_rings(radius, ell, per_station, growth);
            let n = plan.element_count();
            let score = n.abs_diff(target_elements);
            if best.as_ref().map_or(true, |&(_, s)| score < s) {
                best = Some((plan, score));
            }
        }
    }
    let plan = best.unwrap().0;
    let per_station = plan.per_station;
    let e_seg = ((per_station as f64 * cov).round() as usize).clamp(1, per_station - 1);
    let g_seg = per_station - e_seg;

    // Per-station fractional positions of boundary nodes (electrode then gap),
    // shared across stations so that rotated copies compare identically.
    // Cosine spacing clusters nodes at the electrode-gap junctions, where the
    // contact current density peaks.
    let cosine = |t: f64| 0.5 * (1.0 - (std::f64::consts::PI * t).cos());
    let mut boundary_pos = Vec::with_capacity(per_station);
    for t in 0..e_seg {
        boundary_pos.push(cov * cosine(t as f64 / e_seg as f64));
    }
    for t in 0..g_seg {
        boundary_pos.push(cov + (1.0 - cov) * cosine(t as f64 / g_seg as f64));
    }

    let station_angle = 2.0 * std::f64::consts::PI / ell as f64;
    // Electrode l is centered at angle l * station_angle; its arc starts at
    // the station origin, so shift stations back by half the electrode arc.
    let angle_origin = -0.5 * cov * station_angle;

    let mut nodes: Vec<[f64; 2]> = vec![[0.0, 0.0]]; // center node 0
    let mut ring_nodes: Vec<Vec<usize>> = Vec::new(); // innermost first
    let mut ring_positions: Vec<Vec<f64>> = Vec::new(); // station-fraction units

    for (k, &(r, per)) in plan.rings.iter().enumerate().rev() {
        let is_boundary = k == plan.rings.len() - 1;
        let mut ids = Vec::with_capacity(ell * per);
        let mut pos = Vec::with_capacity(ell * per);
        for l in 0..ell {
            for t in 0..per {
                let station_pos = if is_boundary {
                    l as f64 + boundary_pos[t]
                } else {
                    l as f64 + t as f64 / per as f64
                };
                let ang = angle_origin + station_pos * station_angle;
                ids.push(nodes.len());
                nodes.push([r * ang.cos(), r * ang.sin()]);
                pos.push(station_pos);
            }
        }
        ring_nodes.push(ids);
        ring_positions.push(pos);
    }
    // Built outside-in above; restore inner-to-outer order.
    ring_nodes.reverse();
    ring_positions.reverse();

    let mut elements: Vec<[usize; 3]> = Vec::new();
    // Center fan.
    let inner = &ring_nodes[0];
    for j in 0..inner.len() {
        elements.push([0, inner[j], inner[(j + 1) % inner.len()]]);
    }
    // Annuli.
    for k in 0..ring_nodes.len() - 1 {
        stitch_rings(
            &ring_nodes[k],
            &ring_positions[k],
            &ring_nodes[k + 1],
            &ring_positions[k + 1],
            ell as f64,
            &mut elements,
        );
    }
    orient_ccw(&nodes, &mut elements);

    // Boundary edges in CCW order along the outer ring.
    let outer = ring_nodes.last().unwrap();
    let mut boundary_edges = Vec::with_capacity(outer.len());
    for j in 0..outer.len() {
        boundary_edges.push([outer[j], outer[(j + 1) % outer.len()]]);
    }
    // Electrode l covers the first e_seg edges of station l.
    let mut electrodes = Vec::with_capacity(ell);
    for l in 0..ell {
        electrodes.push((0..e_seg).map(|t| l * per_station + t).collect());
    }

    let mesh = Mesh::new(nodes, elements, boundary_edges)?;
    let layout = ElectrodeLayout { electrodes };
    validate_layout(&mesh, &layout)?;
    Ok((mesh, layout))
}

struct DiskPlan {
    ell: usize,
    per_station: usize,
    /// (radius, nodes per station), innermost first; the last entry is the
    /// boundary ring.
    rings: Vec<(f64, usize)>,
}

impl DiskPlan {
    fn element_count(&self) -> usize {
        let counts: Vec<usize> = self.rings.iter().map(|&(_, p)| p).collect();
        let mut n = counts[0]; // center fan
        for k in 0..counts.len() - 1 {
            n += counts[k] + counts[k + 1];
        }
        n * self.ell
    }
}

/// Plans ring radii and per-station node counts: the first radial step is
/// slightly finer than the boundary spacing and each step grows by `growth`;
/// node counts shrink inward to keep near-isotropic elements.
fn plan_disk_rings(radius: f64, ell: usize, per_station: usize, growth: f64) -> DiskPlan {
    let station_arc = 2.0 * std::f64::consts::PI * radius / ell as f64;
    let mut rings: Vec<(f64, usize)> = vec![(radius, per_station)];
    let mut r = radius;
    let mut step = 0.85 * station_arc / per_station as f64;
    loop {
        let next = r - step;
        // Close the center once the remaining disk is small.
        if next < 1.6 * step {
            break;
        }
        let tangential = step;
        let per = ((2.0 * std::f64::consts::PI * next / (ell as f64 * tangential)).round()
            as usize)
            .clamp(1, per_station);
        rings.push((next, per));
        r = next;
        step *= growth;
    }
    rings.reverse();
    DiskPlan { ell, per_station, rings }
}

/// Triangulates the annulus between two rings by merging them in angular
/// order. Positions are in station-fraction units and strictly increasing;
/// both rings wrap around at `period`.
fn stitch_rings(
    inner: &[usize],
    inner_pos: &[f64],
    outer: &[usize],
    outer_pos: &[f64],
    period: f64,
    elements: &mut Vec<[usize; 3]>,
) {
    let (ni, no) = (inner.len(), outer.len());
    let (mut i, mut o) = (0usize, 0usize);
    let ipos = |i: usize| {
        if i < ni {
            inner_pos[i]
        } else {
            inner_pos[i - ni] + period
        }
    };
    let opos = |o: usize| {
        if o < no {
            outer_pos[o]
        } else {
            outer_pos[o - no] + period
        }
    };
    while i < ni || o < no {
        let advance_outer = if o >= no {
            false
        } else if i >= ni {
            true
        } else {
            // Advance whichever ring has the nearer next node.
            opos(o + 1) <= ipos(i + 1)
        };
        if advance_outer {
            elements.push([inner[i % ni], outer[o % no], outer[(o + 1) % no]]);
            o += 1;
        } else {
            elements.push([inner[i % ni], outer[o % no], inner[(i + 1) % ni]]);
            i += 1;
        }
    }
}

fn orient_ccw(nodes: &[[f64; 2]], elements: &mut [[usize; 3]]) {
    for tri in elements.iter_mut() {
        let (pa, pb, pc) = (nodes[tri[0]], nodes[tri[1]], nodes[tri[2]]);
        let area2 = (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1]);
        if area2 < 0.0 {
            tri.swap(1, 2);
        }
    }
}

fn check_common(size: f64, target_elements: usize, n_electrodes: usize, coverage: f64) -> Result<()> {
    if !(size > 0.0) {
        return Err(Error::config(format!("domain size must be positive, got {size}")));
    }
    if n_electrodes < 2 {
        return Err(Error::config(format!("need at least 2 electrodes, got {n_electrodes}")));
    }
    if !(coverage > 0.0 && coverage < 1.0) {
        return Err(Error::config(format!(
            "electrode coverage must lie in (0,1), got {coverage} (electrodes may not cover the whole boundary)"
        )));
    }
    if target_elements < 8 {
        return Err(Error::config(format!("target_elements too small: {target_elements}")));
    }
    Ok(())
}

// --- Square builder -----------------------------------------------------------

/// Builds a structured triangulation of `[0, width]²` with electrodes placed
/// along the perimeter (4 per side when `n_electrodes` = 16). Electrode arcs
/// snap to the nearest grid edges.
pub fn build_square_mesh(
    width: f64,
    target_elements: usize,
    n_electrodes: usize,
    electrode_coverage: f64,
) -> Result<(Mesh, ElectrodeLayout)> {
    check_common(width, target_elements, n_electrodes, electrode_coverage)?;
    let ell = n_electrodes;
    let cov = electrode_coverage;

    // Grid resolution: near the target, but fine enough that every electrode
    // arc contains at least one edge midpoint.
    let g_target = ((target_elements as f64 / 2.0).sqrt().round() as usize).max(2);
    let g_min = ((ell as f64 / (4.0 * cov)).ceil() as usize + 1).max(2);
    let g = g_target.max(g_min);

    let n_side = g + 1;
    let h = width / g as f64;
    let mut nodes = Vec::with_capacity(n_side * n_side);
    for j in 0..n_side {
        for i in 0..n_side {
            nodes.push([i as f64 * h, j as f64 * h]);
        }
    }
    let id = |i: usize, j: usize| j * n_side + i;
    let mut elements = Vec::with_capacity(2 * g * g);
    for j in 0..g {
        for i in 0..g {
            elements.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            elements.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    orient_ccw(&nodes, &mut elements);

    // Boundary edges CCW around the perimeter starting at (0,0).
    let mut boundary_edges = Vec::with_capacity(4 * g);
    for i in 0..g {
        boundary_edges.push([id(i, 0), id(i + 1, 0)]);
    }
    for j in 0..g {
        boundary_edges.push([id(g, j), id(g, j + 1)]);
    }
    for i in (0..g).rev() {
        boundary_edges.push([id(i + 1, g), id(i, g)]);
    }
    for j in (0..g).rev() {
        boundary_edges.push([id(0, j + 1), id(0, j)]);
    }

    // Electrode l is centered at perimeter position (l + 0.5) * (4w / L) with
    // arc length cov * 4w / L; boundary edges snap by midpoint membership.
    let perimeter = 4.0 * width;
    let station = perimeter / ell as f64;
    let half_arc = 0.5 * cov * station;
    let mut electrodes = vec![Vec::new(); ell];
    for (e, _) in boundary_edges.iter().enumerate() {
        let mid = (e as f64 + 0.5) * h; // arc-length position of edge midpoint
        for (l, edges) in electrodes.iter_mut().enumerate() {
            let center = (l as f64 + 0.5) * station;
            let mut d = (mid - center).abs();
            d = d.min(perimeter - d);
            if d < half_arc {
                edges.push(e);
                break;
            }
        }
    }

    let mesh = Mesh::new(nodes, elements, boundary_edges)?;
    let layout = ElectrodeLayout { electrodes };
    validate_layout(&mesh, &layout)?;
    Ok((mesh, layout))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn disk_reference_size() {
        let (mesh, layout) = build_disk_mesh(14.0, 2034, 16, 0.5).unwrap();
        let n = mesh.n_elements();
        assert!(
            (n as f64 - 2034.0).abs() <= 0.25 * 2034.0,
            "element count {n} not within 25% of 2034"
        );
        assert_eq!(layout.n_electrodes(), 16);
    }

    #[test]
    fn disk_minimal_configuration() {
        let (mesh, layout) = build_disk_mesh(1.0, 50, 2, 0.1).unwrap();
        assert_eq!(layout.n_electrodes(), 2);
        mesh.validate().unwrap();
        validate_layout(&mesh, &layout).unwrap();
    }

    #[test]
    fn disk_area_close_to_analytic() {
        // Oracle: analytic disk area pi r^2.
        for (r, t) in [(14.0, 2034), (1.0, 50), (5.0, 400)] {
            let (mesh, _) = build_disk_mesh(r, t, 16.min(t / 8).max(2), 0.5).unwrap();
            let area = mesh.total_area();
            let exact = std::f64::consts::PI * r * r;
            assert!(
                (area - exact).abs() / exact < 0.02,
                "area {area} vs {exact} at r={r}, t={t}"
            );
        }
    }

    #[test]
    fn square_reference_size() {
        let (mesh, layout) = build_square_mesh(9.54, 2528, 16, 0.5).unwrap();
        let n = mesh.n_elements();
        assert!(
            (n as f64 - 2528.0).abs() <= 0.25 * 2528.0,
            "element count {n} not within 25% of 2528"
        );
        assert_eq!(layout.n_electrodes(), 16);
        // Four electrodes per side: edges 0..g-1 are the bottom side.
        let g = mesh.boundary_edges().len() / 4;
        for l in 0..4 {
            for &e in layout.electrode_edges(l) {
                assert!(e < g, "electrode {l} should lie on the bottom side");
            }
        }
    }

    #[test]
    fn square_area_exact() {
        let (mesh, _) = build_square_mesh(2.0, 8, 4, 0.25).unwrap();
        assert_relative_eq!(mesh.total_area(), 4.0, epsilon = 1e-10);
        let (mesh, _) = build_square_mesh(9.54, 2528, 16, 0.5).unwrap();
        assert_relative_eq!(mesh.total_area(), 9.54 * 9.54, epsilon = 1e-10);
    }

    #[test]
    fn adjacency_laplacian_two_triangles() {
        // Two triangles sharing one edge.
        let nodes = vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let elements = vec![[0, 1, 2], [0, 2, 3]];
        let boundary = vec![[0, 1], [1, 2], [2, 3], [3, 0]];
        let mesh = Mesh::new(nodes, elements, boundary).unwrap();
        let lap = element_adjacency_laplacian(&mesh).to_dense();
        assert_relative_eq!(lap[(0, 0)], 1.0);
        assert_relative_eq!(lap[(0, 1)], -1.0);
        assert_relative_eq!(lap[(1, 0)], -1.0);
        assert_relative_eq!(lap[(1, 1)], 1.0);
    }

    #[test]
    fn adjacency_laplacian_rows_sum_to_zero_and_psd() {
        let (mesh, _) = build_disk_mesh(1.0, 120, 4, 0.5).unwrap();
        let lap = element_adjacency_laplacian(&mesh);
        let dense = lap.to_dense();
        for i in 0..dense.nrows() {
            let s: f64 = dense.row(i).iter().sum();
            assert!(s.abs() < 1e-12, "row {i} sums to {s}");
        }
        // Oracle: eigenvalue check on a small mesh.
        let eig = dense.symmetric_eigen();
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min >= -1e-10, "Laplacian min eigenvalue {min}");
    }

    #[test]
    fn invalid_configuration_rejected() {
        assert!(build_disk_mesh(-1.0, 100, 4, 0.5).is_err());
        assert!(build_disk_mesh(1.0, 100, 1, 0.5).is_err());
        assert!(build_disk_mesh(1.0, 100, 4, 1.2).is_err());
        assert!(build_square_mesh(1.0, 100, 4, 0.0).is_err());
    }

    #[test]
    fn mesh_json_roundtrip() {
        let (mesh, layout) = build_disk_mesh(2.0, 150, 4, 0.4).unwrap();
        let text = mesh_to_json(&mesh, &layout);
        let (back, back_layout) = mesh_from_json(&text).unwrap();
        assert_eq!(back.n_nodes(), mesh.n_nodes());
        assert_eq!(back.n_elements(), mesh.n_elements());
        assert_eq!(back_layout.electrodes(), layout.electrodes());
    }

    #[test]
    fn disk_refinement_reduces_forward_area_error() {
        // Weak stand-in at mesh level: finer meshes approximate the disk better.
        let coarse = build_disk_mesh(1.0, 200, 4, 0.5).unwrap().0.total_area();
        let fine = build_disk_mesh(1.0, 800, 4, 0.5).unwrap().0.total_area();
        let exact = std::f64::consts::PI;
        assert!((fine - exact).abs() < (coarse - exact).abs());
    }

    #[test]
    fn disk_is_rotation_symmetric() {
        let (mesh, _) = build_disk_mesh(1.0, 400, 8, 0.5).unwrap();
        // Rotating node positions by one station must map the node set onto
        // itself (up to ordering).
        let ang = 2.0 * std::f64::consts::PI / 8.0;
        let (s, c) = ang.sin_cos();
        for p in mesh.nodes() {
            let q = [c * p[0] - s * p[1], s * p[0] + c * p[1]];
            let found = mesh
                .nodes()
                .iter()
                .any(|r| (r[0] - q[0]).abs() < 1e-9 && (r[1] - q[1]).abs() < 1e-9);
            assert!(found, "rotated node {q:?} not found");
        }
    }
}
