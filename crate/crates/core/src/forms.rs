//! Assembly of the energy and mass bilinear forms for both models, surface
//! load functionals, and the convex-minimization step solver shared by the
//! two resolvent implementations.
//!
//! Thin model: a single vector space on the layer-resolving bulk mesh;
//! the stiffness integrates the bulk elastic tensor outside the layer and
//! the layer Lamé differential inside it; the mass carries the two-valued
//! density.
//!
//! Limit model: a coupled space holding a split-bulk displacement and a
//! reference-box layer displacement that share the interface trace DOFs,
//! so the trace coupling holds exactly by construction. The layer block of
//! the stiffness only contains fiber (normal-derivative) terms.

use crate::cg::{self, pcg};
use crate::error::{Error, Result};
use crate::fem::{
    cell_quadrature, face_quadrature, normal_derivative_at, strain_at, tensor_dot, QuadPoint,
};
use crate::material::{DissipationSpec, ElasticLaw, RhoStar};
use crate::mesh::{DomainMeshes, PatchSelector, TensorMesh};
use crate::sparse::{Coo, Csr};

/// Identification of reference-box nodes with coupled-space DOF slots.
/// Sheet nodes share the split-bulk interface DOFs; interior nodes get
/// their own slots after the split-bulk block.
#[derive(Debug, Clone)]
pub struct CoupledMap {
    pub dim: usize,
    pub n_split_dofs: usize,
    pub n_total: usize,
    /// Base coupled DOF of each reference-box node.
    pub layer_node_base: Vec<usize>,
}

impl CoupledMap {
    pub fn build(meshes: &DomainMeshes) -> Self {
        let d = meshes.dim();
        let split = &meshes.split_bulk;
        let rl = &meshes.ref_layer;
        let nz = rl.axes[d - 1].len() - 1;
        let n_split_dofs = split.n_dofs();
        let mut layer_node_base = vec![0usize; rl.n_nodes()];
        let mut next = n_split_dofs;
        for node in 0..rl.n_nodes() {
            let m = rl.node_multi(node);
            let jz = m[d - 1];
            let lat = {
                let mut lat = 0usize;
                let mut stride = 1usize;
                for k in 0..d - 1 {
                    lat += m[k] * stride;
                    stride *= rl.axes[k].len();
                }
                lat
            };
            if jz == 0 {
                layer_node_base[node] = split.node_at_level(lat, meshes.split_sheet.0) * d;
            } else if jz == nz {
                layer_node_base[node] = split.node_at_level(lat, meshes.split_sheet.1) * d;
            } else {
                layer_node_base[node] = next;
                next += d;
            }
        }
        CoupledMap {
            dim: d,
            n_split_dofs,
            n_total: next,
            layer_node_base,
        }
    }

    #[inline]
    pub fn layer_dof(&self, node: usize, comp: usize) -> usize {
        self.layer_node_base[node] + comp
    }

    /// Extract the layer field (full reference-box nodal values) from a
    /// coupled vector.
    pub fn extract_layer(&self, coupled: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.layer_node_base.len() * self.dim];
        for (node, &base) in self.layer_node_base.iter().enumerate() {
            for c in 0..self.dim {
                out[node * self.dim + c] = coupled[base + c];
            }
        }
        out
    }

    /// Extract the split-bulk field from a coupled vector.
    pub fn extract_bulk<'a>(&self, coupled: &'a [f64]) -> &'a [f64] {
        &coupled[..self.n_split_dofs]
    }

    /// Build a coupled vector from a (bulk, layer) pair; the layer trace
    /// rows must agree with the bulk sheet values.
    pub fn combine(&self, bulk: &[f64], layer: &[f64], tol: f64) -> Result<Vec<f64>> {
        assert_eq!(bulk.len(), self.n_split_dofs);
        assert_eq!(layer.len(), self.layer_node_base.len() * self.dim);
        let mut out = vec![0.0; self.n_total];
        out[..self.n_split_dofs].copy_from_slice(bulk);
        for (node, &base) in self.layer_node_base.iter().enumerate() {
            for c in 0..self.dim {
                let v = layer[node * self.dim + c];
                if base < self.n_split_dofs {
                    if (v - bulk[base + c]).abs() > tol {
                        return Err(Error::Invalid(format!(
                            "layer trace {v} disagrees with bulk trace {}",
                            bulk[base + c]
                        )));
                    }
                } else {
                    out[base + c] = v;
                }
            }
        }
        Ok(out)
    }
}

/// Fiber DOF condensation for the frozen-jump regime: for every lateral
/// node and component, the two interface sheet DOFs and the whole layer
/// fiber collapse to a single DOF (so the layer velocity is constant along
/// fibers and the bulk velocity jump vanishes).
#[derive(Debug, Clone)]
pub struct Condensation {
    pub n_full: usize,
    pub n_cond: usize,
    /// full dof -> condensed dof
    pub map: Vec<usize>,
}

impl Condensation {
    pub fn build(meshes: &DomainMeshes, cmap: &CoupledMap) -> Self {
        let d = cmap.dim;
        let rl = &meshes.ref_layer;
        let nz = rl.axes[d - 1].len();
        let lat = rl.lat_nodes();
        let mut map = vec![usize::MAX; cmap.n_total];
        let mut next = 0usize;
        // one group per (lateral node, component)
        for l in 0..lat {
            for c in 0..d {
                let group = next;
                next += 1;
                for jz in 0..nz {
                    let node = rl.node_at_level(l, jz);
                    map[cmap.layer_dof(node, c)] = group;
                }
            }
        }
        for dof in 0..cmap.n_total {
            if map[dof] == usize::MAX {
                map[dof] = next;
                next += 1;
            }
        }
        Condensation {
            n_full: cmap.n_total,
            n_cond: next,
            map,
        }
    }

    pub fn expand(&self, cond: &[f64], full: &mut [f64]) {
        for (dof, &g) in self.map.iter().enumerate() {
            full[dof] = cond[g];
        }
    }

    pub fn reduce_sum(&self, full: &[f64], cond: &mut [f64]) {
        cond.fill(0.0);
        for (dof, &g) in self.map.iter().enumerate() {
            cond[g] += full[dof];
        }
    }

    pub fn reduce_mask(&self, full_mask: &[bool]) -> Vec<bool> {
        let mut m = vec![false; self.n_cond];
        for (dof, &g) in self.map.iter().enumerate() {
            if full_mask[dof] {
                m[g] = true;
            }
        }
        m
    }
}

/// Quadrature data of one dissipation-bearing cell.
#[derive(Debug, Clone)]
pub struct DissCell {
    /// Global DOFs of the cell corners (node-major, `dim` per corner).
    pub dofs: Vec<usize>,
    pub qps: Vec<QuadPoint>,
}

/// Which state space the assembled forms act on.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum SpaceKind {
    Thin,
    Limit {
        map: CoupledMap,
        /// rho*-weighted mass on the full split-bulk space.
        k_bulk: Csr,
        /// rho_bar-weighted mass on the full reference-box space.
        k_layer: Csr,
    },
}

/// Assembled operators for one model instance.
#[derive(Debug, Clone)]
pub struct Forms {
    pub n: usize,
    pub dim: usize,
    /// Stiffness (energy) form.
    pub phi: Csr,
    /// Mass form on the displacement-compatible space (coupled space for
    /// the limit model).
    pub k: Csr,
    /// Strain-rate product on the dissipative region with unit coefficient:
    /// thin: int_layer e(v):e(w); limit: int_B (q_hat.w_hat/2 + q_d w_d)
    /// of the fiber derivatives. The p = 2 dissipation Hessian is
    /// `c_d * visc`.
    pub visc: Csr,
    /// Dirichlet DOF mask.
    pub mask: Vec<bool>,
    pub space: SpaceKind,
    /// Quadrature tables for the nonlinear dissipation functional.
    pub diss_cells: Vec<DissCell>,
    /// Node-wise density used to divide body forces (two-valued for the
    /// thin model, rho* for the limit bulk).
    pub density_nodes: Vec<f64>,
}

impl Forms {
    pub fn is_limit(&self) -> bool {
        matches!(self.space, SpaceKind::Limit { .. })
    }

    pub fn coupled_map(&self) -> Option<&CoupledMap> {
        match &self.space {
            SpaceKind::Limit { map, .. } => Some(map),
            SpaceKind::Thin => None,
        }
    }

    /// Add extra fixed DOFs (experimentation hook; used to carve toy
    /// problems out of an assembled space).
    pub fn fix_dofs(&mut self, dofs: &[usize]) {
        for &d in dofs {
            self.mask[d] = true;
        }
    }

    pub fn phi_quad(&self, u: &[f64], v: &[f64]) -> f64 {
        self.phi.quad(u, v)
    }

    pub fn k_quad(&self, u: &[f64], v: &[f64]) -> f64 {
        self.k.quad(u, v)
    }

    /// y = A x with Dirichlet rows and columns projected out.
    pub fn apply_masked(&self, a: &Csr, x: &[f64], y: &mut [f64]) {
        let mut xm = x.to_vec();
        for (i, &m) in self.mask.iter().enumerate() {
            if m {
                xm[i] = 0.0;
            }
        }
        a.matvec(&xm, y);
        for (i, &m) in self.mask.iter().enumerate() {
            if m {
                y[i] = 0.0;
            }
        }
    }

    pub fn masked_copy(&self, x: &[f64]) -> Vec<f64> {
        let mut out = x.to_vec();
        for (i, &m) in self.mask.iter().enumerate() {
            if m {
                out[i] = 0.0;
            }
        }
        out
    }
}

// grouping the gradient products first keeps transposed entries bitwise
// equal (scaling a commutative product is symmetric; left-to-right chains
// are not)
fn lame_entry(
    lambda: f64,
    mu: f64,
    ga: &[f64; 3],
    gb: &[f64; 3],
    i: usize,
    j: usize,
    dim: usize,
) -> f64 {
    let mut gg = 0.0;
    for k in 0..dim {
        gg += ga[k] * gb[k];
    }
    let mut v = lambda * (ga[i] * gb[j]) + mu * (ga[j] * gb[i]);
    if i == j {
        v += mu * gg;
    }
    v
}

/// Elastic stiffness of one mesh region with per-cell Lamé pairs, pushed
/// into a COO buffer through a DOF map.
fn assemble_lame<F>(
    coo: &mut Coo,
    mesh: &TensorMesh,
    cell_filter: impl Fn(usize) -> Option<(f64, f64)>,
    dof_of: F,
) where
    F: Fn(usize, usize) -> usize,
{
    let dim = mesh.dim;
    for (ci, cell) in mesh.cells().iter().enumerate() {
        let Some((lambda, mu)) = cell_filter(ci) else {
            continue;
        };
        for qp in cell_quadrature(dim, cell) {
            for (a, &na) in cell.nodes.iter().enumerate() {
                for (b, &nb) in cell.nodes.iter().enumerate() {
                    for i in 0..dim {
                        for j in 0..dim {
                            let v = qp.weight
                                * lame_entry(lambda, mu, &qp.grad[a], &qp.grad[b], i, j, dim);
                            if v != 0.0 {
                                coo.push(dof_of(na, i), dof_of(nb, j), v);
                            }
                        }
                    }
                }
            }
        }
    }
}

fn assemble_mass<F>(
    coo: &mut Coo,
    mesh: &TensorMesh,
    cell_density: impl Fn(usize, &crate::mesh::Cell) -> Option<f64>,
    dof_of: F,
) where
    F: Fn(usize, usize) -> usize,
{
    let dim = mesh.dim;
    for (ci, cell) in mesh.cells().iter().enumerate() {
        let Some(rho) = cell_density(ci, cell) else {
            continue;
        };
        for qp in cell_quadrature(dim, cell) {
            for (a, &na) in cell.nodes.iter().enumerate() {
                for (b, &nb) in cell.nodes.iter().enumerate() {
                    let v = qp.weight * rho * (qp.shape[a] * qp.shape[b]);
                    for c in 0..dim {
                        coo.push(dof_of(na, c), dof_of(nb, c), v);
                    }
                }
            }
        }
    }
}

/// Geometric and material parameters of one positive-thickness problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThinQuintuple {
    pub eps: f64,
    pub lambda: f64,
    pub mu: f64,
    pub b: f64,
    pub rho: f64,
}

impl ThinQuintuple {
    pub fn validate(&self) -> Result<()> {
        if [self.eps, self.lambda, self.mu, self.b, self.rho]
            .iter()
            .any(|&v| !(v > 0.0))
        {
            return Err(Error::Material(
                "thin-model parameters (eps, lambda, mu, b, rho) must all be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Stiffness, mass and dissipation tables for the positive-thickness model.
pub fn assemble_thin_forms(
    q: &ThinQuintuple,
    meshes: &DomainMeshes,
    law: &ElasticLaw,
    rho_star: &RhoStar,
) -> Result<Forms> {
    q.validate()?;
    law.validate(meshes.dim())?;
    rho_star.validate()?;
    if q.eps != meshes.config.eps {
        return Err(Error::MeshMismatch(format!(
            "forms for eps = {} on meshes built for eps = {}",
            q.eps, meshes.config.eps
        )));
    }
    let mesh = &meshes.bulk;
    let d = mesh.dim;
    let n = mesh.n_dofs();
    let dof_of = |node: usize, comp: usize| node * d + comp;

    let mut phi_coo = Coo::new(n);
    assemble_lame(
        &mut phi_coo,
        mesh,
        |ci| {
            if meshes.bulk_layer_cell[ci] {
                Some((q.lambda, q.mu))
            } else {
                None
            }
        },
        dof_of,
    );
    // bulk elastic region: evaluate the law at the cell center
    let cells = mesh.cells();
    assemble_lame(
        &mut phi_coo,
        mesh,
        |ci| {
            if meshes.bulk_layer_cell[ci] {
                None
            } else {
                let zc = cells[ci].origin[d - 1] + 0.5 * cells[ci].size[d - 1];
                Some(law.lame_at(zc))
            }
        },
        dof_of,
    );
    let phi = phi_coo.to_csr();

    let mut k_coo = Coo::new(n);
    assemble_mass(
        &mut k_coo,
        mesh,
        |ci, cell| {
            let zc = cell.origin[d - 1] + 0.5 * cell.size[d - 1];
            Some(if meshes.bulk_layer_cell[ci] {
                q.rho
            } else {
                rho_star.at(zc)
            })
        },
        dof_of,
    );
    let k = k_coo.to_csr();

    // unit-coefficient strain-rate product over the layer
    let mut visc_coo = Coo::new(n);
    assemble_lame(
        &mut visc_coo,
        mesh,
        |ci| {
            if meshes.bulk_layer_cell[ci] {
                Some((0.0, 0.5))
            } else {
                None
            }
        },
        dof_of,
    );
    let visc = visc_coo.to_csr();

    let mut diss_cells = Vec::new();
    for (ci, cell) in cells.iter().enumerate() {
        if !meshes.bulk_layer_cell[ci] {
            continue;
        }
        let mut dofs = Vec::with_capacity(cell.nodes.len() * d);
        for &node in &cell.nodes {
            for c in 0..d {
                dofs.push(dof_of(node, c));
            }
        }
        diss_cells.push(DissCell {
            dofs,
            qps: cell_quadrature(d, cell),
        });
    }

    let eps = meshes.config.eps;
    let mut density_nodes = vec![0.0; mesh.n_nodes()];
    for node in 0..mesh.n_nodes() {
        let z = mesh.node_coord(node)[d - 1];
        // sheet nodes |z| = eps take the layer value
        density_nodes[node] = if z.abs() <= eps * (1.0 + 1e-12) {
            q.rho
        } else {
            rho_star.at(z)
        };
    }

    Ok(Forms {
        n,
        dim: d,
        phi,
        k,
        visc,
        mask: meshes.bulk_dof_mask(),
        space: SpaceKind::Thin,
        diss_cells,
        density_nodes,
    })
}

/// Limit-model parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitCoefficients {
    pub lambda_bar: f64,
    pub mu_bar: f64,
    /// May be `f64::INFINITY` (frozen-jump regime).
    pub b_bar: f64,
    pub rho_bar: f64,
    pub p: f64,
}

impl LimitCoefficients {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_bar >= 0.0 && self.lambda_bar.is_finite()) {
            return Err(Error::Material("lambda_bar must lie in [0, inf)".into()));
        }
        if !(self.mu_bar > 0.0 && self.mu_bar.is_finite()) {
            return Err(Error::Material("mu_bar must lie in (0, inf)".into()));
        }
        if !(self.b_bar >= 0.0) {
            return Err(Error::Material("b_bar must lie in [0, inf]".into()));
        }
        if !(self.rho_bar > 0.0 && self.rho_bar.is_finite()) {
            return Err(Error::Material("rho_bar must lie in (0, inf)".into()));
        }
        if !(1.0..=2.0).contains(&self.p) {
            return Err(Error::Material("p must lie in [1,2]".into()));
        }
        Ok(())
    }
}

/// Stiffness, mass and fiber-dissipation tables for the bulk-surface limit
/// model on the coupled (split bulk, reference box) space.
pub fn assemble_limit_forms(
    lp: &LimitCoefficients,
    meshes: &DomainMeshes,
    law: &ElasticLaw,
    rho_star: &RhoStar,
) -> Result<Forms> {
    lp.validate()?;
    law.validate(meshes.dim())?;
    rho_star.validate()?;
    let d = meshes.dim();
    let split = &meshes.split_bulk;
    let rl = &meshes.ref_layer;
    let cmap = CoupledMap::build(meshes);
    let n = cmap.n_total;
    let bulk_dof = |node: usize, comp: usize| node * d + comp;

    // stiffness: bulk elastic block + layer fiber block
    let mut phi_coo = Coo::new(n);
    let split_cells = split.cells();
    assemble_lame(
        &mut phi_coo,
        split,
        |ci| {
            let zc = split_cells[ci].origin[d - 1] + 0.5 * split_cells[ci].size[d - 1];
            Some(law.lame_at(zc))
        },
        bulk_dof,
    );
    // fiber block: mu_bar on lateral components, lambda_bar + 2 mu_bar on
    // the normal component (the closed form of DW(q x e_d).(q' x e_d))
    for cell in rl.cells() {
        for qp in cell_quadrature(d, &cell) {
            for (a, &na) in cell.nodes.iter().enumerate() {
                for (b, &nb) in cell.nodes.iter().enumerate() {
                    let g = qp.weight * (qp.grad[a][d - 1] * qp.grad[b][d - 1]);
                    for c in 0..d {
                        let coef = if c == d - 1 {
                            lp.lambda_bar + 2.0 * lp.mu_bar
                        } else {
                            lp.mu_bar
                        };
                        let v = coef * g;
                        if v != 0.0 {
                            phi_coo.push(cmap.layer_dof(na, c), cmap.layer_dof(nb, c), v);
                        }
                    }
                }
            }
        }
    }
    let phi = phi_coo.to_csr();

    // coupled mass and the two block masses
    let mut k_coo = Coo::new(n);
    let mut kb_coo = Coo::new(split.n_dofs());
    let mut kl_coo = Coo::new(rl.n_dofs());
    assemble_mass(
        &mut k_coo,
        split,
        |_, cell| Some(rho_star.at(cell.origin[d - 1] + 0.5 * cell.size[d - 1])),
        bulk_dof,
    );
    assemble_mass(
        &mut kb_coo,
        split,
        |_, cell| Some(rho_star.at(cell.origin[d - 1] + 0.5 * cell.size[d - 1])),
        bulk_dof,
    );
    assemble_mass(
        &mut k_coo,
        rl,
        |_, _| Some(lp.rho_bar),
        |node, comp| cmap.layer_dof(node, comp),
    );
    assemble_mass(&mut kl_coo, rl, |_, _| Some(lp.rho_bar), bulk_dof);
    let k = k_coo.to_csr();
    let k_bulk = kb_coo.to_csr();
    let k_layer = kl_coo.to_csr();

    // unit-coefficient fiber rate product: q_hat/2 laterally, q_d normally
    let mut visc_coo = Coo::new(n);
    for cell in rl.cells() {
        for qp in cell_quadrature(d, &cell) {
            for (a, &na) in cell.nodes.iter().enumerate() {
                for (b, &nb) in cell.nodes.iter().enumerate() {
                    let g = qp.weight * (qp.grad[a][d - 1] * qp.grad[b][d - 1]);
                    for c in 0..d {
                        let coef = if c == d - 1 { 1.0 } else { 0.5 };
                        let v = coef * g;
                        if v != 0.0 {
                            visc_coo.push(cmap.layer_dof(na, c), cmap.layer_dof(nb, c), v);
                        }
                    }
                }
            }
        }
    }
    let visc = visc_coo.to_csr();

    let mut diss_cells = Vec::new();
    for cell in rl.cells() {
        let mut dofs = Vec::with_capacity(cell.nodes.len() * d);
        for &node in &cell.nodes {
            for c in 0..d {
                dofs.push(cmap.layer_dof(node, c));
            }
        }
        diss_cells.push(DissCell {
            dofs,
            qps: cell_quadrature(d, &cell),
        });
    }

    let mut mask = vec![false; n];
    let split_mask = meshes.split_dof_mask();
    mask[..split.n_dofs()].copy_from_slice(&split_mask);

    let mut density_nodes = vec![0.0; split.n_nodes()];
    for node in 0..split.n_nodes() {
        density_nodes[node] = rho_star.at(split.node_coord(node)[d - 1]);
    }

    Ok(Forms {
        n,
        dim: d,
        phi,
        k,
        visc,
        mask,
        space: SpaceKind::Limit {
            map: cmap,
            k_bulk,
            k_layer,
        },
        diss_cells,
        density_nodes,
    })
}

/// Scalar time profile with two bounded derivatives.
#[derive(Debug, Clone, PartialEq)]
pub enum TimeProfile {
    Constant(f64),
    /// c0 + c1 t + c2 t^2 + ...
    Polynomial(Vec<f64>),
    Sine {
        amp: f64,
        omega: f64,
        phase: f64,
    },
}

impl TimeProfile {
    pub fn value(&self, t: f64) -> f64 {
        match self {
            TimeProfile::Constant(c) => *c,
            TimeProfile::Polynomial(c) => c.iter().rev().fold(0.0, |acc, &ck| acc * t + ck),
            TimeProfile::Sine { amp, omega, phase } => amp * (omega * t + phase).sin(),
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match self {
            TimeProfile::Constant(_) => 0.0,
            TimeProfile::Polynomial(c) => {
                let mut acc = 0.0;
                for k in (1..c.len()).rev() {
                    acc = acc * t + c[k] * k as f64;
                }
                acc
            }
            TimeProfile::Sine { amp, omega, phase } => amp * omega * (omega * t + phase).cos(),
        }
    }
}

/// Surface load L(t)(v) = profile(t) * int_{Gamma_N} g . v dH.
#[derive(Debug, Clone)]
pub struct LoadPattern {
    /// Assembled spatial functional, one entry per DOF of the target space.
    pub spatial: Vec<f64>,
    pub profile: TimeProfile,
}

impl LoadPattern {
    pub fn at(&self, t: f64) -> Vec<f64> {
        let s = self.profile.value(t);
        self.spatial.iter().map(|&v| s * v).collect()
    }
}

/// Assemble the surface load on the given mesh from nodal values of g on
/// the patch faces. Rejects supports that touch the closed collar (and the
/// unclamped body's outer boundary when `forbid_z` is given).
pub fn assemble_load(
    mesh: &TensorMesh,
    patches: &[PatchSelector],
    g_nodal: &dyn Fn([f64; 3]) -> Vec<f64>,
    profile: TimeProfile,
    eps0: f64,
    n_dofs: usize,
) -> Result<LoadPattern> {
    let d = mesh.dim;
    let mut spatial = vec![0.0; n_dofs];
    for p in patches {
        for face in mesh.select_faces(p) {
            // H4: the load support must stay clear of the closed collar
            let mut active = false;
            let g_vals: Vec<Vec<f64>> = face
                .nodes
                .iter()
                .map(|&nd| {
                    let g = g_nodal(mesh.node_coord(nd));
                    assert_eq!(g.len(), d);
                    if g.iter().any(|&x| x != 0.0) {
                        active = true;
                    }
                    g
                })
                .collect();
            if !active {
                continue;
            }
            for &nd in &face.nodes {
                let z = mesh.node_coord(nd)[d - 1];
                if z.abs() <= eps0 * (1.0 + 1e-12) {
                    return Err(Error::Load(
                        "support of g intersects the collar closure".into(),
                    ));
                }
            }
            for (w, shape) in face_quadrature(d, &face) {
                // g at the quadrature point
                let mut gq = vec![0.0; d];
                for (a, s) in shape.iter().enumerate() {
                    for c in 0..d {
                        gq[c] += s * g_vals[a][c];
                    }
                }
                for (a, s) in shape.iter().enumerate() {
                    for c in 0..d {
                        spatial[face.nodes[a] * d + c] += w * s * gq[c];
                    }
                }
            }
        }
    }
    Ok(LoadPattern { spatial, profile })
}

/// Options of the step minimizer.
#[derive(Debug, Clone, Copy)]
pub struct SolverOpts {
    /// Relative gradient norm target of an accepted step.
    pub tol_min: f64,
    /// Relative residual of inner CG solves.
    pub cg_tol: f64,
    pub max_newton: usize,
    pub max_cg: usize,
}

impl Default for SolverOpts {
    fn default() -> Self {
        SolverOpts {
            tol_min: 1e-10,
            cg_tol: 1e-13,
            max_newton: 60,
            max_cg: 20000,
        }
    }
}

/// Diagnostics of one accepted resolvent step.
#[derive(Debug, Clone, Copy)]
pub struct StepDiag {
    pub iterations: usize,
    pub grad_norm: f64,
    /// Value of the (smoothed) dissipation integral at the minimizer,
    /// including its b-coefficient but not tau.
    pub dissipation: f64,
}

/// The convex functional minimized by one backward-Euler step:
/// J(v) = k(v,v)/2 - k(psi2, v) + tau^2 phi(v,v)/2 + tau phi(psi1, v)
///        + tau * bcoef * int D_eta(rate(v)).
pub struct StepProblem<'a> {
    pub forms: &'a Forms,
    pub spec: &'a DissipationSpec,
    pub tau: f64,
    /// Viscosity coefficient multiplying the dissipation integral (b for
    /// the thin model, b_bar for the limit model; 0 disables it).
    pub bcoef: f64,
    /// Assembled right-hand side K psi2 - tau PHI psi1 (unmasked).
    pub rhs: Vec<f64>,
    /// Fiber condensation (frozen-jump regime); `bcoef` must be 0.
    pub condense: Option<&'a Condensation>,
}

impl<'a> StepProblem<'a> {
    fn is_fiber(&self) -> bool {
        self.forms.is_limit()
    }

    /// Dissipation integral and gradient at v (gradient accumulated into g).
    fn diss_value_grad(&self, v: &[f64], g: Option<&mut Vec<f64>>) -> f64 {
        let forms = self.forms;
        let d = forms.dim;
        let spec = self.spec;
        let mut total = 0.0;
        let mut gref = g;
        for cell in &forms.diss_cells {
            let vals: Vec<f64> = cell.dofs.iter().map(|&i| v[i]).collect();
            for qp in &cell.qps {
                if self.is_fiber() {
                    let q = normal_derivative_at(d, qp, &vals);
                    let m = crate::material::sym_outer_normal(&q, d);
                    let (val, grad_m) = spec.value_grad(&m, d).expect("validated spec");
                    total += qp.weight * val;
                    if let Some(gv) = gref.as_deref_mut() {
                        // d/dq of D_eta(q x e) contracted with dq/ddof:
                        // grad_m : (dq x e) = fiber contraction of grad_m rows
                        let dd = d - 1;
                        let mut gq = [0.0; 3];
                        for c in 0..d {
                            // (dm/dq_c) has entries 1/2 at (c,d),(d,c) (double at (d,d))
                            gq[c] = if c == dd {
                                grad_m[dd][dd]
                            } else {
                                grad_m[c][dd]
                            };
                        }
                        let c_scale = qp.weight * self.bcoef * self.tau;
                        for (an, ga) in qp.grad.iter().enumerate() {
                            let dz = ga[dd];
                            for c in 0..d {
                                gv[cell.dofs[an * d + c]] += c_scale * dz * gq[c];
                            }
                        }
                    }
                } else {
                    let e = strain_at(d, qp, &vals);
                    let (val, grad_e) = spec.value_grad(&e, d).expect("validated spec");
                    total += qp.weight * val;
                    if let Some(gv) = gref.as_deref_mut() {
                        let c_scale = qp.weight * self.bcoef * self.tau;
                        for (an, ga) in qp.grad.iter().enumerate() {
                            for c in 0..d {
                                // strain basis of dof (an, c) contracted with grad_e
                                let mut s = 0.0;
                                for i in 0..d {
                                    s += grad_e[i][c] * ga[i];
                                }
                                gv[cell.dofs[an * d + c]] += c_scale * s;
                            }
                        }
                    }
                }
            }
        }
        total
    }

    /// Hessian of the dissipation integral at v (tau * bcoef included).
    fn diss_hessian(&self, v: &[f64]) -> Csr {
        let forms = self.forms;
        let d = forms.dim;
        let spec = self.spec;
        let mut coo = Coo::new(forms.n);
        let scale = self.bcoef * self.tau;
        for cell in &forms.diss_cells {
            let vals: Vec<f64> = cell.dofs.iter().map(|&i| v[i]).collect();
            for qp in &cell.qps {
                if self.is_fiber() {
                    let dd = d - 1;
                    let q = normal_derivative_at(d, qp, &vals);
                    // s = |q x e|^2 + eta^2, grad wrt q = c s^k (q_hat/2, q_d)
                    let mut m2 = q[dd] * q[dd];
                    for c in 0..dd {
                        m2 += 0.25 * 2.0 * q[c] * q[c];
                    }
                    let (f1, f2) = spec.hess_coeffs(m2);
                    // dD/dq_c dq_c' = f1 * diag(1/2,..,1) + f2 * a (x) a,
                    // a = (q_hat/2, q_d)
                    let mut avec = [0.0; 3];
                    for c in 0..d {
                        avec[c] = if c == dd { q[c] } else { 0.5 * q[c] };
                    }
                    for (an, ga) in qp.grad.iter().enumerate() {
                        for (bn, gb) in qp.grad.iter().enumerate() {
                            let gz = ga[dd] * gb[dd];
                            if gz == 0.0 {
                                continue;
                            }
                            for i in 0..d {
                                for j in 0..d {
                                    let diag = if i == j {
                                        f1 * if i == dd { 1.0 } else { 0.5 }
                                    } else {
                                        0.0
                                    };
                                    let h = diag + f2 * (avec[i] * avec[j]);
                                    let val = scale * qp.weight * gz * h;
                                    if val != 0.0 {
                                        coo.push(cell.dofs[an * d + i], cell.dofs[bn * d + j], val);
                                    }
                                }
                            }
                        }
                    }
                } else {
                    let e = strain_at(d, qp, &vals);
                    let n2 = tensor_dot(&e, &e, d);
                    let (f1, f2) = spec.hess_coeffs(n2);
                    // H = f1 I_sym + f2 e (x) e on strain space
                    for (an, ga) in qp.grad.iter().enumerate() {
                        for (bn, gb) in qp.grad.iter().enumerate() {
                            for i in 0..d {
                                for j in 0..d {
                                    // B_{a,i} : B_{b,j} (symmetrized bases)
                                    let bb = lame_entry(0.0, 0.5, ga, gb, i, j, d);
                                    // (B_{a,i} : e)(B_{b,j} : e)
                                    let mut bae = 0.0;
                                    let mut bbe = 0.0;
                                    for k in 0..d {
                                        bae += e[k][i] * ga[k];
                                        bbe += e[k][j] * gb[k];
                                    }
                                    let h = f1 * bb + f2 * (bae * bbe);
                                    let val = scale * qp.weight * h;
                                    if val != 0.0 {
                                        coo.push(cell.dofs[an * d + i], cell.dofs[bn * d + j], val);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        coo.to_csr()
    }

    /// J(v) up to the constant (psi) terms.
    fn objective(&self, v: &[f64]) -> f64 {
        let f = self.forms;
        let quad = 0.5 * f.k.quad(v, v) + 0.5 * self.tau * self.tau * f.phi.quad(v, v);
        let lin: f64 = -cg::dot(&self.rhs, v);
        let dis = if self.bcoef != 0.0 {
            self.tau * self.bcoef * self.diss_value_grad(v, None)
        } else {
            0.0
        };
        quad + lin + dis
    }

    /// gradient of J at v (masked), returned in `g`; also returns |g|.
    fn gradient(&self, v: &[f64], g: &mut Vec<f64>) -> f64 {
        let f = self.forms;
        g.fill(0.0);
        let mut tmp = vec![0.0; f.n];
        f.apply_masked(&f.k, v, &mut tmp);
        for i in 0..f.n {
            g[i] += tmp[i];
        }
        f.apply_masked(&f.phi, v, &mut tmp);
        let t2 = self.tau * self.tau;
        for i in 0..f.n {
            g[i] += t2 * tmp[i];
        }
        if self.bcoef != 0.0 {
            self.diss_value_grad(v, Some(g));
        }
        for (i, &m) in f.mask.iter().enumerate() {
            if m {
                g[i] = 0.0;
            } else {
                g[i] -= self.rhs[i];
            }
        }
        cg::norm(g)
    }

    /// Minimize J over the Dirichlet-constrained (optionally condensed)
    /// space.
    pub fn solve(&self, opts: &SolverOpts) -> Result<(Vec<f64>, StepDiag)> {
        let f = self.forms;
        let rhs_masked = f.masked_copy(&self.rhs);
        let rhs_norm = cg::norm(&rhs_masked);
        let scale = rhs_norm.max(1e-300);

        let quadratic = self.bcoef == 0.0 || self.spec.p == 2.0;
        let mut v = vec![0.0; f.n];
        let mut iters_total;

        if let Some(cond) = self.condense {
            // frozen-jump regime: linear solve on the condensed space
            assert!(self.bcoef == 0.0);
            let cmask = cond.reduce_mask(&f.mask);
            let mut rhs_c = vec![0.0; cond.n_cond];
            cond.reduce_sum(&rhs_masked, &mut rhs_c);
            for (i, &m) in cmask.iter().enumerate() {
                if m {
                    rhs_c[i] = 0.0;
                }
            }
            let t2 = self.tau * self.tau;
            let apply = |x: &[f64], y: &mut [f64]| {
                let mut xf = vec![0.0; cond.n_full];
                let mut xc = x.to_vec();
                for (i, &m) in cmask.iter().enumerate() {
                    if m {
                        xc[i] = 0.0;
                    }
                }
                cond.expand(&xc, &mut xf);
                let mut yf = vec![0.0; cond.n_full];
                let mut tmp = vec![0.0; cond.n_full];
                f.apply_masked(&f.k, &xf, &mut yf);
                f.apply_masked(&f.phi, &xf, &mut tmp);
                for i in 0..cond.n_full {
                    yf[i] += t2 * tmp[i];
                }
                cond.reduce_sum(&yf, y);
                for (i, &m) in cmask.iter().enumerate() {
                    if m {
                        y[i] = 0.0;
                    }
                }
            };
            // probe the diagonal for Jacobi preconditioning
            let mut diag = vec![0.0; cond.n_cond];
            {
                let kd = f.k.diag();
                let pd = f.phi.diag();
                for dof in 0..cond.n_full {
                    if !f.mask[dof] {
                        diag[cond.map[dof]] += kd[dof] + t2 * pd[dof];
                    }
                }
            }
            let mut xc = vec![0.0; cond.n_cond];
            let rep = pcg(apply, &rhs_c, &mut xc, &diag, opts.cg_tol, opts.max_cg)?;
            cond.expand(&xc, &mut v);
            for (i, &m) in f.mask.iter().enumerate() {
                if m {
                    v[i] = 0.0;
                }
            }
            iters_total = rep.iterations;
        } else if quadratic {
            // single SPD solve: (K + tau^2 PHI + tau * bcoef * c_d * V) v = rhs
            let t2 = self.tau * self.tau;
            let cvis = self.tau * self.bcoef * self.spec.c_d;
            let apply = |x: &[f64], y: &mut [f64]| {
                let mut tmp = vec![0.0; f.n];
                f.apply_masked(&f.k, x, y);
                f.apply_masked(&f.phi, x, &mut tmp);
                for i in 0..f.n {
                    y[i] += t2 * tmp[i];
                }
                if cvis != 0.0 {
                    f.apply_masked(&f.visc, x, &mut tmp);
                    for i in 0..f.n {
                        y[i] += cvis * tmp[i];
                    }
                }
            };
            let mut diag = vec![0.0; f.n];
            let (kd, pd, vd) = (f.k.diag(), f.phi.diag(), f.visc.diag());
            for i in 0..f.n {
                diag[i] = if f.mask[i] {
                    1.0
                } else {
                    kd[i] + t2 * pd[i] + cvis * vd[i]
                };
            }
            let rep = pcg(apply, &rhs_masked, &mut v, &diag, opts.cg_tol, opts.max_cg)?;
            iters_total = rep.iterations;
        } else {
            // smoothed Newton with backtracking line search
            self.spec.validate_for_solver()?;
            let mut g = vec![0.0; f.n];
            let mut newton_iters = 0usize;
            iters_total = 0;
            loop {
                let gnorm = self.gradient(&v, &mut g);
                if gnorm <= opts.tol_min * scale {
                    break;
                }
                if newton_iters >= opts.max_newton {
                    return Err(Error::NoConvergence(format!(
                        "newton: |grad| = {gnorm:.3e} (target {:.1e}) after {newton_iters} iterations",
                        opts.tol_min * scale
                    )));
                }
                let hdiss = self.diss_hessian(&v);
                let t2 = self.tau * self.tau;
                let apply = |x: &[f64], y: &mut [f64]| {
                    let mut tmp = vec![0.0; f.n];
                    f.apply_masked(&f.k, x, y);
                    f.apply_masked(&f.phi, x, &mut tmp);
                    for i in 0..f.n {
                        y[i] += t2 * tmp[i];
                    }
                    f.apply_masked(&hdiss, x, &mut tmp);
                    for i in 0..f.n {
                        y[i] += tmp[i];
                    }
                };
                let mut diag = vec![0.0; f.n];
                let (kd, pd, hd) = (f.k.diag(), f.phi.diag(), hdiss.diag());
                for i in 0..f.n {
                    diag[i] = if f.mask[i] {
                        1.0
                    } else {
                        (kd[i] + t2 * pd[i] + hd[i]).max(1e-300)
                    };
                }
                let neg_g: Vec<f64> = g.iter().map(|&x| -x).collect();
                let mut step = vec![0.0; f.n];
                let rep = pcg(apply, &neg_g, &mut step, &diag, opts.cg_tol, opts.max_cg)?;
                iters_total += rep.iterations;

                // the full step converges quadratically near the minimizer;
                // accept it on gradient decrease, fall back to Armijo
                // backtracking on J otherwise
                let full: Vec<f64> = v.iter().zip(&step).map(|(&a, &s)| a + s).collect();
                let mut gtrial = vec![0.0; f.n];
                let gfull = self.gradient(&full, &mut gtrial);
                if gfull <= 0.5 * gnorm {
                    v = full;
                } else {
                    let j0 = self.objective(&v);
                    let slope = cg::dot(&g, &step);
                    let mut t = 1.0;
                    let mut accepted = false;
                    for _ in 0..40 {
                        let trial: Vec<f64> =
                            v.iter().zip(&step).map(|(&a, &s)| a + t * s).collect();
                        if self.objective(&trial) <= j0 + 1e-4 * t * slope {
                            v = trial;
                            accepted = true;
                            break;
                        }
                        t *= 0.5;
                    }
                    if !accepted {
                        return Err(Error::NoConvergence(
                            "newton line search failed to make progress".into(),
                        ));
                    }
                }
                newton_iters += 1;
            }
        }

        // final diagnostics: true gradient norm (relative); on the condensed
        // space the Euler-Lagrange equation holds against condensed test
        // vectors only
        let mut g = vec![0.0; f.n];
        let mut gnorm = self.gradient(&v, &mut g);
        let mut scale_used = scale;
        if let Some(cond) = self.condense {
            let mut gc = vec![0.0; cond.n_cond];
            cond.reduce_sum(&g, &mut gc);
            gnorm = cg::norm(&gc);
            let mut rc = vec![0.0; cond.n_cond];
            cond.reduce_sum(&rhs_masked, &mut rc);
            scale_used = cg::norm(&rc).max(1e-300);
        }
        let rel = gnorm / scale_used;
        if rel > opts.tol_min * 50.0 && rhs_norm > 0.0 {
            return Err(Error::NoConvergence(format!(
                "step gradient norm {rel:.3e} exceeds tolerance {:.1e}",
                opts.tol_min
            )));
        }
        let dissipation = if self.bcoef != 0.0 {
            self.bcoef * self.diss_value_grad(&v, None)
        } else {
            0.0
        };
        Ok((
            v,
            StepDiag {
                iterations: iters_total,
                grad_norm: rel,
                dissipation,
            },
        ))
    }
}
