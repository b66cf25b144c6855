//! Structured tensor-product meshes for the bonded structure.
//!
//! Four meshes describe one configuration:
//! * `bulk` — the whole body with node sheets at the layer faces `±eps` and
//!   the collar faces `±eps0`, so both the layer and the surrounding bodies
//!   are unions of cells;
//! * `layer` — the slab `S x (-eps, eps)` (a vertical slice of `bulk`);
//! * `ref_layer` — the fixed reference box `S x (-1, 1)` the layer fields
//!   are rescaled onto;
//! * `split_bulk` — the body with a duplicated node sheet on the interface
//!   plane, carrying fields that may jump across it.
//!
//! The normal direction is always the last axis; the interface plane sits
//! at coordinate 0 of that axis.

use crate::error::{Error, Result};

/// Which end of an axis a boundary patch lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Min,
    Max,
}

/// Selector for a set of boundary faces: the faces of the boundary plane
/// `axis = min/max` all of whose nodes lie inside the coordinate window.
/// The window entry for `axis` itself is ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSelector {
    pub axis: usize,
    pub side: Side,
    pub window: Vec<[f64; 2]>,
}

impl PatchSelector {
    pub fn whole_plane(dim: usize, axis: usize, side: Side) -> Self {
        PatchSelector {
            axis,
            side,
            window: vec![[f64::NEG_INFINITY, f64::INFINITY]; dim],
        }
    }
}

/// Axis-aligned structured mesh. Node multi-indices run fastest along
/// axis 0. `split_gap = Some(g)` marks the normal-axis cell between node
/// levels `g` and `g+1` as absent (the duplicated interface sheet of the
/// split bulk mesh).
#[derive(Debug, Clone, PartialEq)]
pub struct TensorMesh {
    pub id: String,
    pub dim: usize,
    pub axes: Vec<Vec<f64>>,
    pub split_gap: Option<usize>,
}

/// One cell: corner node ids in tensor order (bit k of the corner number
/// selects the far node along axis k), lower corner coordinates, and sizes.
#[derive(Debug, Clone)]
pub struct Cell {
    pub nodes: Vec<usize>,
    pub origin: [f64; 3],
    pub size: [f64; 3],
}

/// One boundary face on an axis plane: corner node ids in tensor order over
/// the in-plane axes, plus in-plane sizes (for surface quadrature).
#[derive(Debug, Clone)]
pub struct BoundaryFace {
    pub nodes: Vec<usize>,
    pub in_plane_axes: Vec<usize>,
    pub size: Vec<f64>,
}

impl TensorMesh {
    pub fn new(id: &str, axes: Vec<Vec<f64>>) -> Self {
        let dim = axes.len();
        assert!(dim == 2 || dim == 3);
        TensorMesh {
            id: id.to_string(),
            dim,
            axes,
            split_gap: None,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.axes.iter().map(|a| a.len()).product()
    }

    pub fn n_dofs(&self) -> usize {
        self.n_nodes() * self.dim
    }

    fn axis_cells(&self, k: usize) -> usize {
        let c = self.axes[k].len() - 1;
        if k == self.dim - 1 && self.split_gap.is_some() {
            c - 1
        } else {
            c
        }
    }

    pub fn n_cells(&self) -> usize {
        (0..self.dim).map(|k| self.axis_cells(k)).product()
    }

    pub fn node_index(&self, multi: &[usize]) -> usize {
        let mut idx = 0;
        let mut stride = 1;
        for k in 0..self.dim {
            idx += multi[k] * stride;
            stride *= self.axes[k].len();
        }
        idx
    }

    pub fn node_multi(&self, mut idx: usize) -> Vec<usize> {
        let mut m = vec![0; self.dim];
        for k in 0..self.dim {
            let n = self.axes[k].len();
            m[k] = idx % n;
            idx /= n;
        }
        m
    }

    pub fn node_coord(&self, idx: usize) -> [f64; 3] {
        let m = self.node_multi(idx);
        let mut x = [0.0; 3];
        for k in 0..self.dim {
            x[k] = self.axes[k][m[k]];
        }
        x
    }

    /// Cell z-levels of the normal axis, skipping the split gap.
    fn normal_cell_levels(&self) -> Vec<usize> {
        let nz = self.axes[self.dim - 1].len() - 1;
        (0..nz).filter(|&j| self.split_gap != Some(j)).collect()
    }

    pub fn cells(&self) -> Vec<Cell> {
        let d = self.dim;
        let mut out = Vec::with_capacity(self.n_cells());
        let lat_cells: Vec<usize> = (0..d - 1).map(|k| self.axes[k].len() - 1).collect();
        let z_levels = self.normal_cell_levels();
        let mut multi = vec![0usize; d];
        let lat_total: usize = lat_cells.iter().product();
        for &jz in &z_levels {
            for lat in 0..lat_total {
                let mut rem = lat;
                for k in 0..d - 1 {
                    multi[k] = rem % lat_cells[k];
                    rem /= lat_cells[k];
                }
                multi[d - 1] = jz;
                out.push(self.cell_at(&multi));
            }
        }
        out
    }

    pub fn cell_at(&self, multi: &[usize]) -> Cell {
        let d = self.dim;
        let mut origin = [0.0; 3];
        let mut size = [0.0; 3];
        for k in 0..d {
            origin[k] = self.axes[k][multi[k]];
            size[k] = self.axes[k][multi[k] + 1] - self.axes[k][multi[k]];
        }
        let mut nodes = Vec::with_capacity(1 << d);
        let mut corner_multi = vec![0usize; d];
        for corner in 0..1usize << d {
            for k in 0..d {
                corner_multi[k] = multi[k] + ((corner >> k) & 1);
            }
            nodes.push(self.node_index(&corner_multi));
        }
        Cell {
            nodes,
            origin,
            size,
        }
    }

    /// All boundary faces on the plane `axis = min/max`.
    pub fn boundary_faces(&self, axis: usize, side: Side) -> Vec<BoundaryFace> {
        let d = self.dim;
        let plane_idx = match side {
            Side::Min => 0,
            Side::Max => self.axes[axis].len() - 1,
        };
        let in_plane: Vec<usize> = (0..d).filter(|&k| k != axis).collect();
        let counts: Vec<usize> = in_plane
            .iter()
            .map(|&k| {
                if k == d - 1 {
                    self.normal_cell_levels().len()
                } else {
                    self.axes[k].len() - 1
                }
            })
            .collect();
        let levels_z = self.normal_cell_levels();
        let total: usize = counts.iter().product();
        let mut out = Vec::with_capacity(total);
        for f in 0..total {
            let mut rem = f;
            let mut cell_multi = vec![0usize; d];
            cell_multi[axis] = plane_idx;
            for (pos, &k) in in_plane.iter().enumerate() {
                let c = rem % counts[pos];
                rem /= counts[pos];
                cell_multi[k] = if k == d - 1 { levels_z[c] } else { c };
            }
            let mut nodes = Vec::with_capacity(1 << (d - 1));
            let mut size = Vec::with_capacity(d - 1);
            for &k in &in_plane {
                size.push(self.axes[k][cell_multi[k] + 1] - self.axes[k][cell_multi[k]]);
            }
            let mut corner_multi = vec![0usize; d];
            for corner in 0..1usize << (d - 1) {
                corner_multi[axis] = plane_idx;
                for (pos, &k) in in_plane.iter().enumerate() {
                    corner_multi[k] = cell_multi[k] + ((corner >> pos) & 1);
                }
                nodes.push(self.node_index(&corner_multi));
            }
            out.push(BoundaryFace {
                nodes,
                in_plane_axes: in_plane.clone(),
                size,
            });
        }
        out
    }

    /// Faces selected by a patch: faces of the patch plane all of whose
    /// nodes lie inside the window.
    pub fn select_faces(&self, patch: &PatchSelector) -> Vec<BoundaryFace> {
        let tol = 1e-12;
        self.boundary_faces(patch.axis, patch.side)
            .into_iter()
            .filter(|face| {
                face.nodes.iter().all(|&n| {
                    let x = self.node_coord(n);
                    (0..self.dim).all(|k| {
                        k == patch.axis
                            || (x[k] >= patch.window[k][0] - tol
                                && x[k] <= patch.window[k][1] + tol)
                    })
                })
            })
            .collect()
    }

    /// Number of nodes in the lateral grid (axes 0..dim-1).
    pub fn lat_nodes(&self) -> usize {
        (0..self.dim - 1).map(|k| self.axes[k].len()).product()
    }

    /// Node id of lateral node `lat` at normal level `jz`.
    pub fn node_at_level(&self, lat: usize, jz: usize) -> usize {
        let mut rem = lat;
        let mut multi = vec![0usize; self.dim];
        for k in 0..self.dim - 1 {
            let n = self.axes[k].len();
            multi[k] = rem % n;
            rem /= n;
        }
        multi[self.dim - 1] = jz;
        self.node_index(&multi)
    }
}

/// Geometry of one problem instance.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainConfig {
    pub dim: usize,
    /// Lateral axes run over [0, extents[k]]; the normal axis over
    /// [-extents[dim-1], extents[dim-1]].
    pub extents: Vec<f64>,
    /// Collar half-thickness (the slab |x_d| < eps0 that the clamped
    /// boundary must keep clear of).
    pub eps0: f64,
    /// Current layer half-thickness, 0 < eps < eps0.
    pub eps: f64,
    /// Target bulk cell size.
    pub h_bulk: f64,
    /// Cells across the layer thickness.
    pub m_layer: usize,
    /// Cells across the reference box in the normal direction.
    pub m_refbox: usize,
    pub dirichlet: Vec<PatchSelector>,
    pub neumann: Vec<PatchSelector>,
}

/// All meshes and connectivity tables derived from a `DomainConfig`.
#[derive(Debug, Clone)]
pub struct DomainMeshes {
    pub config: DomainConfig,
    pub bulk: TensorMesh,
    pub layer: TensorMesh,
    pub ref_layer: TensorMesh,
    pub split_bulk: TensorMesh,
    /// Normal-axis node levels of -eps0, -eps, +eps, +eps0 in `bulk`.
    pub bulk_levels: SheetLevels,
    /// Normal-axis node level of the lower/upper interface sheet in
    /// `split_bulk` (the duplicated coordinate-0 nodes).
    pub split_sheet: (usize, usize),
    /// Per bulk cell: lies inside the layer slab.
    pub bulk_layer_cell: Vec<bool>,
    /// Dirichlet node masks.
    pub bulk_dirichlet: Vec<bool>,
    pub split_dirichlet: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SheetLevels {
    pub minus_eps0: usize,
    pub minus_eps: usize,
    pub plus_eps: usize,
    pub plus_eps0: usize,
}

fn cells_for(len: f64, h: f64) -> usize {
    ((len / h) - 1e-9).ceil().max(1.0) as usize
}

fn append_segment(zs: &mut Vec<f64>, a: f64, b: f64, n: usize) {
    debug_assert!((zs.last().copied().unwrap_or(a) - a).abs() < 1e-14);
    for j in 1..=n {
        let t = j as f64 / n as f64;
        zs.push(if j == n { b } else { a + (b - a) * t });
    }
}

/// Build all meshes for one layer thickness.
pub fn build_domain(config: &DomainConfig) -> Result<DomainMeshes> {
    let d = config.dim;
    if d != 2 && d != 3 {
        return Err(Error::DomainConfig(format!("dim must be 2 or 3, got {d}")));
    }
    if config.extents.len() != d {
        return Err(Error::DomainConfig(
            "extents must have one entry per axis".into(),
        ));
    }
    if config.extents.iter().any(|&l| l <= 0.0) {
        return Err(Error::DomainConfig("extents must be positive".into()));
    }
    if config.h_bulk <= 0.0 {
        return Err(Error::DomainConfig("h_bulk must be positive".into()));
    }
    if config.m_layer == 0 || config.m_refbox == 0 {
        return Err(Error::DomainConfig(
            "m_layer and m_refbox must be >= 1".into(),
        ));
    }
    if !(config.eps > 0.0 && config.eps < config.eps0) {
        return Err(Error::DomainConfig("eps >= eps0".into()));
    }
    let half = config.extents[d - 1];
    if config.eps0 >= half {
        return Err(Error::DomainConfig(
            "eps0 must be strictly smaller than the normal half-extent".into(),
        ));
    }

    let lateral: Vec<Vec<f64>> = (0..d - 1)
        .map(|k| {
            let n = cells_for(config.extents[k], config.h_bulk);
            let mut a = vec![0.0];
            append_segment(&mut a, 0.0, config.extents[k], n);
            a
        })
        .collect();

    // bulk normal axis: sheets at +-eps0 and +-eps, m_layer cells across the layer
    let (eps, eps0) = (config.eps, config.eps0);
    let n_outer = cells_for(half - eps0, config.h_bulk);
    let n_collar = cells_for(eps0 - eps, config.h_bulk);
    let mut zb = vec![-half];
    append_segment(&mut zb, -half, -eps0, n_outer);
    append_segment(&mut zb, -eps0, -eps, n_collar);
    append_segment(&mut zb, -eps, eps, config.m_layer);
    append_segment(&mut zb, eps, eps0, n_collar);
    append_segment(&mut zb, eps0, half, n_outer);
    let minus_eps0 = n_outer;
    let minus_eps = n_outer + n_collar;
    let plus_eps = minus_eps + config.m_layer;
    let plus_eps0 = plus_eps + n_collar;

    let mut bulk_axes = lateral.clone();
    bulk_axes.push(zb);
    let bulk = TensorMesh::new("bulk", bulk_axes);

    // layer mesh: same lateral grid, z in [-eps, eps]
    let mut layer_axes = lateral.clone();
    layer_axes.push(bulk.axes[d - 1][minus_eps..=plus_eps].to_vec());
    let layer = TensorMesh::new("layer", layer_axes);

    // reference box: z in [-1, 1], m_refbox cells
    let mut ref_axes = lateral.clone();
    let mut zr = vec![-1.0];
    append_segment(&mut zr, -1.0, 1.0, config.m_refbox);
    ref_axes.push(zr);
    let ref_layer = TensorMesh::new("ref_layer", ref_axes);

    // split bulk: duplicated zero sheet
    let n_inner = cells_for(eps0, config.h_bulk);
    let mut zs = vec![-half];
    append_segment(&mut zs, -half, -eps0, n_outer);
    append_segment(&mut zs, -eps0, 0.0, n_inner);
    let sheet_minus = zs.len() - 1;
    zs.push(0.0);
    let sheet_plus = zs.len() - 1;
    append_segment(&mut zs, 0.0, eps0, n_inner);
    append_segment(&mut zs, eps0, half, n_outer);
    let mut split_axes = lateral.clone();
    split_axes.push(zs);
    let mut split_bulk = TensorMesh::new("split_bulk", split_axes);
    split_bulk.split_gap = Some(sheet_minus);

    // layer-cell flags for the bulk mesh
    let mut bulk_layer_cell = Vec::with_capacity(bulk.n_cells());
    for cell in bulk.cells() {
        let zc = cell.origin[d - 1] + 0.5 * cell.size[d - 1];
        bulk_layer_cell.push(zc.abs() < eps);
    }

    // Dirichlet masks + collar-separation check
    if config.dirichlet.is_empty() {
        return Err(Error::DomainConfig("empty Dirichlet boundary".into()));
    }
    let bulk_dirichlet = dirichlet_mask(&bulk, &config.dirichlet, eps0)?;
    let split_dirichlet = dirichlet_mask(&split_bulk, &config.dirichlet, eps0)?;

    // declared Neumann patches must not meet the Dirichlet set
    let mut on_dirichlet = vec![false; bulk.n_nodes()];
    for p in &config.dirichlet {
        for f in bulk.select_faces(p) {
            for &n in &f.nodes {
                on_dirichlet[n] = true;
            }
        }
    }
    for p in &config.neumann {
        for f in bulk.select_faces(p) {
            if f.nodes.iter().all(|&n| on_dirichlet[n]) {
                return Err(Error::DomainConfig(
                    "Neumann patch overlaps the Dirichlet boundary".into(),
                ));
            }
        }
    }

    Ok(DomainMeshes {
        config: config.clone(),
        bulk,
        layer,
        ref_layer,
        split_bulk,
        bulk_levels: SheetLevels {
            minus_eps0,
            minus_eps,
            plus_eps,
            plus_eps0,
        },
        split_sheet: (sheet_minus, sheet_plus),
        bulk_layer_cell,
        bulk_dirichlet,
        split_dirichlet,
    })
}

fn dirichlet_mask(mesh: &TensorMesh, patches: &[PatchSelector], eps0: f64) -> Result<Vec<bool>> {
    let d = mesh.dim;
    let mut mask = vec![false; mesh.n_nodes()];
    let mut any = false;
    for p in patches {
        if p.axis >= d {
            return Err(Error::DomainConfig("patch axis out of range".into()));
        }
        for face in mesh.select_faces(p) {
            any = true;
            for &n in &face.nodes {
                let z = mesh.node_coord(n)[d - 1];
                if z.abs() < eps0 * (1.0 + 1e-12) {
                    return Err(Error::DomainConfig("Dirichlet patch inside collar".into()));
                }
                mask[n] = true;
            }
        }
    }
    if !any {
        return Err(Error::DomainConfig("empty Dirichlet boundary".into()));
    }
    Ok(mask)
}

impl DomainMeshes {
    pub fn dim(&self) -> usize {
        self.config.dim
    }

    /// Node pairs identifying the reference-box sheets with the split-bulk
    /// interface sheets: (ref_layer node, split_bulk node), lower then upper.
    #[allow(clippy::type_complexity)]
    pub fn trace_tables(&self) -> (Vec<(usize, usize)>, Vec<(usize, usize)>) {
        let nz_ref = self.ref_layer.axes[self.dim() - 1].len() - 1;
        let lat = self.ref_layer.lat_nodes();
        assert_eq!(lat, self.split_bulk.lat_nodes());
        let mut lower = Vec::with_capacity(lat);
        let mut upper = Vec::with_capacity(lat);
        for l in 0..lat {
            lower.push((
                self.ref_layer.node_at_level(l, 0),
                self.split_bulk.node_at_level(l, self.split_sheet.0),
            ));
            upper.push((
                self.ref_layer.node_at_level(l, nz_ref),
                self.split_bulk.node_at_level(l, self.split_sheet.1),
            ));
        }
        (lower, upper)
    }

    /// Dirichlet DOF mask (all components clamped) for the bulk mesh.
    pub fn bulk_dof_mask(&self) -> Vec<bool> {
        expand_mask(&self.bulk_dirichlet, self.dim())
    }

    pub fn split_dof_mask(&self) -> Vec<bool> {
        expand_mask(&self.split_dirichlet, self.dim())
    }
}

fn expand_mask(nodes: &[bool], dim: usize) -> Vec<bool> {
    let mut m = vec![false; nodes.len() * dim];
    for (i, &b) in nodes.iter().enumerate() {
        if b {
            for c in 0..dim {
                m[i * dim + c] = true;
            }
        }
    }
    m
}
