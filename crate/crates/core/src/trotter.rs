//! Comparison machinery between the limit space and the positive-thickness
//! spaces: the projection pair (P^u, P^v), the energy-norm distance between
//! projected limit states and thin states, norm-consistency probes, and the
//! resolvent-based compatible initial data.

use crate::error::{Error, Result};
use crate::fem::{cell_quadrature, normal_derivative_at, tensor_dot, SymTensor};
use crate::forms::{Condensation, Forms, SolverOpts};
use crate::limit::{resolvent_step_limit, split_velocity, LimitParams, LimitState};
use crate::linalg::Cholesky;
use crate::material::{dw_lame, sym_outer_normal, DissipationSpec};
use crate::mesh::DomainMeshes;
use crate::sparse::{Coo, Csr};
use crate::thin::{resolvent_step, QuintupleParams, ThinState};

/// Smooth cut-off: 1 on |r| <= eps0/3, 0 on |r| >= 2 eps0/3, cosine
/// smoothstep in between.
pub fn cutoff_xi(r: f64, eps0: f64) -> f64 {
    let a = eps0 / 3.0;
    let x = r.abs();
    if x <= a {
        1.0
    } else if x < 2.0 * a {
        0.5 * (1.0 + (std::f64::consts::PI * (x - a) / a).cos())
    } else {
        0.0
    }
}

/// Everything needed to project limit states into the thin space of one
/// parameter index: mesh pair, parameters, and the cached factorization of
/// the auxiliary layer operator.
pub struct ProjectionContext {
    pub q: QuintupleParams,
    pub lp: LimitParams,
    pub thin: DomainMeshes,
    pub limit: DomainMeshes,
    aux_free: Vec<usize>,
    aux_chol: Cholesky,
    aux: Csr,
}

/// Scaled strain of the unit nodal perturbation (corner gradient `g`,
/// component `c`).
fn scaled_strain_basis(dim: usize, eps: f64, g: &[f64; 3], c: usize) -> SymTensor {
    let d = dim - 1;
    let mut e = [[0.0; 3]; 3];
    for i in 0..d {
        for j in 0..d {
            let mut v = 0.0;
            if j == c {
                v += 0.5 * g[i];
            }
            if i == c {
                v += 0.5 * g[j];
            }
            e[i][j] = eps * v;
        }
    }
    for i in 0..d {
        let mut v = 0.0;
        if c == d {
            v += 0.5 * eps * g[i];
        }
        if c == i {
            v += 0.5 * g[d];
        }
        e[i][d] = v;
        e[d][i] = v;
    }
    e[d][d] = if c == d { g[d] } else { 0.0 };
    e
}

impl ProjectionContext {
    pub fn new(
        thin: &DomainMeshes,
        limit: &DomainMeshes,
        q: QuintupleParams,
        lp: LimitParams,
    ) -> Result<Self> {
        q.validate()?;
        lp.validate()?;
        let d = thin.dim();
        if d != limit.dim() {
            return Err(Error::MeshMismatch("dimension mismatch".into()));
        }
        for k in 0..d - 1 {
            if thin.bulk.axes[k] != limit.split_bulk.axes[k]
                || thin.bulk.axes[k] != limit.ref_layer.axes[k]
            {
                return Err(Error::MeshMismatch(
                    "thin and limit meshes must share the lateral grid".into(),
                ));
            }
        }
        let m_layer = thin.bulk_levels.plus_eps - thin.bulk_levels.minus_eps;
        let m_refbox = limit.ref_layer.axes[d - 1].len() - 1;
        if m_layer != m_refbox {
            return Err(Error::MeshMismatch(format!(
                "m_layer = {m_layer} must equal m_refbox = {m_refbox} for the rescaling to be a relabeling"
            )));
        }
        if (thin.config.eps - q.eps).abs() > 1e-15 {
            return Err(Error::MeshMismatch(
                "thin meshes were built for a different eps".into(),
            ));
        }
        if (thin.config.eps0 - limit.config.eps0).abs() > 1e-15 {
            return Err(Error::MeshMismatch("eps0 mismatch".into()));
        }

        // auxiliary operator on the reference box:
        // (1/eps) int_B DW_{lambda_n,mu_n}(e(eps, u)) : e(eps, psi)
        let rl = &limit.ref_layer;
        let n = rl.n_dofs();
        let mut coo = Coo::new(n);
        let inv_eps = 1.0 / q.eps;
        for cell in rl.cells() {
            for qp in cell_quadrature(d, &cell) {
                // basis tensors of all (corner, comp) pairs at this point
                let bases: Vec<SymTensor> = (0..cell.nodes.len() * d)
                    .map(|k| scaled_strain_basis(d, q.eps, &qp.grad[k / d], k % d))
                    .collect();
                let traces: Vec<f64> = bases.iter().map(|e| crate::fem::trace(e, d)).collect();
                for (ka, &na) in cell.nodes.iter().enumerate() {
                    for (kb, &nb) in cell.nodes.iter().enumerate() {
                        for ca in 0..d {
                            for cb in 0..d {
                                let (ia, ib) = (ka * d + ca, kb * d + cb);
                                let v = inv_eps
                                    * qp.weight
                                    * (q.lambda * (traces[ia] * traces[ib])
                                        + 2.0 * q.mu * tensor_dot(&bases[ia], &bases[ib], d));
                                if v != 0.0 {
                                    coo.push(na * d + ca, nb * d + cb, v);
                                }
                            }
                        }
                    }
                }
            }
        }
        let aux = coo.to_csr();

        // free DOFs: everything except the two trace sheets
        let nz = rl.axes[d - 1].len() - 1;
        let mut fixed = vec![false; n];
        for l in 0..rl.lat_nodes() {
            for c in 0..d {
                fixed[rl.node_at_level(l, 0) * d + c] = true;
                fixed[rl.node_at_level(l, nz) * d + c] = true;
            }
        }
        let aux_free: Vec<usize> = (0..n).filter(|&i| !fixed[i]).collect();
        let nf = aux_free.len();
        let mut dense = vec![0.0; nf * nf];
        for (i, &gi) in aux_free.iter().enumerate() {
            for (j, &gj) in aux_free.iter().enumerate() {
                dense[i * nf + j] = aux.get(gi, gj);
            }
        }
        let aux_chol = Cholesky::factor(&dense, nf)
            .map_err(|e| Error::Singular(format!("auxiliary layer operator not SPD: {e}")))?;

        Ok(ProjectionContext {
            q,
            lp,
            thin: thin.clone(),
            limit: limit.clone(),
            aux_free,
            aux_chol,
            aux,
        })
    }

    /// Solve the auxiliary layer problem: find u_{B,n} on the reference box
    /// with the traces of u_B on both sheets and
    /// (1/eps) int DW_{l_n,m_n}(e(eps,u_{B,n})) : e(eps,psi)
    ///   = int DW_{l_bar,m_bar}(d_z u_B x e_d) : e(eps,psi)
    /// for all psi vanishing on the sheets.
    pub fn layer_auxiliary(&self, u_coupled: &[f64], limit_forms: &Forms) -> Vec<f64> {
        let d = self.limit.dim();
        let rl = &self.limit.ref_layer;
        let cmap = limit_forms.coupled_map().expect("limit forms");
        let u_b = cmap.extract_layer(u_coupled);
        let n = rl.n_dofs();

        // right-hand side
        let mut ell = vec![0.0; n];
        for cell in rl.cells() {
            for qp in cell_quadrature(d, &cell) {
                let vals: Vec<f64> = cell
                    .nodes
                    .iter()
                    .flat_map(|&node| u_b[node * d..(node + 1) * d].iter().copied())
                    .collect();
                let qdir = normal_derivative_at(d, &qp, &vals);
                let t = dw_lame(
                    &sym_outer_normal(&qdir, d),
                    self.lp.lambda_bar,
                    self.lp.mu_bar,
                    d,
                );
                for (ka, &na) in cell.nodes.iter().enumerate() {
                    for c in 0..d {
                        let basis = scaled_strain_basis(d, self.q.eps, &qp.grad[ka], c);
                        ell[na * d + c] += qp.weight * tensor_dot(&t, &basis, d);
                    }
                }
            }
        }
        // residual of the trace lift (u_B itself) and the correction solve
        let mut au = vec![0.0; n];
        self.aux.matvec(&u_b, &mut au);
        let mut rhs_free: Vec<f64> = self.aux_free.iter().map(|&i| ell[i] - au[i]).collect();
        self.aux_chol.solve(&mut rhs_free);
        let mut out = u_b;
        for (k, &i) in self.aux_free.iter().enumerate() {
            out[i] += rhs_free[k];
        }
        out
    }

    fn eval_split_z(&self, values: &[f64], lat: usize, z: f64, plus_side: bool) -> Vec<f64> {
        let d = self.limit.dim();
        let split = &self.limit.split_bulk;
        let zs = &split.axes[d - 1];
        let (lo, hi) = self.limit.split_sheet;
        let (start, end) = if plus_side {
            (hi, zs.len() - 1)
        } else {
            (0, lo)
        };
        let zc = z.clamp(zs[start], zs[end]);
        // locate the interval
        let mut j = start;
        while j + 1 < end && zs[j + 1] < zc {
            j += 1;
        }
        let (za, zb) = (zs[j], zs[j + 1]);
        let t = if zb > za { (zc - za) / (zb - za) } else { 0.0 };
        let na = split.node_at_level(lat, j);
        let nb = split.node_at_level(lat, j + 1);
        (0..d)
            .map(|c| (1.0 - t) * values[na * d + c] + t * values[nb * d + c])
            .collect()
    }

    /// P^v: the bulk velocity outside the layer, the rescaled layer
    /// velocity inside (sheet nodes take the layer value).
    pub fn project_velocity(&self, v_bulk: &[f64], v_layer: &[f64]) -> Vec<f64> {
        let d = self.thin.dim();
        let bulk = &self.thin.bulk;
        let lv = self.thin.bulk_levels;
        let mut out = vec![0.0; bulk.n_dofs()];
        let nz = bulk.axes[d - 1].len();
        for lat in 0..bulk.lat_nodes() {
            for jz in 0..nz {
                let node = bulk.node_at_level(lat, jz);
                if jz >= lv.minus_eps && jz <= lv.plus_eps {
                    let rnode = self.limit.ref_layer.node_at_level(lat, jz - lv.minus_eps);
                    for c in 0..d {
                        out[node * d + c] = v_layer[rnode * d + c];
                    }
                } else {
                    let z = bulk.axes[d - 1][jz];
                    let vals = self.eval_split_z(v_bulk, lat, z, z > 0.0);
                    out[node * d..node * d + d].copy_from_slice(&vals);
                }
            }
        }
        out
    }

    /// P^u: the auxiliary layer solution inside the layer, the cut-off
    /// blend of the trace-transported bulk field with the plain bulk field
    /// in the collar, the plain bulk field outside.
    pub fn project_displacement(&self, u_coupled: &[f64], limit_forms: &Forms) -> Vec<f64> {
        let d = self.thin.dim();
        let eps = self.q.eps;
        let eps0 = self.thin.config.eps0;
        let bulk = &self.thin.bulk;
        let lv = self.thin.bulk_levels;
        let u_bn = self.layer_auxiliary(u_coupled, limit_forms);
        let u_bulk = limit_forms.coupled_map().unwrap().extract_bulk(u_coupled);
        let mut out = vec![0.0; bulk.n_dofs()];
        let nz = bulk.axes[d - 1].len();
        for lat in 0..bulk.lat_nodes() {
            for jz in 0..nz {
                let node = bulk.node_at_level(lat, jz);
                if jz >= lv.minus_eps && jz <= lv.plus_eps {
                    let rnode = self.limit.ref_layer.node_at_level(lat, jz - lv.minus_eps);
                    for c in 0..d {
                        out[node * d + c] = u_bn[rnode * d + c];
                    }
                } else {
                    let z = bulk.axes[d - 1][jz];
                    let plus = z > 0.0;
                    let xi = cutoff_xi(z, eps0);
                    let plain = self.eval_split_z(u_bulk, lat, z, plus);
                    if xi == 0.0 {
                        out[node * d..node * d + d].copy_from_slice(&plain);
                    } else {
                        // transport the interface trace out to the layer
                        // face: evaluate at z - sign(z) eps
                        let zs = z - z.signum() * eps;
                        let shifted = self.eval_split_z(u_bulk, lat, zs, plus);
                        for c in 0..d {
                            out[node * d + c] = xi * shifted[c] + (1.0 - xi) * plain[c];
                        }
                    }
                }
            }
        }
        // the clamped boundary sits outside the collar where P^u is the
        // plain bulk field; pin it to exact zeros
        for (i, m) in self.thin.bulk_dof_mask().iter().enumerate() {
            if *m {
                out[i] = 0.0;
            }
        }
        out
    }

    /// Project a full limit state.
    pub fn project_state(&self, x: &LimitState, limit_forms: &Forms) -> ThinState {
        ThinState {
            u: self.project_displacement(&x.u, limit_forms),
            v: self.project_velocity(&x.v_bulk, &x.v_layer),
        }
    }

    /// |P_n X - X_n|_n together with |X_n|_n and |P_n X|_n.
    pub fn trotter_distance(
        &self,
        thin_forms: &Forms,
        limit_forms: &Forms,
        x: &LimitState,
        xn: &ThinState,
    ) -> DistanceEval {
        let px = self.project_state(x, limit_forms);
        let du: Vec<f64> = px.u.iter().zip(&xn.u).map(|(a, b)| a - b).collect();
        let dv: Vec<f64> = px.v.iter().zip(&xn.v).map(|(a, b)| a - b).collect();
        let dist2 = thin_forms.phi_quad(&du, &du) + thin_forms.k_quad(&dv, &dv);
        DistanceEval {
            distance: dist2.max(0.0).sqrt(),
            norm_thin: xn.norm2(thin_forms).max(0.0).sqrt(),
            norm_proj: px.norm2(thin_forms).max(0.0).sqrt(),
        }
    }

    /// Compatible thin initial data
    /// X_n^0 = X_n^e(0) + (I + A_n)^{-1} P_n (I + A)^{-1} (X^0 - X^e(0)),
    /// both resolvents taken at step one.
    #[allow(clippy::too_many_arguments)]
    pub fn build_initial_data(
        &self,
        thin_forms: &Forms,
        limit_forms: &Forms,
        spec: &DissipationSpec,
        x0_limit: &LimitState,
        xe0_limit: &LimitState,
        xe0_thin: &ThinState,
        cond: Option<&Condensation>,
        opts: &SolverOpts,
    ) -> Result<ThinState> {
        let psi1: Vec<f64> = x0_limit
            .u
            .iter()
            .zip(&xe0_limit.u)
            .map(|(a, b)| a - b)
            .collect();
        let psi2_bulk: Vec<f64> = x0_limit
            .v_bulk
            .iter()
            .zip(&xe0_limit.v_bulk)
            .map(|(a, b)| a - b)
            .collect();
        let psi2_layer: Vec<f64> = x0_limit
            .v_layer
            .iter()
            .zip(&xe0_limit.v_layer)
            .map(|(a, b)| a - b)
            .collect();
        let (u1, v1, _) = resolvent_step_limit(
            limit_forms,
            &self.lp,
            spec,
            1.0,
            &psi1,
            (&psi2_bulk, &psi2_layer),
            cond,
            opts,
        )?;
        let (v1b, v1l) = split_velocity(limit_forms, &v1);
        let y = LimitState {
            u: u1,
            v_bulk: v1b,
            v_layer: v1l,
        };
        let py = self.project_state(&y, limit_forms);
        let (un, vn, _) = resolvent_step(thin_forms, spec, self.q.b, 1.0, &py.u, &py.v, opts)?;
        Ok(ThinState {
            u: un.iter().zip(&xe0_thin.u).map(|(a, b)| a + b).collect(),
            v: vn,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DistanceEval {
    pub distance: f64,
    pub norm_thin: f64,
    pub norm_proj: f64,
}

/// Per-step comparison of one thin trajectory with the projected limit
/// trajectory.
#[derive(Debug, Clone)]
pub struct TrotterReport {
    pub rows: Vec<TrotterRow>,
    pub sup_distance: f64,
    pub sup_norm_gap: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct TrotterRow {
    pub k: usize,
    pub t: f64,
    pub distance: f64,
    pub norm_thin: f64,
    pub norm_limit: f64,
}

impl TrotterReport {
    pub fn from_rows(rows: Vec<TrotterRow>) -> Self {
        let sup_distance = rows.iter().fold(0.0f64, |m, r| m.max(r.distance));
        let sup_norm_gap = rows
            .iter()
            .fold(0.0f64, |m, r| m.max((r.norm_thin - r.norm_limit).abs()));
        debug_assert!(rows
            .iter()
            .all(|r| r.distance >= 0.0 && r.norm_thin >= 0.0 && r.norm_limit >= 0.0));
        TrotterReport {
            rows,
            sup_distance,
            sup_norm_gap,
        }
    }
}

/// One row of the norm-consistency probe.
#[derive(Debug, Clone, Copy)]
pub struct NormProbeRow {
    pub n: usize,
    pub eps: f64,
    pub norm_proj: f64,
    pub gap: f64,
}

/// Evaluate |P_n X|_n across a parameter sequence and compare with |X|.
/// Flags (not failures): a projected norm above `c_cap * |X|`, or a final
/// gap above the first.
pub fn norm_consistency_probe(
    entries: &[(&ProjectionContext, &Forms)],
    limit_forms: &Forms,
    x: &LimitState,
    c_cap: f64,
) -> (Vec<NormProbeRow>, f64, Vec<String>) {
    let norm_limit = x.norm2(limit_forms).max(0.0).sqrt();
    let mut rows = Vec::with_capacity(entries.len());
    let mut flags = Vec::new();
    for (n, (ctx, forms_n)) in entries.iter().enumerate() {
        let px = ctx.project_state(x, limit_forms);
        let norm_proj = px.norm2(forms_n).max(0.0).sqrt();
        let gap = (norm_proj - norm_limit).abs();
        if norm_proj > c_cap * norm_limit.max(1e-300) {
            flags.push(format!(
                "|P_{n} X|_n = {norm_proj:.6e} exceeds {c_cap} x |X| = {:.6e}",
                c_cap * norm_limit
            ));
        }
        rows.push(NormProbeRow {
            n,
            eps: ctx.q.eps,
            norm_proj,
            gap,
        });
    }
    if let (Some(first), Some(last)) = (rows.first(), rows.last()) {
        if last.gap > first.gap && norm_limit > 0.0 {
            flags.push(format!(
                "norm gap grew along the sequence: {:.3e} -> {:.3e}",
                first.gap, last.gap
            ));
        }
    }
    (rows, norm_limit, flags)
}
