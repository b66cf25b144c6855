//! Nodal vector fields and the operations that move them between meshes:
//! the layer rescaling (a pure node relabeling on matching grids) and
//! interface trace/jump extraction on the split bulk mesh.

use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::mesh::{DomainMeshes, TensorMesh};

/// Vector-valued nodal coefficients on one mesh, indexed (node, component).
#[derive(Debug, Clone, PartialEq)]
pub struct NodalField {
    pub mesh_id: String,
    pub ncomp: usize,
    pub values: Vec<f64>,
}

impl NodalField {
    pub fn zeros(mesh: &TensorMesh) -> Self {
        NodalField {
            mesh_id: mesh.id.clone(),
            ncomp: mesh.dim,
            values: vec![0.0; mesh.n_dofs()],
        }
    }

    pub fn from_fn<F>(mesh: &TensorMesh, f: F) -> Self
    where
        F: Fn([f64; 3]) -> Vec<f64>,
    {
        let mut values = vec![0.0; mesh.n_dofs()];
        for n in 0..mesh.n_nodes() {
            let v = f(mesh.node_coord(n));
            assert_eq!(v.len(), mesh.dim);
            values[n * mesh.dim..(n + 1) * mesh.dim].copy_from_slice(&v);
        }
        NodalField {
            mesh_id: mesh.id.clone(),
            ncomp: mesh.dim,
            values,
        }
    }

    pub fn constant(mesh: &TensorMesh, c: &[f64]) -> Self {
        Self::from_fn(mesh, |_| c.to_vec())
    }

    pub fn check_on(&self, mesh: &TensorMesh) -> Result<()> {
        if self.mesh_id != mesh.id {
            return Err(Error::MeshMismatch(format!(
                "field lives on '{}', expected '{}'",
                self.mesh_id, mesh.id
            )));
        }
        if self.values.len() != mesh.n_dofs() {
            return Err(Error::Shape(format!(
                "field has {} coefficients, mesh needs {}",
                self.values.len(),
                mesh.n_dofs()
            )));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("field has non-finite entries".into()));
        }
        Ok(())
    }
}

fn lateral_grids_match(a: &TensorMesh, b: &TensorMesh) -> bool {
    a.dim == b.dim && (0..a.dim - 1).all(|k| a.axes[k] == b.axes[k])
}

/// Rescale a layer field onto the reference box: (S_eps[v])(x, y) = v(x, eps y).
/// With matching normal node counts this is an exact node relabeling.
pub fn scale_to_reference(
    field: &NodalField,
    layer: &TensorMesh,
    ref_layer: &TensorMesh,
) -> Result<NodalField> {
    field.check_on(layer)?;
    if !lateral_grids_match(layer, ref_layer) {
        return Err(Error::MeshMismatch("mismatched lateral grids".into()));
    }
    let d = layer.dim;
    if layer.axes[d - 1].len() != ref_layer.axes[d - 1].len() {
        return Err(Error::MeshMismatch(
            "layer and reference box have different normal node counts".into(),
        ));
    }
    Ok(NodalField {
        mesh_id: ref_layer.id.clone(),
        ncomp: field.ncomp,
        values: field.values.clone(),
    })
}

/// Inverse relabeling: reference-box field back onto the physical layer.
pub fn scale_from_reference(
    field: &NodalField,
    ref_layer: &TensorMesh,
    layer: &TensorMesh,
) -> Result<NodalField> {
    field.check_on(ref_layer)?;
    if !lateral_grids_match(layer, ref_layer) {
        return Err(Error::MeshMismatch("mismatched lateral grids".into()));
    }
    let d = layer.dim;
    if layer.axes[d - 1].len() != ref_layer.axes[d - 1].len() {
        return Err(Error::MeshMismatch(
            "layer and reference box have different normal node counts".into(),
        ));
    }
    Ok(NodalField {
        mesh_id: layer.id.clone(),
        ncomp: field.ncomp,
        values: field.values.clone(),
    })
}

/// Traces of a split-bulk field on the interface: values on the upper and
/// lower duplicated sheets and their difference, one vector per lateral node.
pub struct TraceJump {
    pub plus: Vec<f64>,
    pub minus: Vec<f64>,
    pub jump: Vec<f64>,
}

pub fn trace_jump(field: &NodalField, meshes: &DomainMeshes) -> Result<TraceJump> {
    field.check_on(&meshes.split_bulk)?;
    let d = meshes.dim();
    let lat = meshes.split_bulk.lat_nodes();
    let (lo, hi) = meshes.split_sheet;
    let mut plus = vec![0.0; lat * d];
    let mut minus = vec![0.0; lat * d];
    let mut jump = vec![0.0; lat * d];
    for l in 0..lat {
        let np = meshes.split_bulk.node_at_level(l, hi);
        let nm = meshes.split_bulk.node_at_level(l, lo);
        for c in 0..d {
            let p = field.values[np * d + c];
            let m = field.values[nm * d + c];
            plus[l * d + c] = p;
            minus[l * d + c] = m;
            jump[l * d + c] = p - m;
        }
    }
    Ok(TraceJump { plus, minus, jump })
}

/// Write a field with its node coordinates. `.csv` produces a plain-text
/// table; `.bin` a plain-text header followed by little-endian f64 payload
/// (coordinates then coefficients).
pub fn dump_field(path: &Path, mesh: &TensorMesh, field: &NodalField) -> Result<()> {
    field.check_on(mesh)?;
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    let header = format!(
        "# mesh {} dim {} nodes {} comps {}\n",
        mesh.id,
        mesh.dim,
        mesh.n_nodes(),
        field.ncomp
    );
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => {
            w.write_all(header.as_bytes())?;
            for n in 0..mesh.n_nodes() {
                let x = mesh.node_coord(n);
                let mut row = String::new();
                for k in 0..mesh.dim {
                    row.push_str(&format!("{:.17e},", x[k]));
                }
                for c in 0..field.ncomp {
                    row.push_str(&format!("{:.17e}", field.values[n * field.ncomp + c]));
                    if c + 1 < field.ncomp {
                        row.push(',');
                    }
                }
                row.push('\n');
                w.write_all(row.as_bytes())?;
            }
        }
        Some("bin") => {
            w.write_all(header.as_bytes())?;
            for n in 0..mesh.n_nodes() {
                let x = mesh.node_coord(n);
                for k in 0..mesh.dim {
                    w.write_all(&x[k].to_le_bytes())?;
                }
            }
            for v in &field.values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        other => {
            return Err(Error::Invalid(format!(
                "unsupported dump extension {other:?} (use .csv or .bin)"
            )))
        }
    }
    Ok(())
}

/// Parsed dump payload: mesh id, dim, node count, coordinates, coefficients.
pub type FieldDump = (String, usize, usize, Vec<f64>, Vec<f64>);

/// Read back a `.bin` dump written by [`dump_field`].
pub fn load_field_bin(path: &Path) -> Result<FieldDump> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    let nl = buf
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Invalid("missing dump header".into()))?;
    let header = String::from_utf8_lossy(&buf[..nl]).to_string();
    let parts: Vec<&str> = header.split_whitespace().collect();
    // "# mesh <id> dim <d> nodes <n> comps <c>"
    if parts.len() != 9 || parts[0] != "#" {
        return Err(Error::Invalid(format!("malformed dump header: {header}")));
    }
    let id = parts[2].to_string();
    let dim: usize = parts[4]
        .parse()
        .map_err(|_| Error::Invalid("bad dim".into()))?;
    let nodes: usize = parts[6]
        .parse()
        .map_err(|_| Error::Invalid("bad nodes".into()))?;
    let comps: usize = parts[8]
        .parse()
        .map_err(|_| Error::Invalid("bad comps".into()))?;
    let payload = &buf[nl + 1..];
    let need = (nodes * dim + nodes * comps) * 8;
    if payload.len() != need {
        return Err(Error::Invalid(format!(
            "dump payload has {} bytes, expected {need}",
            payload.len()
        )));
    }
    let mut vals = Vec::with_capacity(need / 8);
    for chunk in payload.chunks_exact(8) {
        vals.push(f64::from_le_bytes(chunk.try_into().unwrap()));
    }
    let coords = vals[..nodes * dim].to_vec();
    let coeffs = vals[nodes * dim..].to_vec();
    Ok((id, dim, nodes, coords, coeffs))
}
