//! Multilinear (Q1) elements on axis-aligned cells with full 2-point Gauss
//! quadrature per direction.

use crate::mesh::{BoundaryFace, Cell};

const GP: [f64; 2] = [-0.577_350_269_189_625_8, 0.577_350_269_189_625_8];

/// Shape values and physical gradients of the 2^dim corner functions at one
/// quadrature point of a cell, together with the quadrature weight.
#[derive(Debug, Clone)]
pub struct QuadPoint {
    pub weight: f64,
    /// Physical coordinates of the point.
    pub coord: [f64; 3],
    /// shape[a] for corner a (tensor order).
    pub shape: Vec<f64>,
    /// grad[a][k] = d shape_a / d x_k.
    pub grad: Vec<[f64; 3]>,
}

/// The 2^dim Gauss points of a cell.
pub fn cell_quadrature(dim: usize, cell: &Cell) -> Vec<QuadPoint> {
    let n_qp = 1usize << dim;
    let n_sh = 1usize << dim;
    let mut out = Vec::with_capacity(n_qp);
    let mut wcell = 1.0;
    for k in 0..dim {
        wcell *= cell.size[k] / 2.0;
    }
    for q in 0..n_qp {
        let mut xi = [0.0; 3];
        let mut coord = [0.0; 3];
        for k in 0..dim {
            xi[k] = GP[(q >> k) & 1];
            coord[k] = cell.origin[k] + cell.size[k] * (xi[k] + 1.0) / 2.0;
        }
        let mut shape = Vec::with_capacity(n_sh);
        let mut grad = Vec::with_capacity(n_sh);
        for a in 0..n_sh {
            let mut val = 1.0;
            let mut g = [0.0; 3];
            for k in 0..dim {
                let s = if (a >> k) & 1 == 1 { 1.0 } else { -1.0 };
                val *= 0.5 * (1.0 + s * xi[k]);
            }
            for k in 0..dim {
                let sk = if (a >> k) & 1 == 1 { 1.0 } else { -1.0 };
                let mut dg = 0.5 * sk * (2.0 / cell.size[k]);
                for m in 0..dim {
                    if m != k {
                        let sm = if (a >> m) & 1 == 1 { 1.0 } else { -1.0 };
                        dg *= 0.5 * (1.0 + sm * xi[m]);
                    }
                }
                g[k] = dg;
            }
            shape.push(val);
            grad.push(g);
        }
        out.push(QuadPoint {
            weight: wcell,
            coord,
            shape,
            grad,
        });
    }
    out
}

/// Gauss points of a boundary face (dim-1 dimensional).
pub fn face_quadrature(dim: usize, face: &BoundaryFace) -> Vec<(f64, Vec<f64>)> {
    let d_face = dim - 1;
    let n_qp = 1usize << d_face;
    let n_sh = 1usize << d_face;
    let mut wface = 1.0;
    for k in 0..d_face {
        wface *= face.size[k] / 2.0;
    }
    let mut out = Vec::with_capacity(n_qp);
    for q in 0..n_qp {
        let mut shape = Vec::with_capacity(n_sh);
        for a in 0..n_sh {
            let mut val = 1.0;
            for k in 0..d_face {
                let s = if (a >> k) & 1 == 1 { 1.0 } else { -1.0 };
                val *= 0.5 * (1.0 + s * GP[(q >> k) & 1]);
            }
            shape.push(val);
        }
        out.push((wface, shape));
    }
    out
}

/// dim x dim symmetric tensor stored as a full 3x3 array (upper-left block
/// used).
pub type SymTensor = [[f64; 3]; 3];

/// Symmetric gradient of a vector field at a quadrature point:
/// e_ij = (d_i u_j + d_j u_i) / 2 from corner values.
pub fn strain_at(dim: usize, qp: &QuadPoint, corner_values: &[f64]) -> SymTensor {
    // corner_values: [node0_c0, node0_c1, ..,] length 2^dim * dim
    let mut grad_u = [[0.0; 3]; 3]; // grad_u[i][j] = d_i u_j
    for (a, g) in qp.grad.iter().enumerate() {
        for j in 0..dim {
            let v = corner_values[a * dim + j];
            for i in 0..dim {
                grad_u[i][j] += g[i] * v;
            }
        }
    }
    let mut e = [[0.0; 3]; 3];
    for i in 0..dim {
        for j in 0..dim {
            e[i][j] = 0.5 * (grad_u[i][j] + grad_u[j][i]);
        }
    }
    e
}

/// Anisotropically scaled strain on the reference box: lateral entries are
/// multiplied by eps, mixed entries are (eps d_i w_d + d_d w_i) / 2, and the
/// normal-normal entry is d_d w_d.
pub fn scaled_strain_at(dim: usize, eps: f64, qp: &QuadPoint, corner_values: &[f64]) -> SymTensor {
    let d = dim - 1;
    let mut grad_u = [[0.0; 3]; 3];
    for (a, g) in qp.grad.iter().enumerate() {
        for j in 0..dim {
            let v = corner_values[a * dim + j];
            for i in 0..dim {
                grad_u[i][j] += g[i] * v;
            }
        }
    }
    let mut e = [[0.0; 3]; 3];
    for i in 0..d {
        for j in 0..d {
            e[i][j] = eps * 0.5 * (grad_u[i][j] + grad_u[j][i]);
        }
    }
    for i in 0..d {
        let m = 0.5 * (eps * grad_u[i][d] + grad_u[d][i]);
        e[i][d] = m;
        e[d][i] = m;
    }
    e[d][d] = grad_u[d][d];
    e
}

/// Normal derivative of a vector field at a quadrature point (the fiber
/// direction q = d_d u used by the limit layer terms).
pub fn normal_derivative_at(dim: usize, qp: &QuadPoint, corner_values: &[f64]) -> [f64; 3] {
    let d = dim - 1;
    let mut q = [0.0; 3];
    for (a, g) in qp.grad.iter().enumerate() {
        for j in 0..dim {
            q[j] += g[d] * corner_values[a * dim + j];
        }
    }
    q
}

/// int |e(u)|^2 over the mesh.
pub fn strain_energy(mesh: &crate::mesh::TensorMesh, values: &[f64]) -> f64 {
    let d = mesh.dim;
    let mut total = 0.0;
    for cell in mesh.cells() {
        let vals: Vec<f64> = cell
            .nodes
            .iter()
            .flat_map(|&n| (0..d).map(move |c| values[n * d + c]))
            .collect();
        for qp in cell_quadrature(d, &cell) {
            let e = strain_at(d, &qp, &vals);
            total += qp.weight * tensor_norm2(&e, d);
        }
    }
    total
}

/// int |e(eps, w)|^2 over the mesh (reference-box fields).
pub fn scaled_strain_energy(mesh: &crate::mesh::TensorMesh, eps: f64, values: &[f64]) -> f64 {
    let d = mesh.dim;
    let mut total = 0.0;
    for cell in mesh.cells() {
        let vals: Vec<f64> = cell
            .nodes
            .iter()
            .flat_map(|&n| (0..d).map(move |c| values[n * d + c]))
            .collect();
        for qp in cell_quadrature(d, &cell) {
            let e = scaled_strain_at(d, eps, &qp, &vals);
            total += qp.weight * tensor_norm2(&e, d);
        }
    }
    total
}

/// Scaled strain sampled at every quadrature point of the mesh.
pub fn scaled_strain_field(
    mesh: &crate::mesh::TensorMesh,
    eps: f64,
    values: &[f64],
) -> Vec<(f64, [f64; 3], SymTensor)> {
    let d = mesh.dim;
    let mut out = Vec::new();
    for cell in mesh.cells() {
        let vals: Vec<f64> = cell
            .nodes
            .iter()
            .flat_map(|&n| (0..d).map(move |c| values[n * d + c]))
            .collect();
        for qp in cell_quadrature(d, &cell) {
            out.push((qp.weight, qp.coord, scaled_strain_at(d, eps, &qp, &vals)));
        }
    }
    out
}

pub fn tensor_dot(a: &SymTensor, b: &SymTensor, dim: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..dim {
        for j in 0..dim {
            s += a[i][j] * b[i][j];
        }
    }
    s
}

pub fn tensor_norm2(a: &SymTensor, dim: usize) -> f64 {
    tensor_dot(a, a, dim)
}

pub fn trace(a: &SymTensor, dim: usize) -> f64 {
    (0..dim).map(|i| a[i][i]).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::TensorMesh;

    fn unit_cell_2d() -> (TensorMesh, Cell) {
        let mesh = TensorMesh::new("t", vec![vec![0.0, 1.0], vec![0.0, 1.0]]);
        let cell = mesh.cell_at(&[0, 0]);
        (mesh, cell)
    }

    #[test]
    fn quadrature_integrates_bilinear_exactly() {
        let (_, cell) = unit_cell_2d();
        let qps = cell_quadrature(2, &cell);
        assert_eq!(qps.len(), 4);
        // integral of x*y over unit square = 1/4
        let mut s = 0.0;
        for qp in &qps {
            s += qp.weight * qp.coord[0] * qp.coord[1];
        }
        assert!((s - 0.25).abs() < 1e-15);
        // shape functions sum to one
        for qp in &qps {
            let t: f64 = qp.shape.iter().sum();
            assert!((t - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn strain_of_linear_field_is_exact() {
        let (mesh, cell) = unit_cell_2d();
        // u = (x1, 0): e = e1 (x) e1
        let mut vals = vec![0.0; 4 * 2];
        for (a, &n) in cell.nodes.iter().enumerate() {
            let x = mesh.node_coord(n);
            vals[a * 2] = x[0];
        }
        for qp in cell_quadrature(2, &cell) {
            let e = strain_at(2, &qp, &vals);
            assert!((e[0][0] - 1.0).abs() < 1e-14);
            assert!(e[0][1].abs() < 1e-14);
            assert!(e[1][1].abs() < 1e-14);
        }
    }

    #[test]
    fn scaled_strain_matches_definition_on_monomials() {
        // 3D checks on the reference box: w = (0,0,x3), (x3,0,0), (x1,0,0)
        let mesh = TensorMesh::new("b", vec![vec![0.0, 1.0], vec![0.0, 1.0], vec![-1.0, 1.0]]);
        let cell = mesh.cell_at(&[0, 0, 0]);
        let eps = 0.37;
        let fill = |f: &dyn Fn([f64; 3]) -> [f64; 3]| {
            let mut vals = vec![0.0; 8 * 3];
            for (a, &n) in cell.nodes.iter().enumerate() {
                let x = mesh.node_coord(n);
                let u = f(x);
                vals[a * 3..a * 3 + 3].copy_from_slice(&u);
            }
            vals
        };
        let qps = cell_quadrature(3, &cell);

        // w = (0,0,x3) -> only (3,3) entry = 1
        let vals = fill(&|x| [0.0, 0.0, x[2]]);
        for qp in &qps {
            let e = scaled_strain_at(3, eps, qp, &vals);
            for i in 0..3 {
                for j in 0..3 {
                    let want = if i == 2 && j == 2 { 1.0 } else { 0.0 };
                    assert!((e[i][j] - want).abs() < 1e-14);
                }
            }
        }
        // w = (x3,0,0) -> entries (1,3)=(3,1)=1/2
        let vals = fill(&|x| [x[2], 0.0, 0.0]);
        for qp in &qps {
            let e = scaled_strain_at(3, eps, qp, &vals);
            assert!((e[0][2] - 0.5).abs() < 1e-14);
            assert!((e[2][0] - 0.5).abs() < 1e-14);
            assert!(e[0][0].abs() < 1e-14 && e[1][1].abs() < 1e-14 && e[2][2].abs() < 1e-14);
        }
        // w = (x1,0,0) -> entry (1,1) = eps
        let vals = fill(&|x| [x[0], 0.0, 0.0]);
        for qp in &qps {
            let e = scaled_strain_at(3, eps, qp, &vals);
            assert!((e[0][0] - eps).abs() < 1e-14);
            assert!(e[2][2].abs() < 1e-14);
        }
    }
}
