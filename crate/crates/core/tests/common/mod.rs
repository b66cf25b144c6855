#![allow(dead_code)]
#![allow(clippy::needless_range_loop)]

//! Shared fixtures and independent numerical oracles for the integration
//! tests. The dense LU solver here is deliberately separate from the
//! library's solvers.

use bondlab::forms::{
    assemble_limit_forms, assemble_thin_forms, Forms, LimitCoefficients, ThinQuintuple,
};
use bondlab::material::{ElasticLaw, RhoStar};
use bondlab::mesh::{build_domain, DomainConfig, DomainMeshes, PatchSelector, Side};

pub fn desk_config(eps: f64) -> DomainConfig {
    DomainConfig {
        dim: 2,
        extents: vec![1.0, 1.0],
        eps0: 0.5,
        eps,
        h_bulk: 0.25,
        m_layer: 2,
        m_refbox: 2,
        dirichlet: vec![
            PatchSelector {
                axis: 0,
                side: Side::Min,
                window: vec![[f64::NEG_INFINITY, f64::INFINITY], [0.6, 1.0]],
            },
            PatchSelector {
                axis: 0,
                side: Side::Min,
                window: vec![[f64::NEG_INFINITY, f64::INFINITY], [-1.0, -0.6]],
            },
        ],
        neumann: vec![PatchSelector::whole_plane(2, 1, Side::Max)],
    }
}

pub fn desk_meshes(eps: f64) -> DomainMeshes {
    build_domain(&desk_config(eps)).unwrap()
}

pub fn law() -> ElasticLaw {
    ElasticLaw::Homogeneous {
        lambda: 1.0,
        mu: 1.0,
    }
}

/// Matched scaling: lambda_n = lambda_bar eps, mu_n = mu_bar eps,
/// b_n = b_bar eps^{p-1}, rho_n = rho_bar / eps.
pub fn matched_quintuple(eps: f64, lp: &LimitCoefficients) -> ThinQuintuple {
    ThinQuintuple {
        eps,
        lambda: lp.lambda_bar * eps,
        mu: lp.mu_bar * eps,
        b: if lp.b_bar.is_finite() {
            lp.b_bar * eps.powf(lp.p - 1.0)
        } else {
            1.0 / eps
        },
        rho: lp.rho_bar / eps,
    }
}

pub fn thin_forms(meshes: &DomainMeshes, q: &ThinQuintuple) -> Forms {
    assemble_thin_forms(q, meshes, &law(), &RhoStar::Constant(1.0)).unwrap()
}

pub fn limit_forms(meshes: &DomainMeshes, lp: &LimitCoefficients) -> Forms {
    assemble_limit_forms(lp, meshes, &law(), &RhoStar::Constant(1.0)).unwrap()
}

/// Dense LU with partial pivoting; solves in place. Returns false on a
/// (numerically) singular matrix.
pub struct DenseLu {
    n: usize,
    lu: Vec<f64>,
    piv: Vec<usize>,
}

impl DenseLu {
    pub fn factor(a: &[f64], n: usize) -> Option<Self> {
        assert_eq!(a.len(), n * n);
        let mut lu = a.to_vec();
        let mut piv: Vec<usize> = (0..n).collect();
        for col in 0..n {
            let mut pivot = col;
            let mut best = lu[col * n + col].abs();
            for r in col + 1..n {
                let v = lu[r * n + col].abs();
                if v > best {
                    best = v;
                    pivot = r;
                }
            }
            if best == 0.0 {
                return None;
            }
            if pivot != col {
                for k in 0..n {
                    lu.swap(col * n + k, pivot * n + k);
                }
                piv.swap(col, pivot);
            }
            let d = lu[col * n + col];
            for r in col + 1..n {
                let f = lu[r * n + col] / d;
                lu[r * n + col] = f;
                for k in col + 1..n {
                    lu[r * n + k] -= f * lu[col * n + k];
                }
            }
        }
        Some(DenseLu { n, lu, piv })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = self.piv.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = x[i];
            for k in 0..i {
                s -= self.lu[i * n + k] * x[k];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..n {
                s -= self.lu[i * n + k] * x[k];
            }
            x[i] = s / self.lu[i * n + i];
        }
        x
    }
}

/// Extract the free-DOF submatrix of a sparse operator.
pub fn dense_free(a: &bondlab::sparse::Csr, mask: &[bool]) -> (Vec<f64>, Vec<usize>) {
    let free: Vec<usize> = (0..a.n).filter(|&i| !mask[i]).collect();
    let nf = free.len();
    let mut out = vec![0.0; nf * nf];
    for (i, &gi) in free.iter().enumerate() {
        for (j, &gj) in free.iter().enumerate() {
            out[i * nf + j] = a.get(gi, gj);
        }
    }
    (out, free)
}
